#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "encoder.hpp"
#include "geometry.hpp"
#include "model_config.hpp"
#include "nn.hpp"

namespace tcorres {

enum class Provenance : uint8_t { template_point = 0, input_point = 1 };

template <class T>
struct CorresPool {
    Tensor<T> points;                    // [N1, 3]
    std::vector<Provenance> provenance;  // size N1
    Tensor<T> scores;                    // [N1]; correspondence score for template rows, 0 for input rows
};

template <class T>
struct QueryTokens {
    Tensor<T> features;    // [N0, C] after projection
    PointCloud<T> anchors; // the fine template
};

// Hard row selection that still trains the scorer: the gathered rows are
// multiplied by exp(s - stop_grad(s)), which is exactly 1 in the forward
// pass (so selected coordinates are preserved bitwise) while the backward
// pass sees d/ds = row value, giving the score head a gradient.
template <class T>
Tensor<T> select_rows_st(const Tensor<T>& points, const Tensor<T>& scores,
                         const std::vector<int64_t>& idx) {
    auto p = gather_rows(points, idx);
    auto s = gather_rows(scores, idx);
    return scale_rows(p, exp(sub(s, stop_grad(s))));
}

namespace detail {

// Indices ordered by (score descending, index ascending), `take` of them.
template <class T>
std::vector<int64_t> top_by_score(const std::vector<T>& scores, int64_t take, bool lowest_first) {
    std::vector<int64_t> order(scores.size());
    std::iota(order.begin(), order.end(), int64_t{0});
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        const T sa = scores[static_cast<size_t>(a)];
        const T sb = scores[static_cast<size_t>(b)];
        if (sa != sb) return lowest_first ? sa < sb : sa > sb;
        return a < b;
    });
    order.resize(static_cast<size_t>(take));
    return order;
}

}  // namespace detail

// Graph attention from each template point to its k nearest sampled-input
// points, ending in a scalar similarity score per template point.
template <class T>
struct CorresAttention {
    Mlp<T> embed;         // shared coordinate embedding for both sets
    Linear<T> wq, wk, wv;
    Mlp<T> score_head;
    int k = 1;
    int64_t cc = 0;

    CorresAttention() = default;
    CorresAttention(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng)
        : embed(ps, prefix + ".embed", {3, cfg.corres_dim, cfg.corres_dim}, rng),
          wq(ps, prefix + ".q", cfg.corres_dim, cfg.corres_dim, rng),
          wk(ps, prefix + ".k", cfg.corres_dim, cfg.corres_dim, rng),
          wv(ps, prefix + ".v", cfg.corres_dim, cfg.corres_dim, rng),
          score_head(ps, prefix + ".score", {cfg.corres_dim, cfg.corres_dim, 1}, rng),
          k(cfg.k),
          cc(cfg.corres_dim) {}

    Tensor<T> operator()(const Tensor<T>& template_pts, const PointCloud<T>& sampled) const {
        return run(template_pts, sampled, k);
    }

    Tensor<T> run(const Tensor<T>& template_pts, const PointCloud<T>& sampled,
                  int neighbors) const {
        if (sampled.count() < neighbors)
            throw std::invalid_argument("correspondence attention: sampled input has " +
                                        std::to_string(sampled.count()) + " points, need at least " +
                                        std::to_string(neighbors));
        const int64_t n0 = template_pts.dim(0);
        auto t_emb = embed(template_pts);
        auto s_emb = embed(Tensor<T>::from_cloud(sampled));
        auto nbr = knn_points(template_pts.to_cloud(), sampled, neighbors);
        auto flat = detail::neighbor_index_flat(nbr);
        auto keys = reshape(gather_rows(wk(s_emb), flat), {n0, neighbors, cc});
        auto vals = reshape(gather_rows(wv(s_emb), flat), {n0, neighbors, cc});
        auto q = reshape(wq(t_emb), {n0, 1, cc});
        auto logits = scale(matmul(q, permute(keys, {0, 2, 1})),
                            static_cast<T>(1.0 / std::sqrt(static_cast<double>(cc))));
        auto ctx = reshape(matmul(softmax(logits, 2), vals), {n0, cc});
        return reshape(score_head(ctx), {n0});
    }
};

// Replaces the template points most similar to the input (highest score;
// lowest when cfg.drop_lowest) with fresh FPS samples from the raw partial
// input. Kept template rows stay gradient-tracked; input rows are exact
// copies of raw input coordinates.
template <class T>
CorresPool<T> build_pool(const Tensor<T>& coarse_template, const Tensor<T>& scores,
                         const PointCloud<T>& partial_input, const ModelConfig& cfg) {
    const int64_t n0 = coarse_template.dim(0);
    if (coarse_template.ndim() != 2 || coarse_template.dim(1) != 3)
        throw ShapeError("build_pool: template must be [N0,3]");
    if (scores.numel() != n0) throw ShapeError("build_pool: score count does not match template");
    if (n0 < cfg.N3) throw std::invalid_argument("build_pool: template smaller than N3");
    if (partial_input.count() < cfg.N4)
        throw std::invalid_argument("build_pool: partial input has " +
                                    std::to_string(partial_input.count()) + " points, need " +
                                    std::to_string(cfg.N4));

    const int64_t drop = n0 - cfg.N3;
    auto dropped = detail::top_by_score(scores.value(), drop, cfg.drop_lowest);
    std::vector<char> is_dropped(static_cast<size_t>(n0), 0);
    for (int64_t i : dropped) is_dropped[static_cast<size_t>(i)] = 1;
    std::vector<int64_t> kept;
    kept.reserve(static_cast<size_t>(cfg.N3));
    for (int64_t i = 0; i < n0; ++i)
        if (!is_dropped[static_cast<size_t>(i)]) kept.push_back(i);

    auto kept_pts = select_rows_st(coarse_template, scores, kept);

    auto in_idx = farthest_point_sample(partial_input, cfg.N4);
    auto in_pts = Tensor<T>::from_cloud(gather_points(partial_input, in_idx));

    CorresPool<T> pool;
    pool.points = concat<T>({kept_pts, in_pts}, 0);
    pool.provenance.assign(static_cast<size_t>(cfg.N3), Provenance::template_point);
    pool.provenance.insert(pool.provenance.end(), static_cast<size_t>(cfg.N4),
                           Provenance::input_point);
    std::vector<T> pooled_scores(static_cast<size_t>(cfg.pool_size()), T(0));
    for (size_t i = 0; i < kept.size(); ++i)
        pooled_scores[i] = scores.value()[static_cast<size_t>(kept[static_cast<size_t>(i)])];
    pool.scores = Tensor<T>::from({cfg.pool_size()}, std::move(pooled_scores));
    return pool;
}

// Scores every pool point from its coordinates, a learned provenance
// embedding, and a max-pooled context over the pool, then keeps the top N0.
// Output rows follow ascending pool index, so selection with N0 == N1 is the
// identity.
template <class T>
struct VoteSelect {
    Tensor<T> prov_embed;  // [2, 16]
    Mlp<T> point_mlp;
    Mlp<T> score_mlp;

    VoteSelect() = default;
    VoteSelect(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng)
        : prov_embed(ps.create_glorot(prefix + ".prov", 2, 16, rng)),
          point_mlp(ps, prefix + ".point", {3 + 16, cfg.vote_dim, cfg.vote_dim}, rng),
          score_mlp(ps, prefix + ".score", {2 * cfg.vote_dim, cfg.vote_dim, 1}, rng) {}

    struct Result {
        Tensor<T> fine;                      // [N0, 3]
        std::vector<Provenance> provenance;  // per fine-template row
        Tensor<T> scores;                    // [N1] voting scores
        std::vector<int64_t> selected;       // pool indices, ascending
    };

    Result operator()(const CorresPool<T>& pool, const ModelConfig& cfg) const {
        const int64_t n1 = pool.points.dim(0);
        if (cfg.N0 > n1) throw std::invalid_argument("vote_select: N0 exceeds pool size");
        if (static_cast<int64_t>(pool.provenance.size()) != n1)
            throw ShapeError("vote_select: provenance size mismatch");

        std::vector<int64_t> prov_idx(static_cast<size_t>(n1));
        for (int64_t i = 0; i < n1; ++i)
            prov_idx[static_cast<size_t>(i)] =
                pool.provenance[static_cast<size_t>(i)] == Provenance::input_point ? 1 : 0;
        const int64_t vd = point_mlp.layers.back().w.dim(1);
        auto pe = gather_rows(prov_embed, prov_idx);
        // Voting only ranks rows; the scorer sees detached coordinates so its
        // surrogate gradient trains the vote networks, not the pool geometry.
        auto e = point_mlp(concat<T>({stop_grad(pool.points), pe}, 1));  // [N1, vd]
        auto ctx = reshape(reduce_max(e, 0), {1, vd});
        auto ctx_rep = gather_rows(ctx, std::vector<int64_t>(static_cast<size_t>(n1), 0));
        auto s = reshape(score_mlp(concat<T>({e, ctx_rep}, 1)), {n1});

        auto sel = detail::top_by_score(s.value(), cfg.N0, false);
        std::sort(sel.begin(), sel.end());

        Result out;
        out.fine = select_rows_st(pool.points, s, sel);
        out.provenance.reserve(sel.size());
        for (int64_t i : sel) out.provenance.push_back(pool.provenance[static_cast<size_t>(i)]);
        out.scores = s;
        out.selected = std::move(sel);
        return out;
    }
};

// Each fine-template coordinate concatenated with the broadcast global
// feature, projected to decoder width.
template <class T>
struct QueryBuilder {
    Linear<T> proj;

    QueryBuilder() = default;
    QueryBuilder(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng)
        : proj(ps, prefix + ".proj", 3 + cfg.C, cfg.C, rng) {}

    QueryTokens<T> operator()(const Tensor<T>& fine_template, const Tensor<T>& global) const {
        const int64_t n0 = fine_template.dim(0);
        const int64_t c = global.numel();
        auto g_rep = gather_rows(reshape(global, {1, c}),
                                 std::vector<int64_t>(static_cast<size_t>(n0), 0));
        auto features = proj(concat<T>({fine_template, g_rep}, 1));
        return {features, fine_template.to_cloud()};
    }
};

}  // namespace tcorres
