#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "corres.hpp"
#include "decoder.hpp"
#include "encoder.hpp"
#include "geometry.hpp"
#include "model_config.hpp"
#include "nn.hpp"
#include "rng.hpp"

namespace tcorres {

template <class T>
struct ForwardResult {
    TokenSet<T> tokens;     // encoded input tokens [M, C]
    Tensor<T> global;       // [C]
    Tensor<T> coarse;       // [N0, 3]
    Tensor<T> corres_scores;             // [N0], empty when pooling is disabled
    CorresPool<T> pool;                  // empty when pooling is disabled
    Tensor<T> vote_scores;               // [N1], empty when pooling is disabled
    Tensor<T> fine;                      // [N0, 3]
    std::vector<Provenance> provenance;  // per fine row
    Tensor<T> proxies;                   // [N0, C]
    Tensor<T> dense;                     // [N0 * up_factor, 3]
};

namespace detail {

inline void expect_count(int64_t got, int64_t want, const char* what) {
    if (got != want)
        throw std::logic_error(std::string("count invariant violated: ") + what + " has " +
                               std::to_string(got) + " rows, expected " + std::to_string(want));
}

}  // namespace detail

// Completion network: tokenize the partial input, encode it fused with a
// tokenized random sphere template, predict a coarse template, swap its most
// input-redundant points for raw input points, vote the pool down to the fine
// template, decode per-point proxies against value tokens, and fold each
// proxy into up_factor dense points.
template <class T>
class TCorresNet {
public:
    explicit TCorresNet(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(init_seed, "params"));
        tokenizer_ = Tokenizer<T>(params_, "tok", cfg_, rng);
        encoder_ = Encoder<T>(params_, "enc", cfg_, rng);
        coarse_head_ = CoarseHead<T>(params_, "coarse", cfg_, rng);
        corres_ = CorresAttention<T>(params_, "corres", cfg_, rng);
        vote_ = VoteSelect<T>(params_, "vote", cfg_, rng);
        query_builder_ = QueryBuilder<T>(params_, "query", cfg_, rng);
        value_builder_ = ValueBuilder<T>(params_, "value", cfg_, rng);
        decoder_ = Decoder<T>(params_, "dec", cfg_, rng);
        folding_ = FoldingHead<T>(params_, "fold", cfg_, rng);
    }

    // template_seed drives the fused sphere template, value_seed the value
    // sphere. The same seeds reproduce the forward pass bitwise.
    ForwardResult<T> forward(const PointCloud<T>& partial, uint64_t template_seed,
                             uint64_t value_seed) const {
        if (partial.count() < 1) throw std::invalid_argument("forward: empty input cloud");

        ForwardResult<T> out;

        TokenSet<T> input_tokens = tokenizer_(partial, cfg_);
        if (cfg_.template_fusion) {
            auto sphere = sample_gaussian_sphere<T>(cfg_.M * cfg_.oversample, template_seed);
            TokenSet<T> template_tokens = tokenizer_(sphere, cfg_);
            out.tokens = encode_with_template(input_tokens, template_tokens, encoder_, cfg_);
        } else {
            out.tokens.features = encoder_(input_tokens.features, nullptr);
            out.tokens.anchors = input_tokens.anchors;
        }
        detail::expect_count(out.tokens.features.dim(0), cfg_.M, "encoded tokens");

        auto [coarse, global] = coarse_head_(out.tokens.features);
        out.coarse = coarse;
        out.global = global;
        detail::expect_count(out.coarse.dim(0), cfg_.N0, "coarse template");

        if (cfg_.corres_pooling) {
            const int64_t sn = std::min<int64_t>(cfg_.corres_sample_n, partial.count());
            auto sampled = gather_points(partial, farthest_point_sample(partial, sn));
            // Scores only rank rows. Geometry gradients flow through the
            // selected coordinates; the scorer input is detached so the
            // surrogate score gradient cannot feed back into the template.
            out.corres_scores = corres_(stop_grad(out.coarse), sampled);
            out.pool = build_pool(out.coarse, out.corres_scores, partial, cfg_);
            detail::expect_count(out.pool.points.dim(0), cfg_.N3 + cfg_.N4, "correspondence pool");
            int64_t tmpl_rows = 0, input_rows = 0;
            for (auto p : out.pool.provenance)
                (p == Provenance::template_point ? tmpl_rows : input_rows) += 1;
            detail::expect_count(tmpl_rows, cfg_.N3, "kept template rows");
            detail::expect_count(input_rows, cfg_.N4, "added input rows");

            auto voted = vote_(out.pool, cfg_);
            out.vote_scores = voted.scores;
            out.fine = voted.fine;
            out.provenance = std::move(voted.provenance);
        } else {
            out.fine = out.coarse;
            out.provenance.assign(static_cast<size_t>(cfg_.N0), Provenance::template_point);
        }
        detail::expect_count(out.fine.dim(0), cfg_.N0, "fine template");

        auto queries = query_builder_(out.fine, out.global);
        auto values = value_builder_(out.tokens.features, value_seed, cfg_.value_sphere);
        out.proxies = decoder_(queries.features, values);
        detail::expect_count(out.proxies.dim(0), cfg_.N0, "decoded proxies");

        out.dense = folding_(out.fine, out.proxies);
        detail::expect_count(out.dense.dim(0), cfg_.N0 * cfg_.up_factor, "dense output");
        return out;
    }

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    ParamStore<T> params_;
    Tokenizer<T> tokenizer_;
    Encoder<T> encoder_;
    CoarseHead<T> coarse_head_;
    CorresAttention<T> corres_;
    VoteSelect<T> vote_;
    QueryBuilder<T> query_builder_;
    ValueBuilder<T> value_builder_;
    Decoder<T> decoder_;
    FoldingHead<T> folding_;
};

}  // namespace tcorres
