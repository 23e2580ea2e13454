#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "corres.hpp"
#include "encoder.hpp"
#include "geometry.hpp"
#include "model_config.hpp"
#include "nn.hpp"

namespace tcorres {

// Value tokens for cross attention: encoder output concatenated with an
// embedding of a freshly sampled unit-sphere cloud, projected back to C.
// With the sphere branch disabled the embedding is all zeros.
template <class T>
struct ValueBuilder {
    Mlp<T> sphere_embed;
    Linear<T> proj;
    int64_t ds = 0;

    ValueBuilder() = default;
    ValueBuilder(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng)
        : sphere_embed(ps, prefix + ".sphere", {3, cfg.d_s, cfg.d_s}, rng),
          proj(ps, prefix + ".proj", cfg.C + cfg.d_s, cfg.C, rng),
          ds(cfg.d_s) {}

    Tensor<T> operator()(const Tensor<T>& encoded_features, uint64_t sphere_seed,
                         bool use_sphere) const {
        const int64_t m = encoded_features.dim(0);
        Tensor<T> emb;
        if (use_sphere) {
            auto sphere = sample_gaussian_sphere<T>(m, sphere_seed);
            emb = sphere_embed(Tensor<T>::from_cloud(sphere));
        } else {
            emb = Tensor<T>::zeros({m, ds});
        }
        return proj(concat<T>({encoded_features, emb}, 1));
    }
};

// Pre-norm block: kNN-local self attention mix on the queries, cross
// attention into the value tokens, then feed-forward.
template <class T>
struct DecoderBlock {
    LayerNorm<T> ln1, ln2, ln3;
    MultiHeadAttention<T> self_attn, cross_attn;
    EdgeConv<T> local;
    Linear<T> merge;
    Mlp<T> ff;
    int k = 1;

    DecoderBlock() = default;
    DecoderBlock(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng)
        : ln1(ps, prefix + ".ln1", cfg.C),
          ln2(ps, prefix + ".ln2", cfg.C),
          ln3(ps, prefix + ".ln3", cfg.C),
          self_attn(ps, prefix + ".self", cfg.C, cfg.heads, rng),
          cross_attn(ps, prefix + ".cross", cfg.C, cfg.heads, rng),
          local(ps, prefix + ".local", cfg.C, cfg.C / 2, rng),
          merge(ps, prefix + ".merge", cfg.C + cfg.C / 2, cfg.C, rng),
          ff(ps, prefix + ".ff", {cfg.C, 4 * cfg.C, cfg.C}, rng),
          k(cfg.k) {}

    Tensor<T> operator()(const Tensor<T>& q, const Tensor<T>& values) const {
        const int64_t n = q.dim(0);
        const int64_t c = q.dim(1);
        auto h = ln1(q);
        auto nbr = knn_features(h.value().data(), n, h.value().data(), n, c,
                                std::min<int64_t>(k, n));
        auto mixed = merge(concat<T>({self_attn(h, h, h), local(h, nbr)}, 1));
        auto x = add(q, mixed);
        x = add(x, cross_attn(ln2(x), values, values));
        return add(x, ff(ln3(x)));
    }
};

template <class T>
struct Decoder {
    std::vector<DecoderBlock<T>> blocks;
    Linear<T> out_proj;

    Decoder() = default;
    Decoder(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng)
        : out_proj() {
        blocks.reserve(static_cast<size_t>(cfg.L_dec));
        for (int64_t i = 0; i < cfg.L_dec; ++i)
            blocks.emplace_back(ps, prefix + ".b" + std::to_string(i), cfg, rng);
        out_proj = Linear<T>(ps, prefix + ".out", cfg.C, cfg.C, rng);
    }

    // queries [N0, C], values [M, C] -> per-point proxies [N0, C]
    Tensor<T> operator()(Tensor<T> queries, const Tensor<T>& values) const {
        for (const auto& b : blocks) queries = b(queries, values);
        return out_proj(queries);
    }
};

namespace detail {

// up = rows * cols with rows the largest divisor not exceeding sqrt(up),
// so square factors give a square grid.
inline std::pair<int64_t, int64_t> grid_factors(int64_t up) {
    int64_t rows = static_cast<int64_t>(std::sqrt(static_cast<double>(up)));
    while (rows > 1 && up % rows != 0) --rows;
    if (rows < 1) rows = 1;
    return {rows, up / rows};
}

inline std::vector<double> linspace(double lo, double hi, int64_t n) {
    std::vector<double> v(static_cast<size_t>(n));
    if (n == 1) {
        v[0] = 0.5 * (lo + hi);
        return v;
    }
    for (int64_t i = 0; i < n; ++i)
        v[static_cast<size_t>(i)] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return v;
}

}  // namespace detail

// Upsamples each fine-template point to up_factor dense points: the proxy
// feature is tiled with a small 2D lattice, pushed through an MLP whose last
// layer starts at zero, and the tanh-bounded result is added to the template
// coordinate. Output is template-major: rows [i*up, (i+1)*up) come from
// template point i.
template <class T>
struct FoldingHead {
    Linear<T> l1, l2, l3;
    int64_t up = 1;
    T bound = T(0.5);
    Tensor<T> grid;  // [up, 2] constant lattice in [-0.05, 0.05]^2

    FoldingHead() = default;
    FoldingHead(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng)
        : l1(ps, prefix + ".l1", cfg.C + 2, 256, rng),
          l2(ps, prefix + ".l2", 256, 128, rng),
          l3(ps, prefix + ".l3", 128, 3, rng),
          up(cfg.up_factor),
          bound(static_cast<T>(cfg.fold_offset_bound)) {
        auto& w3 = l3.w.raw_value();
        std::fill(w3.begin(), w3.end(), T(0));

        auto [rows, cols] = detail::grid_factors(up);
        auto xs = detail::linspace(-0.05, 0.05, rows);
        auto ys = detail::linspace(-0.05, 0.05, cols);
        std::vector<T> g;
        g.reserve(static_cast<size_t>(up * 2));
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c) {
                g.push_back(static_cast<T>(xs[static_cast<size_t>(r)]));
                g.push_back(static_cast<T>(ys[static_cast<size_t>(c)]));
            }
        grid = Tensor<T>::from({up, 2}, std::move(g));
    }

    // fine_template [N0, 3], proxies [N0, C] -> dense [N0 * up, 3]
    Tensor<T> operator()(const Tensor<T>& fine_template, const Tensor<T>& proxies) const {
        const int64_t n0 = fine_template.dim(0);
        if (proxies.dim(0) != n0)
            throw ShapeError("folding: proxy count does not match template");
        auto rep = detail::repeat_index(n0, up);
        std::vector<int64_t> tile(static_cast<size_t>(n0 * up));
        for (int64_t i = 0; i < n0; ++i)
            for (int64_t u = 0; u < up; ++u) tile[static_cast<size_t>(i * up + u)] = u;
        auto inp = concat<T>({gather_rows(proxies, rep), gather_rows(grid, tile)}, 1);
        auto raw = l3(gelu(l2(gelu(l1(inp)))));
        auto offsets = scale(tanh(raw), bound);
        return add(gather_rows(fine_template, rep), offsets);
    }
};

}  // namespace tcorres
