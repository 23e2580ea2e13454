#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "geometry.hpp"
#include "model_config.hpp"
#include "nn.hpp"
#include "point_cloud.hpp"
#include "tensor.hpp"

namespace tcorres {

template <class T>
struct TokenSet {
    Tensor<T> features;    // [M, C]
    PointCloud<T> anchors; // row i of features describes anchors[i]
};

namespace detail {

// Index of the lexicographically smallest point; this anchors FPS to content
// rather than storage order so token sets survive input permutation.
template <class T>
int64_t lexicographic_min_index(const PointCloud<T>& pc) {
    int64_t best = 0;
    for (int64_t i = 1; i < pc.count(); ++i) {
        const auto& a = pc[i];
        const auto& b = pc[best];
        if (a.x < b.x || (a.x == b.x && (a.y < b.y || (a.y == b.y && a.z < b.z)))) best = i;
    }
    return best;
}

}  // namespace detail

// Downsamples to M anchors and embeds each into a C-channel token:
// two edge convolutions over the anchor graph plus independent feature and
// position perceptrons, summed.
template <class T>
struct Tokenizer {
    EdgeConv<T> ec1, ec2;
    Mlp<T> phi_feat, phi_pos;

    Tokenizer() = default;
    Tokenizer(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng)
        : ec1(ps, prefix + ".ec1", 3, 64, rng),
          ec2(ps, prefix + ".ec2", 64, cfg.C, rng),
          phi_feat(ps, prefix + ".phi_feat", {cfg.C, cfg.C, cfg.C}, rng),
          phi_pos(ps, prefix + ".phi_pos", {3, cfg.C, cfg.C}, rng) {}

    TokenSet<T> operator()(const PointCloud<T>& pc, const ModelConfig& cfg) const {
        if (pc.empty()) throw std::invalid_argument("tokenize: empty cloud");
        PointCloud<T> src = pc;
        if (src.count() < cfg.M) {
            // cyclic repetition keeps small inputs total and deterministic
            const int64_t orig = src.count();
            src.pts.reserve(static_cast<size_t>(cfg.M));
            for (int64_t i = orig; i < cfg.M; ++i)
                src.pts.push_back(src.pts[static_cast<size_t>(i % orig)]);
        }
        auto idx = farthest_point_sample(src, cfg.M, detail::lexicographic_min_index(src));
        auto anchors = gather_points(src, idx);
        auto nbr = knn_points(anchors, anchors, cfg.k);
        auto coords = Tensor<T>::from_cloud(anchors);
        auto local = ec2(ec1(coords, nbr), nbr);
        auto features = add(phi_feat(local), phi_pos(coords));
        return {features, std::move(anchors)};
    }
};

// Pre-norm transformer block whose token mixing is the concatenation of
// full-set self-attention and a k-nearest-feature-neighbor edge convolution.
template <class T>
struct EncoderBlock {
    LayerNorm<T> ln1, ln2;
    MultiHeadAttention<T> attn;
    EdgeConv<T> local;
    Linear<T> merge;
    Mlp<T> ff;
    int k = 1;

    EncoderBlock() = default;
    EncoderBlock(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng)
        : ln1(ps, prefix + ".ln1", cfg.C),
          ln2(ps, prefix + ".ln2", cfg.C),
          attn(ps, prefix + ".attn", cfg.C, cfg.heads, rng),
          local(ps, prefix + ".local", cfg.C, cfg.C / 2, rng),
          merge(ps, prefix + ".merge", cfg.C + cfg.C / 2, cfg.C, rng),
          ff(ps, prefix + ".ff", {cfg.C, 4 * cfg.C, cfg.C}, rng),
          k(cfg.k) {}

    Tensor<T> operator()(const Tensor<T>& x) const {
        const int64_t n = x.dim(0);
        const int64_t c = x.dim(1);
        auto h = ln1(x);
        auto nbr = knn_features(h.value().data(), n, h.value().data(), n, c, k);
        auto mixed = merge(concat<T>({attn(h, h, h), local(h, nbr)}, 1));
        auto y = add(x, mixed);
        return add(y, ff(ln2(y)));
    }
};

template <class T>
struct Encoder {
    std::vector<EncoderBlock<T>> blocks;

    Encoder() = default;
    Encoder(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
        blocks.reserve(static_cast<size_t>(cfg.L_enc));
        for (int64_t l = 0; l < cfg.L_enc; ++l)
            blocks.emplace_back(ps, prefix + ".blk" + std::to_string(l), cfg, rng);
    }

    // Template token features are added to the running features ahead of
    // every block; pass nullptr (or disable via config) to run plain.
    Tensor<T> operator()(Tensor<T> features, const Tensor<T>* template_features) const {
        for (const auto& b : blocks) {
            if (template_features) features = add(features, *template_features);
            features = b(features);
        }
        return features;
    }
};

template <class T>
TokenSet<T> encode_with_template(const TokenSet<T>& input_tokens,
                                 const TokenSet<T>& template_tokens, const Encoder<T>& encoder,
                                 const ModelConfig& cfg) {
    if (input_tokens.features.shape() != template_tokens.features.shape())
        throw ShapeError("encode: input and template token shapes disagree: " +
                         shape_str(input_tokens.features.shape()) + " vs " +
                         shape_str(template_tokens.features.shape()));
    const Tensor<T>* tf = cfg.template_fusion ? &template_tokens.features : nullptr;
    return {encoder(input_tokens.features, tf), input_tokens.anchors};
}

// Channelwise max over tokens -> one global descriptor -> N0 x 3 coordinates.
template <class T>
struct CoarseHead {
    Mlp<T> mlp;
    int64_t n0 = 0;

    CoarseHead() = default;
    CoarseHead(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng)
        : mlp(ps, prefix + ".mlp", {cfg.C, 4 * cfg.C, cfg.N0 * 3}, rng), n0(cfg.N0) {}

    // returns (coarse template [N0,3], global feature [C])
    std::pair<Tensor<T>, Tensor<T>> operator()(const Tensor<T>& encoded) const {
        const int64_t c = encoded.dim(1);
        auto global = reduce_max(encoded, 0);                       // [C]
        auto coarse = reshape(mlp(reshape(global, {1, c})), {n0, 3});
        return {coarse, global};
    }
};

}  // namespace tcorres
