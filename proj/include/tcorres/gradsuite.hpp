#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "corres.hpp"
#include "decoder.hpp"
#include "encoder.hpp"
#include "gradcheck.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace tcorres {

struct GradSuiteCase {
    const char* module;  // "ops", "blocks", or "loss"
    const char* name;
    std::function<GradCheckReport(uint64_t seed)> run;
};

struct GradCaseResult {
    std::string module;
    std::string name;
    double max_rel_err = 0;
    int64_t coords_checked = 0;
    double worst_analytic = 0;
    double worst_numeric = 0;
    bool pass = false;
};

namespace detail {

inline Tensor<double> grad_randn(Shape shape, Rng& rng, double stddev = 1.0) {
    return Tensor<double>::randn(std::move(shape), rng, stddev);
}

// Weighted sum with fixed random coefficients so misplaced gradient entries
// cannot cancel out the way they would under a plain sum.
inline Tensor<double> wsum(const Tensor<double>& t, uint64_t seed) {
    Rng rng(derive_seed(seed, "wsum"));
    return sum_all(mul(t, Tensor<double>::randn(t.shape(), rng)));
}

inline PointCloud<double> grad_cloud(int64_t n, Rng& rng) {
    PointCloud<double> pc;
    for (int64_t i = 0; i < n; ++i) pc.pts.push_back({rng.gaussian(), rng.gaussian(), rng.gaussian()});
    return pc;
}

inline ModelConfig grad_tiny_config() {
    ModelConfig cfg;
    cfg.M = 8;
    cfg.C = 12;
    cfg.heads = 2;
    cfg.k = 3;
    cfg.L_enc = 1;
    cfg.L_dec = 1;
    cfg.N0 = 12;
    cfg.N3 = 6;
    cfg.N4 = 8;
    cfg.oversample = 2;
    cfg.up_factor = 2;
    cfg.d_s = 6;
    cfg.corres_dim = 8;
    cfg.vote_dim = 8;
    cfg.corres_sample_n = 8;
    cfg.validate();
    return cfg;
}

// First parameter under each prefix with at most max_numel scalars; keeps
// end-to-end checks cheap while still probing gradient flow per stage.
inline std::vector<Tensor<double>> pick_small_params(ParamStore<double>& ps,
                                                     const std::vector<std::string>& prefixes,
                                                     int64_t max_numel) {
    std::vector<Tensor<double>> out;
    for (const auto& prefix : prefixes) {
        bool found = false;
        for (auto& [name, p] : ps) {
            if (name.rfind(prefix, 0) == 0 && p.numel() <= max_numel) {
                out.push_back(p);
                found = true;
                break;
            }
        }
        if (!found) throw std::logic_error("no small parameter under prefix " + prefix);
    }
    return out;
}

// Network blocks get two step widths: 1e-6 can leave the difference
// quotient as rounding noise on near-zero gradients, 1e-5 can cross a
// kNN-graph flip; each coordinate must agree at one of them.
inline const std::vector<double>& net_steps() {
    static const std::vector<double> s{1e-6, 1e-5};
    return s;
}

inline GradCheckReport merge_reports(const GradCheckReport& a, const GradCheckReport& b) {
    GradCheckReport out = a.max_rel_err >= b.max_rel_err ? a : b;
    out.coords_checked = a.coords_checked + b.coords_checked;
    return out;
}

}  // namespace detail

// Central-difference checks for every differentiable tensor op, every
// network block, and the end-to-end training loss. Selection multipliers
// (exp(s - detach(s))) route a surrogate gradient into score networks whose
// true derivative is zero almost everywhere, so score-path leaves are
// checked at the score output, not through the selection.
inline const std::vector<GradSuiteCase>& grad_suite() {
    using detail::grad_cloud;
    using detail::grad_randn;
    using detail::grad_tiny_config;
    using detail::wsum;
    using T = Tensor<double>;

    auto unary_case = [](T (*op)(const T&)) {
        return [op](uint64_t seed) {
            Rng rng(seed);
            std::vector<T> leaves{grad_randn({4, 6}, rng)};
            return grad_check([&](std::vector<T>& l) { return wsum(op(l[0]), seed); }, leaves);
        };
    };

    static const std::vector<GradSuiteCase> suite{
        {"ops", "add",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({4, 6}, rng), grad_randn({4, 6}, rng)};
             return grad_check([&](std::vector<T>& l) { return wsum(add(l[0], l[1]), seed); },
                               leaves);
         }},
        {"ops", "sub",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({4, 6}, rng), grad_randn({4, 6}, rng)};
             return grad_check([&](std::vector<T>& l) { return wsum(sub(l[0], l[1]), seed); },
                               leaves);
         }},
        {"ops", "mul",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({4, 6}, rng), grad_randn({4, 6}, rng)};
             return grad_check([&](std::vector<T>& l) { return wsum(mul(l[0], l[1]), seed); },
                               leaves);
         }},
        {"ops", "relu", unary_case(relu<double>)},
        {"ops", "gelu", unary_case(gelu<double>)},
        {"ops", "tanh", unary_case(tanh<double>)},
        {"ops", "exp",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({4, 6}, rng, 0.5)};
             return grad_check([&](std::vector<T>& l) { return wsum(exp(l[0]), seed); }, leaves);
         }},
        {"ops", "sqrt",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{Tensor<double>::randu({4, 6}, rng, 0.5, 2.0)};
             return grad_check([&](std::vector<T>& l) { return wsum(sqrt(l[0]), seed); }, leaves);
         }},
        {"ops", "neg", unary_case(neg<double>)},
        {"ops", "scale",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({4, 6}, rng)};
             return grad_check([&](std::vector<T>& l) { return wsum(scale(l[0], 1.7), seed); },
                               leaves);
         }},
        {"ops", "add-scalar",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({4, 6}, rng)};
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(add_scalar(l[0], -0.3), seed); }, leaves);
         }},
        {"ops", "matmul",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({4, 5}, rng), grad_randn({5, 3}, rng)};
             return grad_check([&](std::vector<T>& l) { return wsum(matmul(l[0], l[1]), seed); },
                               leaves);
         }},
        {"ops", "matmul-batched",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({2, 3, 4}, rng), grad_randn({2, 4, 2}, rng)};
             return grad_check([&](std::vector<T>& l) { return wsum(matmul(l[0], l[1]), seed); },
                               leaves);
         }},
        {"ops", "matmul-shared-operand",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> a{grad_randn({2, 3, 4}, rng), grad_randn({4, 2}, rng)};
             auto r1 = grad_check([&](std::vector<T>& l) { return wsum(matmul(l[0], l[1]), seed); },
                                  a);
             std::vector<T> b{grad_randn({3, 4}, rng), grad_randn({2, 4, 2}, rng)};
             auto r2 = grad_check([&](std::vector<T>& l) { return wsum(matmul(l[0], l[1]), seed); },
                                  b);
             return detail::merge_reports(r1, r2);
         }},
        {"ops", "reshape",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({4, 6}, rng)};
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(reshape(l[0], {2, 3, 4}), seed); }, leaves);
         }},
        {"ops", "permute",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({2, 3, 4}, rng)};
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(permute(l[0], {2, 0, 1}), seed); }, leaves);
         }},
        {"ops", "softmax",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> a{grad_randn({3, 5}, rng)};
             auto r1 =
                 grad_check([&](std::vector<T>& l) { return wsum(softmax(l[0], 1), seed); }, a);
             std::vector<T> b{grad_randn({2, 3, 4}, rng)};
             auto r2 =
                 grad_check([&](std::vector<T>& l) { return wsum(softmax(l[0], 2), seed); }, b);
             return detail::merge_reports(r1, r2);
         }},
        {"ops", "reduce-max",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({3, 5}, rng)};
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(reduce_max(l[0], 0), seed); }, leaves);
         }},
        {"ops", "reduce-sum",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({3, 5}, rng)};
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(reduce_sum(l[0], 1), seed); }, leaves);
         }},
        {"ops", "sum-all",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({4, 6}, rng)};
             return grad_check([&](std::vector<T>& l) { return mul(sum_all(l[0]), sum_all(l[0])); },
                               leaves);
         }},
        {"ops", "mean-all",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({4, 6}, rng)};
             return grad_check(
                 [&](std::vector<T>& l) { return mul(mean_all(l[0]), mean_all(l[0])); }, leaves);
         }},
        {"ops", "concat",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> a{grad_randn({2, 4}, rng), grad_randn({3, 4}, rng)};
             auto r1 = grad_check(
                 [&](std::vector<T>& l) { return wsum(concat<double>({l[0], l[1]}, 0), seed); }, a);
             std::vector<T> b{grad_randn({3, 2}, rng), grad_randn({3, 3}, rng)};
             auto r2 = grad_check(
                 [&](std::vector<T>& l) { return wsum(concat<double>({l[0], l[1]}, 1), seed); }, b);
             return detail::merge_reports(r1, r2);
         }},
        {"ops", "gather-rows",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({3, 4}, rng)};
             const std::vector<int64_t> idx{0, 2, 1, 2, 0};
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(gather_rows(l[0], idx), seed); }, leaves);
         }},
        {"ops", "scale-rows",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({4, 5}, rng), grad_randn({4}, rng)};
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(scale_rows(l[0], l[1]), seed); }, leaves);
         }},
        {"ops", "layer-norm",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({3, 6}, rng), grad_randn({6}, rng),
                                   grad_randn({6}, rng)};
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(layer_norm(l[0], l[1], l[2]), seed); },
                 leaves);
         }},
        {"blocks", "linear",
         [](uint64_t seed) {
             Rng rng(seed);
             ParamStore<double> ps;
             Linear<double> lin(ps, "lin", 4, 3, rng);
             std::vector<T> leaves{grad_randn({5, 4}, rng), lin.w, lin.b};
             return grad_check([&](std::vector<T>& l) { return wsum(lin(l[0]), seed); }, leaves, detail::net_steps());
         }},
        {"blocks", "mlp",
         [](uint64_t seed) {
             Rng rng(seed);
             ParamStore<double> ps;
             Mlp<double> mlp(ps, "mlp", {3, 8, 3}, rng);
             std::vector<T> leaves{grad_randn({4, 3}, rng)};
             for (auto& [name, p] : ps) leaves.push_back(p);
             return grad_check([&](std::vector<T>& l) { return wsum(mlp(l[0]), seed); }, leaves, detail::net_steps());
         }},
        {"blocks", "edge-conv",
         [](uint64_t seed) {
             Rng rng(seed);
             ParamStore<double> ps;
             EdgeConv<double> ec(ps, "ec", 5, 4, rng);
             auto coords = grad_randn({6, 3}, rng);
             auto nbr = knn_features(coords.value().data(), 6, coords.value().data(), 6, 3, 3);
             std::vector<T> leaves{grad_randn({6, 5}, rng)};
             for (auto& [name, p] : ps) leaves.push_back(p);
             return grad_check([&](std::vector<T>& l) { return wsum(ec(l[0], nbr), seed); },
                               leaves, detail::net_steps());
         }},
        {"blocks", "attention-self",
         [](uint64_t seed) {
             Rng rng(seed);
             ParamStore<double> ps;
             MultiHeadAttention<double> attn(ps, "attn", 12, 3, rng);
             std::vector<T> leaves{grad_randn({6, 12}, rng), attn.wq.w, attn.wq.b, attn.wo.w,
                                   attn.wo.b};
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(attn(l[0], l[0], l[0]), seed); }, leaves, detail::net_steps());
         }},
        {"blocks", "attention-cross-masked",
         [](uint64_t seed) {
             Rng rng(seed);
             ParamStore<double> ps;
             MultiHeadAttention<double> attn(ps, "attn", 12, 2, rng);
             auto mask = grad_randn({4, 5}, rng);
             std::vector<T> leaves{grad_randn({4, 12}, rng), grad_randn({5, 12}, rng), attn.wk.w,
                                   attn.wv.b};
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(attn(l[0], l[1], l[1], &mask), seed); },
                 leaves, detail::net_steps());
         }},
        {"blocks", "tokenizer",
         [](uint64_t seed) {
             Rng rng(seed);
             auto cfg = grad_tiny_config();
             ParamStore<double> ps;
             Tokenizer<double> tok(ps, "tok", cfg, rng);
             auto cloud = grad_cloud(20, rng);
             std::vector<T> leaves = detail::pick_small_params(
                 ps, {"tok.ec1", "tok.ec2", "tok.phi_feat", "tok.phi_pos"}, 64);
             return grad_check(
                 [&](std::vector<T>&) { return wsum(tok(cloud, cfg).features, seed); }, leaves, detail::net_steps());
         }},
        {"blocks", "encoder-block",
         [](uint64_t seed) {
             Rng rng(seed);
             auto cfg = grad_tiny_config();
             ParamStore<double> ps;
             EncoderBlock<double> blk(ps, "blk", cfg, rng);
             std::vector<T> leaves{grad_randn({8, 12}, rng), blk.ln1.beta, blk.merge.b};
             return grad_check([&](std::vector<T>& l) { return wsum(blk(l[0]), seed); }, leaves, detail::net_steps());
         }},
        {"blocks", "encoder-with-template",
         [](uint64_t seed) {
             Rng rng(seed);
             auto cfg = grad_tiny_config();
             ParamStore<double> ps;
             Encoder<double> enc(ps, "enc", cfg, rng);
             std::vector<T> leaves{grad_randn({8, 12}, rng), grad_randn({8, 12}, rng)};
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(enc(l[0], &l[1]), seed); }, leaves, detail::net_steps());
         }},
        {"blocks", "coarse-head",
         [](uint64_t seed) {
             Rng rng(seed);
             auto cfg = grad_tiny_config();
             ParamStore<double> ps;
             CoarseHead<double> head(ps, "coarse", cfg, rng);
             std::vector<T> leaves{grad_randn({8, 12}, rng)};
             for (auto& [name, p] : ps)
                 if (p.numel() <= 64) leaves.push_back(p);
             return grad_check(
                 [&](std::vector<T>& l) {
                     auto [coarse, global] = head(l[0]);
                     return add(wsum(coarse, seed), wsum(global, derive_seed(seed, "g")));
                 },
                 leaves, detail::net_steps());
         }},
        {"blocks", "corres-scores",
         [](uint64_t seed) {
             Rng rng(seed);
             auto cfg = grad_tiny_config();
             ParamStore<double> ps;
             CorresAttention<double> corres(ps, "corres", cfg, rng);
             auto sampled = grad_cloud(10, rng);
             std::vector<T> leaves{grad_randn({cfg.N0, 3}, rng)};
             for (auto& [name, p] : ps)
                 if (p.numel() <= 16) leaves.push_back(p);
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(corres(l[0], sampled), seed); }, leaves, detail::net_steps());
         }},
        {"blocks", "selection-multiplier",
         [](uint64_t seed) {
             Rng rng(seed);
             auto scores = grad_randn({6}, rng);
             const std::vector<int64_t> idx{1, 3, 4};
             std::vector<T> leaves{grad_randn({6, 3}, rng)};
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(select_rows_st(l[0], scores, idx), seed); },
                 leaves, detail::net_steps());
         }},
        {"blocks", "pool-points",
         [](uint64_t seed) {
             Rng rng(seed);
             auto cfg = grad_tiny_config();
             auto partial = grad_cloud(cfg.N4 + 4, rng);
             auto scores = grad_randn({cfg.N0}, rng);
             std::vector<T> leaves{grad_randn({cfg.N0, 3}, rng)};
             return grad_check(
                 [&](std::vector<T>& l) {
                     return wsum(build_pool(l[0], scores, partial, cfg).points, seed);
                 },
                 leaves, detail::net_steps());
         }},
        {"blocks", "vote-scores",
         [](uint64_t seed) {
             Rng rng(seed);
             auto cfg = grad_tiny_config();
             ParamStore<double> ps;
             VoteSelect<double> vote(ps, "vote", cfg, rng);
             CorresPool<double> pool;
             pool.points = grad_randn({cfg.N3 + cfg.N4, 3}, rng);
             pool.scores = grad_randn({cfg.N3 + cfg.N4}, rng);
             pool.provenance.assign(static_cast<size_t>(cfg.N3), Provenance::template_point);
             pool.provenance.insert(pool.provenance.end(), static_cast<size_t>(cfg.N4),
                                    Provenance::input_point);
             std::vector<T> leaves;
             for (auto& [name, p] : ps)
                 if (p.numel() <= 40) leaves.push_back(p);
             return grad_check(
                 [&](std::vector<T>&) { return wsum(vote(pool, cfg).scores, seed); }, leaves, detail::net_steps());
         }},
        {"blocks", "query-builder",
         [](uint64_t seed) {
             Rng rng(seed);
             auto cfg = grad_tiny_config();
             ParamStore<double> ps;
             QueryBuilder<double> qb(ps, "query", cfg, rng);
             std::vector<T> leaves{grad_randn({cfg.N0, 3}, rng), grad_randn({cfg.C}, rng)};
             for (auto& [name, p] : ps)
                 if (p.numel() <= 16) leaves.push_back(p);
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(qb(l[0], l[1]).features, seed); }, leaves, detail::net_steps());
         }},
        {"blocks", "value-builder",
         [](uint64_t seed) {
             Rng rng(seed);
             auto cfg = grad_tiny_config();
             ParamStore<double> ps;
             ValueBuilder<double> vb(ps, "value", cfg, rng);
             std::vector<T> leaves{grad_randn({cfg.M, cfg.C}, rng)};
             for (auto& [name, p] : ps)
                 if (p.numel() <= 16) leaves.push_back(p);
             const uint64_t sphere_seed = derive_seed(seed, "sphere");
             return grad_check(
                 [&](std::vector<T>& l) { return wsum(vb(l[0], sphere_seed, true), seed); },
                 leaves, detail::net_steps());
         }},
        {"blocks", "decoder-block",
         [](uint64_t seed) {
             Rng rng(seed);
             auto cfg = grad_tiny_config();
             ParamStore<double> ps;
             DecoderBlock<double> blk(ps, "dec", cfg, rng);
             std::vector<T> leaves{grad_randn({8, 12}, rng), grad_randn({6, 12}, rng), blk.ln1.beta,
                                   blk.merge.b};
             return grad_check([&](std::vector<T>& l) { return wsum(blk(l[0], l[1]), seed); },
                               leaves, detail::net_steps());
         }},
        {"blocks", "folding-head",
         [](uint64_t seed) {
             Rng rng(seed);
             auto cfg = grad_tiny_config();
             ParamStore<double> ps;
             FoldingHead<double> fold(ps, "fold", cfg, rng);
             for (auto& v : fold.l3.w.raw_value()) v = 0.3 * rng.gaussian();
             std::vector<T> leaves{grad_randn({6, 3}, rng), grad_randn({6, cfg.C}, rng), fold.l3.w,
                                   fold.l3.b};
             return grad_check([&](std::vector<T>& l) { return wsum(fold(l[0], l[1]), seed); },
                               leaves, detail::net_steps());
         }},
        {"loss", "chamfer-l1",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({5, 3}, rng), grad_randn({7, 3}, rng)};
             return grad_check(
                 [&](std::vector<T>& l) { return chamfer_grad(l[0], l[1], ChamferNorm::l1); },
                 leaves);
         }},
        {"loss", "chamfer-l2",
         [](uint64_t seed) {
             Rng rng(seed);
             std::vector<T> leaves{grad_randn({5, 3}, rng), grad_randn({7, 3}, rng)};
             return grad_check(
                 [&](std::vector<T>& l) { return chamfer_grad(l[0], l[1], ChamferNorm::l2); },
                 leaves);
         }},
        {"loss", "end-to-end",
         [](uint64_t seed) {
             Rng rng(derive_seed(seed, "data"));
             auto cfg = grad_tiny_config();
             cfg.corres_pooling = false;  // keep every path fully differentiable
             TCorresNet<double> net(cfg, derive_seed(seed, "init"));
             for (auto& v : net.params().at("fold.l3.w").raw_value()) v = 0.1 * rng.gaussian();
             auto partial = grad_cloud(24, rng);
             auto gt = Tensor<double>::from_cloud(grad_cloud(20, rng));
             const uint64_t ts = derive_seed(seed, "t"), vs = derive_seed(seed, "v");
             auto leaves = detail::pick_small_params(
                 net.params(), {"tok.", "enc.", "coarse.", "query.", "value.", "dec.", "fold."},
                 48);
             return grad_check(
                 [&](std::vector<Tensor<double>>&) {
                     auto out = net.forward(partial, ts, vs);
                     return add(chamfer_grad(out.fine, gt, ChamferNorm::l1),
                                chamfer_grad(out.dense, gt, ChamferNorm::l1));
                 },
                 leaves, detail::net_steps());
         }},
        {"loss", "end-to-end-pooling",
         [](uint64_t seed) {
             Rng rng(derive_seed(seed, "data"));
             auto cfg = grad_tiny_config();
             TCorresNet<double> net(cfg, derive_seed(seed, "init"));
             for (auto& v : net.params().at("fold.l3.w").raw_value()) v = 0.1 * rng.gaussian();
             auto partial = grad_cloud(24, rng);
             auto gt = Tensor<double>::from_cloud(grad_cloud(20, rng));
             const uint64_t ts = derive_seed(seed, "t"), vs = derive_seed(seed, "v");
             // Leaves downstream of the score-driven selection; upstream ones
             // are covered by the non-pooling case above.
             auto leaves = detail::pick_small_params(net.params(),
                                                     {"query.", "value.", "dec.", "fold."}, 48);
             return grad_check(
                 [&](std::vector<Tensor<double>>&) {
                     auto out = net.forward(partial, ts, vs);
                     return add(chamfer_grad(out.fine, gt, ChamferNorm::l1),
                                chamfer_grad(out.dense, gt, ChamferNorm::l1));
                 },
                 leaves, detail::net_steps());
         }},
    };
    return suite;
}

// Runs every case whose module matches (or all of them), one report per case.
inline std::vector<GradCaseResult> run_grad_suite(const std::string& module, uint64_t seed,
                                                  double tol = 1e-4) {
    bool known = module == "all";
    for (const char* m : {"ops", "blocks", "loss"})
        if (module == m) known = true;
    if (!known) throw std::invalid_argument("unknown gradient suite module: " + module);

    std::vector<GradCaseResult> results;
    for (const auto& c : grad_suite()) {
        if (module != "all" && module != c.module) continue;
        auto rep = c.run(seed);
        GradCaseResult res;
        res.module = c.module;
        res.name = c.name;
        res.max_rel_err = rep.max_rel_err;
        res.coords_checked = rep.coords_checked;
        res.worst_analytic = rep.worst_analytic;
        res.worst_numeric = rep.worst_numeric;
        res.pass = rep.max_rel_err <= tol && rep.coords_checked > 0;
        results.push_back(std::move(res));
    }
    return results;
}

}  // namespace tcorres
