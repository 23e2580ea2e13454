#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "geometry.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace tcorres {

// Named registry of trainable tensors. Creation order fixes the RNG draw
// order; iteration (std::map) gives a stable name order for the optimizer
// and checkpoints.
template <class T>
class ParamStore {
public:
    Tensor<T> create(const std::string& name, Shape shape, std::vector<T> data) {
        if (map_.count(name)) throw std::logic_error("param '" + name + "' already registered");
        auto t = Tensor<T>::from(std::move(shape), std::move(data), true);
        map_.emplace(name, t);
        return t;
    }

    Tensor<T> create_glorot(const std::string& name, int64_t fan_in, int64_t fan_out, Rng& rng) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::vector<T> d(static_cast<size_t>(fan_in * fan_out));
        for (auto& x : d) x = static_cast<T>(rng.uniform(-limit, limit));
        return create(name, {fan_in, fan_out}, std::move(d));
    }

    Tensor<T> create_zeros(const std::string& name, Shape shape) {
        auto n = static_cast<size_t>(shape_numel(shape));
        return create(name, std::move(shape), std::vector<T>(n, T(0)));
    }

    Tensor<T> create_ones(const std::string& name, Shape shape) {
        auto n = static_cast<size_t>(shape_numel(shape));
        return create(name, std::move(shape), std::vector<T>(n, T(1)));
    }

    Tensor<T>& at(const std::string& name) {
        auto it = map_.find(name);
        if (it == map_.end()) throw std::out_of_range("unknown param '" + name + "'");
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = map_.find(name);
        if (it == map_.end()) throw std::out_of_range("unknown param '" + name + "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return map_.count(name) != 0; }
    size_t size() const { return map_.size(); }
    auto begin() { return map_.begin(); }
    auto end() { return map_.end(); }
    auto begin() const { return map_.begin(); }
    auto end() const { return map_.end(); }

    int64_t total_scalars() const {
        int64_t n = 0;
        for (const auto& [name, t] : map_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : map_) t.zero_grad();
    }

private:
    std::map<std::string, Tensor<T>> map_;
};

enum class Act { relu, gelu, tanh };

template <class T>
Tensor<T> activate(const Tensor<T>& x, Act act) {
    switch (act) {
        case Act::relu: return relu(x);
        case Act::gelu: return gelu(x);
        case Act::tanh: return tanh(x);
    }
    throw std::logic_error("unknown activation");
}

template <class T>
struct Linear {
    Tensor<T> w;
    Tensor<T> b;
    bool has_bias = true;

    Linear() = default;
    Linear(ParamStore<T>& ps, const std::string& prefix, int64_t in, int64_t out, Rng& rng,
           bool bias = true)
        : w(ps.create_glorot(prefix + ".w", in, out, rng)), has_bias(bias) {
        if (bias) b = ps.create_zeros(prefix + ".b", {out});
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        auto y = matmul(x, w);
        return has_bias ? add(y, b) : y;
    }
};

// Stack of linear layers with an activation between (none after the last).
template <class T>
struct Mlp {
    std::vector<Linear<T>> layers;
    Act act = Act::gelu;

    Mlp() = default;
    Mlp(ParamStore<T>& ps, const std::string& prefix, const std::vector<int64_t>& dims, Rng& rng,
        Act activation = Act::gelu)
        : act(activation) {
        if (dims.size() < 2) throw std::invalid_argument("mlp needs at least two dims");
        for (size_t i = 0; i + 1 < dims.size(); ++i)
            layers.emplace_back(ps, prefix + ".l" + std::to_string(i), dims[i], dims[i + 1], rng);
    }

    Tensor<T> operator()(Tensor<T> x) const {
        for (size_t i = 0; i < layers.size(); ++i) {
            x = layers[i](x);
            if (i + 1 < layers.size()) x = activate(x, act);
        }
        return x;
    }
};

template <class T>
struct LayerNorm {
    Tensor<T> gamma, beta;

    LayerNorm() = default;
    LayerNorm(ParamStore<T>& ps, const std::string& prefix, int64_t dim)
        : gamma(ps.create_ones(prefix + ".gamma", {dim})),
          beta(ps.create_zeros(prefix + ".beta", {dim})) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

// Scaled dot-product attention over full token sets. Inputs are 2-D
// [tokens, width]; heads are split internally.
template <class T>
struct MultiHeadAttention {
    Linear<T> wq, wk, wv, wo;
    int heads = 1;
    int64_t dim = 0, dh = 0;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore<T>& ps, const std::string& prefix, int64_t width, int n_heads,
                       Rng& rng)
        : wq(ps, prefix + ".q", width, width, rng),
          wk(ps, prefix + ".k", width, width, rng),
          wv(ps, prefix + ".v", width, width, rng),
          wo(ps, prefix + ".o", width, width, rng),
          heads(n_heads),
          dim(width),
          dh(width / n_heads) {
        if (width % n_heads != 0) throw std::invalid_argument("attention width must split across heads");
    }

    // mask (optional): [n_q, n_kv] additive, broadcast across heads.
    Tensor<T> operator()(const Tensor<T>& q_in, const Tensor<T>& k_in, const Tensor<T>& v_in,
                         const Tensor<T>* mask = nullptr) const {
        const int64_t nq = q_in.dim(0), nk = k_in.dim(0);
        auto split = [&](const Tensor<T>& x, int64_t n) {
            return permute(reshape(x, {n, heads, dh}), {1, 0, 2});  // [H, n, dh]
        };
        auto q = split(wq(q_in), nq);
        auto k = split(wk(k_in), nk);
        auto v = split(wv(v_in), nk);
        auto scores = scale(matmul(q, permute(k, {0, 2, 1})),
                            static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
        if (mask) scores = add(scores, *mask);
        auto ctx = matmul(softmax(scores, 2), v);                     // [H, nq, dh]
        return wo(reshape(permute(ctx, {1, 0, 2}), {nq, dim}));
    }
};

namespace detail {

inline std::vector<int64_t> repeat_index(int64_t n, int64_t k) {
    std::vector<int64_t> idx(static_cast<size_t>(n * k));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < k; ++j) idx[static_cast<size_t>(i * k + j)] = i;
    return idx;
}

inline std::vector<int64_t> neighbor_index_flat(const NeighborIndex& nbr) {
    std::vector<int64_t> idx(nbr.idx.size());
    for (size_t i = 0; i < nbr.idx.size(); ++i) idx[i] = nbr.idx[i];
    return idx;
}

}  // namespace detail

// Edge convolution: per node i and neighbor j, an edge message
// W1·x_i + W2·(x_j − x_i) + bias, activated and max-pooled over neighbors.
// Factored as (A_i − B_i) + B_j with A = XW1 + b, B = XW2 so the per-edge
// work is gathers and adds.
template <class T>
struct EdgeConv {
    Linear<T> self_proj;   // W1 with bias
    Linear<T> delta_proj;  // W2 without bias
    Act act = Act::relu;

    EdgeConv() = default;
    EdgeConv(ParamStore<T>& ps, const std::string& prefix, int64_t in, int64_t out, Rng& rng,
             Act activation = Act::relu)
        : self_proj(ps, prefix + ".self", in, out, rng),
          delta_proj(ps, prefix + ".delta", in, out, rng, false),
          act(activation) {}

    Tensor<T> operator()(const Tensor<T>& x, const NeighborIndex& nbr) const {
        const int64_t n = x.dim(0);
        if (nbr.rows != n) throw ShapeError("edge conv: neighbor rows do not match tokens");
        const int64_t width = self_proj.w.dim(1);
        auto a = self_proj(x);
        auto b = delta_proj(x);
        auto self_part = gather_rows(sub(a, b), detail::repeat_index(n, nbr.k));
        auto nbr_part = gather_rows(b, detail::neighbor_index_flat(nbr));
        auto edges = activate(add(self_part, nbr_part), act);        // [n*k, width]
        return reduce_max(reshape(edges, {n, nbr.k, width}), 1);     // [n, width]
    }
};

}  // namespace tcorres
