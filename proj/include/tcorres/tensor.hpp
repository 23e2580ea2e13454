#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "point_cloud.hpp"
#include "rng.hpp"

namespace tcorres {

using Shape = std::vector<int64_t>;

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

// Dense row-major tensor participating in a dynamically recorded reverse-mode
// tape. Handles share nodes; nodes are immutable after creation except for
// gradient accumulation during backward. The scalar type is a template
// parameter: float for training, double for finite-difference checking.
template <class T>
class Tensor {
public:
    using BackwardFn = std::function<void(const std::vector<T>&)>;

    struct Node {
        Shape shape;
        std::vector<T> value;
        std::vector<T> grad;  // empty until first accumulation
        bool requires_grad = false;
        bool needs_grad = false;
        bool backward_root_done = false;
        uint64_t seq = 0;
        std::vector<Tensor> parents;
        BackwardFn backward_fn;
    };

    Tensor() = default;

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
    const std::vector<T>& value() const { return node_->value; }
    std::vector<T>& raw_value() { return node_->value; }

    T item() const {
        if (numel() != 1) throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool needs_grad() const { return node_->needs_grad; }

    Tensor& set_requires_grad(bool v) {
        if (!node_->parents.empty())
            throw std::logic_error("set_requires_grad: only leaf tensors can be marked");
        node_->requires_grad = v;
        node_->needs_grad = v;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<T>& grad() const {
        if (node_->grad.empty()) throw std::logic_error("grad: no gradient accumulated");
        return node_->grad;
    }
    void zero_grad() {
        std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Adds g (numel entries) into this node's gradient buffer.
    void accumulate_grad(const T* g, int64_t n) const {
        if (!node_->needs_grad) return;
        if (n != numel()) throw ShapeError("accumulate_grad: size mismatch");
        if (node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
        for (int64_t i = 0; i < n; ++i) node_->grad[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
    }
    void accumulate_grad(const std::vector<T>& g) const {
        accumulate_grad(g.data(), static_cast<int64_t>(g.size()));
    }

    // ---- construction -------------------------------------------------

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        for (int64_t d : shape)
            if (d <= 0) throw ShapeError("tensor: non-positive extent in shape " + shape_str(shape));
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        t.node_->requires_grad = requires_grad;
        t.node_->needs_grad = requires_grad;
        t.node_->seq = next_seq();
        return t;
    }

    static Tensor zeros(Shape shape) {
        auto n = static_cast<size_t>(shape_numel(shape));
        return from(std::move(shape), std::vector<T>(n, T(0)));
    }
    static Tensor full(Shape shape, T v) {
        auto n = static_cast<size_t>(shape_numel(shape));
        return from(std::move(shape), std::vector<T>(n, v));
    }
    static Tensor scalar(T v) { return from({1}, {v}); }

    static Tensor randu(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
        auto n = static_cast<size_t>(shape_numel(shape));
        std::vector<T> d(n);
        for (auto& x : d) x = static_cast<T>(rng.uniform(lo, hi));
        return from(std::move(shape), std::move(d), requires_grad);
    }
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
        auto n = static_cast<size_t>(shape_numel(shape));
        std::vector<T> d(n);
        for (auto& x : d) x = static_cast<T>(rng.gaussian() * stddev);
        return from(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor from_cloud(const PointCloud<T>& pc, bool requires_grad = false) {
        std::vector<T> d;
        d.reserve(static_cast<size_t>(pc.count()) * 3);
        for (const auto& p : pc.pts) {
            d.push_back(p.x);
            d.push_back(p.y);
            d.push_back(p.z);
        }
        return from({pc.count(), 3}, std::move(d), requires_grad);
    }

    PointCloud<T> to_cloud() const {
        if (ndim() != 2 || dim(1) != 3)
            throw ShapeError("to_cloud: want shape [n,3], have " + shape_str(shape()));
        PointCloud<T> pc;
        pc.pts.resize(static_cast<size_t>(dim(0)));
        for (int64_t i = 0; i < dim(0); ++i)
            pc.pts[static_cast<size_t>(i)] = {node_->value[static_cast<size_t>(3 * i)],
                                              node_->value[static_cast<size_t>(3 * i + 1)],
                                              node_->value[static_cast<size_t>(3 * i + 2)]};
        return pc;
    }

    // Records one tape node. Public so downstream headers can define ops with
    // analytic backward rules.
    static Tensor make(Shape shape, std::vector<T> value, std::vector<Tensor> parents,
                       BackwardFn backward) {
        Tensor t = from(std::move(shape), std::move(value));
        bool needs = false;
        for (const auto& p : parents) needs = needs || p.needs_grad();
        t.node_->needs_grad = needs;
        t.node_->parents = std::move(parents);
        if (needs) t.node_->backward_fn = std::move(backward);
        return t;
    }

    std::weak_ptr<Node> weak_node() const { return node_; }

    // Reverse sweep from a scalar. Recording order doubles as the reverse
    // traversal order: parents always carry smaller sequence numbers.
    void backward() const {
        if (numel() != 1) throw std::logic_error("backward: output is not scalar");
        if (node_->backward_root_done)
            throw std::logic_error("backward: second backward from the same scalar without tape reset");
        node_->backward_root_done = true;
        if (!node_->needs_grad) return;

        std::vector<Node*> order;
        std::vector<std::shared_ptr<Node>> keep_alive;
        collect(node_, order, keep_alive);
        std::sort(order.begin(), order.end(),
                  [](const Node* a, const Node* b) { return a->seq > b->seq; });

        node_->grad.assign(1, T(1));
        for (Node* n : order) {
            if (n->backward_fn && !n->grad.empty()) n->backward_fn(n->grad);
        }
    }

private:
    std::shared_ptr<Node> node_;

    static uint64_t next_seq() {
        static std::atomic<uint64_t> counter{1};
        return counter.fetch_add(1, std::memory_order_relaxed);
    }

    static void collect(const std::shared_ptr<Node>& n, std::vector<Node*>& order,
                        std::vector<std::shared_ptr<Node>>& keep_alive) {
        // Iterative DFS; marks via a scratch set keyed on pointer.
        std::vector<std::shared_ptr<Node>> stack{n};
        std::vector<const Node*> seen;
        auto visited = [&](const Node* p) {
            return std::find(seen.begin(), seen.end(), p) != seen.end();
        };
        while (!stack.empty()) {
            auto cur = stack.back();
            stack.pop_back();
            if (!cur->needs_grad || visited(cur.get())) continue;
            seen.push_back(cur.get());
            order.push_back(cur.get());
            keep_alive.push_back(cur);
            for (const auto& p : cur->parents)
                if (p.defined() && p.needs_grad() && !visited(p.node_.get())) stack.push_back(p.node_);
        }
    }
};

// ---- broadcast helpers -------------------------------------------------
//
// Broadcasting is restricted to leading batch axes: an operand must equal a
// suffix of the output shape, with only 1s (or nothing) in front. Under that
// rule the operand's flat index is simply out_index % operand_numel.

namespace detail {

inline bool leading_broadcastable(const Shape& op, const Shape& out) {
    size_t ro = op.size(), rt = out.size();
    if (ro > rt) return false;
    bool suffix_started = false;
    for (size_t i = 0; i < ro; ++i) {
        int64_t d = op[ro - 1 - i];
        int64_t o = out[rt - 1 - i];
        if (!suffix_started) {
            // scanning right-to-left inside the exact-match suffix
            if (d == o) continue;
            if (d == 1) {
                suffix_started = true;
                continue;
            }
            return false;
        }
        if (d != 1) return false;
    }
    return true;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* opname) {
    const Shape& big = a.size() >= b.size() ? a : b;
    const Shape& small = a.size() >= b.size() ? b : a;
    Shape out = big;
    // wherever big has 1 and small has a real extent (right-aligned), take it
    size_t off = big.size() - small.size();
    for (size_t i = 0; i < small.size(); ++i)
        out[off + i] = std::max(big[off + i], small[i]);
    if (!leading_broadcastable(a, out) || !leading_broadcastable(b, out))
        throw ShapeError(std::string(opname) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                         " do not broadcast (leading axes only)");
    return out;
}

// Folds a gradient over the output back onto a leading-broadcast operand.
template <class T>
inline void fold_accumulate(const Tensor<T>& parent, const std::vector<T>& g) {
    if (!parent.needs_grad()) return;
    const int64_t n = parent.numel();
    if (static_cast<int64_t>(g.size()) == n) {
        parent.accumulate_grad(g.data(), n);
        return;
    }
    std::vector<T> folded(static_cast<size_t>(n), T(0));
    for (size_t i = 0; i < g.size(); ++i) folded[i % static_cast<size_t>(n)] += g[i];
    parent.accumulate_grad(folded.data(), n);
}

}  // namespace detail

// ---- elementwise binary ops ---------------------------------------------

namespace detail {

template <class T, class FwdFn, class BwdFn>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, FwdFn fwd, BwdFn bwd) {
    Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
    const size_t n = static_cast<size_t>(shape_numel(out_shape));
    const auto& av = a.value();
    const auto& bv = b.value();
    const size_t na = av.size(), nb = bv.size();
    std::vector<T> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = fwd(av[i % na], bv[i % nb]);
    return Tensor<T>::make(std::move(out_shape), std::move(out), {a, b},
                           [a, b, bwd](const std::vector<T>& g) { bwd(a, b, g); });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "add", a, b, [](T x, T y) { return x + y; },
        [](const Tensor<T>& pa, const Tensor<T>& pb, const std::vector<T>& g) {
            detail::fold_accumulate(pa, g);
            detail::fold_accumulate(pb, g);
        });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "sub", a, b, [](T x, T y) { return x - y; },
        [](const Tensor<T>& pa, const Tensor<T>& pb, const std::vector<T>& g) {
            detail::fold_accumulate(pa, g);
            if (pb.needs_grad()) {
                std::vector<T> ng(g.size());
                for (size_t i = 0; i < g.size(); ++i) ng[i] = -g[i];
                detail::fold_accumulate(pb, ng);
            }
        });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op<T>(
        "mul", a, b, [](T x, T y) { return x * y; },
        [](const Tensor<T>& pa, const Tensor<T>& pb, const std::vector<T>& g) {
            const auto& av = pa.value();
            const auto& bv = pb.value();
            if (pa.needs_grad()) {
                std::vector<T> ga(g.size());
                for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bv[i % bv.size()];
                detail::fold_accumulate(pa, ga);
            }
            if (pb.needs_grad()) {
                std::vector<T> gb(g.size());
                for (size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * av[i % av.size()];
                detail::fold_accumulate(pb, gb);
            }
        });
}

// ---- elementwise unary ops ------------------------------------------------

namespace detail {

template <class T, class FwdFn, class GradFn>
Tensor<T> unary_op(const Tensor<T>& a, FwdFn fwd, GradFn dfdx) {
    const auto& av = a.value();
    std::vector<T> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    return Tensor<T>::make(a.shape(), std::move(out), {a},
                           [a, dfdx](const std::vector<T>& g) {
                               const auto& x = a.value();
                               std::vector<T> gx(g.size());
                               for (size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * dfdx(x[i]);
                               a.accumulate_grad(gx);
                           });
}

}  // namespace detail

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary_op<T>(
        a, [](T x) { return x > T(0) ? x : T(0); }, [](T x) { return x > T(0) ? T(1) : T(0); });
}

namespace detail {
inline constexpr double inv_sqrt2 = 0.70710678118654752440;
inline constexpr double inv_sqrt2pi = 0.39894228040143267794;
}  // namespace detail

template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
    using detail::inv_sqrt2;
    using detail::inv_sqrt2pi;
    return detail::unary_op<T>(
        a,
        [](T x) {
            return static_cast<T>(0.5 * static_cast<double>(x) *
                                  (1.0 + std::erf(static_cast<double>(x) * inv_sqrt2)));
        },
        [](T x) {
            double xd = static_cast<double>(x);
            double cdf = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
            return static_cast<T>(cdf + xd * pdf);
        });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
    return detail::unary_op<T>(
        a, [](T x) { return std::tanh(x); },
        [](T x) {
            T t = std::tanh(x);
            return T(1) - t * t;
        });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::unary_op<T>(
        a, [](T x) { return std::exp(x); }, [](T x) { return std::exp(x); });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& a) {
    return detail::unary_op<T>(
        a, [](T x) { return std::sqrt(x); },
        [](T x) { return T(0.5) / std::sqrt(x); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
    return detail::unary_op<T>(
        a, [](T x) { return -x; }, [](T) { return T(-1); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    return detail::unary_op<T>(
        a, [c](T x) { return x * c; }, [c](T) { return c; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    return detail::unary_op<T>(
        a, [c](T x) { return x + c; }, [](T) { return T(1); });
}

// Detached copy: same values, no tape history.
template <class T>
Tensor<T> stop_grad(const Tensor<T>& a) {
    return Tensor<T>::from(a.shape(), a.value());
}

// ---- matmul ----------------------------------------------------------------

namespace detail {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

// C += or = A(m,k) * B(k,n), optional transposes applied to the logical
// operands (buffers stay row-major).
template <class T>
inline void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool ta, bool tb,
                 bool accumulate) {
    ECMap<T> A(a, ta ? k : m, ta ? m : k);
    ECMap<T> B(b, tb ? n : k, tb ? k : n);
    EMap<T> C(c, m, n);
    if (!ta && !tb) {
        if (accumulate) C.noalias() += A * B;
        else C.noalias() = A * B;
    } else if (ta && !tb) {
        if (accumulate) C.noalias() += A.transpose() * B;
        else C.noalias() = A.transpose() * B;
    } else if (!ta && tb) {
        if (accumulate) C.noalias() += A * B.transpose();
        else C.noalias() = A * B.transpose();
    } else {
        if (accumulate) C.noalias() += A.transpose() * B.transpose();
        else C.noalias() = A.transpose() * B.transpose();
    }
}

}  // namespace detail

// Matrix product over the trailing two axes. Leading batch axes must match
// exactly, or one operand may be rank-2 and is then shared across the batch.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() < 2 || b.ndim() < 2)
        throw ShapeError("matmul: operands must be at least rank 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const int64_t m = sa[sa.size() - 2], ka = sa[sa.size() - 1];
    const int64_t kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
    if (ka != kb)
        throw ShapeError("matmul: inner extents disagree: " + shape_str(sa) + " x " + shape_str(sb));
    Shape abatch(sa.begin(), sa.end() - 2), bbatch(sb.begin(), sb.end() - 2);
    if (!abatch.empty() && !bbatch.empty() && abatch != bbatch)
        throw ShapeError("matmul: batch extents disagree: " + shape_str(sa) + " x " + shape_str(sb));
    Shape batch = abatch.empty() ? bbatch : abatch;
    const int64_t nb = shape_numel(batch);
    const bool a_shared = abatch.empty() && !batch.empty();
    const bool b_shared = bbatch.empty() && !batch.empty();

    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<T> out(static_cast<size_t>(nb * m * n));
    const T* ap = a.value().data();
    const T* bp = b.value().data();
    for (int64_t i = 0; i < nb; ++i) {
        detail::gemm(ap + (a_shared ? 0 : i * m * ka), bp + (b_shared ? 0 : i * ka * n),
                     out.data() + i * m * n, m, ka, n, false, false, false);
    }

    return Tensor<T>::make(
        std::move(out_shape), std::move(out), {a, b},
        [a, b, m, ka, n, nb, a_shared, b_shared](const std::vector<T>& g) {
            const T* ap = a.value().data();
            const T* bp = b.value().data();
            if (a.needs_grad()) {
                std::vector<T> ga(a.value().size(), T(0));
                for (int64_t i = 0; i < nb; ++i)
                    detail::gemm(g.data() + i * m * n, bp + (b_shared ? 0 : i * ka * n),
                                 ga.data() + (a_shared ? 0 : i * m * ka), m, n, ka, false, true, true);
                a.accumulate_grad(ga);
            }
            if (b.needs_grad()) {
                std::vector<T> gb(b.value().size(), T(0));
                for (int64_t i = 0; i < nb; ++i)
                    detail::gemm(ap + (a_shared ? 0 : i * m * ka), g.data() + i * m * n,
                                 gb.data() + (b_shared ? 0 : i * ka * n), ka, m, n, true, false, true);
                b.accumulate_grad(gb);
            }
        });
}

// ---- shape ops --------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    return Tensor<T>::make(std::move(shape), a.value(), {a},
                           [a](const std::vector<T>& g) { a.accumulate_grad(g); });
}

namespace detail {

inline std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

template <class T>
inline std::vector<T> permute_copy(const std::vector<T>& src, const Shape& in_shape,
                                   const std::vector<int>& perm) {
    const size_t r = in_shape.size();
    Shape out_shape(r);
    for (size_t i = 0; i < r; ++i) out_shape[i] = in_shape[static_cast<size_t>(perm[i])];
    auto in_strides = row_major_strides(in_shape);
    auto out_strides = row_major_strides(out_shape);
    std::vector<T> dst(src.size());
    const int64_t n = static_cast<int64_t>(src.size());
    std::vector<int64_t> coord(r);
    for (int64_t o = 0; o < n; ++o) {
        int64_t rem = o;
        int64_t in_off = 0;
        for (size_t i = 0; i < r; ++i) {
            coord[i] = rem / out_strides[i];
            rem %= out_strides[i];
            in_off += coord[i] * in_strides[static_cast<size_t>(perm[i])];
        }
        dst[static_cast<size_t>(o)] = src[static_cast<size_t>(in_off)];
    }
    return dst;
}

}  // namespace detail

template <class T>
Tensor<T> permute(const Tensor<T>& a, std::vector<int> perm) {
    const size_t r = a.shape().size();
    if (perm.size() != r) throw ShapeError("permute: rank mismatch");
    std::vector<char> seen(r, 0);
    for (int p : perm) {
        if (p < 0 || static_cast<size_t>(p) >= r || seen[static_cast<size_t>(p)])
            throw ShapeError("permute: invalid permutation");
        seen[static_cast<size_t>(p)] = 1;
    }
    Shape out_shape(r);
    for (size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[static_cast<size_t>(perm[i])];
    auto out = detail::permute_copy(a.value(), a.shape(), perm);
    return Tensor<T>::make(std::move(out_shape), std::move(out), {a},
                           [a, perm](const std::vector<T>& g) {
                               std::vector<int> inv(perm.size());
                               for (size_t i = 0; i < perm.size(); ++i)
                                   inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
                               Shape gshape(perm.size());
                               for (size_t i = 0; i < perm.size(); ++i)
                                   gshape[i] = a.shape()[static_cast<size_t>(perm[i])];
                               auto gp = detail::permute_copy(g, gshape, inv);
                               a.accumulate_grad(gp);
                           });
}

namespace detail {

// Moves `axis` to the back, leaving the rest in order.
inline std::vector<int> axis_to_last_perm(size_t rank, int axis) {
    std::vector<int> perm;
    perm.reserve(rank);
    for (size_t i = 0; i < rank; ++i)
        if (static_cast<int>(i) != axis) perm.push_back(static_cast<int>(i));
    perm.push_back(axis);
    return perm;
}

inline int normalize_axis(int axis, size_t rank, const char* opname) {
    if (axis < 0) axis += static_cast<int>(rank);
    if (axis < 0 || static_cast<size_t>(axis) >= rank)
        throw ShapeError(std::string(opname) + ": axis out of range");
    return axis;
}

}  // namespace detail

// ---- reductions and softmax (last-axis cores with permute wrappers) --------

template <class T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
    axis = detail::normalize_axis(axis, a.shape().size(), "softmax");
    const int last = static_cast<int>(a.shape().size()) - 1;
    if (axis != last) {
        auto perm = detail::axis_to_last_perm(a.shape().size(), axis);
        std::vector<int> inv(perm.size());
        for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
        return permute(softmax(permute(a, perm), static_cast<int>(perm.size()) - 1), inv);
    }
    const Shape& s = a.shape();
    const int64_t c = s.back();
    const int64_t rows = a.numel() / c;
    const auto& x = a.value();
    std::vector<T> y(x.size());
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * c;
        T* yr = y.data() + r * c;
        T mx = xr[0];
        for (int64_t i = 1; i < c; ++i) mx = std::max(mx, xr[i]);
        T sum = 0;
        for (int64_t i = 0; i < c; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            sum += yr[i];
        }
        T inv = T(1) / sum;
        for (int64_t i = 0; i < c; ++i) yr[i] *= inv;
    }
    std::vector<T> y_copy = y;  // captured for the backward rule
    return Tensor<T>::make(s, std::move(y), {a},
                           [a, y_copy, rows, c](const std::vector<T>& g) {
                               std::vector<T> gx(g.size());
                               for (int64_t r = 0; r < rows; ++r) {
                                   const T* yr = y_copy.data() + r * c;
                                   const T* gr = g.data() + r * c;
                                   T dot = 0;
                                   for (int64_t i = 0; i < c; ++i) dot += gr[i] * yr[i];
                                   T* gxr = gx.data() + r * c;
                                   for (int64_t i = 0; i < c; ++i) gxr[i] = yr[i] * (gr[i] - dot);
                               }
                               a.accumulate_grad(gx);
                           });
}

// Reduce-max along an axis; gradient routes to the first occurrence of the
// per-slot maximum.
template <class T>
Tensor<T> reduce_max(const Tensor<T>& a, int axis) {
    axis = detail::normalize_axis(axis, a.shape().size(), "reduce_max");
    const int last = static_cast<int>(a.shape().size()) - 1;
    if (axis != last) {
        auto perm = detail::axis_to_last_perm(a.shape().size(), axis);
        return reduce_max(permute(a, perm), static_cast<int>(perm.size()) - 1);
    }
    const Shape& s = a.shape();
    const int64_t c = s.back();
    if (c < 1) throw ShapeError("reduce_max: empty axis");
    const int64_t rows = a.numel() / c;
    Shape out_shape(s.begin(), s.end() - 1);
    if (out_shape.empty()) out_shape.push_back(1);
    const auto& x = a.value();
    std::vector<T> y(static_cast<size_t>(rows));
    std::vector<int64_t> arg(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * c;
        int64_t bi = 0;
        T bv = xr[0];
        for (int64_t i = 1; i < c; ++i)
            if (xr[i] > bv) {
                bv = xr[i];
                bi = i;
            }
        y[static_cast<size_t>(r)] = bv;
        arg[static_cast<size_t>(r)] = bi;
    }
    return Tensor<T>::make(std::move(out_shape), std::move(y), {a},
                           [a, arg, rows, c](const std::vector<T>& g) {
                               std::vector<T> gx(a.value().size(), T(0));
                               for (int64_t r = 0; r < rows; ++r)
                                   gx[static_cast<size_t>(r * c + arg[static_cast<size_t>(r)])] =
                                       g[static_cast<size_t>(r)];
                               a.accumulate_grad(gx);
                           });
}

template <class T>
Tensor<T> reduce_sum(const Tensor<T>& a, int axis) {
    axis = detail::normalize_axis(axis, a.shape().size(), "reduce_sum");
    const int last = static_cast<int>(a.shape().size()) - 1;
    if (axis != last) {
        auto perm = detail::axis_to_last_perm(a.shape().size(), axis);
        return reduce_sum(permute(a, perm), static_cast<int>(perm.size()) - 1);
    }
    const Shape& s = a.shape();
    const int64_t c = s.back();
    const int64_t rows = a.numel() / c;
    Shape out_shape(s.begin(), s.end() - 1);
    if (out_shape.empty()) out_shape.push_back(1);
    const auto& x = a.value();
    std::vector<T> y(static_cast<size_t>(rows), T(0));
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * c;
        T acc = 0;
        for (int64_t i = 0; i < c; ++i) acc += xr[i];
        y[static_cast<size_t>(r)] = acc;
    }
    return Tensor<T>::make(std::move(out_shape), std::move(y), {a},
                           [a, rows, c](const std::vector<T>& g) {
                               std::vector<T> gx(a.value().size());
                               for (int64_t r = 0; r < rows; ++r)
                                   for (int64_t i = 0; i < c; ++i)
                                       gx[static_cast<size_t>(r * c + i)] = g[static_cast<size_t>(r)];
                               a.accumulate_grad(gx);
                           });
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
    const auto& x = a.value();
    T acc = 0;
    for (T v : x) acc += v;
    return Tensor<T>::make({1}, {acc}, {a}, [a](const std::vector<T>& g) {
        std::vector<T> gx(a.value().size(), g[0]);
        a.accumulate_grad(gx);
    });
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// ---- concat / gather / row scaling -----------------------------------------

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const size_t rank = parts[0].shape().size();
    axis = detail::normalize_axis(axis, rank, "concat");
    Shape out_shape = parts[0].shape();
    int64_t axis_total = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != rank) throw ShapeError("concat: rank mismatch");
        for (size_t i = 0; i < rank; ++i)
            if (static_cast<int>(i) != axis && p.shape()[i] != out_shape[i])
                throw ShapeError("concat: shape mismatch at axis " + std::to_string(i) + ": " +
                                 shape_str(p.shape()) + " vs " + shape_str(out_shape));
        axis_total += p.shape()[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = axis_total;

    int64_t outer = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
    int64_t tail = 1;
    for (size_t i = static_cast<size_t>(axis) + 1; i < rank; ++i) tail *= out_shape[i];

    std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
    const int64_t out_block = axis_total * tail;
    int64_t offset = 0;
    for (const auto& p : parts) {
        const int64_t blk = p.shape()[static_cast<size_t>(axis)] * tail;
        const auto& src = p.value();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(src.data() + o * blk, src.data() + (o + 1) * blk,
                      out.data() + o * out_block + offset);
        offset += blk;
    }

    std::vector<Tensor<T>> parents = parts;
    return Tensor<T>::make(std::move(out_shape), std::move(out), parents,
                           [parents, outer, tail, axis_total](const std::vector<T>& g) {
                               const int64_t out_block = axis_total * tail;
                               int64_t offset = 0;
                               for (const auto& p : parents) {
                                   int64_t axis_len = p.numel() / (outer * tail);
                                   const int64_t pblk = axis_len * tail;
                                   if (p.needs_grad()) {
                                       std::vector<T> gp(static_cast<size_t>(p.numel()));
                                       for (int64_t o = 0; o < outer; ++o)
                                           std::copy(g.data() + o * out_block + offset,
                                                     g.data() + o * out_block + offset + pblk,
                                                     gp.data() + o * pblk);
                                       p.accumulate_grad(gp);
                                   }
                                   offset += pblk;
                               }
                           });
}

// Rows of `a` selected by index; gradient scatter-adds back.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int64_t>& idx) {
    if (a.ndim() < 1) throw ShapeError("gather_rows: rank-0 input");
    const int64_t rows = a.shape()[0];
    const int64_t inner = a.numel() / rows;
    for (int64_t i : idx)
        if (i < 0 || i >= rows)
            throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range [0," +
                             std::to_string(rows) + ")");
    Shape out_shape = a.shape();
    out_shape[0] = static_cast<int64_t>(idx.size());
    std::vector<T> out(static_cast<size_t>(out_shape[0] * inner));
    const auto& src = a.value();
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(src.data() + idx[r] * inner, src.data() + (idx[r] + 1) * inner,
                  out.data() + static_cast<int64_t>(r) * inner);
    return Tensor<T>::make(std::move(out_shape), std::move(out), {a},
                           [a, idx, inner](const std::vector<T>& g) {
                               std::vector<T> gx(a.value().size(), T(0));
                               for (size_t r = 0; r < idx.size(); ++r) {
                                   const T* gr = g.data() + static_cast<int64_t>(r) * inner;
                                   T* dst = gx.data() + idx[r] * inner;
                                   for (int64_t c = 0; c < inner; ++c) dst[c] += gr[c];
                               }
                               a.accumulate_grad(gx);
                           });
}

// out[r, ...] = a[r, ...] * s[r]
template <class T>
Tensor<T> scale_rows(const Tensor<T>& a, const Tensor<T>& s) {
    if (a.ndim() < 1 || s.ndim() != 1 || s.shape()[0] != a.shape()[0])
        throw ShapeError("scale_rows: want a[R,...] and s[R], got " + shape_str(a.shape()) + " and " +
                         shape_str(s.shape()));
    const int64_t rows = a.shape()[0];
    const int64_t inner = a.numel() / rows;
    const auto& av = a.value();
    const auto& sv = s.value();
    std::vector<T> out(av.size());
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < inner; ++c)
            out[static_cast<size_t>(r * inner + c)] = av[static_cast<size_t>(r * inner + c)] * sv[static_cast<size_t>(r)];
    return Tensor<T>::make(a.shape(), std::move(out), {a, s},
                           [a, s, rows, inner](const std::vector<T>& g) {
                               const auto& av = a.value();
                               const auto& sv = s.value();
                               if (a.needs_grad()) {
                                   std::vector<T> ga(av.size());
                                   for (int64_t r = 0; r < rows; ++r)
                                       for (int64_t c = 0; c < inner; ++c)
                                           ga[static_cast<size_t>(r * inner + c)] =
                                               g[static_cast<size_t>(r * inner + c)] * sv[static_cast<size_t>(r)];
                                   a.accumulate_grad(ga);
                               }
                               if (s.needs_grad()) {
                                   std::vector<T> gs(static_cast<size_t>(rows), T(0));
                                   for (int64_t r = 0; r < rows; ++r) {
                                       T acc = 0;
                                       for (int64_t c = 0; c < inner; ++c)
                                           acc += g[static_cast<size_t>(r * inner + c)] *
                                                  av[static_cast<size_t>(r * inner + c)];
                                       gs[static_cast<size_t>(r)] = acc;
                                   }
                                   s.accumulate_grad(gs);
                               }
                           });
}

// ---- layer norm --------------------------------------------------------------

// Normalizes the last axis to zero mean / unit variance, then applies the
// affine pair (gamma, beta).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    const Shape& s = a.shape();
    const int64_t c = s.back();
    if (gamma.numel() != c || beta.numel() != c)
        throw ShapeError("layer_norm: affine params must have " + std::to_string(c) + " entries");
    const int64_t rows = a.numel() / c;
    const auto& x = a.value();
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    std::vector<T> y(x.size());
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * c;
        T* yr = y.data() + r * c;
        T mu = 0;
        for (int64_t i = 0; i < c; ++i) mu += xr[i];
        mu /= static_cast<T>(c);
        T var = 0;
        for (int64_t i = 0; i < c; ++i) {
            T d = xr[i] - mu;
            var += d * d;
        }
        var /= static_cast<T>(c);
        T inv = T(1) / std::sqrt(var + eps);
        for (int64_t i = 0; i < c; ++i) yr[i] = (xr[i] - mu) * inv * gv[static_cast<size_t>(i)] + bv[static_cast<size_t>(i)];
    }
    return Tensor<T>::make(
        s, std::move(y), {a, gamma, beta},
        [a, gamma, beta, rows, c, eps](const std::vector<T>& g) {
            const auto& x = a.value();
            const auto& gv = gamma.value();
            std::vector<T> gx(x.size());
            std::vector<T> ggamma(static_cast<size_t>(c), T(0));
            std::vector<T> gbeta(static_cast<size_t>(c), T(0));
            std::vector<T> xhat(static_cast<size_t>(c));
            for (int64_t r = 0; r < rows; ++r) {
                const T* xr = x.data() + r * c;
                const T* gr = g.data() + r * c;
                T mu = 0;
                for (int64_t i = 0; i < c; ++i) mu += xr[i];
                mu /= static_cast<T>(c);
                T var = 0;
                for (int64_t i = 0; i < c; ++i) {
                    T d = xr[i] - mu;
                    var += d * d;
                }
                var /= static_cast<T>(c);
                T inv = T(1) / std::sqrt(var + eps);
                T mean_dxhat = 0, mean_dxhat_xhat = 0;
                for (int64_t i = 0; i < c; ++i) {
                    xhat[static_cast<size_t>(i)] = (xr[i] - mu) * inv;
                    T dxh = gr[i] * gv[static_cast<size_t>(i)];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xhat[static_cast<size_t>(i)];
                }
                mean_dxhat /= static_cast<T>(c);
                mean_dxhat_xhat /= static_cast<T>(c);
                T* gxr = gx.data() + r * c;
                for (int64_t i = 0; i < c; ++i) {
                    T dxh = gr[i] * gv[static_cast<size_t>(i)];
                    gxr[i] = inv * (dxh - mean_dxhat - xhat[static_cast<size_t>(i)] * mean_dxhat_xhat);
                    ggamma[static_cast<size_t>(i)] += gr[i] * xhat[static_cast<size_t>(i)];
                    gbeta[static_cast<size_t>(i)] += gr[i];
                }
            }
            if (a.needs_grad()) a.accumulate_grad(gx);
            if (gamma.needs_grad()) gamma.accumulate_grad(ggamma);
            if (beta.needs_grad()) beta.accumulate_grad(gbeta);
        });
}

}  // namespace tcorres
