#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace tcorres {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t coords_checked = 0;
    int worst_leaf = -1;
    int64_t worst_coord = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Central-difference check of reverse-mode gradients. `f` must be a pure
// function of the leaf values returning a scalar tensor; it is re-evaluated
// 2x per coordinate and step with the leaf data perturbed in place.
//
// Multiple steps exist because one width cannot fit every coordinate: a step
// must be small enough not to cross data-dependent branch points (nearest
// neighbors, ranking cutoffs) yet large enough that the difference quotient
// is not rounding noise when the gradient is near zero. A coordinate passes
// if any step agrees; a wrong analytic gradient agrees at none, since the
// quotient converges to the true derivative.
template <class Fn>
GradCheckReport grad_check(Fn&& f, std::vector<Tensor<double>>& leaves,
                           const std::vector<double>& steps) {
    if (steps.empty()) throw std::logic_error("grad_check: need at least one step width");
    for (auto& l : leaves) {
        l.set_requires_grad(true);
        if (l.has_grad()) l.zero_grad();
    }
    Tensor<double> out = f(leaves);
    if (out.numel() != 1) throw std::logic_error("grad_check: function must return a scalar");
    out.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& l : leaves)
        analytic.push_back(l.has_grad() ? l.grad()
                                        : std::vector<double>(l.value().size(), 0.0));

    GradCheckReport rep;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& v = leaves[li].raw_value();
        for (size_t ci = 0; ci < v.size(); ++ci) {
            const double orig = v[ci];
            const double ana = analytic[li][ci];
            double best_rel = 0.0, best_num = 0.0;
            bool first = true;
            for (double h : steps) {
                v[ci] = orig + h;
                const double fp = f(leaves).item();
                v[ci] = orig - h;
                const double fm = f(leaves).item();
                v[ci] = orig;
                const double num = (fp - fm) / (2.0 * h);
                const double denom = std::max({std::fabs(ana), std::fabs(num), 1e-6});
                const double rel = std::fabs(ana - num) / denom;
                if (first || rel < best_rel) {
                    best_rel = rel;
                    best_num = num;
                    first = false;
                }
            }
            ++rep.coords_checked;
            if (best_rel > rep.max_rel_err) {
                rep.max_rel_err = best_rel;
                rep.worst_leaf = static_cast<int>(li);
                rep.worst_coord = static_cast<int64_t>(ci);
                rep.worst_analytic = ana;
                rep.worst_numeric = best_num;
            }
        }
    }
    return rep;
}

template <class Fn>
GradCheckReport grad_check(Fn&& f, std::vector<Tensor<double>>& leaves, double h = 1e-6) {
    return grad_check(std::forward<Fn>(f), leaves, std::vector<double>{h});
}

}  // namespace tcorres
