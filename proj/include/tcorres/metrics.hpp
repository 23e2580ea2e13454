#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "parallel.hpp"
#include "point_cloud.hpp"
#include "tensor.hpp"

namespace tcorres {

enum class ChamferNorm { l1, l2 };

namespace detail {

// Nearest reference point for every query (index + squared distance).
// Ties go to the lowest reference index.
template <class T>
void nearest_neighbors(const T* q, int64_t nq, const T* r, int64_t nr, int32_t* out_idx,
                       T* out_d2) {
    std::vector<T> rx(static_cast<size_t>(nr)), ry(static_cast<size_t>(nr)),
        rz(static_cast<size_t>(nr));
    for (int64_t j = 0; j < nr; ++j) {
        rx[static_cast<size_t>(j)] = r[3 * j];
        ry[static_cast<size_t>(j)] = r[3 * j + 1];
        rz[static_cast<size_t>(j)] = r[3 * j + 2];
    }
    parallel_for(nq, [&](int64_t i) {
        const T px = q[3 * i], py = q[3 * i + 1], pz = q[3 * i + 2];
        T best = std::numeric_limits<T>::max();
        int64_t bi = 0;
        for (int64_t j = 0; j < nr; ++j) {
            const T dx = px - rx[static_cast<size_t>(j)];
            const T dy = py - ry[static_cast<size_t>(j)];
            const T dz = pz - rz[static_cast<size_t>(j)];
            const T d = dx * dx + dy * dy + dz * dz;
            if (d < best) {
                best = d;
                bi = j;
            }
        }
        out_idx[i] = static_cast<int32_t>(bi);
        out_d2[i] = best;
    });
}

template <class T>
std::vector<T> flatten(const PointCloud<T>& pc) {
    std::vector<T> v;
    v.reserve(static_cast<size_t>(pc.count()) * 3);
    for (const auto& p : pc.pts) {
        v.push_back(p.x);
        v.push_back(p.y);
        v.push_back(p.z);
    }
    return v;
}

template <class T>
double directional_mean(const T* q, int64_t nq, const T* r, int64_t nr, ChamferNorm norm) {
    std::vector<int32_t> idx(static_cast<size_t>(nq));
    std::vector<T> d2(static_cast<size_t>(nq));
    nearest_neighbors(q, nq, r, nr, idx.data(), d2.data());
    double acc = 0;
    for (int64_t i = 0; i < nq; ++i) {
        const double d = static_cast<double>(d2[static_cast<size_t>(i)]);
        acc += norm == ChamferNorm::l1 ? std::sqrt(d) : d;
    }
    return acc / static_cast<double>(nq);
}

}  // namespace detail

// Sum of the two directional means: mean over P of the distance to its
// nearest G point, plus the same with the roles swapped. l1 uses Euclidean
// distance, l2 squared Euclidean.
template <class T>
double chamfer(const PointCloud<T>& p, const PointCloud<T>& g, ChamferNorm norm) {
    if (p.empty() || g.empty()) throw std::invalid_argument("chamfer: empty cloud");
    auto pv = detail::flatten(p);
    auto gv = detail::flatten(g);
    return detail::directional_mean(pv.data(), p.count(), gv.data(), g.count(), norm) +
           detail::directional_mean(gv.data(), g.count(), pv.data(), p.count(), norm);
}

// F = 2PR/(P+R) with precision = fraction of P within tau of G and recall the
// reverse; 0 when both fractions are 0.
template <class T>
double fscore(const PointCloud<T>& p, const PointCloud<T>& g, double tau) {
    if (p.empty() || g.empty()) throw std::invalid_argument("fscore: empty cloud");
    if (!(tau > 0)) throw std::invalid_argument("fscore: tau must be positive");
    auto pv = detail::flatten(p);
    auto gv = detail::flatten(g);
    const double tau2 = tau * tau;
    auto within = [tau2](const T* q, int64_t nq, const T* r, int64_t nr) {
        std::vector<int32_t> idx(static_cast<size_t>(nq));
        std::vector<T> d2(static_cast<size_t>(nq));
        detail::nearest_neighbors(q, nq, r, nr, idx.data(), d2.data());
        int64_t hits = 0;
        for (int64_t i = 0; i < nq; ++i)
            if (static_cast<double>(d2[static_cast<size_t>(i)]) <= tau2) ++hits;
        return static_cast<double>(hits) / static_cast<double>(nq);
    };
    const double precision = within(pv.data(), p.count(), gv.data(), g.count());
    const double recall = within(gv.data(), g.count(), pv.data(), p.count());
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

// Differentiable chamfer over [n,3] tensors. The nearest-neighbor assignment
// is treated as constant in the backward pass; coincident pairs contribute a
// zero subgradient under the l1 norm.
template <class T>
Tensor<T> chamfer_grad(const Tensor<T>& p, const Tensor<T>& g, ChamferNorm norm) {
    if (p.ndim() != 2 || p.dim(1) != 3 || g.ndim() != 2 || g.dim(1) != 3)
        throw ShapeError("chamfer_grad: want [n,3] clouds, got " + shape_str(p.shape()) + " and " +
                         shape_str(g.shape()));
    const int64_t np = p.dim(0), ng = g.dim(0);
    std::vector<int32_t> pg_idx(static_cast<size_t>(np)), gp_idx(static_cast<size_t>(ng));
    std::vector<T> pg_d2(static_cast<size_t>(np)), gp_d2(static_cast<size_t>(ng));
    detail::nearest_neighbors(p.value().data(), np, g.value().data(), ng, pg_idx.data(),
                              pg_d2.data());
    detail::nearest_neighbors(g.value().data(), ng, p.value().data(), np, gp_idx.data(),
                              gp_d2.data());
    double acc = 0;
    for (int64_t i = 0; i < np; ++i) {
        const double d = static_cast<double>(pg_d2[static_cast<size_t>(i)]);
        acc += (norm == ChamferNorm::l1 ? std::sqrt(d) : d) / static_cast<double>(np);
    }
    for (int64_t j = 0; j < ng; ++j) {
        const double d = static_cast<double>(gp_d2[static_cast<size_t>(j)]);
        acc += (norm == ChamferNorm::l1 ? std::sqrt(d) : d) / static_cast<double>(ng);
    }

    return Tensor<T>::make(
        {1}, {static_cast<T>(acc)}, {p, g},
        [p, g, pg_idx, gp_idx, np, ng, norm](const std::vector<T>& gout) {
            const T go = gout[0];
            const auto& pv = p.value();
            const auto& gv = g.value();
            std::vector<T> dp(pv.size(), T(0)), dg(gv.size(), T(0));
            auto push = [&](int64_t qi, int64_t ri, std::vector<T>& dq, std::vector<T>& dr,
                            const std::vector<T>& qv, const std::vector<T>& rv, int64_t nq) {
                const T dx = qv[static_cast<size_t>(3 * qi)] - rv[static_cast<size_t>(3 * ri)];
                const T dy = qv[static_cast<size_t>(3 * qi + 1)] - rv[static_cast<size_t>(3 * ri + 1)];
                const T dz = qv[static_cast<size_t>(3 * qi + 2)] - rv[static_cast<size_t>(3 * ri + 2)];
                T cx, cy, cz;
                if (norm == ChamferNorm::l2) {
                    const T c = go * T(2) / static_cast<T>(nq);
                    cx = c * dx;
                    cy = c * dy;
                    cz = c * dz;
                } else {
                    const T d = std::sqrt(dx * dx + dy * dy + dz * dz);
                    if (d == T(0)) return;
                    const T c = go / (static_cast<T>(nq) * d);
                    cx = c * dx;
                    cy = c * dy;
                    cz = c * dz;
                }
                dq[static_cast<size_t>(3 * qi)] += cx;
                dq[static_cast<size_t>(3 * qi + 1)] += cy;
                dq[static_cast<size_t>(3 * qi + 2)] += cz;
                dr[static_cast<size_t>(3 * ri)] -= cx;
                dr[static_cast<size_t>(3 * ri + 1)] -= cy;
                dr[static_cast<size_t>(3 * ri + 2)] -= cz;
            };
            for (int64_t i = 0; i < np; ++i)
                push(i, pg_idx[static_cast<size_t>(i)], dp, dg, pv, gv, np);
            for (int64_t j = 0; j < ng; ++j)
                push(j, gp_idx[static_cast<size_t>(j)], dg, dp, gv, pv, ng);
            if (p.needs_grad()) p.accumulate_grad(dp);
            if (g.needs_grad()) g.accumulate_grad(dg);
        });
}

// L = CD(fine_template, gt) + CD(prediction, gt), both with unsquared
// Euclidean distance.
template <class T>
Tensor<T> training_loss(const Tensor<T>& fine_template, const Tensor<T>& prediction,
                        const Tensor<T>& gt) {
    return add(chamfer_grad(fine_template, gt, ChamferNorm::l1),
               chamfer_grad(prediction, gt, ChamferNorm::l1));
}

struct MetricsReport {
    struct Category {
        double cd = 0;
        double fscore = 0;
    };
    double cd_l1 = 0;
    double cd_l2 = 0;
    double fscore = 0;
    std::map<std::string, Category> per_category;

    void validate() const {
        auto ok = [](double v) { return std::isfinite(v) && v >= 0; };
        if (!ok(cd_l1) || !ok(cd_l2) || !ok(fscore) || fscore > 1.0)
            throw std::runtime_error("metrics report: invalid overall values");
        for (const auto& [name, c] : per_category)
            if (!ok(c.cd) || !ok(c.fscore) || c.fscore > 1.0)
                throw std::runtime_error("metrics report: invalid values for category " + name);
    }

    std::string table() const {
        std::ostringstream os;
        os << std::fixed << std::setprecision(6);
        os << "category            cd        fscore\n";
        os << "overall(l1) " << std::setw(12) << cd_l1 << "  " << std::setw(8) << fscore << "\n";
        os << "overall(l2) " << std::setw(12) << cd_l2 << "  " << std::setw(8) << fscore << "\n";
        for (const auto& [name, c] : per_category)
            os << std::setw(11) << name << " " << std::setw(12) << c.cd << "  " << std::setw(8)
               << c.fscore << "\n";
        return os.str();
    }

    void write_records(std::ostream& os) const {
        nlohmann::json overall{
            {"record", "overall"}, {"cd_l1", cd_l1}, {"cd_l2", cd_l2}, {"fscore", fscore}};
        os << overall.dump() << "\n";
        for (const auto& [name, c] : per_category) {
            nlohmann::json row{
                {"record", "category"}, {"name", name}, {"cd", c.cd}, {"fscore", c.fscore}};
            os << row.dump() << "\n";
        }
    }
};

}  // namespace tcorres
