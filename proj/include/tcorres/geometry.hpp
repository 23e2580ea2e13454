#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "point_cloud.hpp"
#include "rng.hpp"

namespace tcorres {

// Row i holds the k reference indices nearest to query i, ascending distance,
// ties broken by lowest index.
struct NeighborIndex {
    int64_t rows = 0;
    int64_t k = 0;
    std::vector<int32_t> idx;  // rows * k, row-major

    int32_t at(int64_t row, int64_t j) const { return idx[static_cast<size_t>(row * k + j)]; }
};

// n points drawn from a standard normal and projected onto the unit sphere.
template <class T>
inline PointCloud<T> sample_gaussian_sphere(int64_t n, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_gaussian_sphere: n must be >= 1");
    Rng rng(seed);
    PointCloud<T> out;
    out.pts.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        double x, y, z, r2;
        do {
            x = rng.gaussian();
            y = rng.gaussian();
            z = rng.gaussian();
            r2 = x * x + y * y + z * z;
        } while (r2 < 1e-24);
        double inv = 1.0 / std::sqrt(r2);
        out.pts.push_back({static_cast<T>(x * inv), static_cast<T>(y * inv), static_cast<T>(z * inv)});
    }
    return out;
}

// Greedy max-min subset selection. Each step picks the point farthest from
// everything already selected; ties go to the lowest index.
template <class T>
inline std::vector<int64_t> farthest_point_sample(const PointCloud<T>& pc, int64_t m,
                                                  int64_t start = 0) {
    const int64_t n = pc.count();
    if (m < 1 || m > n) throw std::invalid_argument("farthest_point_sample: need 1 <= m <= count");
    if (start < 0 || start >= n) throw std::invalid_argument("farthest_point_sample: bad start index");

    std::vector<int64_t> picked;
    picked.reserve(static_cast<size_t>(m));
    std::vector<T> min_d2(static_cast<size_t>(n), std::numeric_limits<T>::max());

    int64_t cur = start;
    picked.push_back(cur);
    for (int64_t step = 1; step < m; ++step) {
        const Vec3<T> c = pc[cur];
        int64_t best = -1;
        T best_d2 = -1;
        for (int64_t i = 0; i < n; ++i) {
            T d2 = dist2(pc[i], c);
            if (d2 < min_d2[static_cast<size_t>(i)]) min_d2[static_cast<size_t>(i)] = d2;
            if (min_d2[static_cast<size_t>(i)] > best_d2) {
                best_d2 = min_d2[static_cast<size_t>(i)];
                best = i;
            }
        }
        cur = best;
        picked.push_back(cur);
    }
    return picked;
}

template <class T>
inline PointCloud<T> gather_points(const PointCloud<T>& pc, const std::vector<int64_t>& idx) {
    PointCloud<T> out;
    out.pts.reserve(idx.size());
    for (int64_t i : idx) out.pts.push_back(pc[i]);
    return out;
}

namespace detail {

// Shared k-selection over one query row of squared distances.
template <class T>
inline void select_k_into(const std::vector<T>& d2, int64_t k, int32_t* dst) {
    const int64_t n = static_cast<int64_t>(d2.size());
    std::vector<int32_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    auto cmp = [&](int32_t a, int32_t b) {
        if (d2[static_cast<size_t>(a)] != d2[static_cast<size_t>(b)])
            return d2[static_cast<size_t>(a)] < d2[static_cast<size_t>(b)];
        return a < b;
    };
    if (k < n) {
        std::partial_sort(order.begin(), order.begin() + static_cast<size_t>(k), order.end(), cmp);
    } else {
        std::sort(order.begin(), order.end(), cmp);
    }
    std::copy(order.begin(), order.begin() + static_cast<size_t>(k), dst);
}

}  // namespace detail

// Brute-force kNN in coordinate space.
template <class T>
inline NeighborIndex knn_points(const PointCloud<T>& queries, const PointCloud<T>& refs,
                                int64_t k) {
    if (k < 1 || k > refs.count())
        throw std::invalid_argument("knn_points: need 1 <= k <= refs.count");
    NeighborIndex out;
    out.rows = queries.count();
    out.k = k;
    out.idx.resize(static_cast<size_t>(out.rows * k));
    std::vector<T> d2(static_cast<size_t>(refs.count()));
    for (int64_t q = 0; q < queries.count(); ++q) {
        for (int64_t r = 0; r < refs.count(); ++r)
            d2[static_cast<size_t>(r)] = dist2(queries[q], refs[r]);
        detail::select_k_into(d2, k, out.idx.data() + q * k);
    }
    return out;
}

// Brute-force kNN between rows of two feature matrices (row-major, dim wide).
template <class T>
inline NeighborIndex knn_features(const T* queries, int64_t nq, const T* refs, int64_t nr,
                                  int64_t dim, int64_t k) {
    if (k < 1 || k > nr) throw std::invalid_argument("knn_features: need 1 <= k <= ref rows");
    if (dim < 1) throw std::invalid_argument("knn_features: bad dimension");
    NeighborIndex out;
    out.rows = nq;
    out.k = k;
    out.idx.resize(static_cast<size_t>(nq * k));
    std::vector<T> d2(static_cast<size_t>(nr));
    for (int64_t q = 0; q < nq; ++q) {
        const T* qp = queries + q * dim;
        for (int64_t r = 0; r < nr; ++r) {
            const T* rp = refs + r * dim;
            T acc = 0;
            for (int64_t c = 0; c < dim; ++c) {
                T d = qp[c] - rp[c];
                acc += d * d;
            }
            d2[static_cast<size_t>(r)] = acc;
        }
        detail::select_k_into(d2, k, out.idx.data() + q * k);
    }
    return out;
}

// Keep the ceil(keep_fraction * count) points with the smallest dot product
// against `direction` (the visible cap along `direction` is dropped).
// Survivor order matches the input order.
template <class T>
inline PointCloud<T> halfspace_crop(const PointCloud<T>& pc, Vec3<T> direction, double keep_fraction) {
    if (direction.norm2() <= T(0)) throw std::invalid_argument("halfspace_crop: zero direction");
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
        throw std::invalid_argument("halfspace_crop: keep_fraction must be in (0,1]");
    const int64_t n = pc.count();
    const int64_t m = static_cast<int64_t>(std::ceil(keep_fraction * static_cast<double>(n)));
    if (m < 1) throw std::invalid_argument("halfspace_crop: empty result");

    std::vector<T> dots(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) dots[static_cast<size_t>(i)] = pc[i].dot(direction);
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (dots[static_cast<size_t>(a)] != dots[static_cast<size_t>(b)])
            return dots[static_cast<size_t>(a)] < dots[static_cast<size_t>(b)];
        return a < b;
    });
    std::vector<char> keep(static_cast<size_t>(n), 0);
    for (int64_t i = 0; i < m; ++i) keep[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;

    PointCloud<T> out;
    out.pts.reserve(static_cast<size_t>(m));
    for (int64_t i = 0; i < n; ++i)
        if (keep[static_cast<size_t>(i)]) out.pts.push_back(pc[i]);
    return out;
}

}  // namespace tcorres
