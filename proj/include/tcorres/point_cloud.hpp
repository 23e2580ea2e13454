#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace tcorres {

template <class T>
struct Vec3 {
    T x = 0, y = 0, z = 0;

    T& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    T operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(Vec3 a, T s) { return {a.x * s, a.y * s, a.z * s}; }
    friend bool operator==(const Vec3& a, const Vec3& b) {
        return a.x == b.x && a.y == b.y && a.z == b.z;
    }

    T dot(Vec3 o) const { return x * o.x + y * o.y + z * o.z; }
    T norm2() const { return dot(*this); }
    T norm() const { return std::sqrt(norm2()); }
};

template <class T>
inline T dist2(Vec3<T> a, Vec3<T> b) {
    return (a - b).norm2();
}

// Ordered point set. Order is meaningful: kernels preserve it and tie-breaks
// are defined over it.
template <class T>
struct PointCloud {
    std::vector<Vec3<T>> pts;

    PointCloud() = default;
    explicit PointCloud(std::vector<Vec3<T>> p) : pts(std::move(p)) {}

    int64_t count() const { return static_cast<int64_t>(pts.size()); }
    bool empty() const { return pts.empty(); }
    Vec3<T>& operator[](int64_t i) { return pts[static_cast<size_t>(i)]; }
    const Vec3<T>& operator[](int64_t i) const { return pts[static_cast<size_t>(i)]; }

    bool all_finite() const {
        for (const auto& p : pts)
            if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) return false;
        return true;
    }

    template <class U>
    PointCloud<U> cast() const {
        PointCloud<U> out;
        out.pts.reserve(pts.size());
        for (const auto& p : pts)
            out.pts.push_back({static_cast<U>(p.x), static_cast<U>(p.y), static_cast<U>(p.z)});
        return out;
    }
};

template <class T>
struct NormalizeTransform {
    Vec3<T> center;
    T scale = 1;

    Vec3<T> apply(Vec3<T> p) const { return (p - center) * (T(1) / scale); }
    Vec3<T> invert(Vec3<T> p) const { return p * scale + center; }
};

// Center at the centroid and scale so max radius is 1. A degenerate cloud
// (zero radius) keeps scale 1.
template <class T>
inline NormalizeTransform<T> normalize_cloud(PointCloud<T>& pc) {
    if (pc.empty()) throw std::invalid_argument("normalize_cloud: empty cloud");
    Vec3<T> c{};
    for (const auto& p : pc.pts) c = c + p;
    c = c * (T(1) / static_cast<T>(pc.count()));
    T r = 0;
    for (const auto& p : pc.pts) r = std::max(r, (p - c).norm());
    if (r <= T(0)) r = 1;
    NormalizeTransform<T> t{c, r};
    for (auto& p : pc.pts) p = t.apply(p);
    return t;
}

template <class T>
inline void denormalize_cloud(PointCloud<T>& pc, const NormalizeTransform<T>& t) {
    for (auto& p : pc.pts) p = t.invert(p);
}

}  // namespace tcorres
