#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "geometry.hpp"
#include "point_cloud.hpp"
#include "rng.hpp"

namespace tcorres {

enum class PrimitiveKind { sphere, box, cylinder, cone, torus };

inline const char* primitive_name(PrimitiveKind k) {
    switch (k) {
        case PrimitiveKind::sphere: return "sphere";
        case PrimitiveKind::box: return "box";
        case PrimitiveKind::cylinder: return "cylinder";
        case PrimitiveKind::cone: return "cone";
        case PrimitiveKind::torus: return "torus";
    }
    throw std::invalid_argument("primitive_name: bad kind");
}

inline PrimitiveKind primitive_from_name(const std::string& s) {
    if (s == "sphere") return PrimitiveKind::sphere;
    if (s == "box") return PrimitiveKind::box;
    if (s == "cylinder") return PrimitiveKind::cylinder;
    if (s == "cone") return PrimitiveKind::cone;
    if (s == "torus") return PrimitiveKind::torus;
    throw std::invalid_argument("unknown primitive: " + s);
}

struct PrimitiveParams {
    double radius = 1.0;        // sphere, cylinder, cone base, torus center ring
    double height = 2.0;        // cylinder, cone
    double minor_radius = 0.35; // torus tube
    double box_x = 1.0, box_y = 1.4, box_z = 0.8;
};

inline void validate_primitive(PrimitiveKind kind, const PrimitiveParams& p) {
    auto need_pos = [](double v, const char* what) {
        if (!(v > 0))
            throw std::invalid_argument(std::string("primitive parameter ") + what +
                                        " must be positive");
    };
    switch (kind) {
        case PrimitiveKind::sphere:
            need_pos(p.radius, "radius");
            break;
        case PrimitiveKind::box:
            need_pos(p.box_x, "box_x");
            need_pos(p.box_y, "box_y");
            need_pos(p.box_z, "box_z");
            break;
        case PrimitiveKind::cylinder:
        case PrimitiveKind::cone:
            need_pos(p.radius, "radius");
            need_pos(p.height, "height");
            break;
        case PrimitiveKind::torus:
            need_pos(p.radius, "radius");
            need_pos(p.minor_radius, "minor_radius");
            if (p.minor_radius >= p.radius)
                throw std::invalid_argument("torus minor_radius must be smaller than radius");
            break;
    }
}

namespace detail {

inline constexpr double two_pi = 6.283185307179586476925286766559;

template <class T>
Vec3<T> sphere_point(double r, Rng& rng) {
    double x, y, z, n2;
    do {
        x = rng.gaussian();
        y = rng.gaussian();
        z = rng.gaussian();
        n2 = x * x + y * y + z * z;
    } while (n2 < 1e-24);
    double s = r / std::sqrt(n2);
    return {static_cast<T>(x * s), static_cast<T>(y * s), static_cast<T>(z * s)};
}

template <class T>
Vec3<T> box_point(const PrimitiveParams& p, Rng& rng) {
    const double ax = p.box_y * p.box_z;  // faces normal to x
    const double ay = p.box_x * p.box_z;
    const double az = p.box_x * p.box_y;
    double pick = rng.uniform() * 2.0 * (ax + ay + az);
    double u = rng.uniform(), v = rng.uniform();
    double hx = 0.5 * p.box_x, hy = 0.5 * p.box_y, hz = 0.5 * p.box_z;
    if (pick < 2 * ax) {
        double sx = pick < ax ? -hx : hx;
        return {static_cast<T>(sx), static_cast<T>((u - 0.5) * p.box_y),
                static_cast<T>((v - 0.5) * p.box_z)};
    }
    pick -= 2 * ax;
    if (pick < 2 * ay) {
        double sy = pick < ay ? -hy : hy;
        return {static_cast<T>((u - 0.5) * p.box_x), static_cast<T>(sy),
                static_cast<T>((v - 0.5) * p.box_z)};
    }
    pick -= 2 * ay;
    double sz = pick < az ? -hz : hz;
    return {static_cast<T>((u - 0.5) * p.box_x), static_cast<T>((v - 0.5) * p.box_y),
            static_cast<T>(sz)};
}

template <class T>
Vec3<T> cylinder_point(const PrimitiveParams& p, Rng& rng) {
    const double side = two_pi * p.radius * p.height;
    const double cap = 3.14159265358979323846 * p.radius * p.radius;
    double pick = rng.uniform() * (side + 2 * cap);
    double theta = two_pi * rng.uniform();
    if (pick < side) {
        double z = (rng.uniform() - 0.5) * p.height;
        return {static_cast<T>(p.radius * std::cos(theta)),
                static_cast<T>(p.radius * std::sin(theta)), static_cast<T>(z)};
    }
    double r = p.radius * std::sqrt(rng.uniform());
    double z = pick < side + cap ? -0.5 * p.height : 0.5 * p.height;
    return {static_cast<T>(r * std::cos(theta)), static_cast<T>(r * std::sin(theta)),
            static_cast<T>(z)};
}

template <class T>
Vec3<T> cone_point(const PrimitiveParams& p, Rng& rng) {
    const double slant = std::sqrt(p.radius * p.radius + p.height * p.height);
    const double lateral = 3.14159265358979323846 * p.radius * slant;
    const double base = 3.14159265358979323846 * p.radius * p.radius;
    double pick = rng.uniform() * (lateral + base);
    double theta = two_pi * rng.uniform();
    if (pick < lateral) {
        // area density grows linearly with distance from the apex
        double t = std::sqrt(rng.uniform());
        double r = t * p.radius;
        double z = 0.5 * p.height - t * p.height;
        return {static_cast<T>(r * std::cos(theta)), static_cast<T>(r * std::sin(theta)),
                static_cast<T>(z)};
    }
    double r = p.radius * std::sqrt(rng.uniform());
    return {static_cast<T>(r * std::cos(theta)), static_cast<T>(r * std::sin(theta)),
            static_cast<T>(-0.5 * p.height)};
}

template <class T>
Vec3<T> torus_point(const PrimitiveParams& p, Rng& rng) {
    double u = two_pi * rng.uniform();
    // rejection keeps the sampling uniform in area: density along the tube
    // angle is proportional to R + r*cos(v)
    double v;
    for (;;) {
        v = two_pi * rng.uniform();
        double accept = (p.radius + p.minor_radius * std::cos(v)) / (p.radius + p.minor_radius);
        if (rng.uniform() < accept) break;
    }
    double ring = p.radius + p.minor_radius * std::cos(v);
    return {static_cast<T>(ring * std::cos(u)), static_cast<T>(ring * std::sin(u)),
            static_cast<T>(p.minor_radius * std::sin(v))};
}

}  // namespace detail

template <class T>
PointCloud<T> sample_primitive(PrimitiveKind kind, const PrimitiveParams& params, int64_t n,
                               Rng& rng) {
    if (n < 1) throw std::invalid_argument("sample_primitive: n must be >= 1");
    validate_primitive(kind, params);
    PointCloud<T> pc;
    pc.pts.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        switch (kind) {
            case PrimitiveKind::sphere:
                pc.pts.push_back(detail::sphere_point<T>(params.radius, rng));
                break;
            case PrimitiveKind::box:
                pc.pts.push_back(detail::box_point<T>(params, rng));
                break;
            case PrimitiveKind::cylinder:
                pc.pts.push_back(detail::cylinder_point<T>(params, rng));
                break;
            case PrimitiveKind::cone:
                pc.pts.push_back(detail::cone_point<T>(params, rng));
                break;
            case PrimitiveKind::torus:
                pc.pts.push_back(detail::torus_point<T>(params, rng));
                break;
        }
    }
    return pc;
}

template <class T>
struct SamplePair {
    PointCloud<T> partial;
    PointCloud<T> complete;
    std::string category;
    std::string id;
};

inline constexpr double keep_fractions[3] = {0.25, 0.5, 0.75};

// Complete cloud: area-uniform surface samples of the primitive, normalized
// to centroid 0 / max radius 1. Partial cloud: a random half-space crop of
// the complete cloud in the same frame, resampled to n_partial points (FPS
// when the crop is larger, cyclic repetition when smaller), so every partial
// point is bitwise one of the complete points.
template <class T>
SamplePair<T> gen_synthetic_pair(PrimitiveKind kind, const PrimitiveParams& params,
                                 int64_t n_partial, int64_t n_complete, uint64_t seed) {
    if (n_partial < 1 || n_complete < 1)
        throw std::invalid_argument("gen_synthetic_pair: counts must be >= 1");

    Rng surface(derive_seed(seed, "surface"));
    SamplePair<T> pair;
    pair.complete = sample_primitive<T>(kind, params, n_complete, surface);
    normalize_cloud(pair.complete);

    Rng crop(derive_seed(seed, "crop"));
    Vec3<T> dir = detail::sphere_point<T>(1.0, crop);
    double keep = keep_fractions[crop.below(3)];
    auto cropped = halfspace_crop(pair.complete, dir, keep);

    if (cropped.count() >= n_partial) {
        pair.partial = gather_points(cropped, farthest_point_sample(cropped, n_partial));
    } else {
        pair.partial = cropped;
        pair.partial.pts.reserve(static_cast<size_t>(n_partial));
        const int64_t orig = cropped.count();
        for (int64_t i = orig; i < n_partial; ++i)
            pair.partial.pts.push_back(cropped.pts[static_cast<size_t>(i % orig)]);
    }

    pair.category = primitive_name(kind);
    pair.id = pair.category + "-" + std::to_string(seed);
    return pair;
}

}  // namespace tcorres
