#pragma once

#include "splatdeform/splat_model.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace fixtures {

using splatdeform::Quat;
using splatdeform::Splat;
using splatdeform::SplatSet;
using splatdeform::Vec2;
using splatdeform::Vec3;
using splatdeform::Mat3;

// sqrt(lambda) for opacity 1 without a spike threshold.
inline double root_lambda_default() { return std::sqrt(2.0 * std::log(255.0)); }

// Splat whose occupancy region has the requested semi-axes (opacity 1, no
// spiking cut-off). `axis1` is projected into the plane orthogonal to `normal`.
inline Splat disk(const Vec3& center, const Vec3& normal, const Vec3& axis1, double semi_a, double semi_b) {
    const Vec3 n = normal.normalized();
    const Vec3 a1 = (axis1 - axis1.dot(n) * n).normalized();
    Mat3 r;
    r.col(0) = a1;
    r.col(1) = n.cross(a1);
    r.col(2) = n;
    Splat s;
    s.mean = center;
    s.rotation = Quat(r).normalized();
    const double k = root_lambda_default();
    s.scales = Vec2(semi_a / k, semi_b / k);
    s.opacity = 1.0;
    return s;
}

inline Splat disk_xy(const Vec3& center, double radius) {
    return disk(center, Vec3::UnitZ(), Vec3::UnitX(), radius, radius);
}

// nx x ny lattice of round splats in the plane through `origin` spanned by
// (u, v), spacing h, region radius `radius_factor * h`.
inline SplatSet sheet(int nx, int ny, double h, const Vec3& origin = Vec3::Zero(), const Vec3& u = Vec3::UnitX(),
                      const Vec3& v = Vec3::UnitY(), double radius_factor = 0.75) {
    SplatSet set;
    const Vec3 n = u.cross(v).normalized();
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const Vec3 c = origin + i * h * u + j * h * v;
            set.splats.push_back(disk(c, n, u, radius_factor * h, radius_factor * h));
        }
    }
    return set;
}

inline std::vector<Vec3> grid_points(int nx, int ny, double h) {
    std::vector<Vec3> pts;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) pts.emplace_back(i * h, j * h, 0.0);
    return pts;
}

inline Quat random_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Quat q(g(rng), g(rng), g(rng), g(rng));
    q.normalize();
    return q;
}

inline Mat3 random_rotation(std::mt19937_64& rng) { return random_quat(rng).toRotationMatrix(); }

inline Vec3 random_vec(std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    return Vec3(u(rng), u(rng), u(rng));
}

// Random splat with random opacity / spike threshold and unordered scales.
inline Splat random_splat(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Splat s;
    s.mean = random_vec(rng, -1.0, 1.0);
    s.rotation = random_quat(rng);
    s.scales = Vec2(0.05 + 0.5 * u(rng), 0.05 + 0.5 * u(rng));
    s.opacity = 0.01 + 0.99 * u(rng);
    s.spike_threshold = u(rng) < 0.3 ? 0.0 : 0.001 + 0.3 * u(rng);
    return s;
}

inline Vec3 apply_rigid(const Mat3& r, const Vec3& t, const Vec3& p) { return r * p + t; }

}  // namespace fixtures
