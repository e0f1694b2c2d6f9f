#include "splatdeform/splat_model.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace splatdeform {

std::optional<std::size_t> PlyLayout::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < properties.size(); ++i) {
        if (properties[i].name == name) return i;
    }
    return std::nullopt;
}

std::vector<Vec3> SplatSet::means() const {
    std::vector<Vec3> out;
    out.reserve(splats.size());
    for (const auto& s : splats) out.push_back(s.mean);
    return out;
}

Vec3 OccupancyEllipse::point(double rho, double theta) const {
    return center + rho * (semi_a * std::cos(theta) * axis1 + semi_b * std::sin(theta) * axis2);
}

void canonicalize(Splat& splat) {
    splat.rotation.normalize();
    if (splat.scales[0] >= splat.scales[1]) return;
    Mat3 r = splat.rotation_matrix();
    Mat3 swapped;
    swapped.col(0) = r.col(1);
    swapped.col(1) = r.col(0);
    swapped.col(2) = -r.col(2);
    splat.rotation = Quat(swapped).normalized();
    std::swap(splat.scales[0], splat.scales[1]);
}

double region_lambda(double opacity, double spike_threshold, double c) {
    const double ln_spike = spike_threshold > 0.0 ? std::log(std::abs(spike_threshold))
                                                  : -std::numeric_limits<double>::infinity();
    const double ln_contrib = std::log(c / opacity);
    return -2.0 * std::max(ln_spike, ln_contrib);
}

std::optional<OccupancyEllipse> occupancy_ellipse(const Splat& splat, double c) {
    const double lambda = region_lambda(splat, c);
    if (!(lambda > 0.0)) return std::nullopt;
    const double root = std::sqrt(lambda);
    const Mat3 r = splat.rotation.normalized().toRotationMatrix();
    OccupancyEllipse e;
    e.center = splat.mean;
    e.axis1 = r.col(0);
    e.axis2 = r.col(1);
    e.normal = r.col(2);
    e.semi_a = root * splat.scales[0];
    e.semi_b = root * splat.scales[1];
    if (e.semi_a < e.semi_b) {
        std::swap(e.semi_a, e.semi_b);
        std::swap(e.axis1, e.axis2);
        e.normal = -e.normal;
    }
    return e;
}

bool in_region(const OccupancyEllipse& ellipse, const Vec3& x, double plane_tol) {
    const Vec3 d = x - ellipse.center;
    if (std::abs(d.dot(ellipse.normal)) > plane_tol) return false;
    if (ellipse.semi_a <= 0.0) return false;
    const double u = d.dot(ellipse.axis1) / ellipse.semi_a;
    const double v = d.dot(ellipse.axis2);
    if (ellipse.semi_b <= 0.0) {
        return std::abs(v) <= plane_tol && u * u < 1.0;
    }
    const double vs = v / ellipse.semi_b;
    return u * u + vs * vs < 1.0;
}

double kernel_value(const Splat& splat, const Vec3& x) {
    const Mat3 r = splat.rotation.normalized().toRotationMatrix();
    Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
    s(0, 0) = splat.scales[0];
    s(1, 1) = splat.scales[1];
    const Mat3 sigma = r * s * s.transpose() * r.transpose();
    // Sigma is rank-deficient; points off its column space get the
    // pseudo-inverse quadratic form only from their in-plane component.
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(sigma);
    const double scale = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
    Mat3 pinv = Mat3::Zero();
    for (int k = 0; k < 3; ++k) {
        const double ev = eig.eigenvalues()[k];
        if (ev > 1e-12 * scale) {
            pinv += eig.eigenvectors().col(k) * eig.eigenvectors().col(k).transpose() / ev;
        }
    }
    const Vec3 d = x - splat.mean;
    return std::exp(-0.5 * d.dot(pinv * d));
}

Splat splat_from_ellipse(const Splat& source, const OccupancyEllipse& ellipse, const Vec3& hint_axis,
                         double c) {
    Splat out = source;
    out.mean = ellipse.center;
    Vec3 n = ellipse.normal.normalized();
    Vec3 a1 = ellipse.axis1;
    const double semi_a = ellipse.semi_a;
    const double semi_b = ellipse.semi_b;
    if (std::abs(semi_a - semi_b) < 1e-9 * semi_a) {
        const Vec3 projected = hint_axis - hint_axis.dot(n) * n;
        if (projected.norm() > 1e-12) a1 = projected.normalized();
    } else if (a1.dot(hint_axis) < 0.0) {
        a1 = -a1;
    }
    a1 = (a1 - a1.dot(n) * n).normalized();
    const Vec3 a2 = n.cross(a1);
    Mat3 r;
    r.col(0) = a1;
    r.col(1) = a2;
    r.col(2) = n;
    out.rotation = Quat(r).normalized();
    // q and -q are the same rotation; stay in the source's hemisphere.
    if (out.rotation.coeffs().dot(source.rotation.coeffs()) < 0.0) out.rotation.coeffs() *= -1.0;
    const double root = std::sqrt(region_lambda(source, c));
    out.scales = Vec2(semi_a / root, semi_b / root);
    return out;
}

double scene_scale(std::span<const Vec3> points) {
    if (points.empty()) return 0.0;
    Vec3 lo = points.front();
    Vec3 hi = points.front();
    for (const auto& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    return (hi - lo).norm();
}

double scene_scale(const SplatSet& set) {
    const auto m = set.means();
    return scene_scale(std::span<const Vec3>(m));
}

std::vector<std::optional<OccupancyEllipse>> occupancy_ellipses(const SplatSet& set, double c) {
    std::vector<std::optional<OccupancyEllipse>> out;
    out.reserve(set.size());
    for (const auto& s : set.splats) out.push_back(occupancy_ellipse(s, c));
    return out;
}

}  // namespace splatdeform
