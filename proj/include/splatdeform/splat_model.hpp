#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace splatdeform {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

// Minimum rendered contribution below which a kernel is treated as inactive.
inline constexpr double kMinContribution = 1.0 / 255.0;

// Scalar type of one PLY property.
enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

struct PlyProperty {
    std::string name;
    PlyType type = PlyType::Float32;
};

enum class PlyFormat { Ascii, BinaryLittleEndian };

// Vertex schema of the file a SplatSet was read from. Writing a scene back
// reproduces this schema property-for-property.
struct PlyLayout {
    PlyFormat format = PlyFormat::BinaryLittleEndian;
    std::vector<PlyProperty> properties;
    std::vector<std::string> comments;

    std::optional<std::size_t> index_of(const std::string& name) const;
};

// How activations are stored on disk. Defaults match post-activation storage.
struct StorageFlags {
    bool logit_opacity = false;
    bool logit_spike_threshold = false;
    bool log_scales = false;
};

// One flat Gaussian primitive. The rotation's columns are (r1, r2, r3); r3 is
// the splat normal and the kernel has zero extent along it.
struct Splat {
    Vec3 mean = Vec3::Zero();
    Quat rotation = Quat::Identity();
    Vec2 scales = Vec2::Zero();  // sigma1 >= sigma2 >= 0 once canonical
    double opacity = 1.0;
    // 0 means the spiking cut-off is inactive (files without the property).
    double spike_threshold = 0.0;
    // Smallest scale of 3-scale records, kept only to be written back.
    double thickness = 0.0;
    // Raw values of every vertex property in layout order; opaque payload.
    std::vector<double> payload;

    Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }
    Vec3 normal() const { return rotation_matrix().col(2); }
};

struct SplatSet {
    std::vector<Splat> splats;
    std::optional<PlyLayout> layout;
    StorageFlags storage;

    std::size_t size() const { return splats.size(); }
    bool empty() const { return splats.empty(); }
    std::vector<Vec3> means() const;
};

// The open elliptical region of a splat's plane where the kernel is active.
struct OccupancyEllipse {
    Vec3 center = Vec3::Zero();
    Vec3 axis1 = Vec3::UnitX();
    Vec3 axis2 = Vec3::UnitY();
    Vec3 normal = Vec3::UnitZ();
    double semi_a = 0.0;
    double semi_b = 0.0;

    Vec3 point(double rho, double theta) const;
    Vec3 semi_axis1() const { return semi_a * axis1; }
    Vec3 semi_axis2() const { return semi_b * axis2; }
};

// Normalizes the quaternion and orders the scale axes so sigma1 >= sigma2,
// swapping r1/r2 (and flipping r3 to stay right-handed) when needed.
void canonicalize(Splat& splat);

// Region threshold exponent: -2 max{ln Vp, ln(c/alpha)}. Non-positive values
// mean the region is empty.
double region_lambda(double opacity, double spike_threshold, double c = kMinContribution);
inline double region_lambda(const Splat& s, double c = kMinContribution) {
    return region_lambda(s.opacity, s.spike_threshold, c);
}

std::optional<OccupancyEllipse> occupancy_ellipse(const Splat& splat, double c = kMinContribution);

// Membership in the open region. Off-plane distance must be within plane_tol.
// A zero minor axis degenerates the region into a segment.
bool in_region(const OccupancyEllipse& ellipse, const Vec3& x, double plane_tol);

// Direct kernel evaluation exp(-1/2 d^T Sigma^+ d) with Sigma = R S S^T R^T.
double kernel_value(const Splat& splat, const Vec3& x);

// Rebuild a splat from a recovered ellipse, keeping opacity/threshold/payload.
// `hint_axis` gauge-fixes the in-plane frame when the ellipse is a circle.
Splat splat_from_ellipse(const Splat& source, const OccupancyEllipse& ellipse,
                         const Vec3& hint_axis, double c = kMinContribution);

// Length of the bounding-box diagonal of the given points.
double scene_scale(std::span<const Vec3> points);
double scene_scale(const SplatSet& set);

std::vector<std::optional<OccupancyEllipse>> occupancy_ellipses(const SplatSet& set,
                                                                double c = kMinContribution);

}  // namespace splatdeform
