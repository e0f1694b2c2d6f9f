#pragma once

#include "splatdeform/splat_graph.hpp"
#include "splatdeform/splat_model.hpp"

#include <array>
#include <span>
#include <vector>

namespace splatdeform {

// Maximum-area triangle inscribed in an occupancy ellipse; its centroid is
// the ellipse center.
struct InscribedTriangle {
    std::array<Vec3, 3> vertices;
    std::uint32_t owner = 0;
};

InscribedTriangle inscribed_triangle(const OccupancyEllipse& ellipse, std::uint32_t owner = 0);

struct DisplacedAnchor {
    Vec3 position;
    Vec3 displacement;
};

// Inverse-distance weighted displacement of a point. When the point lies
// within `coincide_tol` of an anchor the closest anchor's displacement is used.
Vec3 transfer_displacement(const Vec3& point, std::span<const DisplacedAnchor> adjacent, double coincide_tol);

// Minimum-area ellipse through three points, centered at their centroid.
// Throws GeometryError when the triangle area is at or below `area_floor`.
OccupancyEllipse steiner_circumellipse(const Vec3& t1, const Vec3& t2, const Vec3& t3, double area_floor = 0.0);

struct AdaptationOptions {
    std::size_t k_bind = 3;
    double min_contribution = kMinContribution;
};

struct AdaptationReport {
    std::size_t adapted = 0;
    std::size_t fallbacks = 0;      // degenerate displaced triangle, translated only
    std::size_t empty_regions = 0;  // kernels without an occupancy region, translated only
    double max_lambda_residual = 0.0;
    std::vector<std::uint32_t> fallback_indices;
};

// The splats whose displacements drive a triangle vertex: the k nearest to
// the vertex among the owner and its graph neighbors (widened along geodesic
// neighbors when the graph neighborhood is too small).
std::vector<std::uint32_t> binding_set(const SplatGraph& graph, std::span<const Vec3> means, std::uint32_t owner,
                                       const Vec3& vertex, std::size_t k);

// Displaces every kernel's inscribed triangle and recovers the kernel from the
// displaced triangle's Steiner circumellipse.
SplatSet adapt_kernels(const SplatSet& splats, const SplatGraph& graph, std::span<const Vec3> displacements,
                       const AdaptationOptions& options = {}, AdaptationReport* report = nullptr);

// Mean-only transport: every kernel keeps its rotation and scales.
SplatSet translate_kernels(const SplatSet& splats, std::span<const Vec3> displacements);

}  // namespace splatdeform
