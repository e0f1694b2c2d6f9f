#pragma once

#include "splatdeform/splat_graph.hpp"
#include "splatdeform/splat_model.hpp"

#include <Eigen/Sparse>

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace splatdeform {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triangle = std::array<std::uint32_t, 3>;

// Bowyer-Watson Delaunay triangulation of planar points. Returns index
// triples into `points`, counter-clockwise. Duplicate points are skipped.
std::vector<std::array<int, 3>> delaunay_2d(std::span<const Vec2> points);

// Delaunay triangles incident to points[center], found by walking around it.
// Unlike delaunay_2d there is no bounding triangle, so the fan does not depend
// on the orientation of the input frame. Counter-clockwise, center first.
std::vector<std::array<int, 3>> delaunay_fan(std::span<const Vec2> points, int center);

struct LocalTriangulation {
    std::uint32_t center = 0;
    std::vector<std::uint32_t> vertices;  // center first, then the neighborhood
    std::vector<Triangle> triangles;      // global point indices
    // Perpendicular jitter applied when the projection was collinear.
    double jitter = 0.0;
};

// Projects the center and its neighborhood onto the least-variance tangent
// plane and keeps the Delaunay fan around the center. Triangles with 3D area below `area_floor`
// are dropped. Throws GeometryError when fewer than 3 neighbors are given.
LocalTriangulation local_triangulation(std::span<const Vec3> points, std::size_t center,
                                       const GeodesicNeighborhood& neighborhood, double area_floor);

struct LaplacianSystem {
    // Positive semidefinite stiffness: L_ij = -w_ij off the diagonal.
    SparseMatrix stiffness;
    Eigen::VectorXd mass;                 // lumped, strictly positive
    std::vector<std::uint32_t> isolated;  // rows without any positive weight
    std::size_t clamped = 0;              // negative symmetrized weights set to 0

    std::size_t size() const { return static_cast<std::size_t>(mass.size()); }
};

// Accumulates one-sided cotangent rows from each point's own triangulation,
// symmetrizes, clamps negative weights and fixes the diagonal so every row
// sums to zero. Isolated rows get a unit diagonal. `scale` is the scene scale
// used for the mass floor.
LaplacianSystem build_laplacian(std::span<const Vec3> points, std::span<const LocalTriangulation> triangulations,
                                double scale);

struct LaplacianReport {
    std::size_t small_neighborhoods = 0;
    std::size_t jittered = 0;
    std::size_t isolated = 0;
    std::size_t clamped = 0;
};

// Geodesic k-neighborhoods, local triangulations and assembly in one call.
LaplacianSystem assemble_laplacian(std::span<const Vec3> points, const SplatGraph& graph, std::size_t k,
                                   double scale, LaplacianReport* report = nullptr);

// Off-diagonal weights w_ij (> 0) of a stiffness matrix, per row.
std::vector<std::vector<std::pair<std::uint32_t, double>>> edge_weights(const SparseMatrix& stiffness);

// The m smallest generalized eigenvalues of L x = lambda M x, ascending.
std::vector<double> spectrum_check(const SparseMatrix& stiffness, const Eigen::VectorXd& mass, int m);

// Header plus sorted "row col value" triplets; a trailing block lists the
// lumped masses when given.
void write_matrix(std::ostream& out, const SparseMatrix& matrix, const Eigen::VectorXd* mass = nullptr);

}  // namespace splatdeform
