#pragma once

#include "splatdeform/laplacian.hpp"
#include "splatdeform/splat_model.hpp"

#include <Eigen/SparseCholesky>

#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace splatdeform {

// Rotation maximizing tr(R^T S), from the SVD S = U diag(s) V^T with the sign
// of the smallest singular direction flipped when det(U V^T) < 0.
Mat3 fit_rotation(const Mat3& covariance);

using EdgeWeights = std::vector<std::vector<std::pair<std::uint32_t, double>>>;

// sum_i sum_{j in N(i)} w_ij |(v'_i - v'_j) - R_i (v_i - v_j)|^2
double arap_energy(std::span<const Vec3> rest, std::span<const Vec3> current, const EdgeWeights& weights,
                   std::span<const Mat3> rotations);

// Optimal per-point rotations for the current positions.
std::vector<Mat3> fit_rotations(std::span<const Vec3> rest, std::span<const Vec3> current,
                                const EdgeWeights& weights);

// Index -> target position, sorted by index, indices unique.
using Constraints = std::vector<std::pair<std::uint32_t, Vec3>>;

struct ArapOptions {
    int max_iters = 50;
    double tol = 1e-6;
    // Polled between iterations; returning true aborts with Cancelled.
    std::function<bool()> cancelled;
};

// A connected component without any constraint. It is moved rigidly by the
// inverse-distance weighted mean of the handle displacements.
struct FloatingComponent {
    std::vector<std::uint32_t> nodes;
    Vec3 translation = Vec3::Zero();
};

struct ArapResult {
    std::vector<Vec3> positions;
    std::vector<Mat3> rotations;
    std::vector<double> energy;  // after every local step, starting at iteration 0
    int iterations = 0;
    bool converged = false;
    std::vector<FloatingComponent> floating;
};

// Local-global ARAP over a point set whose edge weights come from the
// off-diagonals of a cotangent stiffness matrix. The reduced system of free
// points is factored once at construction and reused by every solve.
class ArapSolver {
public:
    ArapSolver(std::vector<Vec3> rest, const SparseMatrix& stiffness, Constraints constraints);

    ArapResult solve(const ArapOptions& options = {}) const;

    const EdgeWeights& weights() const { return weights_; }
    const std::vector<Vec3>& rest() const { return rest_; }
    std::size_t free_count() const { return free_.size(); }

private:
    std::vector<Vec3> rest_;
    EdgeWeights weights_;
    Constraints constraints_;
    std::vector<std::uint32_t> free_;      // solved for
    std::vector<int> slot_;                // point -> row in the reduced system, -1 otherwise
    std::vector<FloatingComponent> floating_;
    std::vector<char> is_floating_;
    SparseMatrix coupling_;                // free rows x all columns, constrained entries only
    Eigen::SimplicialLDLT<SparseMatrix> factor_;
};

}  // namespace splatdeform
