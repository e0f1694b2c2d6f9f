#pragma once

#include "splatdeform/laplacian.hpp"
#include "splatdeform/splat_model.hpp"

#include <functional>
#include <span>
#include <vector>

namespace splatdeform {

using AffineTransform = Eigen::Matrix<double, 3, 4>;

inline AffineTransform translation_transform(const Vec3& t) {
    AffineTransform a = AffineTransform::Zero();
    a.leftCols<3>().setIdentity();
    a.col(3) = t;
    return a;
}

struct BoxQpOptions {
    int max_sweeps = 100;
    std::function<bool()> cancelled;
};

struct BoxQpResult {
    Eigen::VectorXd x;
    int sweeps = 0;
    bool converged = false;
    bool regularized = false;
};

// min 1/2 x^T Q x + c^T x  subject to  lower <= x <= upper.
// Active-set iteration: solve the equality-constrained system on the inactive
// set, pin violators to their bound, release bound variables whose gradient
// points inward, repeat until the active set stops changing.
BoxQpResult solve_box_qp(const SparseMatrix& q, const Eigen::VectorXd& c, double lower, double upper,
                         const BoxQpOptions& options = {});

double box_qp_objective(const SparseMatrix& q, const Eigen::VectorXd& c, const Eigen::VectorXd& x);

// Per-handle weights, one column per handle, plus the cage of every handle.
struct WeightField {
    Eigen::MatrixXd weights;                        // n_points x n_handles
    std::vector<std::uint32_t> anchors;
    std::vector<std::vector<std::uint32_t>> cages;  // sorted, anchor included
    std::vector<char> converged;
    std::vector<int> sweeps;

    // Weight left to the identity transform: 1 - sum over handles.
    Eigen::VectorXd rest_weight() const;
};

// Bi-Laplacian energy matrix L^T M^-1 L with lumped mass.
SparseMatrix biharmonic_matrix(const SparseMatrix& stiffness, const Eigen::VectorXd& mass);

// Solves one bounded biharmonic QP per handle: weight 1 at the anchor, 0
// outside a cage of `cage_radius` (scene units) around it, [0,1] inside.
// Rows whose handle weights sum above 1 are normalized afterwards.
WeightField solve_bbw(const SparseMatrix& stiffness, const Eigen::VectorXd& mass, std::span<const Vec3> points,
                      std::span<const std::uint32_t> anchors, double cage_radius, const BoxQpOptions& options = {});

// p' = sum_i w_i(p) T_i(p) + (1 - sum_i w_i(p)) p
std::vector<Vec3> apply_lbs(std::span<const Vec3> points, const Eigen::MatrixXd& weights,
                            std::span<const AffineTransform> transforms);

}  // namespace splatdeform
