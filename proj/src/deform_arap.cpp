#include "splatdeform/deform_arap.hpp"

#include "splatdeform/errors.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace splatdeform {

Mat3 fit_rotation(const Mat3& covariance) {
    const Eigen::JacobiSVD<Mat3> svd(covariance, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    const Mat3& v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) = -u.col(2);
    return u * v.transpose();
}

double arap_energy(std::span<const Vec3> rest, std::span<const Vec3> current, const EdgeWeights& weights,
                   std::span<const Mat3> rotations) {
    double total = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        for (const auto& [j, w] : weights[i]) {
            const Vec3 r = (current[i] - current[j]) - rotations[i] * (rest[i] - rest[j]);
            total += w * r.squaredNorm();
        }
    }
    return total;
}

std::vector<Mat3> fit_rotations(std::span<const Vec3> rest, std::span<const Vec3> current,
                                const EdgeWeights& weights) {
    std::vector<Mat3> out(weights.size(), Mat3::Identity());
    const auto n = static_cast<std::int64_t>(weights.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t si = 0; si < n; ++si) {
        const auto i = static_cast<std::size_t>(si);
        if (weights[i].empty()) continue;
        Mat3 s = Mat3::Zero();
        for (const auto& [j, w] : weights[i]) {
            s += w * (current[i] - current[j]) * (rest[i] - rest[j]).transpose();
        }
        out[i] = fit_rotation(s);
    }
    return out;
}

ArapSolver::ArapSolver(std::vector<Vec3> rest, const SparseMatrix& stiffness, Constraints constraints)
    : rest_(std::move(rest)), weights_(edge_weights(stiffness)), constraints_(std::move(constraints)) {
    const std::size_t n = rest_.size();
    if (static_cast<std::size_t>(stiffness.rows()) != n) {
        throw GeometryError("deform_arap", "stiffness size does not match the point count");
    }
    if (constraints_.empty()) throw ConfigError("ARAP needs at least one constrained point", "handles");
    std::sort(constraints_.begin(), constraints_.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t k = 0; k < constraints_.size(); ++k) {
        if (constraints_[k].first >= n) throw ConfigError("constraint index out of range", "handles");
        if (k > 0 && constraints_[k].first == constraints_[k - 1].first) {
            throw ConfigError("duplicate constraint on point " + std::to_string(constraints_[k].first), "handles");
        }
    }

    // Components over positive-weight edges.
    std::vector<int> label(n, -1);
    int count = 0;
    std::vector<std::uint32_t> stack;
    for (std::uint32_t s = 0; s < n; ++s) {
        if (label[s] >= 0) continue;
        label[s] = count;
        stack.assign(1, s);
        while (!stack.empty()) {
            const auto u = stack.back();
            stack.pop_back();
            for (const auto& [v, w] : weights_[u]) {
                if (label[v] < 0) {
                    label[v] = count;
                    stack.push_back(v);
                }
            }
        }
        ++count;
    }
    std::vector<char> anchored(static_cast<std::size_t>(count), 0);
    std::vector<char> constrained(n, 0);
    for (const auto& [idx, target] : constraints_) {
        anchored[static_cast<std::size_t>(label[idx])] = 1;
        constrained[idx] = 1;
    }

    std::vector<std::vector<std::uint32_t>> members(static_cast<std::size_t>(count));
    for (std::uint32_t i = 0; i < n; ++i) members[static_cast<std::size_t>(label[i])].push_back(i);
    is_floating_.assign(n, 0);
    for (int c = 0; c < count; ++c) {
        if (anchored[static_cast<std::size_t>(c)]) continue;
        FloatingComponent fc;
        fc.nodes = members[static_cast<std::size_t>(c)];
        Vec3 centroid = Vec3::Zero();
        for (auto i : fc.nodes) centroid += rest_[i];
        centroid /= static_cast<double>(fc.nodes.size());
        double wsum = 0.0;
        Vec3 acc = Vec3::Zero();
        for (const auto& [idx, target] : constraints_) {
            const Vec3 d = target - rest_[idx];
            if (d.squaredNorm() == 0.0) continue;
            const double w = 1.0 / std::max((rest_[idx] - centroid).norm(), 1e-300);
            acc += w * d;
            wsum += w;
        }
        if (wsum > 0.0) fc.translation = acc / wsum;
        for (auto i : fc.nodes) is_floating_[i] = 1;
        floating_.push_back(std::move(fc));
    }

    slot_.assign(n, -1);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!constrained[i] && !is_floating_[i]) {
            slot_[i] = static_cast<int>(free_.size());
            free_.push_back(i);
        }
    }
    if (free_.empty()) return;

    std::vector<Eigen::Triplet<double>> reduced, couple;
    for (std::size_t r = 0; r < free_.size(); ++r) {
        const auto i = free_[r];
        double diag = 0.0;
        for (const auto& [j, w] : weights_[i]) {
            diag += w;
            if (slot_[j] >= 0) {
                reduced.emplace_back(static_cast<int>(r), slot_[j], -w);
            } else {
                couple.emplace_back(static_cast<int>(r), static_cast<int>(j), -w);
            }
        }
        reduced.emplace_back(static_cast<int>(r), static_cast<int>(r), diag);
    }
    const auto m = static_cast<Eigen::Index>(free_.size());
    SparseMatrix lff(m, m);
    lff.setFromTriplets(reduced.begin(), reduced.end());
    coupling_.resize(m, static_cast<Eigen::Index>(n));
    coupling_.setFromTriplets(couple.begin(), couple.end());
    factor_.compute(lff);
    if (factor_.info() != Eigen::Success) {
        throw NumericalError("deform_arap", "reduced ARAP system is singular (component of point " +
                                                std::to_string(free_.front()) + ")");
    }
}

ArapResult ArapSolver::solve(const ArapOptions& options) const {
    const std::size_t n = rest_.size();
    ArapResult out;
    out.floating = floating_;
    out.positions = rest_;
    for (const auto& [idx, target] : constraints_) out.positions[idx] = target;
    for (const auto& fc : floating_) {
        for (auto i : fc.nodes) out.positions[i] = rest_[i] + fc.translation;
    }

    out.rotations = fit_rotations(rest_, out.positions, weights_);
    const double e0 = arap_energy(rest_, out.positions, weights_, out.rotations);
    out.energy.push_back(e0);
    if (free_.empty() || e0 == 0.0) {
        out.converged = true;
        return out;
    }

    const auto m = static_cast<Eigen::Index>(free_.size());
    Eigen::MatrixXd known(static_cast<Eigen::Index>(n), 3);
    for (std::size_t i = 0; i < n; ++i) known.row(static_cast<Eigen::Index>(i)) = out.positions[i].transpose();
    for (auto i : free_) known.row(i).setZero();
    const Eigen::MatrixXd coupled = coupling_ * known;

    Eigen::MatrixXd rhs(m, 3);
    for (int it = 1; it <= options.max_iters; ++it) {
        if (options.cancelled && options.cancelled()) throw Cancelled();
        for (Eigen::Index r = 0; r < m; ++r) {
            const auto i = free_[static_cast<std::size_t>(r)];
            Vec3 b = Vec3::Zero();
            for (const auto& [j, w] : weights_[i]) {
                b += 0.5 * w * (out.rotations[i] + out.rotations[j]) * (rest_[i] - rest_[j]);
            }
            rhs.row(r) = b.transpose() - coupled.row(r);
        }
        const Eigen::MatrixXd x = factor_.solve(rhs);
        if (factor_.info() != Eigen::Success) throw NumericalError("deform_arap", "back-substitution failed");
        for (Eigen::Index r = 0; r < m; ++r) out.positions[free_[static_cast<std::size_t>(r)]] = x.row(r).transpose();

        out.rotations = fit_rotations(rest_, out.positions, weights_);
        const double e = arap_energy(rest_, out.positions, weights_, out.rotations);
        const double decrease = out.energy.back() - e;
        out.energy.push_back(e);
        out.iterations = it;
        if (decrease < options.tol * e0) {
            out.converged = true;
            break;
        }
    }
    return out;
}

}  // namespace splatdeform
