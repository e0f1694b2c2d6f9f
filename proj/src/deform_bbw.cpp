#include "splatdeform/deform_bbw.hpp"

#include "splatdeform/errors.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>

namespace splatdeform {
namespace {

SparseMatrix submatrix(const SparseMatrix& q, const std::vector<int>& slot, Eigen::Index size) {
    std::vector<Eigen::Triplet<double>> t;
    for (Eigen::Index c = 0; c < q.outerSize(); ++c) {
        if (slot[static_cast<std::size_t>(c)] < 0) continue;
        for (SparseMatrix::InnerIterator it(q, c); it; ++it) {
            const int r = slot[static_cast<std::size_t>(it.row())];
            if (r >= 0) t.emplace_back(r, slot[static_cast<std::size_t>(c)], it.value());
        }
    }
    SparseMatrix out(size, size);
    out.setFromTriplets(t.begin(), t.end());
    return out;
}

bool factor_ok(const Eigen::SimplicialLDLT<SparseMatrix>& f) {
    if (f.info() != Eigen::Success) return false;
    const Eigen::VectorXd d = f.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    return (d.array() > 1e-14 * std::max(dmax, 1e-300)).all();
}

}  // namespace

double box_qp_objective(const SparseMatrix& q, const Eigen::VectorXd& c, const Eigen::VectorXd& x) {
    return 0.5 * x.dot(q * x) + c.dot(x);
}

BoxQpResult solve_box_qp(const SparseMatrix& q_in, const Eigen::VectorXd& c, double lower, double upper,
                         const BoxQpOptions& options) {
    const Eigen::Index n = q_in.rows();
    BoxQpResult out;
    out.x = Eigen::VectorXd::Zero(n);
    if (n == 0) {
        out.converged = true;
        return out;
    }
    SparseMatrix q = q_in;

    // 0 = free, -1 = at lower, +1 = at upper
    std::vector<int> state(static_cast<std::size_t>(n), 0);
    Eigen::VectorXd best;
    double best_obj = kInfinity;

    for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
        if (options.cancelled && options.cancelled()) throw Cancelled();
        out.sweeps = sweep;
        std::vector<int> slot(static_cast<std::size_t>(n), -1);
        std::vector<Eigen::Index> inactive;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (state[static_cast<std::size_t>(i)] == 0) {
                slot[static_cast<std::size_t>(i)] = static_cast<int>(inactive.size());
                inactive.push_back(i);
            } else {
                out.x[i] = state[static_cast<std::size_t>(i)] < 0 ? lower : upper;
            }
        }

        if (!inactive.empty()) {
            const auto m = static_cast<Eigen::Index>(inactive.size());
            // rhs = -(c_I + Q_IA x_A)
            Eigen::VectorXd xa = out.x;
            for (auto i : inactive) xa[i] = 0.0;
            const Eigen::VectorXd qa = q * xa;
            Eigen::VectorXd rhs(m);
            for (Eigen::Index r = 0; r < m; ++r) rhs[r] = -(c[inactive[r]] + qa[inactive[r]]);

            SparseMatrix qii = submatrix(q, slot, m);
            Eigen::SimplicialLDLT<SparseMatrix> factor(qii);
            if (!factor_ok(factor)) {
                if (out.regularized) throw NumericalError("deform_bbw", "QP system singular after regularization");
                // Regularize the full matrix once and keep it for later sweeps.
                SparseMatrix reg = q;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double d = q.coeff(i, i);
                    reg.coeffRef(i, i) += 1e-10 * (d > 0.0 ? d : 1.0);
                }
                q = reg;
                out.regularized = true;
                qii = submatrix(q, slot, m);
                factor.compute(qii);
                if (!factor_ok(factor)) {
                    throw NumericalError("deform_bbw", "QP system singular after regularization");
                }
            }
            const Eigen::VectorXd xi = factor.solve(rhs);
            for (Eigen::Index r = 0; r < m; ++r) out.x[inactive[r]] = xi[r];
        }

        // Pin violators.
        bool pinned = false;
        for (auto i : inactive) {
            if (out.x[i] < lower) {
                out.x[i] = lower;
                state[static_cast<std::size_t>(i)] = -1;
                pinned = true;
            } else if (out.x[i] > upper) {
                out.x[i] = upper;
                state[static_cast<std::size_t>(i)] = 1;
                pinned = true;
            }
        }
        const double obj = box_qp_objective(q_in, c, out.x);
        if (obj < best_obj) {
            best_obj = obj;
            best = out.x;
        }
        if (pinned) continue;

        // Release bound variables with an inward-pointing negative gradient.
        const Eigen::VectorXd grad = q * out.x + c;
        std::vector<std::pair<double, Eigen::Index>> release;
        for (Eigen::Index i = 0; i < n; ++i) {
            const int s = state[static_cast<std::size_t>(i)];
            if (s < 0 && grad[i] < 0.0) release.emplace_back(-grad[i], i);
            if (s > 0 && grad[i] > 0.0) release.emplace_back(grad[i], i);
        }
        if (release.empty()) {
            out.converged = true;
            return out;
        }
        if (sweep > options.max_sweeps / 2) {
            // Late sweeps release one variable at a time to avoid cycling.
            const auto worst = *std::max_element(release.begin(), release.end());
            release.assign(1, worst);
        }
        for (const auto& [g, i] : release) state[static_cast<std::size_t>(i)] = 0;
    }
    out.x = best;
    return out;
}

Eigen::VectorXd WeightField::rest_weight() const {
    return Eigen::VectorXd::Ones(weights.rows()) - weights.rowwise().sum();
}

SparseMatrix biharmonic_matrix(const SparseMatrix& stiffness, const Eigen::VectorXd& mass) {
    const Eigen::VectorXd inv = mass.cwiseInverse();
    SparseMatrix q = SparseMatrix(stiffness.transpose()) * inv.asDiagonal() * stiffness;
    q = 0.5 * (q + SparseMatrix(q.transpose()));
    q.prune(0.0);
    return q;
}

WeightField solve_bbw(const SparseMatrix& stiffness, const Eigen::VectorXd& mass, std::span<const Vec3> points,
                      std::span<const std::uint32_t> anchors, double cage_radius, const BoxQpOptions& options) {
    const std::size_t n = points.size();
    if (static_cast<std::size_t>(stiffness.rows()) != n) {
        throw GeometryError("deform_bbw", "stiffness size does not match the point count");
    }
    if (anchors.empty()) throw ConfigError("BBW needs at least one handle", "handles");
    {
        std::vector<std::uint32_t> sorted(anchors.begin(), anchors.end());
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw ConfigError("handles must be distinct after snapping", "handles");
        }
        if (sorted.back() >= n) throw ConfigError("handle index out of range", "handles");
    }

    const SparseMatrix q = biharmonic_matrix(stiffness, mass);
    WeightField field;
    field.anchors.assign(anchors.begin(), anchors.end());
    field.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(anchors.size()));
    field.cages.resize(anchors.size());
    field.converged.assign(anchors.size(), 0);
    field.sweeps.assign(anchors.size(), 0);

    for (std::size_t h = 0; h < anchors.size(); ++h) {
        const std::uint32_t a = anchors[h];
        auto& cage = field.cages[h];
        for (std::uint32_t i = 0; i < n; ++i) {
            if ((points[i] - points[a]).norm() <= cage_radius) cage.push_back(i);
        }
        // Free variables: cage points other than any handle anchor. Anchors of
        // other handles stay pinned at 0 for this handle.
        std::vector<int> slot(n, -1);
        std::vector<char> is_anchor(n, 0);
        for (auto x : anchors) is_anchor[x] = 1;
        Eigen::Index m = 0;
        for (auto i : cage) {
            if (!is_anchor[i]) slot[i] = static_cast<int>(m++);
        }
        const SparseMatrix qff = submatrix(q, slot, m);
        // Linear term from the anchor pinned at 1: c_F = Q_{F,a}.
        Eigen::VectorXd c = Eigen::VectorXd::Zero(m);
        for (SparseMatrix::InnerIterator it(q, a); it; ++it) {
            const int r = slot[static_cast<std::size_t>(it.row())];
            if (r >= 0) c[r] = it.value();
        }
        const BoxQpResult res = solve_box_qp(qff, c, 0.0, 1.0, options);
        field.converged[h] = res.converged;
        field.sweeps[h] = res.sweeps;
        auto col = field.weights.col(static_cast<Eigen::Index>(h));
        col[a] = 1.0;
        for (auto i : cage) {
            if (slot[i] >= 0) col[i] = res.x[slot[i]];
        }
    }

    for (Eigen::Index i = 0; i < field.weights.rows(); ++i) {
        const double s = field.weights.row(i).sum();
        if (s > 1.0) field.weights.row(i) /= s;
    }
    return field;
}

std::vector<Vec3> apply_lbs(std::span<const Vec3> points, const Eigen::MatrixXd& weights,
                            std::span<const AffineTransform> transforms) {
    if (static_cast<std::size_t>(weights.cols()) != transforms.size()) {
        throw ConfigError("one transform per weight column is required", "handles");
    }
    std::vector<Vec3> out(points.size());
    const auto n = static_cast<std::int64_t>(points.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t si = 0; si < n; ++si) {
        const auto i = static_cast<std::size_t>(si);
        const Vec3& p = points[i];
        const Eigen::Vector4d ph(p.x(), p.y(), p.z(), 1.0);
        // Same blend written as p + sum_i w_i (T_i p - p); identity handles
        // then leave p bit-for-bit unchanged.
        Vec3 acc = Vec3::Zero();
        for (std::size_t h = 0; h < transforms.size(); ++h) {
            const double w = weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(h));
            if (w == 0.0) continue;
            acc += w * (transforms[h] * ph - p);
        }
        out[i] = p + acc;
    }
    return out;
}

}  // namespace splatdeform
