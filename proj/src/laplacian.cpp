#include "splatdeform/laplacian.hpp"

#include "splatdeform/errors.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <ostream>

namespace splatdeform {
namespace {

double cotangent(const Vec3& apex, const Vec3& a, const Vec3& b) {
    const Vec3 u = a - apex;
    const Vec3 v = b - apex;
    const double cross = u.cross(v).norm();
    return u.dot(v) / std::max(cross, 1e-300);
}

}  // namespace

LocalTriangulation local_triangulation(std::span<const Vec3> points, std::size_t center,
                                       const GeodesicNeighborhood& neighborhood, double area_floor) {
    if (neighborhood.neighbors.size() < 3) {
        throw GeometryError("laplacian", "neighborhood of point " + std::to_string(center) + " has " +
                                             std::to_string(neighborhood.neighbors.size()) +
                                             " neighbors; at least 3 are required");
    }
    LocalTriangulation out;
    out.center = static_cast<std::uint32_t>(center);
    out.vertices.push_back(out.center);
    for (const auto& nb : neighborhood.neighbors) out.vertices.push_back(nb.node);
    const std::size_t m = out.vertices.size();

    Vec3 mean = Vec3::Zero();
    for (auto v : out.vertices) mean += points[v];
    mean /= static_cast<double>(m);
    Mat3 cov = Mat3::Zero();
    for (auto v : out.vertices) {
        const Vec3 d = points[v] - mean;
        cov += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    // Ascending eigenvalues: column 0 is the normal, 2 and 1 span the plane.
    const Vec3 e1 = eig.eigenvectors().col(2);
    const Vec3 e2 = eig.eigenvectors().col(1);
    const Vec3& c = points[center];

    std::vector<Vec2> flat(m);
    double extent = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        const Vec3 d = points[out.vertices[k]] - c;
        flat[k] = Vec2(d.dot(e1), d.dot(e2));
        extent = std::max(extent, flat[k].norm());
    }

    auto keep = [&](std::uint32_t a, std::uint32_t b, std::uint32_t d) {
        const double area = 0.5 * (points[b] - points[a]).cross(points[d] - points[a]).norm();
        if (area > area_floor) out.triangles.push_back({a, b, d});
    };

    const double lam_max = std::max(eig.eigenvalues()[2], 1e-300);
    const bool collinear = eig.eigenvalues()[1] <= 1e-12 * lam_max;
    if (!collinear) {
        for (const auto& t : delaunay_fan(flat, 0)) {
            keep(out.vertices[t[0]], out.vertices[t[1]], out.vertices[t[2]]);
        }
        return out;
    }

    // Collinear projection: order the neighbors by angle around the center
    // after a small alternating jitter and connect them as a fan.
    out.jitter = 1e-6 * std::max(extent, 1e-300);
    std::vector<std::pair<double, std::size_t>> by_angle;
    for (std::size_t k = 1; k < m; ++k) {
        const Vec2 q = flat[k] + Vec2(0.0, (k % 2 ? 1.0 : -1.0) * out.jitter);
        by_angle.emplace_back(std::atan2(q.y(), q.x()), k);
    }
    std::sort(by_angle.begin(), by_angle.end());
    for (std::size_t k = 0; k + 1 < by_angle.size(); ++k) {
        keep(out.center, out.vertices[by_angle[k].second], out.vertices[by_angle[k + 1].second]);
    }
    return out;
}

LaplacianSystem build_laplacian(std::span<const Vec3> points, std::span<const LocalTriangulation> triangulations,
                                double scale) {
    const std::size_t n = points.size();
    const double mass_floor = 1e-12 * scale * scale;
    // One-sided rows: row i only sees triangles of its own triangulation.
    std::vector<std::map<std::uint32_t, double>> rows(n);
    Eigen::VectorXd mass = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (const auto& lt : triangulations) {
        const std::uint32_t i = lt.center;
        auto& row = rows[i];
        for (const auto& t : lt.triangles) {
            int slot = -1;
            for (int s = 0; s < 3; ++s) {
                if (t[s] == i) slot = s;
            }
            if (slot < 0) continue;
            const std::uint32_t j = t[(slot + 1) % 3];
            const std::uint32_t k = t[(slot + 2) % 3];
            const Vec3 &pi = points[i], &pj = points[j], &pk = points[k];
            row[j] += 0.5 * cotangent(pk, pi, pj);
            row[k] += 0.5 * cotangent(pj, pi, pk);
            mass[i] += 0.5 * (pj - pi).cross(pk - pi).norm() / 3.0;
        }
    }

    // One weight per unordered pair, clamped at zero.
    LaplacianSystem out;
    std::vector<std::map<std::uint32_t, double>> sym(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        for (const auto& [j, w] : rows[i]) {
            if (j == i || sym[i].count(j)) continue;
            const auto back = rows[j].find(i);
            double pair = 0.5 * (w + (back == rows[j].end() ? 0.0 : back->second));
            if (pair < 0.0) {
                ++out.clamped;
                pair = 0.0;
            }
            sym[i][j] = pair;
            sym[j][i] = pair;
        }
    }
    // Snap every weight to a shared dyadic grid so row sums are exact in any order.
    double max_row = 0.0;
    for (const auto& r : sym) {
        double t = 0.0;
        for (const auto& [j, w] : r) t += w;
        max_row = std::max(max_row, t);
    }
    if (max_row > 0.0) {
        const double q = std::ldexp(1.0, std::ilogb(max_row) + 1 - 50);
        for (auto& r : sym)
            for (auto& [j, w] : r) w = std::nearbyint(w / q) * q;
    }
    std::vector<Eigen::Triplet<double>> triplets;
    for (std::uint32_t i = 0; i < n; ++i) {
        double off_sum = 0.0;
        bool any = false;
        for (const auto& [j, w] : sym[i]) {
            if (w > 0.0) {
                triplets.emplace_back(i, j, -w);
                off_sum += -w;
                any = true;
            }
        }
        if (any) {
            triplets.emplace_back(i, i, -off_sum);
        } else {
            triplets.emplace_back(i, i, 1.0);
            out.isolated.push_back(i);
        }
        mass[i] = std::max(mass[i], mass_floor);
    }
    out.stiffness.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    out.stiffness.setFromTriplets(triplets.begin(), triplets.end());
    out.stiffness.makeCompressed();
    out.mass = std::move(mass);
    return out;
}

LaplacianSystem assemble_laplacian(std::span<const Vec3> points, const SplatGraph& graph, std::size_t k,
                                   double scale, LaplacianReport* report) {
    const std::size_t n = points.size();
    if (graph.node_count() != n) throw GeometryError("laplacian", "graph and point count differ");
    const double area_floor = 1e-12 * scale * scale;
    std::vector<LocalTriangulation> tris(n);
    std::vector<char> small(n, 0);
    const auto sn = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 256)
    for (std::int64_t si = 0; si < sn; ++si) {
        const auto i = static_cast<std::size_t>(si);
        const auto nb = geodesic_knn(graph, i, k);
        if (nb.neighbors.size() < 3) {
            small[i] = 1;
            tris[i].center = static_cast<std::uint32_t>(i);
            tris[i].vertices = {static_cast<std::uint32_t>(i)};
            continue;
        }
        tris[i] = local_triangulation(points, i, nb, area_floor);
    }
    LaplacianSystem sys = build_laplacian(points, tris, scale);
    if (report) {
        *report = {};
        report->small_neighborhoods = static_cast<std::size_t>(std::count(small.begin(), small.end(), 1));
        report->jittered = static_cast<std::size_t>(
            std::count_if(tris.begin(), tris.end(), [](const auto& t) { return t.jitter > 0.0; }));
        report->isolated = sys.isolated.size();
        report->clamped = sys.clamped;
    }
    return sys;
}

std::vector<std::vector<std::pair<std::uint32_t, double>>> edge_weights(const SparseMatrix& stiffness) {
    std::vector<std::vector<std::pair<std::uint32_t, double>>> out(static_cast<std::size_t>(stiffness.cols()));
    for (Eigen::Index c = 0; c < stiffness.outerSize(); ++c) {
        for (SparseMatrix::InnerIterator it(stiffness, c); it; ++it) {
            if (it.row() != it.col() && it.value() < 0.0) {
                out[static_cast<std::size_t>(it.col())].emplace_back(static_cast<std::uint32_t>(it.row()),
                                                                     -it.value());
            }
        }
    }
    return out;
}

std::vector<double> spectrum_check(const SparseMatrix& stiffness, const Eigen::VectorXd& mass, int m) {
    const Eigen::Index n = stiffness.rows();
    m = static_cast<int>(std::min<Eigen::Index>(m, n));
    if (m <= 0) return {};
    const Eigen::VectorXd inv_sqrt = mass.cwiseSqrt().cwiseInverse();

    if (n <= 2000) {
        // Symmetric form M^-1/2 L M^-1/2 has the same spectrum.
        Eigen::MatrixXd dense = Eigen::MatrixXd(stiffness);
        dense = 0.5 * (dense + dense.transpose()).eval();
        dense = inv_sqrt.asDiagonal() * dense * inv_sqrt.asDiagonal();
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(dense, Eigen::EigenvaluesOnly);
        if (eig.info() != Eigen::Success) throw NumericalError("laplacian", "dense eigensolver failed");
        std::vector<double> out(eig.eigenvalues().data(), eig.eigenvalues().data() + m);
        return out;
    }

    // Shift-invert subspace iteration with Rayleigh-Ritz on M-orthonormal bases.
    const double shift = -1e-8 * (stiffness.diagonal().cwiseQuotient(mass)).cwiseAbs().maxCoeff();
    SparseMatrix shifted = stiffness;
    for (Eigen::Index i = 0; i < n; ++i) shifted.coeffRef(i, i) -= shift * mass[i];
    Eigen::SimplicialLDLT<SparseMatrix> solver(shifted);
    if (solver.info() != Eigen::Success) throw NumericalError("laplacian", "shifted factorization failed");

    const int block = std::min<int>(static_cast<int>(n), 2 * m + 8);
    Eigen::MatrixXd x(n, block);
    for (int c = 0; c < block; ++c) {
        for (Eigen::Index r = 0; r < n; ++r) {
            // Deterministic, non-degenerate start block.
            x(r, c) = std::sin(0.37 * static_cast<double>((r + 1) * (c + 1))) + (c == 0 ? 1.0 : 0.0);
        }
    }
    Eigen::VectorXd prev = Eigen::VectorXd::Constant(m, kInfinity);
    Eigen::VectorXd ritz;
    for (int iter = 0; iter < 500; ++iter) {
        Eigen::MatrixXd y = solver.solve(mass.asDiagonal() * x);
        // M-orthonormalize via Cholesky of the Gram matrix.
        Eigen::MatrixXd gram = y.transpose() * mass.asDiagonal() * y;
        Eigen::LLT<Eigen::MatrixXd> llt(gram);
        y = llt.matrixU().solve<Eigen::OnTheRight>(y);
        Eigen::MatrixXd reduced = y.transpose() * (stiffness * y);
        reduced = 0.5 * (reduced + reduced.transpose()).eval();
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(reduced);
        x = y * eig.eigenvectors();
        ritz = eig.eigenvalues();
        const double change = (ritz.head(m) - prev).cwiseAbs().maxCoeff();
        prev = ritz.head(m);
        if (iter > 2 && change <= 1e-12 * std::max(1.0, ritz.head(m).cwiseAbs().maxCoeff())) break;
    }
    return std::vector<double>(ritz.data(), ritz.data() + m);
}

void write_matrix(std::ostream& out, const SparseMatrix& matrix, const Eigen::VectorXd* mass) {
    std::vector<std::tuple<Eigen::Index, Eigen::Index, double>> entries;
    for (Eigen::Index c = 0; c < matrix.outerSize(); ++c) {
        for (SparseMatrix::InnerIterator it(matrix, c); it; ++it) entries.emplace_back(it.row(), it.col(), it.value());
    }
    std::sort(entries.begin(), entries.end());
    char buf[64];
    auto num = [&](double v) {
        const auto res = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, res.ptr);
    };
    out << "splatmatrix 1\n";
    out << "rows " << matrix.rows() << "\ncols " << matrix.cols() << "\nnnz " << entries.size() << "\n";
    for (const auto& [r, c, v] : entries) out << r << " " << c << " " << num(v) << "\n";
    if (mass) {
        out << "mass " << mass->size() << "\n";
        for (Eigen::Index i = 0; i < mass->size(); ++i) out << num((*mass)[i]) << "\n";
    }
}

}  // namespace splatdeform
