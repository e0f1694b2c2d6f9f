#include "fixtures.hpp"
#include "oracles.hpp"

#include "splatdeform/deform_bbw.hpp"
#include "splatdeform/errors.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

using namespace splatdeform;

namespace {

SparseMatrix to_sparse(const Eigen::MatrixXd& m) { return m.sparseView(); }

struct Strip {
    std::vector<Vec3> points;
    LaplacianSystem sys;
};

Strip make_strip(int nx, int ny, double h) {
    const SplatSet set = fixtures::sheet(nx, ny, h);
    Strip s;
    s.points = set.means();
    s.sys = assemble_laplacian(s.points, build_graph(set, 0.005 * h), 30, scene_scale(std::span<const Vec3>(s.points)));
    return s;
}

}  // namespace

TEST(BoxQp, ScalarCases) {
    const SparseMatrix q = to_sparse(Eigen::MatrixXd::Constant(1, 1, 2.0));
    EXPECT_NEAR(solve_box_qp(q, Eigen::VectorXd::Constant(1, -1.0), 0.0, 1.0).x[0], 0.5, 1e-15);
    EXPECT_EQ(solve_box_qp(q, Eigen::VectorXd::Constant(1, -4.0), 0.0, 1.0).x[0], 1.0);
    EXPECT_EQ(solve_box_qp(q, Eigen::VectorXd::Constant(1, 1.0), 0.0, 1.0).x[0], 0.0);
}

TEST(BoxQp, MatchesProjectedGradient) {
    std::mt19937_64 rng(41);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 30;
        Eigen::MatrixXd a(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) a(i, j) = g(rng);
        const Eigen::MatrixXd q = a.transpose() * a / n + 0.05 * Eigen::MatrixXd::Identity(n, n);
        Eigen::VectorXd c(n);
        for (int i = 0; i < n; ++i) c[i] = 1.5 * g(rng);
        const auto res = solve_box_qp(to_sparse(q), c, 0.0, 1.0);
        ASSERT_TRUE(res.converged);
        const Eigen::VectorXd ref = oracles::box_qp_projected_gradient(q, c);
        EXPECT_LE((res.x - ref).cwiseAbs().maxCoeff(), 1e-6);
        EXPECT_GE(res.x.minCoeff(), 0.0);
        EXPECT_LE(res.x.maxCoeff(), 1.0);
    }
}

TEST(Biharmonic, MatchesDenseProduct) {
    const Strip s = make_strip(6, 5, 0.1);
    const Eigen::MatrixXd l = Eigen::MatrixXd(s.sys.stiffness);
    const Eigen::MatrixXd ref = l.transpose() * s.sys.mass.cwiseInverse().asDiagonal() * l;
    const Eigen::MatrixXd got = Eigen::MatrixXd(biharmonic_matrix(s.sys.stiffness, s.sys.mass));
    EXPECT_LE((got - ref).cwiseAbs().maxCoeff(), 1e-9 * ref.cwiseAbs().maxCoeff());
}

TEST(Bbw, InvariantsHold) {
    const Strip s = make_strip(14, 6, 0.1);
    const std::vector<std::uint32_t> anchors{15, 24, 60};
    const WeightField f = solve_bbw(s.sys.stiffness, s.sys.mass, s.points, anchors, 0.45);
    for (std::size_t h = 0; h < anchors.size(); ++h) {
        EXPECT_TRUE(f.converged[h]);
        EXPECT_NEAR(f.weights(anchors[h], h), 1.0, 1e-15);
        for (std::size_t o = 0; o < anchors.size(); ++o)
            if (o != h) EXPECT_EQ(f.weights(anchors[o], h), 0.0);
        for (std::size_t i = 0; i < s.points.size(); ++i) {
            if ((s.points[i] - s.points[anchors[h]]).norm() > 0.45) EXPECT_EQ(f.weights(i, h), 0.0);
        }
    }
    EXPECT_GE(f.weights.minCoeff(), 0.0);
    EXPECT_LE(f.weights.maxCoeff(), 1.0);
    EXPECT_LE(f.weights.rowwise().sum().maxCoeff(), 1.0 + 1e-12);
    EXPECT_GE(f.rest_weight().minCoeff(), -1e-12);
}

TEST(Bbw, MirrorSymmetricHandles) {
    // Triangular lattice (rows of 11, 10, 11) so the Delaunay fans have no co-circular ties.
    const double h = 0.1, dy = h * std::sqrt(3.0) / 2.0;
    const int row_len[3] = {11, 10, 11};
    SplatSet set;
    std::vector<int> mirror;
    for (int j = 0, base = 0; j < 3; base += row_len[j], ++j) {
        for (int i = 0; i < row_len[j]; ++i) {
            const double x = (j % 2 ? i + 0.5 : i) * h;
            set.splats.push_back(fixtures::disk_xy(Vec3(x, j * dy, 0.0), 0.75 * h));
            mirror.push_back(base + row_len[j] - 1 - i);
        }
    }
    const auto pts = set.means();
    const auto sys = assemble_laplacian(pts, build_graph(set, 0.005 * h), 30, scene_scale(std::span<const Vec3>(pts)));
    // Anchors on the middle row, mirrored about x = 0.5.
    const std::vector<std::uint32_t> anchors{11 + 2, 11 + 7};
    const WeightField f = solve_bbw(sys.stiffness, sys.mass, pts, anchors, 0.35);
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_NEAR(f.weights(i, 0), f.weights(mirror[i], 1), 1e-9) << i;
}

TEST(Bbw, SingleHandleAgainstOracleQp) {
    const Strip s = make_strip(6, 5, 0.1);
    const std::uint32_t anchor = 14;
    const double radius = 0.25;
    const WeightField f = solve_bbw(s.sys.stiffness, s.sys.mass, s.points, std::vector<std::uint32_t>{anchor}, radius);
    // Rebuild the reduced problem densely and solve it with projected gradient.
    const Eigen::MatrixXd l = Eigen::MatrixXd(s.sys.stiffness);
    const Eigen::MatrixXd q = l.transpose() * s.sys.mass.cwiseInverse().asDiagonal() * l;
    std::vector<int> free;
    for (int i = 0; i < static_cast<int>(s.points.size()); ++i)
        if (i != static_cast<int>(anchor) && (s.points[i] - s.points[anchor]).norm() <= radius) free.push_back(i);
    const int m = static_cast<int>(free.size());
    Eigen::MatrixXd qff(m, m);
    Eigen::VectorXd c(m);
    for (int r = 0; r < m; ++r) {
        c[r] = q(free[r], anchor);
        for (int k = 0; k < m; ++k) qff(r, k) = q(free[r], free[k]);
    }
    const Eigen::VectorXd ref = oracles::box_qp_projected_gradient(qff, c);
    for (int r = 0; r < m; ++r) EXPECT_NEAR(f.weights(free[r], 0), ref[r], 1e-6);
}

TEST(Bbw, RejectsDuplicateAnchors) {
    const Strip s = make_strip(4, 4, 0.1);
    EXPECT_THROW(solve_bbw(s.sys.stiffness, s.sys.mass, s.points, std::vector<std::uint32_t>{3, 3}, 0.3), ConfigError);
    EXPECT_THROW(solve_bbw(s.sys.stiffness, s.sys.mass, s.points, std::vector<std::uint32_t>{}, 0.3), ConfigError);
}

TEST(Lbs, HalfWeightTranslation) {
    const std::vector<Vec3> pts{{1, 2, 3}, {0.1, 0.2, 0.3}};
    Eigen::MatrixXd w(2, 1);
    w << 0.5, 0.0;
    const std::vector<AffineTransform> t{translation_transform(Vec3(2, 0, -4))};
    const auto out = apply_lbs(pts, w, t);
    EXPECT_EQ(out[0], Vec3(2, 2, 1));
    EXPECT_EQ(out[1], pts[1]);
}

TEST(Lbs, IdentityIsBitExact) {
    std::mt19937_64 rng(1);
    std::vector<Vec3> pts;
    for (int i = 0; i < 100; ++i) pts.push_back(fixtures::random_vec(rng, -10, 10));
    const Eigen::MatrixXd w = Eigen::MatrixXd::Constant(100, 2, 0.3);
    const std::vector<AffineTransform> t{translation_transform(Vec3::Zero()), translation_transform(Vec3::Zero())};
    EXPECT_EQ(apply_lbs(pts, w, t), pts);
}

TEST(Lbs, MatchesExtendedPrecision) {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 0.5);
    std::vector<Vec3> pts;
    Eigen::MatrixXd w(50, 2);
    for (int i = 0; i < 50; ++i) {
        pts.push_back(fixtures::random_vec(rng, -1, 1));
        w(i, 0) = u(rng);
        w(i, 1) = u(rng);
    }
    AffineTransform a = AffineTransform::Zero();
    a.leftCols<3>() = fixtures::random_rotation(rng);
    a.col(3) = Vec3(0.3, 0.1, -0.2);
    const std::vector<AffineTransform> t{a, translation_transform(Vec3(1, 1, 1))};
    const auto out = apply_lbs(pts, w, t);
    for (int i = 0; i < 50; ++i) {
        for (int k = 0; k < 3; ++k) {
            long double acc = (1.0L - w(i, 0) - w(i, 1)) * pts[i][k];
            for (int h = 0; h < 2; ++h) {
                long double tp = t[h](k, 3);
                for (int c = 0; c < 3; ++c) tp += static_cast<long double>(t[h](k, c)) * pts[i][c];
                acc += w(i, h) * tp;
            }
            EXPECT_NEAR(out[i][k], static_cast<double>(acc), 1e-14);
        }
    }
}
