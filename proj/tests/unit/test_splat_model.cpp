#include "fixtures.hpp"
#include "oracles.hpp"

#include "splatdeform/errors.hpp"
#include "splatdeform/splat_model.hpp"

#include <gtest/gtest.h>

using namespace splatdeform;

TEST(RegionLambda, SpikeThresholdDominates) {
    // ln(0.01) = -4.605170 > ln(1/255) = -5.541264
    const double lambda = region_lambda(1.0, 0.01);
    EXPECT_NEAR(lambda, 9.210340371976184, 1e-12);
    Splat s;
    s.scales = Vec2(2.0, 1.0);
    s.opacity = 1.0;
    s.spike_threshold = 0.01;
    const auto e = occupancy_ellipse(s);
    ASSERT_TRUE(e);
    EXPECT_NEAR(e->semi_a, 6.0698, 1e-4);
    EXPECT_NEAR(e->semi_b, 3.0349, 1e-4);
}

TEST(RegionLambda, ContributionCutoffDominates) {
    EXPECT_NEAR(region_lambda(1.0, 1e-300), 11.082527, 1e-6);
    EXPECT_NEAR(region_lambda(1.0, 0.0), 11.082527, 1e-6);
}

TEST(RegionLambda, UnitThresholdIsEmpty) {
    Splat s;
    s.scales = Vec2(1.0, 1.0);
    s.spike_threshold = 1.0;
    EXPECT_FALSE(occupancy_ellipse(s));
}

TEST(InRegion, OpenUnitDisk) {
    OccupancyEllipse e;
    e.semi_a = e.semi_b = 1.0;
    EXPECT_TRUE(in_region(e, Vec3(0.5, 0, 0), 1e-9));
    EXPECT_FALSE(in_region(e, Vec3(1, 0, 0), 1e-9));
    EXPECT_FALSE(in_region(e, Vec3(0, 0, 0.01), 1e-6));
}

TEST(InRegion, SegmentWhenMinorAxisVanishes) {
    OccupancyEllipse e;
    e.semi_a = 1.0;
    e.semi_b = 0.0;
    EXPECT_TRUE(in_region(e, Vec3(0.5, 0, 0), 1e-9));
    EXPECT_FALSE(in_region(e, Vec3(0.5, 0.1, 0), 1e-9));
}

TEST(Canonicalize, SwapsAxesAndKeepsRegion) {
    std::mt19937_64 rng(7);
    Splat s;
    s.rotation = fixtures::random_quat(rng);
    s.scales = Vec2(1.0, 2.0);
    const Splat before = s;
    canonicalize(s);
    EXPECT_DOUBLE_EQ(s.scales[0], 2.0);
    EXPECT_DOUBLE_EQ(s.scales[1], 1.0);
    EXPECT_NEAR(s.rotation_matrix().determinant(), 1.0, 1e-12);
    const auto eb = occupancy_ellipse(before);
    const auto ea = occupancy_ellipse(s);
    ASSERT_TRUE(eb && ea);
    // 1000 in-plane samples: membership must agree under both parametrizations.
    std::uniform_real_distribution<double> u(-8.0, 8.0);
    const Mat3 r = before.rotation_matrix();
    for (int k = 0; k < 1000; ++k) {
        const Vec3 x = before.mean + u(rng) * r.col(0) + u(rng) * r.col(1);
        const bool oracle = oracles::kernel_in_plane(before, x) > oracles::region_threshold(before);
        EXPECT_EQ(in_region(*eb, x, 1e-9), oracle);
        EXPECT_EQ(in_region(*ea, x, 1e-9), oracle);
    }
}

TEST(OccupancyEllipse, QuaternionSignFlipInvariant) {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 100; ++k) {
        Splat s = fixtures::random_splat(rng);
        canonicalize(s);
        Splat f = s;
        f.rotation.coeffs() *= -1.0;
        const auto a = occupancy_ellipse(s), b = occupancy_ellipse(f);
        ASSERT_EQ(a.has_value(), b.has_value());
        if (!a) continue;
        EXPECT_NEAR((a->axis1 - b->axis1).norm(), 0.0, 1e-12);
        EXPECT_NEAR((a->normal - b->normal).norm(), 0.0, 1e-12);
        EXPECT_DOUBLE_EQ(a->semi_a, b->semi_a);
    }
}

TEST(OccupancyEllipse, CommutesWithRigidMotion) {
    std::mt19937_64 rng(11);
    for (int k = 0; k < 100; ++k) {
        Splat s = fixtures::random_splat(rng);
        canonicalize(s);
        const Mat3 r = fixtures::random_rotation(rng);
        const Vec3 t = fixtures::random_vec(rng, -3, 3);
        Splat m = s;
        m.mean = r * s.mean + t;
        m.rotation = Quat(r) * s.rotation;
        const auto a = occupancy_ellipse(s), b = occupancy_ellipse(m);
        ASSERT_EQ(a.has_value(), b.has_value());
        if (!a) continue;
        EXPECT_NEAR((r * a->center + t - b->center).norm(), 0.0, 1e-12);
        EXPECT_NEAR((r * a->axis1 - b->axis1).norm(), 0.0, 1e-12);
        EXPECT_NEAR((r * a->normal - b->normal).norm(), 0.0, 1e-12);
        EXPECT_NEAR(a->semi_b, b->semi_b, 1e-12);
    }
}

TEST(OccupancyEllipse, InvariantsHold) {
    std::mt19937_64 rng(5);
    for (int k = 0; k < 200; ++k) {
        Splat s = fixtures::random_splat(rng);
        canonicalize(s);
        const auto e = occupancy_ellipse(s);
        if (!e) continue;
        EXPECT_LT(std::abs(e->axis1.dot(e->axis2)), 1e-9);
        EXPECT_LT(std::abs(e->axis1.dot(e->normal)), 1e-9);
        EXPECT_LT((e->axis1.cross(e->axis2) - e->normal).norm(), 1e-9);
        EXPECT_GE(e->semi_a, e->semi_b);
    }
}

TEST(SceneScale, BoundingBoxDiagonal) {
    const std::vector<Vec3> pts{{0, 0, 0}, {3, 0, 0}, {0, 4, 0}};
    EXPECT_DOUBLE_EQ(scene_scale(std::span<const Vec3>(pts)), 5.0);
}

TEST(SplatFromEllipse, RoundTripsRegion) {
    std::mt19937_64 rng(9);
    for (int k = 0; k < 100; ++k) {
        Splat s = fixtures::random_splat(rng);
        canonicalize(s);
        const auto e = occupancy_ellipse(s);
        if (!e) continue;
        const Splat r = splat_from_ellipse(s, *e, e->axis1);
        EXPECT_NEAR((r.mean - s.mean).norm(), 0.0, 1e-12);
        EXPECT_NEAR(r.scales[0], s.scales[0], 1e-12);
        EXPECT_NEAR(r.scales[1], s.scales[1], 1e-12);
        EXPECT_NEAR((r.rotation.coeffs() - s.rotation.coeffs()).norm(), 0.0, 1e-9);
    }
}
