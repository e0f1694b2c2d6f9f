#include "splatdeform/kernel_adaptation.hpp"

#include "splatdeform/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace splatdeform {

InscribedTriangle inscribed_triangle(const OccupancyEllipse& ellipse, std::uint32_t owner) {
    if (!(ellipse.semi_a > 0.0)) throw GeometryError("kernel_adaptation", "empty occupancy region");
    const Vec3 v1 = ellipse.semi_axis1();
    const Vec3 v2 = ellipse.semi_axis2();
    const double h = std::sqrt(3.0) / 2.0;
    InscribedTriangle t;
    t.owner = owner;
    t.vertices[0] = ellipse.center + v1;
    t.vertices[1] = ellipse.center - 0.5 * v1 + h * v2;
    t.vertices[2] = ellipse.center - 0.5 * v1 - h * v2;
    return t;
}

Vec3 transfer_displacement(const Vec3& point, std::span<const DisplacedAnchor> adjacent, double coincide_tol) {
    if (adjacent.empty()) throw GeometryError("kernel_adaptation", "no adjacent kernels to transfer from");
    std::size_t closest = 0;
    double closest_d = kInfinity;
    for (std::size_t j = 0; j < adjacent.size(); ++j) {
        const double d = (point - adjacent[j].position).norm();
        if (d < closest_d) {
            closest_d = d;
            closest = j;
        }
    }
    if (closest_d < coincide_tol) return point + adjacent[closest].displacement;

    Vec3 acc = Vec3::Zero();
    double wsum = 0.0;
    for (const auto& a : adjacent) {
        const double w = 1.0 / (point - a.position).norm();
        acc += w * a.displacement;
        wsum += w;
    }
    return point + acc / wsum;
}

OccupancyEllipse steiner_circumellipse(const Vec3& t1, const Vec3& t2, const Vec3& t3, double area_floor) {
    const double area = 0.5 * (t2 - t1).cross(t3 - t1).norm();
    if (!(area > area_floor)) throw GeometryError("kernel_adaptation", "degenerate triangle");

    const Vec3 g = (t1 + t2 + t3) / 3.0;
    // Conjugate semi-diameters of the circumellipse.
    const Vec3 f1 = t1 - g;
    const Vec3 f2 = (t2 - t3) / std::sqrt(3.0);
    // Principal directions of f1 cos t + f2 sin t (Rytz): the parameter t0
    // maximizing the radius satisfies tan 2 t0 = 2 f1.f2 / (|f1|^2 - |f2|^2).
    const double t0 = 0.5 * std::atan2(2.0 * f1.dot(f2), f1.squaredNorm() - f2.squaredNorm());
    const Vec3 major = f1 * std::cos(t0) + f2 * std::sin(t0);
    const Vec3 minor = -f1 * std::sin(t0) + f2 * std::cos(t0);

    OccupancyEllipse e;
    e.center = g;
    e.normal = f1.cross(f2).normalized();
    e.semi_a = major.norm();
    e.semi_b = minor.norm();
    e.axis1 = major / e.semi_a;
    e.axis2 = e.normal.cross(e.axis1);
    return e;
}

std::vector<std::uint32_t> binding_set(const SplatGraph& graph, std::span<const Vec3> means, std::uint32_t owner,
                                       const Vec3& vertex, std::size_t k) {
    std::vector<std::uint32_t> pool{owner};
    for (const auto& nb : graph.neighbors(owner)) pool.push_back(nb.node);
    if (pool.size() < k) {
        for (const auto& nd : geodesic_knn(graph, owner, k).neighbors) pool.push_back(nd.node);
        std::sort(pool.begin(), pool.end());
        pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    }
    std::vector<std::pair<double, std::uint32_t>> ranked;
    ranked.reserve(pool.size());
    for (auto j : pool) ranked.emplace_back((means[j] - vertex).squaredNorm(), j);
    const std::size_t take = std::min(k, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end());
    std::vector<std::uint32_t> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(ranked[i].second);
    return out;
}

SplatSet adapt_kernels(const SplatSet& splats, const SplatGraph& graph, std::span<const Vec3> displacements,
                       const AdaptationOptions& options, AdaptationReport* report) {
    const std::size_t n = splats.size();
    if (displacements.size() != n) {
        throw GeometryError("kernel_adaptation", "one displacement per splat is required");
    }
    if (graph.node_count() != n) throw GeometryError("kernel_adaptation", "graph and splat count differ");
    const std::vector<Vec3> means = splats.means();
    const double scale = scene_scale(std::span<const Vec3>(means));
    const double coincide_tol = 1e-12 * scale;
    const double area_floor = 1e-12 * scale * scale;

    SplatSet out = splats;
    std::vector<char> status(n, 0);  // 0 adapted, 1 fallback, 2 empty region
    std::vector<double> residual(n, 0.0);
    const auto sn = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 256)
    for (std::int64_t si = 0; si < sn; ++si) {
        const auto i = static_cast<std::uint32_t>(si);
        const Splat& src = splats.splats[i];
        Splat& dst = out.splats[i];
        const auto region = occupancy_ellipse(src, options.min_contribution);
        if (!region) {
            dst.mean = src.mean + displacements[i];
            status[i] = 2;
            continue;
        }
        const InscribedTriangle tri = inscribed_triangle(*region, i);
        std::array<Vec3, 3> moved;
        for (int v = 0; v < 3; ++v) {
            const auto bound = binding_set(graph, means, i, tri.vertices[v], options.k_bind);
            std::vector<DisplacedAnchor> adjacent;
            adjacent.reserve(bound.size());
            for (auto j : bound) adjacent.push_back({means[j], displacements[j]});
            moved[v] = transfer_displacement(tri.vertices[v], adjacent, coincide_tol);
        }
        try {
            const OccupancyEllipse e = steiner_circumellipse(moved[0], moved[1], moved[2], area_floor);
            // The displaced first vertex carries the old major axis; it fixes the
            // in-plane frame of circles and the sign of the major axis.
            dst = splat_from_ellipse(src, e, moved[0] - e.center, options.min_contribution);
            const auto check = occupancy_ellipse(dst, options.min_contribution);
            residual[i] = std::max(std::abs(check->semi_a - e.semi_a) / e.semi_a,
                                   std::abs(check->semi_b - e.semi_b) / std::max(e.semi_a, 1e-300));
        } catch (const GeometryError&) {
            dst = src;
            dst.mean = src.mean + displacements[i];
            status[i] = 1;
        }
    }

    if (report) {
        *report = {};
        for (std::uint32_t i = 0; i < n; ++i) {
            if (status[i] == 0) ++report->adapted;
            if (status[i] == 1) {
                ++report->fallbacks;
                report->fallback_indices.push_back(i);
            }
            if (status[i] == 2) ++report->empty_regions;
            report->max_lambda_residual = std::max(report->max_lambda_residual, residual[i]);
        }
    }
    return out;
}

SplatSet translate_kernels(const SplatSet& splats, std::span<const Vec3> displacements) {
    if (displacements.size() != splats.size()) {
        throw GeometryError("kernel_adaptation", "one displacement per splat is required");
    }
    SplatSet out = splats;
    for (std::size_t i = 0; i < out.size(); ++i) out.splats[i].mean += displacements[i];
    return out;
}

}  // namespace splatdeform
