#include "splatdeform/evaluation.hpp"

#include "splatdeform/errors.hpp"
#include "splatdeform/splat_graph.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace splatdeform {

Vec3 pca_handle_direction(std::span<const Vec3> neighborhood, const Vec3& handle) {
    if (neighborhood.size() < 3) throw GeometryError("evaluation", "PCA needs at least 3 points");
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : neighborhood) centroid += p;
    centroid /= static_cast<double>(neighborhood.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& p : neighborhood) cov += (p - centroid) * (p - centroid).transpose();
    cov /= static_cast<double>(neighborhood.size());

    const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 ev = eig.eigenvalues();
    const double top = ev[2];
    if (!(top > 0.0) || ev[1] <= 1e-12 * top) {
        throw GeometryError("evaluation", "PCA neighborhood is collinear or degenerate");
    }

    Vec3 dir = eig.eigenvectors().col(0);
    int mult = 1;
    while (mult < 3 && ev[mult] - ev[0] < 1e-12 * top) ++mult;
    if (mult > 1) {
        // Degenerate smallest eigenspace: project the preferred axes into it.
        const Eigen::MatrixXd basis = eig.eigenvectors().leftCols(mult);
        for (const Vec3& axis : {Vec3::UnitZ().eval(), Vec3::UnitY().eval(), Vec3::UnitX().eval()}) {
            const Vec3 proj = basis * (basis.transpose() * axis);
            if (proj.norm() > 1e-6) {
                dir = proj.normalized();
                break;
            }
        }
    }
    dir.normalize();

    const double side = dir.dot(handle - centroid);
    if (side < 0.0) {
        dir = -dir;
    } else if (side == 0.0) {
        // Handle at the centroid: fall back to the +z, +y, +x hemisphere rule.
        for (int a : {2, 1, 0}) {
            if (dir[a] != 0.0) {
                if (dir[a] < 0.0) dir = -dir;
                break;
            }
        }
    }
    return dir;
}

std::vector<std::uint32_t> farthest_point_sampling(std::span<const Vec3> points, std::size_t n,
                                                   std::uint32_t seed) {
    const std::size_t count = points.size();
    if (n == 0 || count == 0) return {};
    if (seed >= count) throw ConfigError("FPS seed index out of range", "seed");
    n = std::min(n, count);
    std::vector<double> dist(count, kInfinity);
    std::vector<std::uint32_t> out{seed};
    std::uint32_t last = seed;
    dist[seed] = -1.0;
    while (out.size() < n) {
        std::uint32_t best = 0;
        double best_d = -1.0;
        for (std::uint32_t i = 0; i < count; ++i) {
            if (dist[i] < 0.0) continue;
            dist[i] = std::min(dist[i], (points[i] - points[last]).squaredNorm());
            if (dist[i] > best_d) {
                best_d = dist[i];
                best = i;
            }
        }
        dist[best] = -1.0;
        out.push_back(best);
        last = best;
    }
    return out;
}

KeypointSet sample_keypoints(std::span<const Vec3> reference, const Vec3& handle_position, double radius,
                             std::size_t n) {
    std::vector<std::uint32_t> region;
    std::uint32_t seed_local = 0;
    double seed_d = kInfinity;
    for (std::uint32_t i = 0; i < reference.size(); ++i) {
        const double d = (reference[i] - handle_position).norm();
        if (d > radius) continue;
        if (d < seed_d) {
            seed_d = d;
            seed_local = static_cast<std::uint32_t>(region.size());
        }
        region.push_back(i);
    }
    KeypointSet ks;
    if (region.empty()) return ks;
    std::vector<Vec3> pts;
    pts.reserve(region.size());
    for (auto i : region) pts.push_back(reference[i]);
    ks.seed = region[seed_local];
    for (auto local : farthest_point_sampling(pts, n, seed_local)) {
        ks.reference.push_back(region[local]);
        ks.positions.push_back(reference[region[local]]);
    }
    ks.pairs.assign(ks.positions.size(), kUnpaired);
    return ks;
}

void pair_keypoints(KeypointSet& keypoints, std::span<const Vec3> splat_means, double max_distance) {
    keypoints.pairs.assign(keypoints.positions.size(), kUnpaired);
    const double limit2 = max_distance * max_distance;
    for (std::size_t k = 0; k < keypoints.positions.size(); ++k) {
        double best = kInfinity;
        for (std::size_t j = 0; j < splat_means.size(); ++j) {
            const double d = (splat_means[j] - keypoints.positions[k]).squaredNorm();
            if (d < best) {
                best = d;
                keypoints.pairs[k] = static_cast<std::int64_t>(j);
            }
        }
        if (best > limit2) keypoints.pairs[k] = kUnpaired;
    }
}

PckScore pck3d(std::span<const Vec3> gt_deformed, std::span<const Vec3> means_deformed,
               std::span<const std::int64_t> pairs, double tau) {
    if (pairs.size() != gt_deformed.size()) {
        throw ConfigError("one pairing per keypoint is required", "pairs");
    }
    PckScore s;
    s.total = gt_deformed.size();
    for (std::size_t k = 0; k < gt_deformed.size(); ++k) {
        const std::int64_t p = pairs[k];
        if (p < 0 || static_cast<std::size_t>(p) >= means_deformed.size()) {
            ++s.unpaired;
            continue;
        }
        if ((gt_deformed[k] - means_deformed[static_cast<std::size_t>(p)]).norm() <= tau) ++s.correct;
    }
    s.score = s.total == 0 ? 0.0 : static_cast<double>(s.correct) / static_cast<double>(s.total);
    return s;
}

std::vector<std::pair<std::string, std::vector<double>>> PckReport::category_means() const {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    std::vector<std::size_t> counts;
    for (const auto& e : entries) {
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& c) { return c.first == e.category; });
        if (it == out.end()) {
            out.emplace_back(e.category, std::vector<double>(thresholds.size(), 0.0));
            counts.push_back(0);
            it = out.end() - 1;
        }
        const auto c = static_cast<std::size_t>(it - out.begin());
        for (std::size_t t = 0; t < thresholds.size(); ++t) it->second[t] += e.scores[t].score;
        ++counts[c];
    }
    for (std::size_t c = 0; c < out.size(); ++c) {
        for (auto& v : out[c].second) v /= static_cast<double>(counts[c]);
    }
    return out;
}

std::vector<double> PckReport::overall_means() const {
    std::vector<double> out(thresholds.size(), 0.0);
    if (entries.empty()) return out;
    for (const auto& e : entries) {
        for (std::size_t t = 0; t < thresholds.size(); ++t) out[t] += e.scores[t].score;
    }
    for (auto& v : out) v /= static_cast<double>(entries.size());
    return out;
}

nlohmann::json PckReport::to_json() const {
    nlohmann::json j;
    j["thresholds"] = thresholds;
    auto& rows = j["entries"] = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json row{{"category", e.category}, {"object", e.object}, {"handle", e.handle}};
        auto& sc = row["scores"] = nlohmann::json::array();
        for (const auto& s : e.scores) {
            sc.push_back({{"score", s.score}, {"correct", s.correct}, {"total", s.total}, {"unpaired", s.unpaired}});
        }
        rows.push_back(std::move(row));
    }
    auto& cats = j["categories"] = nlohmann::json::object();
    for (const auto& [name, means] : category_means()) cats[name] = means;
    j["average"] = overall_means();
    return j;
}

std::string PckReport::to_table() const {
    std::size_t name_w = std::string("Average").size();
    for (const auto& [name, means] : category_means()) name_w = std::max(name_w, name.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(name_w)) << "category";
    for (double t : thresholds) {
        std::ostringstream h;
        h << "tau=" << t;
        os << "  " << std::right << std::setw(9) << h.str();
    }
    os << '\n';
    auto row = [&](const std::string& name, const std::vector<double>& v) {
        os << std::left << std::setw(static_cast<int>(name_w)) << name;
        for (double x : v) os << "  " << std::right << std::setw(9) << std::fixed << std::setprecision(3) << x;
        os << '\n';
    };
    for (const auto& [name, means] : category_means()) row(name, means);
    row("Average", overall_means());
    return os.str();
}

}  // namespace splatdeform
