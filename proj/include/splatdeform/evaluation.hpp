#pragma once

#include "splatdeform/splat_model.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace splatdeform {

inline constexpr std::size_t kDefaultKeypoints = 100;
inline const std::vector<double> kDefaultThresholds{0.05, 0.075, 0.1};

// Smallest-variance direction of a neighborhood, oriented away from the
// neighborhood centroid as seen from the handle. When the smallest eigenvalue
// is repeated (within 1e-12 relative) the direction is chosen inside its
// eigenspace, preferring +z, then +y, then +x. Throws GeometryError for fewer
// than 3 points or a covariance of rank below 2.
Vec3 pca_handle_direction(std::span<const Vec3> neighborhood, const Vec3& handle);

// Greedy max-min selection starting from `seed`; ties go to the lowest index.
// A duplicate of an already selected point has distance 0, so duplicates are
// only picked once every distinct point has been taken.
std::vector<std::uint32_t> farthest_point_sampling(std::span<const Vec3> points, std::size_t n,
                                                   std::uint32_t seed);

inline constexpr std::int64_t kUnpaired = -1;

struct KeypointSet {
    std::vector<Vec3> positions;            // rest pose, on the reference cloud
    std::vector<std::uint32_t> reference;   // indices into the reference cloud
    std::vector<std::int64_t> pairs;        // splat index, or kUnpaired
    std::uint32_t handle = 0;               // handle the keypoints were sampled around
    std::uint32_t seed = 0;                 // reference index FPS started from
};

// FPS over the reference points within `radius` of the handle position,
// seeded at the region point nearest the handle. Fewer than `n` keypoints are
// returned when the region is smaller.
KeypointSet sample_keypoints(std::span<const Vec3> reference, const Vec3& handle_position, double radius,
                             std::size_t n = kDefaultKeypoints);

// Nearest splat mean (Euclidean, rest pose), lowest index on ties. Keypoints
// farther than `max_distance` from every mean stay unpaired.
void pair_keypoints(KeypointSet& keypoints, std::span<const Vec3> splat_means,
                    double max_distance = std::numeric_limits<double>::infinity());

struct PckScore {
    double score = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::size_t unpaired = 0;
};

// Fraction of keypoints k with |gt_deformed_k - means_deformed[pair(k)]| <= tau.
// Unpaired keypoints count as incorrect.
PckScore pck3d(std::span<const Vec3> gt_deformed, std::span<const Vec3> means_deformed,
               std::span<const std::int64_t> pairs, double tau);

struct PckEntry {
    std::string category;
    std::string object;
    std::uint32_t handle = 0;
    std::vector<PckScore> scores;  // one per threshold
};

struct PckReport {
    std::vector<double> thresholds;  // multiples of the scene scale
    std::vector<PckEntry> entries;

    // Mean score per category and threshold, categories in first-seen order.
    std::vector<std::pair<std::string, std::vector<double>>> category_means() const;
    std::vector<double> overall_means() const;

    nlohmann::json to_json() const;
    // One row per category plus an average row, one column per threshold.
    std::string to_table() const;
};

}  // namespace splatdeform
