#pragma once

#include "splatdeform/deform_arap.hpp"
#include "splatdeform/deform_bbw.hpp"
#include "splatdeform/splat_graph.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace splatdeform {

enum class Method { Arap, Bbw };

std::string to_string(Method m);

// How several handles are combined. Joint solves all handles at once with the
// union of constraints; independent runs one solve per handle, each with its
// own fixed set.
enum class HandleMode { Joint, Independent };

inline constexpr double kDefaultFixedRadius = 0.5;
inline constexpr double kDefaultCageRadius = 0.3;
inline constexpr double kDefaultPcaMagnitude = 0.2;

struct HandleInput {
    std::optional<Vec3> position;
    std::optional<std::uint32_t> index;
    std::optional<Vec3> displacement;
    std::optional<double> auto_pca_magnitude;  // multiple of s
    std::optional<AffineTransform> transform;  // BBW only, replaces the translation
};

// Handle spec document. Radii and magnitudes are multiples of the
// scene scale s.
struct HandleSpec {
    std::vector<HandleInput> handles;
    // Unset means the pipeline configuration decides.
    std::optional<Method> method;
    HandleMode mode = HandleMode::Joint;
    double fixed_radius = kDefaultFixedRadius;
    double cage_radius = kDefaultCageRadius;
};

// Validates and parses a handle document. Errors are ConfigError with a
// JSON path such as "handles[1].displacement".
HandleSpec parse_handle_spec(const nlohmann::json& doc);
HandleSpec load_handle_spec(const std::filesystem::path& path);
nlohmann::json handle_spec_to_json(const HandleSpec& spec);

struct ResolvedHandle {
    std::uint32_t anchor = 0;
    Vec3 position = Vec3::Zero();       // snapped anchor position
    Vec3 displacement = Vec3::Zero();
    AffineTransform transform = translation_transform(Vec3::Zero());
    bool from_pca = false;
};

struct ResolveContext {
    std::span<const Vec3> means;
    const SplatGraph* graph = nullptr;  // needed for auto_pca neighborhoods
    double scale = 1.0;
    std::size_t pca_k = 30;
};

// Snaps anchors to the nearest mean (lowest index on ties), expands auto_pca
// displacements, and checks anchors are distinct. A position outside the
// bounding box of the means is rejected with its distance to the box.
std::vector<ResolvedHandle> resolve_handles(const HandleSpec& spec, const ResolveContext& ctx);

// Index of the nearest point, lowest index on ties.
std::uint32_t nearest_point(std::span<const Vec3> points, const Vec3& q);

// Handle targets plus every point farther than `fixed_radius_abs` from all
// active handles, pinned at its rest position.
Constraints arap_constraints(std::span<const ResolvedHandle> handles, std::span<const Vec3> means,
                             double fixed_radius_abs);

}  // namespace splatdeform
