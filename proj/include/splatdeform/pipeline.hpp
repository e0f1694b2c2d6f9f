#pragma once

#include "splatdeform/deform_bbw.hpp"
#include "splatdeform/evaluation.hpp"
#include "splatdeform/handles.hpp"
#include "splatdeform/kernel_adaptation.hpp"
#include "splatdeform/laplacian.hpp"
#include "splatdeform/ply_io.hpp"
#include "splatdeform/splat_graph.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace splatdeform {

inline constexpr const char* kCacheDirEnv = "SPLATDEFORM_CACHE_DIR";

// One set of hyperparameters for every command. Radii, magnitudes and
// thresholds are multiples of the scene scale s.
struct PipelineConfig {
    std::filesystem::path input;
    double epsilon_factor = 0.005;
    std::size_t k_laplacian = 30;
    std::size_t k_bind = 3;
    Method method = Method::Arap;
    int arap_max_iters = 50;
    double arap_tol = 1e-6;
    int bbw_max_sweeps = 100;
    std::vector<double> thresholds = kDefaultThresholds;
    std::size_t keypoints = kDefaultKeypoints;
    double keypoint_radius = kDefaultCageRadius;
    StorageFlags storage;
    double min_contribution = kMinContribution;

    // Empty means: the environment variable, else no caching.
    std::filesystem::path cache_dir;
    bool use_cache = true;

    std::filesystem::path output;
    std::filesystem::path report;
    std::string category = "default";
    // Evaluation reference cloud and its deformed copies (one per handle).
    // Without them the scene's own means serve as the reference.
    std::filesystem::path reference;
    std::vector<std::filesystem::path> reference_deformed;

    std::string host = "127.0.0.1";
    int port = 8765;
    std::size_t preview_limit = 200000;

    // Throws ConfigError naming the offending field.
    void validate() const;
};

// Overlays the fields present in `doc` onto `base`; unknown keys are errors.
PipelineConfig config_from_json(const nlohmann::json& doc, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});
nlohmann::json config_to_json(const PipelineConfig& config);

// Configured directory, else the environment variable, else empty.
std::filesystem::path resolve_cache_dir(const PipelineConfig& config);

using StageTimings = std::vector<std::pair<std::string, double>>;  // seconds

struct Scene {
    SplatSet splats;
    std::vector<Vec3> means;
    double scale = 0.0;
    SplatGraph graph;
    GraphBuildStats graph_stats;
    std::optional<LaplacianSystem> laplacian;
    LaplacianReport laplacian_report;
    LoadReport load_report;
    bool cache_hit = false;
    std::filesystem::path cache_path;
    StageTimings timings;
};

// 64-bit FNV-1a over a file's bytes.
std::uint64_t file_hash(const std::filesystem::path& path);

// Loads the splats and the graph (from cache when valid, otherwise built and
// cached), then assembles the Laplacian when requested.
Scene load_scene(const PipelineConfig& config, bool with_laplacian);

// Builds graph and Laplacian for an in-memory splat set.
Scene make_scene(SplatSet splats, const PipelineConfig& config, bool with_laplacian);

struct ArapSummary {
    int iterations = 0;
    bool converged = false;
    double initial_energy = 0.0;
    double final_energy = 0.0;
    std::size_t floating_components = 0;
    std::size_t floating_points = 0;
};

struct DeformationResult {
    Method method = Method::Arap;
    std::vector<ResolvedHandle> handles;
    std::vector<Vec3> displaced;  // per-splat means after the solve
    SplatSet adapted;
    AdaptationReport adaptation;
    std::optional<ArapSummary> arap;
    std::optional<WeightField> weights;
    StageTimings timings;
};

using CancelFn = std::function<bool()>;

// Resolves the handles jointly and runs solver plus kernel adaptation.
DeformationResult deform_scene(const Scene& scene, const HandleSpec& spec, const PipelineConfig& config,
                               const CancelFn& cancelled = {});

// Solver stage only: displaced means for already resolved handles.
std::vector<Vec3> solve_means(const Scene& scene, std::span<const ResolvedHandle> handles, Method method,
                              double fixed_radius, double cage_radius, const PipelineConfig& config,
                              const CancelFn& cancelled, std::optional<ArapSummary>* arap_out = nullptr,
                              std::optional<WeightField>* weights_out = nullptr);

nlohmann::json adaptation_report_json(const AdaptationReport& report);
nlohmann::json weights_report_json(const WeightField& field);
// Deterministic summary (no timings) of a deformation.
nlohmann::json deformation_report_json(const DeformationResult& result, const HandleSpec& spec);
nlohmann::json timings_json(const StageTimings& timings);

struct BuildGraphResult {
    std::size_t nodes = 0;
    GraphBuildStats stats;
    bool cache_hit = false;
    std::filesystem::path cache_path;
    StageTimings timings;
};

BuildGraphResult cmd_build_graph(const PipelineConfig& config);

struct CommandOutputs {
    std::vector<std::filesystem::path> written;
    StageTimings timings;
};

// Writes the deformed scene to config.output and a JSON report next to it
// (config.report, default "<output>.report.json"). Independent mode writes
// one scene per handle, tagged ".h<i>" before the extension.
CommandOutputs cmd_deform(const PipelineConfig& config, const HandleSpec& spec);

// Adapts the input scene to a per-splat displaced mean cloud.
CommandOutputs cmd_adapt(const PipelineConfig& config, const std::filesystem::path& displaced_means);

// Runs each handle independently, samples keypoints around it and scores the
// deformed means against the reference deformation.
PckReport run_evaluation(const Scene& scene, const HandleSpec& spec, const PipelineConfig& config);
CommandOutputs cmd_eval(const PipelineConfig& config, const HandleSpec& spec, PckReport* report_out = nullptr);

}  // namespace splatdeform
