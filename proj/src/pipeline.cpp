#include "splatdeform/pipeline.hpp"

#include "splatdeform/deform_arap.hpp"
#include "splatdeform/errors.hpp"

#include <spdlog/spdlog.h>

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace splatdeform {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

class StageClock {
public:
    explicit StageClock(StageTimings& sink) : sink_(sink), start_(std::chrono::steady_clock::now()) {}

    void lap(const std::string& stage) {
        const auto now = std::chrono::steady_clock::now();
        const double sec = std::chrono::duration<double>(now - start_).count();
        sink_.emplace_back(stage, sec);
        spdlog::info("stage {}: {:.3f} s", stage, sec);
        start_ = now;
    }

private:
    StageTimings& sink_;
    std::chrono::steady_clock::time_point start_;
};

std::string shortest(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

template <class T>
T get_checked(const json& doc, const char* key, const std::string& parent = {}) {
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("wrong type", parent.empty() ? std::string(key) : parent + "." + key);
    }
}

// Everything that influences the graph besides the file content.
std::map<std::string, std::string> graph_params(const PipelineConfig& c) {
    return {{"epsilon_factor", shortest(c.epsilon_factor)},
            {"min_contribution", shortest(c.min_contribution)},
            {"logit_opacity", c.storage.logit_opacity ? "1" : "0"},
            {"logit_spike_threshold", c.storage.logit_spike_threshold ? "1" : "0"},
            {"log_scales", c.storage.log_scales ? "1" : "0"}};
}

void fill_graph_stats(Scene& s, double min_contribution) {
    s.graph_stats.edges = s.graph.edge_count();
    s.graph.components(&s.graph_stats.components);
    s.graph_stats.empty_regions = 0;
    for (const auto& sp : s.splats.splats) {
        if (!occupancy_ellipse(sp, min_contribution)) ++s.graph_stats.empty_regions;
    }
}

void build_fresh_graph(Scene& s, const PipelineConfig& config) {
    const auto regions = occupancy_ellipses(s.splats, config.min_contribution);
    s.graph = build_graph(regions, config.epsilon_factor * s.scale, {}, &s.graph_stats);
}

void finish_scene(Scene& s, const PipelineConfig& config, bool with_laplacian, StageClock& clock) {
    if (!with_laplacian) return;
    s.laplacian = assemble_laplacian(s.means, s.graph, config.k_laplacian, s.scale, &s.laplacian_report);
    if (s.laplacian_report.small_neighborhoods > 0) {
        spdlog::warn("{} splats have fewer than 3 graph neighbors and are isolated in the Laplacian",
                     s.laplacian_report.small_neighborhoods);
    }
    clock.lap("laplacian");
}

void write_json_file(const fs::path& path, const json& doc) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string(), "report");
    out << doc.dump(2) << '\n';
}

fs::path suffixed(const fs::path& p, const std::string& suffix) {
    fs::path out = p;
    out.replace_filename(p.stem().string() + suffix + p.extension().string());
    return out;
}

fs::path default_report(const PipelineConfig& config, const fs::path& output) {
    if (!config.report.empty()) return config.report;
    fs::path r = output;
    r += ".report.json";
    return r;
}

}  // namespace

void PipelineConfig::validate() const {
    if (!(epsilon_factor >= 0.0) || !std::isfinite(epsilon_factor)) {
        throw ConfigError("must be a non-negative number", "epsilon_factor");
    }
    if (k_laplacian < 3) throw ConfigError("must be at least 3", "k_laplacian");
    if (k_bind < 1) throw ConfigError("must be at least 1", "k_bind");
    if (arap_max_iters < 1) throw ConfigError("must be at least 1", "arap.max_iters");
    if (!(arap_tol >= 0.0)) throw ConfigError("must be non-negative", "arap.tol");
    if (bbw_max_sweeps < 1) throw ConfigError("must be at least 1", "bbw.max_sweeps");
    if (thresholds.empty()) throw ConfigError("at least one threshold is required", "thresholds");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (!(thresholds[i] > 0.0) || !std::isfinite(thresholds[i])) {
            throw ConfigError("must be a positive number", "thresholds[" + std::to_string(i) + "]");
        }
    }
    if (keypoints < 1) throw ConfigError("must be at least 1", "keypoints");
    if (!(keypoint_radius > 0.0)) throw ConfigError("must be positive", "keypoint_radius");
    if (!(min_contribution > 0.0 && min_contribution < 1.0)) {
        throw ConfigError("must lie in (0, 1)", "min_contribution");
    }
    if (port < 0 || port > 65535) throw ConfigError("must be a TCP port", "port");
    if (preview_limit < 1) throw ConfigError("must be at least 1", "preview_limit");
}

PipelineConfig config_from_json(const json& doc, PipelineConfig c) {
    if (!doc.is_object()) throw ConfigError("configuration must be a JSON object", "");
    for (const auto& [key, value] : doc.items()) {
        if (key == "input") {
            c.input = get_checked<std::string>(doc, "input");
        } else if (key == "epsilon_factor") {
            c.epsilon_factor = get_checked<double>(doc, "epsilon_factor");
        } else if (key == "k_laplacian") {
            c.k_laplacian = get_checked<std::size_t>(doc, "k_laplacian");
        } else if (key == "k_bind") {
            c.k_bind = get_checked<std::size_t>(doc, "k_bind");
        } else if (key == "method") {
            const auto m = get_checked<std::string>(doc, "method");
            if (m == "arap") {
                c.method = Method::Arap;
            } else if (m == "bbw") {
                c.method = Method::Bbw;
            } else {
                throw ConfigError("method must be \"arap\" or \"bbw\"", "method");
            }
        } else if (key == "arap") {
            if (!value.is_object()) throw ConfigError("expected an object", "arap");
            for (const auto& [k, v] : value.items()) {
                if (k == "max_iters") {
                    c.arap_max_iters = get_checked<int>(value, "max_iters", "arap");
                } else if (k == "tol") {
                    c.arap_tol = get_checked<double>(value, "tol", "arap");
                } else {
                    throw ConfigError("unknown field", "arap." + k);
                }
            }
        } else if (key == "bbw") {
            if (!value.is_object()) throw ConfigError("expected an object", "bbw");
            for (const auto& [k, v] : value.items()) {
                if (k == "max_sweeps") {
                    c.bbw_max_sweeps = get_checked<int>(value, "max_sweeps", "bbw");
                } else {
                    throw ConfigError("unknown field", "bbw." + k);
                }
            }
        } else if (key == "thresholds") {
            c.thresholds = get_checked<std::vector<double>>(doc, "thresholds");
        } else if (key == "keypoints") {
            c.keypoints = get_checked<std::size_t>(doc, "keypoints");
        } else if (key == "keypoint_radius") {
            c.keypoint_radius = get_checked<double>(doc, "keypoint_radius");
        } else if (key == "storage") {
            if (!value.is_object()) throw ConfigError("expected an object", "storage");
            for (const auto& [k, v] : value.items()) {
                if (!v.is_boolean()) throw ConfigError("expected a boolean", "storage." + k);
                if (k == "logit_opacity") {
                    c.storage.logit_opacity = v.get<bool>();
                } else if (k == "logit_spike_threshold") {
                    c.storage.logit_spike_threshold = v.get<bool>();
                } else if (k == "log_scales") {
                    c.storage.log_scales = v.get<bool>();
                } else {
                    throw ConfigError("unknown field", "storage." + k);
                }
            }
        } else if (key == "min_contribution") {
            c.min_contribution = get_checked<double>(doc, "min_contribution");
        } else if (key == "cache_dir") {
            c.cache_dir = get_checked<std::string>(doc, "cache_dir");
        } else if (key == "use_cache") {
            c.use_cache = get_checked<bool>(doc, "use_cache");
        } else if (key == "output") {
            c.output = get_checked<std::string>(doc, "output");
        } else if (key == "report") {
            c.report = get_checked<std::string>(doc, "report");
        } else if (key == "category") {
            c.category = get_checked<std::string>(doc, "category");
        } else if (key == "reference") {
            c.reference = get_checked<std::string>(doc, "reference");
        } else if (key == "reference_deformed") {
            c.reference_deformed.clear();
            for (const auto& p : get_checked<std::vector<std::string>>(doc, "reference_deformed")) {
                c.reference_deformed.emplace_back(p);
            }
        } else if (key == "host") {
            c.host = get_checked<std::string>(doc, "host");
        } else if (key == "port") {
            c.port = get_checked<int>(doc, "port");
        } else if (key == "preview_limit") {
            c.preview_limit = get_checked<std::size_t>(doc, "preview_limit");
        } else {
            throw ConfigError("unknown field", key);
        }
    }
    return c;
}

PipelineConfig load_config(const fs::path& path, PipelineConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string(), "");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what(), "");
    }
    return config_from_json(doc, std::move(base));
}

json config_to_json(const PipelineConfig& c) {
    json refs = json::array();
    for (const auto& p : c.reference_deformed) refs.push_back(p.string());
    return {{"input", c.input.string()},
            {"epsilon_factor", c.epsilon_factor},
            {"k_laplacian", c.k_laplacian},
            {"k_bind", c.k_bind},
            {"method", to_string(c.method)},
            {"arap", {{"max_iters", c.arap_max_iters}, {"tol", c.arap_tol}}},
            {"bbw", {{"max_sweeps", c.bbw_max_sweeps}}},
            {"thresholds", c.thresholds},
            {"keypoints", c.keypoints},
            {"keypoint_radius", c.keypoint_radius},
            {"storage",
             {{"logit_opacity", c.storage.logit_opacity},
              {"logit_spike_threshold", c.storage.logit_spike_threshold},
              {"log_scales", c.storage.log_scales}}},
            {"min_contribution", c.min_contribution},
            {"cache_dir", c.cache_dir.string()},
            {"use_cache", c.use_cache},
            {"output", c.output.string()},
            {"report", c.report.string()},
            {"category", c.category},
            {"reference", c.reference.string()},
            {"reference_deformed", refs},
            {"host", c.host},
            {"port", c.port},
            {"preview_limit", c.preview_limit}};
}

fs::path resolve_cache_dir(const PipelineConfig& config) {
    if (!config.cache_dir.empty()) return config.cache_dir;
    if (const char* env = std::getenv(kCacheDirEnv); env && *env) return env;
    return {};
}

std::uint64_t file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::uint64_t h = 1469598103934665603ULL;
    std::string buf(1 << 16, '\0');
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h = fnv1a(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())), h);
    }
    return h;
}

Scene make_scene(SplatSet splats, const PipelineConfig& config, bool with_laplacian) {
    config.validate();
    Scene s;
    StageClock clock(s.timings);
    s.splats = std::move(splats);
    s.means = s.splats.means();
    s.scale = scene_scale(std::span<const Vec3>(s.means));
    build_fresh_graph(s, config);
    clock.lap("graph");
    finish_scene(s, config, with_laplacian, clock);
    return s;
}

Scene load_scene(const PipelineConfig& config, bool with_laplacian) {
    config.validate();
    if (config.input.empty()) throw ConfigError("an input scene is required", "input");
    Scene s;
    StageClock clock(s.timings);
    s.splats = load_splats(config.input, {config.storage, config.min_contribution}, &s.load_report);
    if (s.splats.empty()) throw GeometryError("splat_model", "scene has no splats above the minimum contribution");
    s.means = s.splats.means();
    s.scale = scene_scale(std::span<const Vec3>(s.means));
    clock.lap("load");

    const fs::path dir = config.use_cache ? resolve_cache_dir(config) : fs::path{};
    std::map<std::string, std::string> expected;
    if (!dir.empty()) {
        const fs::path canonical = fs::weakly_canonical(config.input);
        std::string key = canonical.string();
        for (const auto& [k, v] : graph_params(config)) key += "|" + k + "=" + v;
        s.cache_path = dir / (config.input.stem().string() + "-" + hex64(fnv1a(key)) + ".graph");

        expected = graph_params(config);
        expected["input_hash"] = hex64(file_hash(config.input));
        expected["input_size"] = std::to_string(fs::file_size(config.input));
        expected["input_mtime"] =
            std::to_string(fs::last_write_time(config.input).time_since_epoch().count());

        if (fs::exists(s.cache_path)) {
            try {
                std::ifstream in(s.cache_path);
                std::map<std::string, std::string> meta;
                SplatGraph g = read_graph(in, &meta);
                bool valid = g.node_count() == s.splats.size();
                for (const auto& [k, v] : expected) {
                    const auto it = meta.find(k);
                    valid = valid && it != meta.end() && it->second == v;
                }
                if (valid) {
                    s.graph = std::move(g);
                    s.cache_hit = true;
                    s.graph_stats.candidate_pairs =
                        meta.count("candidate_pairs") ? std::stoull(meta["candidate_pairs"]) : 0;
                    fill_graph_stats(s, config.min_contribution);
                    spdlog::info("graph cache hit: {}", s.cache_path.string());
                } else {
                    spdlog::info("graph cache stale, rebuilding: {}", s.cache_path.string());
                }
            } catch (const std::exception& e) {
                spdlog::warn("graph cache {} is unreadable ({}); rebuilding", s.cache_path.string(), e.what());
            }
        }
    }

    if (!s.cache_hit) {
        build_fresh_graph(s, config);
        if (!dir.empty()) {
            fs::create_directories(dir);
            auto meta = expected;
            meta["candidate_pairs"] = std::to_string(s.graph_stats.candidate_pairs);
            fs::path tmp = s.cache_path;
            tmp += ".tmp";
            {
                std::ofstream out(tmp);
                if (!out) throw ConfigError("cannot write graph cache " + tmp.string(), "cache_dir");
                write_graph(out, s.graph, meta);
            }
            fs::rename(tmp, s.cache_path);
        }
    }
    clock.lap("graph");
    finish_scene(s, config, with_laplacian, clock);
    return s;
}

std::vector<Vec3> solve_means(const Scene& scene, std::span<const ResolvedHandle> handles, Method method,
                              double fixed_radius, double cage_radius, const PipelineConfig& config,
                              const CancelFn& cancelled, std::optional<ArapSummary>* arap_out,
                              std::optional<WeightField>* weights_out) {
    if (!scene.laplacian) throw GeometryError("pipeline", "the scene Laplacian has not been assembled");
    const LaplacianSystem& lap = *scene.laplacian;
    if (method == Method::Arap) {
        ArapSolver solver(scene.means, lap.stiffness,
                          arap_constraints(handles, scene.means, fixed_radius * scene.scale));
        ArapOptions opts;
        opts.max_iters = config.arap_max_iters;
        opts.tol = config.arap_tol;
        opts.cancelled = cancelled;
        ArapResult res = solver.solve(opts);
        if (arap_out) {
            ArapSummary sum;
            sum.iterations = res.iterations;
            sum.converged = res.converged;
            sum.initial_energy = res.energy.front();
            sum.final_energy = res.energy.back();
            sum.floating_components = res.floating.size();
            for (const auto& f : res.floating) sum.floating_points += f.nodes.size();
            *arap_out = sum;
        }
        if (!res.floating.empty()) {
            spdlog::warn("{} unconstrained components were translated rigidly", res.floating.size());
        }
        return std::move(res.positions);
    }

    std::vector<std::uint32_t> anchors;
    std::vector<AffineTransform> transforms;
    for (const auto& h : handles) {
        anchors.push_back(h.anchor);
        transforms.push_back(h.transform);
    }
    BoxQpOptions opts;
    opts.max_sweeps = config.bbw_max_sweeps;
    opts.cancelled = cancelled;
    WeightField field = solve_bbw(lap.stiffness, lap.mass, scene.means, anchors, cage_radius * scene.scale, opts);
    for (std::size_t h = 0; h < anchors.size(); ++h) {
        if (!field.converged[h]) spdlog::warn("BBW active set for handle {} did not settle", h);
    }
    auto out = apply_lbs(scene.means, field.weights, transforms);
    if (weights_out) *weights_out = std::move(field);
    return out;
}

DeformationResult deform_scene(const Scene& scene, const HandleSpec& spec, const PipelineConfig& config,
                               const CancelFn& cancelled) {
    DeformationResult r;
    StageClock clock(r.timings);
    r.method = spec.method.value_or(config.method);
    ResolveContext ctx{scene.means, &scene.graph, scene.scale, config.k_laplacian};
    r.handles = resolve_handles(spec, ctx);
    clock.lap("resolve");
    r.displaced = solve_means(scene, r.handles, r.method, spec.fixed_radius, spec.cage_radius, config, cancelled,
                              &r.arap, &r.weights);
    clock.lap(r.method == Method::Arap ? "arap" : "bbw");
    if (cancelled && cancelled()) throw Cancelled();

    std::vector<Vec3> disp(scene.means.size());
    for (std::size_t i = 0; i < disp.size(); ++i) disp[i] = r.displaced[i] - scene.means[i];
    AdaptationOptions aopts;
    aopts.k_bind = config.k_bind;
    aopts.min_contribution = config.min_contribution;
    r.adapted = adapt_kernels(scene.splats, scene.graph, disp, aopts, &r.adaptation);
    if (r.adaptation.fallbacks > 0) {
        spdlog::warn("{} kernels had a degenerate displaced triangle and were only translated",
                     r.adaptation.fallbacks);
    }
    clock.lap("adapt");
    return r;
}

json adaptation_report_json(const AdaptationReport& report) {
    return {{"adapted", report.adapted},
            {"fallbacks", report.fallbacks},
            {"empty_regions", report.empty_regions},
            {"max_lambda_residual", report.max_lambda_residual},
            {"fallback_indices", report.fallback_indices}};
}

json weights_report_json(const WeightField& field) {
    json handles = json::array();
    for (std::size_t h = 0; h < field.anchors.size(); ++h) {
        handles.push_back({{"anchor", field.anchors[h]},
                           {"cage_size", field.cages[h].size()},
                           {"sweeps", field.sweeps[h]},
                           {"converged", static_cast<bool>(field.converged[h])}});
    }
    const Eigen::VectorXd rest = field.rest_weight();
    double wmin = field.weights.size() ? field.weights.minCoeff() : 0.0;
    double wmax = field.weights.size() ? field.weights.maxCoeff() : 0.0;
    double row_err = 0.0;
    std::size_t uncovered = 0;
    for (Eigen::Index i = 0; i < field.weights.rows(); ++i) {
        row_err = std::max(row_err, std::abs(field.weights.row(i).sum() + rest[i] - 1.0));
        if (rest[i] == 1.0) ++uncovered;
    }
    return {{"handles", handles},
            {"min_weight", wmin},
            {"max_weight", wmax},
            {"min_rest_weight", rest.size() ? rest.minCoeff() : 1.0},
            {"max_row_sum_error", row_err},
            {"points_outside_all_cages", uncovered}};
}

json deformation_report_json(const DeformationResult& r, const HandleSpec& spec) {
    json handles = json::array();
    for (const auto& h : r.handles) {
        handles.push_back({{"anchor", h.anchor},
                           {"position", vec_json(h.position)},
                           {"displacement", vec_json(h.displacement)},
                           {"auto_pca", h.from_pca}});
    }
    json doc{{"method", to_string(r.method)},
             {"splats", r.displaced.size()},
             {"spec", handle_spec_to_json(spec)},
             {"handles", handles},
             {"adaptation", adaptation_report_json(r.adaptation)}};
    if (r.arap) {
        doc["arap"] = {{"iterations", r.arap->iterations},
                       {"converged", r.arap->converged},
                       {"initial_energy", r.arap->initial_energy},
                       {"final_energy", r.arap->final_energy},
                       {"floating_components", r.arap->floating_components},
                       {"floating_points", r.arap->floating_points}};
    }
    if (r.weights) doc["bbw"] = weights_report_json(*r.weights);
    return doc;
}

json timings_json(const StageTimings& timings) {
    json doc = json::object();
    for (const auto& [k, v] : timings) doc[k] = v;
    return doc;
}

BuildGraphResult cmd_build_graph(const PipelineConfig& config) {
    const Scene s = load_scene(config, false);
    BuildGraphResult r;
    r.nodes = s.graph.node_count();
    r.stats = s.graph_stats;
    r.cache_hit = s.cache_hit;
    r.cache_path = s.cache_path;
    r.timings = s.timings;
    spdlog::info("graph: {} nodes, {} edges, {} components, {} empty regions{}", s.graph.node_count(),
                 r.stats.edges, r.stats.components, r.stats.empty_regions, r.cache_hit ? " (cached)" : "");
    if (!config.output.empty()) {
        std::ofstream out(config.output);
        if (!out) throw ConfigError("cannot write " + config.output.string(), "output");
        write_graph(out, s.graph, {{"components", std::to_string(r.stats.components)}});
    }
    if (!config.report.empty()) {
        write_json_file(config.report, {{"nodes", s.graph.node_count()},
                                        {"edges", r.stats.edges},
                                        {"components", r.stats.components},
                                        {"empty_regions", r.stats.empty_regions},
                                        {"candidate_pairs", r.stats.candidate_pairs},
                                        {"epsilon", s.graph.epsilon()},
                                        {"scene_scale", s.scale}});
    }
    return r;
}

CommandOutputs cmd_deform(const PipelineConfig& config, const HandleSpec& spec) {
    if (config.output.empty()) throw ConfigError("an output path is required", "output");
    const Scene scene = load_scene(config, true);
    CommandOutputs out;
    out.timings = scene.timings;

    std::vector<HandleSpec> runs;
    if (spec.mode == HandleMode::Independent && spec.handles.size() > 1) {
        for (const auto& h : spec.handles) {
            HandleSpec one = spec;
            one.handles = {h};
            runs.push_back(std::move(one));
        }
    } else {
        runs.push_back(spec);
    }
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const std::string suffix = runs.size() > 1 ? ".h" + std::to_string(k) : "";
        const DeformationResult r = deform_scene(scene, runs[k], config);
        for (const auto& t : r.timings) out.timings.emplace_back(t.first + suffix, t.second);
        const fs::path ply = suffixed(config.output, suffix);
        save_splats(ply, r.adapted);
        const fs::path report = config.report.empty() ? default_report(config, ply) : suffixed(config.report, suffix);
        write_json_file(report, deformation_report_json(r, runs[k]));
        out.written.push_back(ply);
        out.written.push_back(report);
    }
    fs::path timings = config.output;
    timings += ".timings.json";
    write_json_file(timings, timings_json(out.timings));
    out.written.push_back(timings);
    return out;
}

CommandOutputs cmd_adapt(const PipelineConfig& config, const fs::path& displaced_means) {
    if (config.output.empty()) throw ConfigError("an output path is required", "output");
    const Scene scene = load_scene(config, false);
    CommandOutputs out;
    out.timings = scene.timings;
    StageClock clock(out.timings);
    const std::vector<Vec3> moved = load_points(displaced_means);
    if (moved.size() != scene.means.size()) {
        throw ConfigError("displaced cloud has " + std::to_string(moved.size()) + " points, scene has " +
                              std::to_string(scene.means.size()),
                          "displaced");
    }
    std::vector<Vec3> disp(moved.size());
    for (std::size_t i = 0; i < disp.size(); ++i) disp[i] = moved[i] - scene.means[i];
    AdaptationOptions aopts;
    aopts.k_bind = config.k_bind;
    aopts.min_contribution = config.min_contribution;
    AdaptationReport report;
    const SplatSet adapted = adapt_kernels(scene.splats, scene.graph, disp, aopts, &report);
    clock.lap("adapt");
    save_splats(config.output, adapted);
    const fs::path rp = default_report(config, config.output);
    write_json_file(rp, adaptation_report_json(report));
    out.written = {config.output, rp};
    return out;
}

PckReport run_evaluation(const Scene& scene, const HandleSpec& spec, const PipelineConfig& config) {
    std::vector<Vec3> reference = scene.means;
    const bool self_reference = config.reference.empty();
    if (!self_reference) {
        reference = load_points(config.reference);
        if (config.reference_deformed.size() != spec.handles.size()) {
            throw ConfigError("one deformed reference cloud per handle is required", "reference_deformed");
        }
    }

    PckReport report;
    report.thresholds = config.thresholds;
    const std::string object = config.input.empty() ? std::string("scene") : config.input.stem().string();
    for (std::size_t h = 0; h < spec.handles.size(); ++h) {
        HandleSpec one = spec;
        one.handles = {spec.handles[h]};
        const DeformationResult r = deform_scene(scene, one, config);

        std::vector<Vec3> gt;
        if (self_reference) {
            gt = r.displaced;
        } else {
            gt = load_points(config.reference_deformed[h]);
            if (gt.size() != reference.size()) {
                throw ConfigError("deformed reference size differs from the reference",
                                  "reference_deformed[" + std::to_string(h) + "]");
            }
        }

        KeypointSet ks = sample_keypoints(reference, r.handles.front().position,
                                          config.keypoint_radius * scene.scale, config.keypoints);
        ks.handle = static_cast<std::uint32_t>(h);
        pair_keypoints(ks, scene.means);
        std::vector<Vec3> gt_k;
        gt_k.reserve(ks.reference.size());
        for (auto i : ks.reference) gt_k.push_back(gt[i]);

        PckEntry entry{config.category, object, static_cast<std::uint32_t>(h), {}};
        for (double tau : config.thresholds) {
            entry.scores.push_back(pck3d(gt_k, r.displaced, ks.pairs, tau * scene.scale));
        }
        if (ks.positions.size() < config.keypoints) {
            spdlog::warn("handle {}: only {} reference points inside the keypoint radius", h, ks.positions.size());
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

CommandOutputs cmd_eval(const PipelineConfig& config, const HandleSpec& spec, PckReport* report_out) {
    const Scene scene = load_scene(config, true);
    CommandOutputs out;
    out.timings = scene.timings;
    StageClock clock(out.timings);
    PckReport report = run_evaluation(scene, spec, config);
    clock.lap("eval");
    std::cout << report.to_table();
    if (!config.report.empty()) {
        write_json_file(config.report, report.to_json());
        out.written.push_back(config.report);
    }
    if (report_out) *report_out = std::move(report);
    return out;
}

}  // namespace splatdeform
