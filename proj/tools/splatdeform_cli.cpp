#include "splatdeform/errors.hpp"
#include "splatdeform/pipeline.hpp"
#include "splatdeform/service.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <fstream>
#include <iostream>

namespace sd = splatdeform;

namespace {

// Flag values collected before the config file is known; applied on top of it.
struct Overrides {
    std::string input, output, report, cache_dir, method, category, reference, host;
    std::vector<std::string> reference_deformed;
    double epsilon_factor = 0, tol = 0, keypoint_radius = 0, min_contribution = 0;
    std::size_t k_laplacian = 0, k_bind = 0, keypoints = 0, preview_limit = 0;
    int max_iters = 0, max_sweeps = 0, port = 0;
    std::vector<double> thresholds;
    bool no_cache = false, logit_opacity = false, logit_spike = false, log_scales = false;
};

void add_scene_options(CLI::App* app, Overrides& o) {
    app->add_option("-i,--input", o.input, "Input splat PLY");
    app->add_option("--epsilon-factor", o.epsilon_factor, "Intersection tolerance as a multiple of s");
    app->add_option("--min-contribution", o.min_contribution, "Minimum rendered contribution");
    app->add_option("--cache-dir", o.cache_dir, std::string("Graph cache directory (default $") + sd::kCacheDirEnv + ")");
    app->add_flag("--no-cache", o.no_cache, "Ignore and do not write the graph cache");
    app->add_flag("--logit-opacity", o.logit_opacity, "Opacity stored before the sigmoid");
    app->add_flag("--logit-spike-threshold", o.logit_spike, "Spike threshold stored before the sigmoid");
    app->add_flag("--log-scales", o.log_scales, "Scales stored as logarithms");
}

void add_solver_options(CLI::App* app, Overrides& o) {
    app->add_option("--k-laplacian", o.k_laplacian, "Geodesic neighborhood size for the Laplacian");
    app->add_option("--k-bind", o.k_bind, "Splats binding each triangle vertex");
    app->add_option("--method", o.method, "Solver when the handle spec has none")->check(CLI::IsMember({"arap", "bbw"}));
    app->add_option("--max-iters", o.max_iters, "ARAP iteration cap");
    app->add_option("--tol", o.tol, "ARAP relative energy decrease tolerance");
    app->add_option("--max-sweeps", o.max_sweeps, "BBW active-set sweep cap");
}

sd::PipelineConfig apply(sd::PipelineConfig c, const CLI::App& app, const Overrides& o) {
    auto set = [&](const char* name) {
        const CLI::Option* opt = app.get_option_no_throw(name);
        return opt != nullptr && opt->count() > 0;
    };
    if (set("--input")) c.input = o.input;
    if (set("--output")) c.output = o.output;
    if (set("--report")) c.report = o.report;
    if (set("--cache-dir")) c.cache_dir = o.cache_dir;
    if (set("--no-cache")) c.use_cache = !o.no_cache;
    if (set("--epsilon-factor")) c.epsilon_factor = o.epsilon_factor;
    if (set("--min-contribution")) c.min_contribution = o.min_contribution;
    if (set("--logit-opacity")) c.storage.logit_opacity = o.logit_opacity;
    if (set("--logit-spike-threshold")) c.storage.logit_spike_threshold = o.logit_spike;
    if (set("--log-scales")) c.storage.log_scales = o.log_scales;
    if (set("--k-laplacian")) c.k_laplacian = o.k_laplacian;
    if (set("--k-bind")) c.k_bind = o.k_bind;
    if (set("--method")) c.method = o.method == "bbw" ? sd::Method::Bbw : sd::Method::Arap;
    if (set("--max-iters")) c.arap_max_iters = o.max_iters;
    if (set("--tol")) c.arap_tol = o.tol;
    if (set("--max-sweeps")) c.bbw_max_sweeps = o.max_sweeps;
    if (set("--thresholds")) c.thresholds = o.thresholds;
    if (set("--keypoints")) c.keypoints = o.keypoints;
    if (set("--keypoint-radius")) c.keypoint_radius = o.keypoint_radius;
    if (set("--category")) c.category = o.category;
    if (set("--reference")) c.reference = o.reference;
    if (set("--reference-deformed")) {
        c.reference_deformed.assign(o.reference_deformed.begin(), o.reference_deformed.end());
    }
    if (set("--host")) c.host = o.host;
    if (set("--port")) c.port = o.port;
    if (set("--preview-limit")) c.preview_limit = o.preview_limit;
    c.validate();
    return c;
}

sd::DeformService* g_service = nullptr;

void on_signal(int) {
    if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Proxy-free deformation of surface-aligned Gaussian splat scenes"};
    app.require_subcommand(1);
    std::string config_path, log_level = "info";
    app.add_option("-c,--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

    Overrides o;
    std::string handles_path, displaced_path, matrix_out;

    auto* build = app.add_subcommand("build-graph", "Build (or reuse) the cached splat graph");
    add_scene_options(build, o);
    build->add_option("-o,--output", o.output, "Also write the graph as a text edge list");
    build->add_option("--report", o.report, "Graph statistics JSON");
    build->add_option("--laplacian-out", matrix_out, "Assemble the Laplacian and write its triplets");
    build->add_option("--k-laplacian", o.k_laplacian, "Geodesic neighborhood size for the Laplacian");

    auto* deform = app.add_subcommand("deform", "Deform a scene from a handle spec");
    add_scene_options(deform, o);
    add_solver_options(deform, o);
    deform->add_option("-H,--handles", handles_path, "Handle spec JSON")->required()->check(CLI::ExistingFile);
    deform->add_option("-o,--output", o.output, "Deformed splat PLY");
    deform->add_option("--report", o.report, "Deformation report JSON (default <output>.report.json)");

    auto* adapt = app.add_subcommand("adapt", "Adapt kernels to a displaced mean cloud");
    add_scene_options(adapt, o);
    adapt->add_option("--k-bind", o.k_bind, "Splats binding each triangle vertex");
    adapt->add_option("-d,--displaced", displaced_path, "PLY of displaced means, one per splat")
        ->required()
        ->check(CLI::ExistingFile);
    adapt->add_option("-o,--output", o.output, "Adapted splat PLY");
    adapt->add_option("--report", o.report, "Adaptation report JSON (default <output>.report.json)");

    auto* eval = app.add_subcommand("eval", "Score handles with 3D PCK");
    add_scene_options(eval, o);
    add_solver_options(eval, o);
    eval->add_option("-H,--handles", handles_path, "Handle spec JSON")->required()->check(CLI::ExistingFile);
    eval->add_option("--thresholds", o.thresholds, "Thresholds as multiples of s");
    eval->add_option("--keypoints", o.keypoints, "Keypoints per handle");
    eval->add_option("--keypoint-radius", o.keypoint_radius, "Keypoint sampling radius around a handle, in s");
    eval->add_option("--category", o.category, "Category label for the report");
    eval->add_option("--reference", o.reference, "Reference point cloud PLY (rest pose)");
    eval->add_option("--reference-deformed", o.reference_deformed, "Deformed reference cloud, one per handle");
    eval->add_option("--report", o.report, "PCK report JSON");

    auto* serve = app.add_subcommand("serve", "Serve the scene over HTTP for the handle editor");
    add_scene_options(serve, o);
    add_solver_options(serve, o);
    serve->add_option("--host", o.host, "Bind address");
    serve->add_option("--port", o.port, "TCP port");
    serve->add_option("--preview-limit", o.preview_limit, "Largest preview point count");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(log_level));
    spdlog::set_pattern("[%l] %v");

    try {
        sd::PipelineConfig base;
        if (!config_path.empty()) base = sd::load_config(config_path);
        CLI::App* sub = app.get_subcommands().front();
        const sd::PipelineConfig config = apply(base, *sub, o);

        if (sub == build) {
            const auto r = sd::cmd_build_graph(config);
            std::cout << "nodes " << r.nodes << "\nedges " << r.stats.edges << "\ncomponents " << r.stats.components << "\nempty_regions "
                      << r.stats.empty_regions << "\ncache " << (r.cache_hit ? "hit" : "miss") << "\n";
            if (!matrix_out.empty()) {
                const sd::Scene scene = sd::load_scene(config, true);
                std::ofstream out(matrix_out);
                if (!out) throw sd::ConfigError("cannot write " + matrix_out, "laplacian-out");
                sd::write_matrix(out, scene.laplacian->stiffness, &scene.laplacian->mass);
            }
        } else if (sub == deform) {
            const auto r = sd::cmd_deform(config, sd::load_handle_spec(handles_path));
            for (const auto& p : r.written) std::cout << "wrote " << p.string() << "\n";
        } else if (sub == adapt) {
            const auto r = sd::cmd_adapt(config, displaced_path);
            for (const auto& p : r.written) std::cout << "wrote " << p.string() << "\n";
        } else if (sub == eval) {
            sd::cmd_eval(config, sd::load_handle_spec(handles_path));
        } else if (sub == serve) {
            auto scene = std::make_shared<const sd::Scene>(sd::load_scene(config, true));
            sd::DeformService service(scene, config);
            g_service = &service;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            service.run(config.host, config.port);
            g_service = nullptr;
        }
    } catch (const sd::ConfigError& e) {
        std::cerr << "error [" << e.origin() << "]" << (e.field().empty() ? "" : " " + e.field()) << ": " << e.what()
                  << "\n";
        return 2;
    } catch (const sd::Error& e) {
        std::cerr << "error [" << e.origin() << "]: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
