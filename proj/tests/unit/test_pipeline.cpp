#include "fixtures.hpp"

#include "splatdeform/errors.hpp"
#include "splatdeform/pipeline.hpp"

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

using namespace splatdeform;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class PipelineTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("splatdeform_pipeline_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_ / "cache");
    }
    void TearDown() override { fs::remove_all(dir_); }

    PipelineConfig config_for(const SplatSet& set, const std::string& name = "scene.ply") {
        const fs::path p = dir_ / name;
        save_splats(p, set);
        PipelineConfig c;
        c.input = p;
        c.cache_dir = dir_ / "cache";
        return c;
    }

    static std::string slurp(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream os;
        os << in.rdbuf();
        return os.str();
    }

    fs::path dir_;
};

SplatSet three_disks() {
    SplatSet set;
    set.splats = {fixtures::disk_xy({0, 0, 0}, 1.0), fixtures::disk_xy({1.5, 0, 0}, 1.0), fixtures::disk_xy({3.0, 0, 0}, 1.0)};
    return set;
}

HandleSpec one_handle(std::uint32_t index, const Vec3& d) {
    HandleSpec spec;
    spec.handles.push_back({std::nullopt, index, d, std::nullopt, std::nullopt});
    return spec;
}

}  // namespace

TEST(Config, OverlayAndFieldPaths) {
    const PipelineConfig c = config_from_json(json::parse(R"({"arap": {"tol": 1e-8}, "method": "bbw", "thresholds": [0.1]})"));
    EXPECT_DOUBLE_EQ(c.arap_tol, 1e-8);
    EXPECT_EQ(c.method, Method::Bbw);
    EXPECT_EQ(c.arap_max_iters, 50);
    try {
        config_from_json(json::parse(R"({"arap": {"tol": "x"}})"));
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "arap.tol");
    }
    try {
        config_from_json(json::parse(R"({"epsilon": 1})"));
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "epsilon");
    }
    PipelineConfig bad;
    bad.thresholds = {0.1, -1.0};
    try {
        bad.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "thresholds[1]");
    }
    const PipelineConfig back = config_from_json(config_to_json(c));
    EXPECT_EQ(config_to_json(back), config_to_json(c));
}

TEST_F(PipelineTest, ThreeDiskGraphAndCache) {
    const PipelineConfig c = config_for(three_disks());
    const BuildGraphResult first = cmd_build_graph(c);
    EXPECT_EQ(first.nodes, 3u);
    EXPECT_EQ(first.stats.edges, 2u);
    EXPECT_EQ(first.stats.components, 1);
    EXPECT_FALSE(first.cache_hit);
    ASSERT_TRUE(fs::exists(first.cache_path));
    const BuildGraphResult second = cmd_build_graph(c);
    EXPECT_TRUE(second.cache_hit);
    EXPECT_EQ(second.stats.edges, 2u);

    // Different graph parameters use a different cache entry.
    PipelineConfig c2 = c;
    c2.epsilon_factor = 0.01;
    EXPECT_FALSE(cmd_build_graph(c2).cache_hit);
}

TEST_F(PipelineTest, CorruptCacheIsRebuilt) {
    const PipelineConfig c = config_for(three_disks());
    const BuildGraphResult first = cmd_build_graph(c);
    {
        std::ofstream out(first.cache_path, std::ios::trunc);
        out << "splatgraph 1\nnodes 3\nepsilon 0.1\nedges 5\n0 1 x\n";
    }
    const BuildGraphResult again = cmd_build_graph(c);
    EXPECT_FALSE(again.cache_hit);
    EXPECT_EQ(again.stats.edges, 2u);
    EXPECT_TRUE(cmd_build_graph(c).cache_hit);
}

TEST_F(PipelineTest, CacheInvalidatedWhenInputChanges) {
    PipelineConfig c = config_for(three_disks());
    cmd_build_graph(c);
    SplatSet moved = three_disks();
    moved.splats[2].mean.x() = 10.0;
    save_splats(c.input, moved);
    const BuildGraphResult r = cmd_build_graph(c);
    EXPECT_FALSE(r.cache_hit);
    EXPECT_EQ(r.stats.edges, 1u);
}

TEST_F(PipelineTest, ZeroDisplacementDeformKeepsScene) {
    const SplatSet set = fixtures::sheet(8, 6, 0.1);
    PipelineConfig c = config_for(set);
    c.output = dir_ / "out.ply";
    cmd_deform(c, one_handle(20, Vec3::Zero()));
    const SplatSet out = load_splats(c.output);
    ASSERT_EQ(out.size(), set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        EXPECT_LE((out.splats[i].mean - set.splats[i].mean).norm(), 1e-6);  // float32 file
        EXPECT_NEAR(out.splats[i].scales[0], set.splats[i].scales[0], 1e-6);
    }
    const json report = json::parse(slurp(dir_ / "out.ply.report.json"));
    EXPECT_EQ(report["method"], "arap");
    EXPECT_TRUE(fs::exists(dir_ / "out.ply.timings.json"));
}

TEST_F(PipelineTest, CachedAndUncachedOutputsIdentical) {
    const SplatSet set = fixtures::sheet(8, 6, 0.1);
    PipelineConfig c = config_for(set);
    const HandleSpec spec = one_handle(20, Vec3(0, 0, 0.1));
    c.output = dir_ / "a.ply";
    cmd_deform(c, spec);  // builds cache
    c.output = dir_ / "b.ply";
    cmd_deform(c, spec);  // uses cache
    PipelineConfig nc = c;
    nc.use_cache = false;
    nc.output = dir_ / "c.ply";
    cmd_deform(nc, spec);
    EXPECT_EQ(slurp(dir_ / "a.ply"), slurp(dir_ / "b.ply"));
    EXPECT_EQ(slurp(dir_ / "a.ply"), slurp(dir_ / "c.ply"));
    EXPECT_EQ(slurp(dir_ / "a.ply.report.json"), slurp(dir_ / "c.ply.report.json"));
}

TEST_F(PipelineTest, IndependentModeWritesOnePerHandle) {
    const SplatSet set = fixtures::sheet(10, 6, 0.1);
    PipelineConfig c = config_for(set);
    c.output = dir_ / "ind.ply";
    HandleSpec spec = one_handle(12, Vec3(0, 0, 0.1));
    spec.handles.push_back({std::nullopt, 47u, Vec3(0, 0, -0.1), std::nullopt, std::nullopt});
    spec.mode = HandleMode::Independent;
    const auto out = cmd_deform(c, spec);
    EXPECT_TRUE(fs::exists(dir_ / "ind.h0.ply"));
    EXPECT_TRUE(fs::exists(dir_ / "ind.h1.ply"));
    EXPECT_TRUE(fs::exists(dir_ / "ind.h1.ply.report.json"));
    EXPECT_TRUE(fs::exists(dir_ / "ind.ply.timings.json"));
    EXPECT_GE(out.written.size(), 4u);
}

TEST_F(PipelineTest, BbwWeightsReportRowSums) {
    const SplatSet set = fixtures::sheet(10, 8, 0.1);
    PipelineConfig c = config_for(set);
    c.method = Method::Bbw;
    const Scene scene = load_scene(c, true);
    HandleSpec spec = one_handle(22, Vec3(0, 0, 0.1));
    spec.handles.push_back({std::nullopt, 57u, Vec3(0, 0, -0.1), std::nullopt, std::nullopt});
    const DeformationResult r = deform_scene(scene, spec, c);
    ASSERT_TRUE(r.weights.has_value());
    const json wj = weights_report_json(*r.weights);
    EXPECT_GE(wj["min_rest_weight"].get<double>(), -1e-12);
    EXPECT_GE(wj["min_weight"].get<double>(), 0.0);
    EXPECT_LE(wj["max_weight"].get<double>(), 1.0);
    // The anchors move by exactly their displacement.
    EXPECT_LE((r.displaced[22] - scene.means[22] - Vec3(0, 0, 0.1)).norm(), 1e-12);
}

TEST_F(PipelineTest, SelfConsistentEvaluationScoresOne) {
    const SplatSet set = fixtures::sheet(16, 6, 0.1);
    PipelineConfig c = config_for(set);
    c.keypoints = 20;
    const Scene scene = load_scene(c, true);
    HandleSpec spec = one_handle(6 * 16 - 1, Vec3(0, 0, 0.3));
    const PckReport rep = run_evaluation(scene, spec, c);
    ASSERT_EQ(rep.entries.size(), 1u);
    for (const auto& s : rep.entries[0].scores) EXPECT_DOUBLE_EQ(s.score, 1.0);
}

TEST_F(PipelineTest, EvaluationAgainstStoredReference) {
    const SplatSet set = fixtures::sheet(16, 6, 0.1);
    PipelineConfig c = config_for(set);
    c.keypoints = 20;
    const Scene scene = load_scene(c, true);
    const HandleSpec spec = one_handle(40, Vec3(0, 0.05, 0.2));
    const DeformationResult r = deform_scene(scene, spec, c);
    save_points(dir_ / "ref.ply", scene.means);
    save_points(dir_ / "ref_def.ply", r.displaced);
    c.reference = dir_ / "ref.ply";
    c.reference_deformed = {dir_ / "ref_def.ply"};
    c.report = dir_ / "pck.json";
    PckReport rep;
    testing::internal::CaptureStdout();
    cmd_eval(c, spec, &rep);
    const std::string table = testing::internal::GetCapturedStdout();
    EXPECT_NE(table.find("Average"), std::string::npos);
    for (const auto& s : rep.entries[0].scores) EXPECT_DOUBLE_EQ(s.score, 1.0);
    EXPECT_TRUE(fs::exists(c.report));

    c.reference_deformed.clear();
    EXPECT_THROW(run_evaluation(scene, spec, c), ConfigError);
}

TEST_F(PipelineTest, AdaptFromDisplacedCloud) {
    const SplatSet set = fixtures::sheet(6, 6, 0.1);
    PipelineConfig c = config_for(set);
    std::vector<Vec3> moved = set.means();
    for (auto& p : moved) p += Vec3(0.25, 0, 0);
    save_points(dir_ / "moved.ply", moved);
    c.output = dir_ / "adapted.ply";
    cmd_adapt(c, dir_ / "moved.ply");
    const SplatSet out = load_splats(c.output);
    for (std::size_t i = 0; i < set.size(); ++i) EXPECT_LE((out.splats[i].mean - moved[i]).norm(), 1e-6);

    save_points(dir_ / "short.ply", std::vector<Vec3>(3, Vec3::Zero()));
    EXPECT_THROW(cmd_adapt(c, dir_ / "short.ply"), ConfigError);
}

TEST(CacheDir, EnvironmentFallback) {
    PipelineConfig c;
    ::setenv(kCacheDirEnv, "/tmp/sd-cache-env", 1);
    EXPECT_EQ(resolve_cache_dir(c), fs::path("/tmp/sd-cache-env"));
    c.cache_dir = "/tmp/explicit";
    EXPECT_EQ(resolve_cache_dir(c), fs::path("/tmp/explicit"));
    ::unsetenv(kCacheDirEnv);
    c.cache_dir.clear();
    EXPECT_TRUE(resolve_cache_dir(c).empty());
}
