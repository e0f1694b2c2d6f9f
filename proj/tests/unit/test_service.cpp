#include "fixtures.hpp"

#include "splatdeform/errors.hpp"
#include "splatdeform/service.hpp"

#include <gtest/gtest.h>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <future>
#include <thread>

using namespace splatdeform;
using nlohmann::json;

namespace {

std::shared_ptr<const Scene> small_scene(const PipelineConfig& config) {
    return std::make_shared<const Scene>(make_scene(fixtures::sheet(12, 8, 0.1), config, true));
}

const char* kZeroSpec = R"({"handles": [{"index": 30, "displacement": [0, 0, 0]}]})";
const char* kLiftSpec = R"({"handles": [{"index": 30, "displacement": [0, 0, 0.1]}]})";

template <class Pred>
bool wait_for(Pred pred, std::chrono::milliseconds limit = std::chrono::seconds(20)) {
    const auto end = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < end) {
        if (pred()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return false;
}

// Blocks every solver poll until released.
struct Gate {
    std::atomic<bool> open{false};
    std::atomic<int> polls{0};
    void poll() {
        ++polls;
        while (!open.load()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
};

}  // namespace

TEST(BinaryMeans, RoundTripAndLengthCheck) {
    const std::vector<Vec3> pts{{1, 2, 3}, {-0.5, 0.25, 1e3}};
    const std::string bytes = encode_means_binary(pts);
    ASSERT_EQ(bytes.size(), 4u + 24u);
    EXPECT_EQ(decode_means_binary(bytes), pts);
    EXPECT_THROW(decode_means_binary(bytes.substr(0, 10)), FormatError);
}

TEST(PreviewIndices, FixedSeedSubset) {
    EXPECT_EQ(preview_indices(5, 10).size(), 5u);
    const auto a = preview_indices(1000, 50), b = preview_indices(1000, 50);
    EXPECT_EQ(a, b);
    ASSERT_EQ(a.size(), 50u);
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
}

TEST(Service, SceneStatusAndZeroDeform) {
    PipelineConfig config;
    auto scene = small_scene(config);
    DeformService svc(scene, config);
    const int port = svc.start("127.0.0.1", 0);
    httplib::Client cli("127.0.0.1", port);

    auto st = cli.Get("/status");
    ASSERT_TRUE(st);
    EXPECT_EQ(json::parse(st->body)["state"], "idle");

    auto sc = cli.Get("/scene?limit=10");
    ASSERT_TRUE(sc);
    const json sj = json::parse(sc->body);
    EXPECT_EQ(sj["count"], 10);
    EXPECT_EQ(sj["total"], scene->means.size());
    EXPECT_EQ(sj["axes"].size(), 60u);

    auto bin = cli.Get("/scene?format=binary");
    ASSERT_TRUE(bin);
    const auto pts = decode_means_binary(bin->body);
    ASSERT_EQ(pts.size(), scene->means.size());
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_LE((pts[i] - scene->means[i]).norm(), 1e-6);

    auto d = cli.Post("/deform", kZeroSpec, "application/json");
    ASSERT_TRUE(d);
    ASSERT_EQ(d->status, 200) << d->body;
    const json dj = json::parse(d->body);
    ASSERT_EQ(dj["means"].size(), 3 * scene->means.size());
    for (std::size_t i = 0; i < scene->means.size(); ++i)
        for (int a = 0; a < 3; ++a)
            EXPECT_NEAR(dj["means"][3 * i + a].get<double>(), scene->means[i][a], 1e-6 * std::max(1.0, std::abs(scene->means[i][a])));

    auto db = cli.Post("/deform?format=binary", kLiftSpec, "application/json");
    ASSERT_TRUE(db);
    EXPECT_EQ(db->get_header_value("X-Deform-Id"), "2");
    const auto moved = decode_means_binary(db->body);
    EXPECT_NEAR(moved[30].z(), 0.1, 1e-6);
    svc.stop();
}

TEST(Service, HandleValidationErrors) {
    PipelineConfig config;
    DeformService svc(small_scene(config), config);
    const int port = svc.start("127.0.0.1", 0);
    httplib::Client cli("127.0.0.1", port);

    auto bad = cli.Post("/handles", R"({"handles": [{"index": 1, "displacement": [0, 0]}]})", "application/json");
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);
    EXPECT_EQ(json::parse(bad->body)["error"]["field"], "handles[0].displacement");

    auto outside = cli.Post("/handles", R"({"handles": [{"position": [0, 0, 9], "displacement": [0, 0, 1]}]})",
                            "application/json");
    ASSERT_TRUE(outside);
    EXPECT_EQ(outside->status, 400);

    auto ok = cli.Post("/handles", R"({"handles": [{"position": [0.31, 0.29, 0], "displacement": [0, 0, 1]}]})",
                       "application/json");
    ASSERT_TRUE(ok);
    ASSERT_EQ(ok->status, 200);
    EXPECT_EQ(json::parse(ok->body)["handles"][0]["anchor"], 3 * 12 + 3);

    auto garbage = cli.Post("/deform", "{not json", "application/json");
    ASSERT_TRUE(garbage);
    EXPECT_EQ(garbage->status, 400);

    auto none = cli.Post("/export", R"({"path": "/tmp/x.ply"})", "application/json");
    ASSERT_TRUE(none);
    EXPECT_EQ(none->status, 400);
    svc.stop();
}

TEST(Service, EngineErrorIs422) {
    // Scene assembled without a Laplacian, so the solver stage fails.
    PipelineConfig config;
    auto scene = std::make_shared<const Scene>(make_scene(fixtures::sheet(12, 1, 0.1), config, false));
    DeformService svc(scene, config);
    const int port = svc.start("127.0.0.1", 0);
    httplib::Client cli("127.0.0.1", port);
    auto r = cli.Post("/deform", kZeroSpec, "application/json");
    ASSERT_TRUE(r);
    // Index 30 is out of range for a 12-splat scene: a request error.
    EXPECT_EQ(r->status, 400);
    auto r2 = cli.Post("/deform", R"({"handles": [{"index": 3, "displacement": [0, 0, 0.1]}]})", "application/json");
    ASSERT_TRUE(r2);
    // No Laplacian was assembled for this scene.
    EXPECT_EQ(r2->status, 422);
    EXPECT_EQ(json::parse(r2->body)["error"]["origin"], "pipeline");
    svc.stop();
}

TEST(Service, SecondDeformWaitsInQueue) {
    PipelineConfig config;
    Gate gate;
    ServiceOptions opts;
    opts.on_poll = [&] { gate.poll(); };
    DeformService svc(small_scene(config), config, opts);
    const int port = svc.start("127.0.0.1", 0);

    auto post = [port](const char* spec) {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(60, 0);
        auto r = c.Post("/deform?format=binary", spec, "application/json");
        return r ? r->status : -1;
    };
    auto first = std::async(std::launch::async, post, kLiftSpec);
    ASSERT_TRUE(wait_for([&] { return gate.polls.load() > 0; }));
    auto second = std::async(std::launch::async, post, kZeroSpec);
    ASSERT_TRUE(wait_for([&] { return svc.queue_depth() == 1; }));

    httplib::Client cli("127.0.0.1", port);
    auto st = cli.Get("/status");
    ASSERT_TRUE(st);
    const json sj = json::parse(st->body);
    EXPECT_EQ(sj["state"], "running");
    EXPECT_EQ(sj["queue_depth"], 1);
    EXPECT_EQ(sj["running_id"], 1);

    gate.open = true;
    EXPECT_EQ(first.get(), 200);
    EXPECT_EQ(second.get(), 200);
    EXPECT_EQ(svc.queue_depth(), 0u);
    EXPECT_EQ(json::parse(cli.Get("/status")->body)["completed"], 2);
    svc.stop();
}

TEST(Service, CancelReturns409AndLeavesSceneUnchanged) {
    PipelineConfig config;
    Gate gate;
    ServiceOptions opts;
    opts.on_poll = [&] { gate.poll(); };
    auto scene = small_scene(config);
    DeformService svc(scene, config, opts);
    const int port = svc.start("127.0.0.1", 0);

    auto job = std::async(std::launch::async, [port] {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(60, 0);
        auto r = c.Post("/deform", kLiftSpec, "application/json");
        return r ? r->status : -1;
    });
    ASSERT_TRUE(wait_for([&] { return gate.polls.load() > 0; }));
    httplib::Client cli("127.0.0.1", port);
    auto c = cli.Post("/cancel");
    ASSERT_TRUE(c);
    EXPECT_TRUE(json::parse(c->body)["cancelled"].get<bool>());
    gate.open = true;
    EXPECT_EQ(job.get(), 409);

    const json st = json::parse(cli.Get("/status")->body);
    EXPECT_EQ(st["state"], "idle");
    EXPECT_EQ(st["cancelled"], 1);
    const auto pts = decode_means_binary(cli.Get("/scene?format=binary")->body);
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_LE((pts[i] - scene->means[i]).norm(), 1e-6);

    // Nothing running: cancel is a no-op.
    EXPECT_FALSE(json::parse(cli.Post("/cancel")->body)["cancelled"].get<bool>());
    // The next request runs normally.
    auto again = cli.Post("/deform?format=binary", kZeroSpec, "application/json");
    ASSERT_TRUE(again);
    EXPECT_EQ(again->status, 200);
    svc.stop();
}

TEST(Service, ExportWritesLastResult) {
    PipelineConfig config;
    auto scene = small_scene(config);
    DeformService svc(scene, config);
    const int port = svc.start("127.0.0.1", 0);
    httplib::Client cli("127.0.0.1", port);
    const auto path = std::filesystem::temp_directory_path() / "splatdeform_service_export.ply";
    const json body{{"path", path.string()}};

    ASSERT_EQ(cli.Post("/deform?format=binary", kLiftSpec, "application/json")->status, 200);
    ASSERT_EQ(cli.Post("/export", body.dump(), "application/json")->status, 200);
    // Adapted kernel centers follow the transferred triangle, not the raw solver output.
    EXPECT_GT(load_splats(path).splats[30].mean.z(), 0.05);

    ASSERT_EQ(cli.Post("/deform?format=binary", kZeroSpec, "application/json")->status, 200);
    auto r = cli.Post("/export", body.dump(), "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    const SplatSet out = load_splats(path);
    ASSERT_EQ(out.size(), scene->means.size());
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_LE((out.splats[i].mean - scene->means[i]).norm(), 1e-6);
    std::filesystem::remove(path);
    svc.stop();
}
