#include "splatdeform/service.hpp"

#include "splatdeform/errors.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <condition_variable>
#include <cstring>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

namespace splatdeform {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary mean arrays assume a little-endian host");

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& origin, const std::string& message,
                const std::string& field = {}) {
    json err{{"origin", origin}, {"message", message}};
    if (!field.empty()) err["field"] = field;
    send_json(res, status, {{"error", err}});
}

// Runs a handler, mapping engine errors onto HTTP statuses.
template <class F>
void guarded(httplib::Response& res, F&& body) {
    try {
        body();
    } catch (const ConfigError& e) {
        send_error(res, 400, e.origin(), e.what(), e.field());
    } catch (const Cancelled& e) {
        send_error(res, 409, e.origin(), e.what());
    } catch (const Error& e) {
        send_error(res, 422, e.origin(), e.what());
    } catch (const json::exception& e) {
        send_error(res, 400, "service", std::string("malformed JSON body: ") + e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, "service", e.what());
    }
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) throw ConfigError("request body is empty", "");
    return json::parse(req.body);
}

bool wants_binary(const httplib::Request& req) {
    return req.has_param("format") && req.get_param_value("format") == "binary";
}

void flat_append(json& arr, const Vec3& v) {
    arr.push_back(v.x());
    arr.push_back(v.y());
    arr.push_back(v.z());
}

// Streams a prepared body in fixed-size chunks.
void stream_body(httplib::Response& res, std::string body, const char* type) {
    auto shared = std::make_shared<std::string>(std::move(body));
    res.status = 200;
    res.set_chunked_content_provider(type, [shared](std::size_t offset, httplib::DataSink& sink) {
        constexpr std::size_t kChunk = 1 << 20;
        if (offset >= shared->size()) {
            sink.done();
            return true;
        }
        const std::size_t n = std::min(kChunk, shared->size() - offset);
        return sink.write(shared->data() + offset, n);
    });
}

}  // namespace

std::string encode_means_binary(std::span<const Vec3> points) {
    const auto count = static_cast<std::uint32_t>(points.size());
    std::string out(4 + 12 * points.size(), '\0');
    std::memcpy(out.data(), &count, 4);
    char* p = out.data() + 4;
    for (const auto& v : points) {
        for (int a = 0; a < 3; ++a) {
            const auto f = static_cast<float>(v[a]);
            std::memcpy(p, &f, 4);
            p += 4;
        }
    }
    return out;
}

std::vector<Vec3> decode_means_binary(std::string_view bytes) {
    if (bytes.size() < 4) throw FormatError("binary mean array shorter than its length prefix");
    std::uint32_t count = 0;
    std::memcpy(&count, bytes.data(), 4);
    if (bytes.size() != 4 + 12 * static_cast<std::size_t>(count)) {
        throw FormatError("binary mean array length does not match its prefix");
    }
    std::vector<Vec3> out(count);
    const char* p = bytes.data() + 4;
    for (auto& v : out) {
        for (int a = 0; a < 3; ++a) {
            float f;
            std::memcpy(&f, p, 4);
            v[a] = f;
            p += 4;
        }
    }
    return out;
}

std::vector<std::uint32_t> preview_indices(std::size_t count, std::size_t limit) {
    std::vector<std::uint32_t> all(count);
    std::iota(all.begin(), all.end(), 0u);
    if (count <= limit) return all;
    std::vector<std::uint32_t> out;
    out.reserve(limit);
    std::mt19937_64 rng(0x5eed);
    std::sample(all.begin(), all.end(), std::back_inserter(out), limit, rng);
    return out;
}

struct DeformService::Impl {
    std::shared_ptr<const Scene> scene;
    PipelineConfig config;
    ServiceOptions options;
    httplib::Server server;
    std::thread thread;

    mutable std::mutex mutex;
    std::condition_variable turn;
    std::uint64_t next_ticket = 0;
    std::uint64_t serving = 0;
    bool running = false;
    std::uint64_t running_id = 0;
    std::uint64_t completed = 0;
    std::uint64_t cancelled_jobs = 0;
    std::string last_error;
    std::shared_ptr<const DeformationResult> last_result;
    std::atomic<bool> cancel{false};

    Impl(std::shared_ptr<const Scene> s, PipelineConfig c, ServiceOptions o)
        : scene(std::move(s)), config(std::move(c)), options(std::move(o)) {
        const int threads = std::max(options.threads, 2);
        server.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
        routes();
    }

    std::size_t depth_locked() const {
        return static_cast<std::size_t>(next_ticket - serving) - (running ? 1 : 0);
    }

    json status_json() const {
        std::lock_guard lock(mutex);
        return {{"state", running ? "running" : "idle"},
                {"queue_depth", depth_locked()},
                {"running_id", running ? json(running_id) : json(nullptr)},
                {"completed", completed},
                {"cancelled", cancelled_jobs},
                {"last_error", last_error},
                {"splats", scene->splats.size()},
                {"scene_scale", scene->scale}};
    }

    // Single-flight section: waits for this request's turn in arrival order.
    template <class F>
    auto exclusive(F&& job) {
        std::uint64_t ticket;
        {
            std::unique_lock lock(mutex);
            ticket = next_ticket++;
            turn.wait(lock, [&] { return serving == ticket && !running; });
            running = true;
            running_id = ticket + 1;
            cancel = false;
        }
        struct Release {
            Impl* self;
            ~Release() {
                std::lock_guard lock(self->mutex);
                self->running = false;
                ++self->serving;
                self->turn.notify_all();
            }
        } release{this};
        return job(ticket + 1);
    }

    void routes() {
        server.Get("/status", [this](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, status_json());
        });

        server.Get("/scene", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                std::size_t limit = config.preview_limit;
                if (req.has_param("limit")) {
                    try {
                        limit = std::min<std::size_t>(limit, std::stoull(req.get_param_value("limit")));
                    } catch (const std::exception&) {
                        throw ConfigError("limit must be a non-negative integer", "limit");
                    }
                }
                const auto idx = preview_indices(scene->means.size(), limit);
                if (wants_binary(req)) {
                    std::vector<Vec3> pts;
                    pts.reserve(idx.size());
                    for (auto i : idx) pts.push_back(scene->means[i]);
                    stream_body(res, encode_means_binary(pts), "application/octet-stream");
                    return;
                }
                json means = json::array(), axes = json::array(), indices = json::array();
                for (auto i : idx) {
                    indices.push_back(i);
                    flat_append(means, scene->means[i]);
                    const auto e = occupancy_ellipse(scene->splats.splats[i], config.min_contribution);
                    flat_append(axes, e ? e->semi_axis1() : Vec3::Zero());
                    flat_append(axes, e ? e->semi_axis2() : Vec3::Zero());
                }
                json body{{"total", scene->means.size()},
                          {"count", idx.size()},
                          {"scene_scale", scene->scale},
                          {"indices", indices},
                          {"means", means},
                          {"axes", axes}};
                stream_body(res, body.dump(), "application/json");
            });
        });

        server.Post("/handles", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const HandleSpec spec = parse_handle_spec(parse_body(req));
                const ResolveContext ctx{scene->means, &scene->graph, scene->scale, config.k_laplacian};
                const auto handles = resolve_handles(spec, ctx);
                json out = json::array();
                for (const auto& h : handles) {
                    out.push_back({{"anchor", h.anchor},
                                   {"position", {h.position.x(), h.position.y(), h.position.z()}},
                                   {"displacement", {h.displacement.x(), h.displacement.y(), h.displacement.z()}},
                                   {"auto_pca", h.from_pca}});
                }
                send_json(res, 200,
                          {{"handles", out}, {"method", to_string(spec.method.value_or(config.method))}});
            });
        });

        server.Post("/deform", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const HandleSpec spec = parse_handle_spec(parse_body(req));
                const bool binary = wants_binary(req);
                exclusive([&](std::uint64_t id) {
                    std::shared_ptr<const DeformationResult> result;
                    try {
                        const CancelFn poll = [this] {
                            if (options.on_poll) options.on_poll();
                            return cancel.load();
                        };
                        result = std::make_shared<const DeformationResult>(deform_scene(*scene, spec, config, poll));
                    } catch (const Cancelled&) {
                        std::lock_guard lock(mutex);
                        ++cancelled_jobs;
                        throw;
                    } catch (const std::exception& e) {
                        std::lock_guard lock(mutex);
                        last_error = e.what();
                        throw;
                    }
                    {
                        std::lock_guard lock(mutex);
                        ++completed;
                        last_error.clear();
                        last_result = result;
                    }
                    if (binary) {
                        res.set_header("X-Deform-Id", std::to_string(id));
                        stream_body(res, encode_means_binary(result->displaced), "application/octet-stream");
                        return;
                    }
                    json means = json::array(), rotations = json::array(), scales = json::array();
                    for (const auto& s : result->adapted.splats) {
                        flat_append(means, s.mean);
                        rotations.push_back(s.rotation.w());
                        rotations.push_back(s.rotation.x());
                        rotations.push_back(s.rotation.y());
                        rotations.push_back(s.rotation.z());
                        scales.push_back(s.scales.x());
                        scales.push_back(s.scales.y());
                    }
                    json body{{"id", id},
                              {"means", means},
                              {"rotations", rotations},
                              {"scales", scales},
                              {"report", deformation_report_json(*result, spec)},
                              {"timings", timings_json(result->timings)}};
                    stream_body(res, body.dump(), "application/json");
                });
            });
        });

        server.Post("/cancel", [this](const httplib::Request&, httplib::Response& res) {
            std::lock_guard lock(mutex);
            const bool active = running;
            if (active) cancel = true;
            send_json(res, 200, {{"cancelled", active}, {"id", active ? json(running_id) : json(nullptr)}});
        });

        server.Post("/export", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const json body = parse_body(req);
                if (!body.contains("path") || !body["path"].is_string()) {
                    throw ConfigError("a string path is required", "path");
                }
                std::shared_ptr<const DeformationResult> result;
                {
                    std::lock_guard lock(mutex);
                    result = last_result;
                }
                if (!result) throw ConfigError("no deformation result to export yet", "path");
                const std::filesystem::path path = body["path"].get<std::string>();
                if (!config.input.empty() && std::filesystem::exists(path) && std::filesystem::exists(config.input) &&
                    std::filesystem::equivalent(path, config.input)) {
                    throw ConfigError("refusing to overwrite the loaded scene", "path");
                }
                save_splats(path, result->adapted);
                send_json(res, 200, {{"written", path.string()}});
            });
        });
    }
};

DeformService::DeformService(std::shared_ptr<const Scene> scene, PipelineConfig config, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(scene), std::move(config), std::move(options))) {}

DeformService::~DeformService() { stop(); }

int DeformService::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port), "port");
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void DeformService::run(const std::string& host, int port) {
    spdlog::info("serving {} splats on http://{}:{}", impl_->scene->splats.size(), host, port);
    if (!impl_->server.listen(host, port)) throw ConfigError("cannot listen on " + host + ":" + std::to_string(port), "port");
}

void DeformService::stop() {
    if (!impl_) return;
    impl_->cancel = true;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

std::size_t DeformService::queue_depth() const {
    std::lock_guard lock(impl_->mutex);
    return impl_->depth_locked();
}

}  // namespace splatdeform
