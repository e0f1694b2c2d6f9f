#pragma once

#include "splatdeform/pipeline.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace splatdeform {

struct ServiceOptions {
    int threads = 8;
    // Invoked whenever a running deformation polls for cancellation. Tests
    // use it to hold a job open.
    std::function<void()> on_poll;
};

// Means as little-endian float32 triplets behind a uint32 point count.
std::string encode_means_binary(std::span<const Vec3> points);
std::vector<Vec3> decode_means_binary(std::string_view bytes);

// Local HTTP front end over one immutable scene. Deformations run one at a
// time in arrival order; readers are never blocked by a running job.
//
//   GET  /scene     preview: decimated means and ellipse semi-axes
//   POST /handles   validate and snap a handle spec
//   POST /deform    run a handle spec, returns displaced means and kernels
//   GET  /status    running state and queue depth
//   POST /cancel    abort the running deformation between solver iterations
//   POST /export    write the last result to a PLY path
//
// "?format=binary" on /scene and /deform returns only the means, binary.
class DeformService {
public:
    DeformService(std::shared_ptr<const Scene> scene, PipelineConfig config, ServiceOptions options = {});
    ~DeformService();
    DeformService(const DeformService&) = delete;
    DeformService& operator=(const DeformService&) = delete;

    // Binds and serves on a background thread. Port 0 picks a free port; the
    // bound port is returned.
    int start(const std::string& host, int port);
    // Binds and serves on the calling thread until stop().
    void run(const std::string& host, int port);
    void stop();

    std::size_t queue_depth() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Preview subset: every index when the scene is small enough, otherwise a
// fixed-seed uniform sample of `limit` indices, ascending.
std::vector<std::uint32_t> preview_indices(std::size_t count, std::size_t limit);

}  // namespace splatdeform
