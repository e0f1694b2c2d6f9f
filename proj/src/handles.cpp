#include "splatdeform/handles.hpp"

#include "splatdeform/errors.hpp"
#include "splatdeform/evaluation.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace splatdeform {
namespace {

using nlohmann::json;

Vec3 parse_vec3(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 3) throw ConfigError("expected an array of 3 numbers", path);
    Vec3 out;
    for (int i = 0; i < 3; ++i) {
        const auto& x = v[static_cast<std::size_t>(i)];
        if (!x.is_number()) throw ConfigError("expected a number", path + "[" + std::to_string(i) + "]");
        out[i] = x.get<double>();
        if (!std::isfinite(out[i])) throw ConfigError("value must be finite", path + "[" + std::to_string(i) + "]");
    }
    return out;
}

double parse_positive(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError("expected a number", path);
    const double x = v.get<double>();
    if (!std::isfinite(x) || x <= 0.0) throw ConfigError("must be a positive number", path);
    return x;
}

AffineTransform parse_transform(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 3) throw ConfigError("expected 3 rows of 4 numbers", path);
    AffineTransform t;
    for (int r = 0; r < 3; ++r) {
        const auto& row = v[static_cast<std::size_t>(r)];
        const std::string rp = path + "[" + std::to_string(r) + "]";
        if (!row.is_array() || row.size() != 4) throw ConfigError("expected 4 numbers", rp);
        for (int c = 0; c < 4; ++c) {
            const auto& x = row[static_cast<std::size_t>(c)];
            if (!x.is_number()) throw ConfigError("expected a number", rp + "[" + std::to_string(c) + "]");
            t(r, c) = x.get<double>();
        }
    }
    return t;
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& path) {
    for (const auto& [key, value] : obj.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
            throw ConfigError("unknown field", path.empty() ? key : path + "." + key);
        }
    }
}

}  // namespace

std::string to_string(Method m) { return m == Method::Arap ? "arap" : "bbw"; }

HandleSpec parse_handle_spec(const json& doc) {
    if (!doc.is_object()) throw ConfigError("handle spec must be a JSON object", "");
    reject_unknown(doc, {"handles", "method", "mode", "fixed_radius", "cage_radius"}, "");
    HandleSpec spec;
    if (doc.contains("method")) {
        const auto& m = doc["method"];
        if (m == "arap") {
            spec.method = Method::Arap;
        } else if (m == "bbw") {
            spec.method = Method::Bbw;
        } else {
            throw ConfigError("method must be \"arap\" or \"bbw\"", "method");
        }
    }
    if (doc.contains("mode")) {
        const auto& m = doc["mode"];
        if (m == "joint") {
            spec.mode = HandleMode::Joint;
        } else if (m == "independent") {
            spec.mode = HandleMode::Independent;
        } else {
            throw ConfigError("mode must be \"joint\" or \"independent\"", "mode");
        }
    }
    if (doc.contains("fixed_radius")) spec.fixed_radius = parse_positive(doc["fixed_radius"], "fixed_radius");
    if (doc.contains("cage_radius")) spec.cage_radius = parse_positive(doc["cage_radius"], "cage_radius");

    if (!doc.contains("handles")) throw ConfigError("missing field", "handles");
    const auto& hs = doc["handles"];
    if (!hs.is_array()) throw ConfigError("expected an array", "handles");
    if (hs.empty()) throw ConfigError("at least one handle is required", "handles");
    for (std::size_t i = 0; i < hs.size(); ++i) {
        const std::string path = "handles[" + std::to_string(i) + "]";
        const auto& h = hs[i];
        if (!h.is_object()) throw ConfigError("expected an object", path);
        reject_unknown(h, {"position", "index", "displacement", "auto_pca", "transform"}, path);
        HandleInput in;
        const bool has_pos = h.contains("position");
        const bool has_idx = h.contains("index");
        if (has_pos == has_idx) throw ConfigError("exactly one of position or index is required", path);
        if (has_pos) in.position = parse_vec3(h["position"], path + ".position");
        if (has_idx) {
            const auto& x = h["index"];
            if (!x.is_number_integer() || x.get<std::int64_t>() < 0 ||
                x.get<std::int64_t>() > std::numeric_limits<std::uint32_t>::max()) {
                throw ConfigError("expected a non-negative integer", path + ".index");
            }
            in.index = x.get<std::uint32_t>();
        }
        const int motions = int(h.contains("displacement")) + int(h.contains("auto_pca")) + int(h.contains("transform"));
        if (motions != 1) {
            throw ConfigError("exactly one of displacement, auto_pca or transform is required", path);
        }
        if (h.contains("displacement")) in.displacement = parse_vec3(h["displacement"], path + ".displacement");
        if (h.contains("auto_pca")) {
            const auto& a = h["auto_pca"];
            if (!a.is_object()) throw ConfigError("expected an object", path + ".auto_pca");
            reject_unknown(a, {"magnitude"}, path + ".auto_pca");
            in.auto_pca_magnitude = a.contains("magnitude")
                                        ? parse_positive(a["magnitude"], path + ".auto_pca.magnitude")
                                        : kDefaultPcaMagnitude;
        }
        if (h.contains("transform")) {
            if (spec.method == Method::Arap) throw ConfigError("affine transforms require method bbw", path + ".transform");
            in.transform = parse_transform(h["transform"], path + ".transform");
        }
        spec.handles.push_back(in);
    }
    return spec;
}

HandleSpec load_handle_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open handle spec " + path.string(), "");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("handle spec is not valid JSON: ") + e.what(), "");
    }
    return parse_handle_spec(doc);
}

json handle_spec_to_json(const HandleSpec& spec) {
    json doc;
    if (spec.method) doc["method"] = to_string(*spec.method);
    doc["mode"] = spec.mode == HandleMode::Joint ? "joint" : "independent";
    doc["fixed_radius"] = spec.fixed_radius;
    doc["cage_radius"] = spec.cage_radius;
    auto& hs = doc["handles"] = json::array();
    for (const auto& h : spec.handles) {
        json e;
        if (h.position) e["position"] = {h.position->x(), h.position->y(), h.position->z()};
        if (h.index) e["index"] = *h.index;
        if (h.displacement) e["displacement"] = {h.displacement->x(), h.displacement->y(), h.displacement->z()};
        if (h.auto_pca_magnitude) e["auto_pca"] = {{"magnitude", *h.auto_pca_magnitude}};
        if (h.transform) {
            json rows = json::array();
            for (int r = 0; r < 3; ++r) {
                rows.push_back({(*h.transform)(r, 0), (*h.transform)(r, 1), (*h.transform)(r, 2), (*h.transform)(r, 3)});
            }
            e["transform"] = rows;
        }
        hs.push_back(e);
    }
    return doc;
}

std::uint32_t nearest_point(std::span<const Vec3> points, const Vec3& q) {
    std::uint32_t best = 0;
    double best_d = kInfinity;
    for (std::uint32_t i = 0; i < points.size(); ++i) {
        const double d = (points[i] - q).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

std::vector<ResolvedHandle> resolve_handles(const HandleSpec& spec, const ResolveContext& ctx) {
    const auto& means = ctx.means;
    if (means.empty()) throw ConfigError("scene has no splats", "handles");
    Vec3 lo = means[0], hi = means[0];
    for (const auto& p : means) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }

    std::vector<ResolvedHandle> out;
    for (std::size_t i = 0; i < spec.handles.size(); ++i) {
        const std::string path = "handles[" + std::to_string(i) + "]";
        const HandleInput& h = spec.handles[i];
        ResolvedHandle r;
        if (h.index) {
            if (*h.index >= means.size()) {
                throw ConfigError("index " + std::to_string(*h.index) + " out of range (scene has " +
                                      std::to_string(means.size()) + " splats)",
                                  path + ".index");
            }
            r.anchor = *h.index;
        } else {
            const Vec3& p = *h.position;
            const double outside = (p - p.cwiseMax(lo).cwiseMin(hi)).norm();
            if (outside > 0.0) {
                std::ostringstream os;
                os << "handle position lies outside the scene bounding box by " << outside << " ("
                   << outside / ctx.scale << " s)";
                throw ConfigError(os.str(), path + ".position");
            }
            r.anchor = nearest_point(means, p);
        }
        r.position = means[r.anchor];

        if (h.displacement) {
            r.displacement = *h.displacement;
            r.transform = translation_transform(r.displacement);
        } else if (h.transform) {
            r.transform = *h.transform;
            const Eigen::Vector4d ph(r.position.x(), r.position.y(), r.position.z(), 1.0);
            r.displacement = r.transform * ph - r.position;
        } else {
            if (!ctx.graph) throw ConfigError("auto_pca requires a splat graph", path + ".auto_pca");
            const auto nb = geodesic_knn(*ctx.graph, r.anchor, ctx.pca_k);
            std::vector<Vec3> pts{means[r.anchor]};
            for (const auto& n : nb.neighbors) pts.push_back(means[n.node]);
            Vec3 dir;
            try {
                dir = pca_handle_direction(pts, r.position);
            } catch (const GeometryError& e) {
                throw ConfigError(std::string("auto_pca: ") + e.what(), path + ".auto_pca");
            }
            r.displacement = *h.auto_pca_magnitude * ctx.scale * dir;
            r.transform = translation_transform(r.displacement);
            r.from_pca = true;
        }
        for (std::size_t j = 0; j < out.size(); ++j) {
            if (out[j].anchor == r.anchor) {
                throw ConfigError("handle snaps to splat " + std::to_string(r.anchor) + " already used by handles[" +
                                      std::to_string(j) + "]",
                                  path);
            }
        }
        out.push_back(r);
    }
    return out;
}

Constraints arap_constraints(std::span<const ResolvedHandle> handles, std::span<const Vec3> means,
                             double fixed_radius_abs) {
    std::vector<char> is_handle(means.size(), 0);
    Constraints c;
    for (const auto& h : handles) {
        is_handle[h.anchor] = 1;
        c.emplace_back(h.anchor, means[h.anchor] + h.displacement);
    }
    for (std::uint32_t i = 0; i < means.size(); ++i) {
        if (is_handle[i]) continue;
        bool far = true;
        for (const auto& h : handles) {
            if ((means[i] - means[h.anchor]).norm() <= fixed_radius_abs) {
                far = false;
                break;
            }
        }
        if (far) c.emplace_back(i, means[i]);
    }
    std::sort(c.begin(), c.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return c;
}

}  // namespace splatdeform
