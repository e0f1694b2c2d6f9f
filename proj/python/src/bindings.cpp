#include "splatdeform/errors.hpp"
#include "splatdeform/evaluation.hpp"
#include "splatdeform/handles.hpp"
#include "splatdeform/kernel_adaptation.hpp"
#include "splatdeform/ply_io.hpp"
#include "splatdeform/pipeline.hpp"
#include "splatdeform/splat_graph.hpp"
#include "splatdeform/splat_model.hpp"

#include <nlohmann/json.hpp>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

namespace py = pybind11;
namespace sd = splatdeform;
using json = nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const std::vector<sd::Vec3>& pts) {
    Array out({static_cast<py::ssize_t>(pts.size()), py::ssize_t{3}});
    auto v = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (int k = 0; k < 3; ++k) v(static_cast<py::ssize_t>(i), k) = pts[i][k];
    return out;
}

std::vector<sd::Vec3> from_array(const Array& a, const char* what) {
    if (a.ndim() != 2 || a.shape(1) != 3) throw py::value_error(std::string(what) + " must have shape (n, 3)");
    auto v = a.unchecked<2>();
    std::vector<sd::Vec3> out(static_cast<std::size_t>(a.shape(0)));
    for (py::ssize_t i = 0; i < a.shape(0); ++i) out[static_cast<std::size_t>(i)] = sd::Vec3(v(i, 0), v(i, 1), v(i, 2));
    return out;
}

sd::PipelineConfig config_of(const std::string& config_json) {
    return config_json.empty() ? sd::PipelineConfig{} : sd::config_from_json(json::parse(config_json));
}

// means (n,3), quaternions (n,4) as w,x,y,z, scales (n,2), opacity (n,)
sd::SplatSet splats_from_arrays(const Array& means, const Array& quats, const Array& scales, const Array& opacity) {
    const auto m = from_array(means, "means");
    const auto n = static_cast<py::ssize_t>(m.size());
    if (quats.ndim() != 2 || quats.shape(0) != n || quats.shape(1) != 4)
        throw py::value_error("quaternions must have shape (n, 4)");
    if (scales.ndim() != 2 || scales.shape(0) != n || scales.shape(1) != 2)
        throw py::value_error("scales must have shape (n, 2)");
    if (opacity.ndim() != 1 || opacity.shape(0) != n) throw py::value_error("opacity must have shape (n,)");
    auto q = quats.unchecked<2>();
    auto s = scales.unchecked<2>();
    auto o = opacity.unchecked<1>();
    sd::SplatSet set;
    for (py::ssize_t i = 0; i < n; ++i) {
        sd::Splat sp;
        sp.mean = m[static_cast<std::size_t>(i)];
        sp.rotation = sd::Quat(q(i, 0), q(i, 1), q(i, 2), q(i, 3)).normalized();
        sp.scales = sd::Vec2(s(i, 0), s(i, 1));
        sp.opacity = o(i);
        set.splats.push_back(std::move(sp));
    }
    return set;
}

py::dict splats_to_dict(const sd::SplatSet& set) {
    const auto n = static_cast<py::ssize_t>(set.size());
    Array quats({n, py::ssize_t{4}}), scales({n, py::ssize_t{2}}), opacity(n);
    auto q = quats.mutable_unchecked<2>();
    auto s = scales.mutable_unchecked<2>();
    auto o = opacity.mutable_unchecked<1>();
    for (py::ssize_t i = 0; i < n; ++i) {
        const auto& sp = set.splats[static_cast<std::size_t>(i)];
        q(i, 0) = sp.rotation.w();
        q(i, 1) = sp.rotation.x();
        q(i, 2) = sp.rotation.y();
        q(i, 3) = sp.rotation.z();
        s(i, 0) = sp.scales[0];
        s(i, 1) = sp.scales[1];
        o(i) = sp.opacity;
    }
    py::dict d;
    d["means"] = to_array(set.means());
    d["quaternions"] = quats;
    d["scales"] = scales;
    d["opacity"] = opacity;
    return d;
}

py::array_t<std::int64_t> edge_array(const sd::SplatGraph& g) {
    const auto edges = g.edges();
    py::array_t<std::int64_t> out({static_cast<py::ssize_t>(edges.size()), py::ssize_t{2}});
    auto v = out.mutable_unchecked<2>();
    for (std::size_t k = 0; k < edges.size(); ++k) {
        v(static_cast<py::ssize_t>(k), 0) = edges[k].i;
        v(static_cast<py::ssize_t>(k), 1) = edges[k].j;
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Gaussian splat deformation: graph, Laplacian, ARAP/BBW and kernel adaptation";

    py::register_exception<sd::Error>(m, "SplatDeformError", PyExc_RuntimeError);

    py::class_<sd::Scene>(m, "Scene")
        .def_property_readonly("size", [](const sd::Scene& s) { return s.splats.size(); })
        .def_property_readonly("scale", [](const sd::Scene& s) { return s.scale; })
        .def_property_readonly("means", [](const sd::Scene& s) { return to_array(s.means); })
        .def_property_readonly("edges", [](const sd::Scene& s) { return edge_array(s.graph); })
        .def_property_readonly("epsilon", [](const sd::Scene& s) { return s.graph.epsilon(); })
        .def_property_readonly("cache_hit", [](const sd::Scene& s) { return s.cache_hit; })
        .def("splats", [](const sd::Scene& s) { return splats_to_dict(s.splats); })
        .def("laplacian",
             [](const sd::Scene& s) {
                 if (!s.laplacian) throw py::value_error("scene was loaded without a Laplacian");
                 const auto& l = s.laplacian->stiffness;
                 std::vector<std::int64_t> rows, cols;
                 std::vector<double> vals;
                 for (int k = 0; k < l.outerSize(); ++k) {
                     for (sd::SparseMatrix::InnerIterator it(l, k); it; ++it) {
                         rows.push_back(it.row());
                         cols.push_back(it.col());
                         vals.push_back(it.value());
                     }
                 }
                 const auto& mass = s.laplacian->mass;
                 return py::make_tuple(py::array(py::cast(rows)), py::array(py::cast(cols)), py::array(py::cast(vals)),
                                       py::array(py::cast(std::vector<double>(mass.data(), mass.data() + mass.size()))));
             },
             "Stiffness as COO triplets (rows, cols, values) and the lumped mass vector.");

    m.def(
        "load_scene",
        [](const std::string& path, const std::string& config_json, bool with_laplacian) {
            sd::PipelineConfig c = config_of(config_json);
            c.input = path;
            py::gil_scoped_release release;
            return sd::load_scene(c, with_laplacian);
        },
        py::arg("path"), py::arg("config_json") = "", py::arg("with_laplacian") = true);

    m.def(
        "make_scene",
        [](const Array& means, const Array& quats, const Array& scales, const Array& opacity,
           const std::string& config_json, bool with_laplacian) {
            sd::SplatSet set = splats_from_arrays(means, quats, scales, opacity);
            const sd::PipelineConfig c = config_of(config_json);
            py::gil_scoped_release release;
            return sd::make_scene(std::move(set), c, with_laplacian);
        },
        py::arg("means"), py::arg("quaternions"), py::arg("scales"), py::arg("opacity"), py::arg("config_json") = "",
        py::arg("with_laplacian") = true);

    m.def(
        "deform",
        [](const sd::Scene& scene, const std::string& handles_json, const std::string& config_json) {
            const sd::HandleSpec spec = sd::parse_handle_spec(json::parse(handles_json));
            const sd::PipelineConfig c = config_of(config_json);
            sd::DeformationResult r;
            {
                py::gil_scoped_release release;
                r = sd::deform_scene(scene, spec, c);
            }
            py::dict d = splats_to_dict(r.adapted);
            d["displaced"] = to_array(r.displaced);
            d["report_json"] = sd::deformation_report_json(r, spec).dump();
            return d;
        },
        py::arg("scene"), py::arg("handles_json"), py::arg("config_json") = "");

    m.def(
        "adapt",
        [](const sd::Scene& scene, const Array& displaced, const std::string& config_json) {
            const auto moved = from_array(displaced, "displaced");
            if (moved.size() != scene.splats.size()) throw py::value_error("one displaced mean per splat is required");
            std::vector<sd::Vec3> disp(moved.size());
            for (std::size_t i = 0; i < moved.size(); ++i) disp[i] = moved[i] - scene.means[i];
            const sd::PipelineConfig c = config_of(config_json);
            sd::AdaptationOptions opts;
            opts.k_bind = c.k_bind;
            opts.min_contribution = c.min_contribution;
            sd::SplatSet out;
            {
                py::gil_scoped_release release;
                out = sd::adapt_kernels(scene.splats, scene.graph, disp, opts);
            }
            return splats_to_dict(out);
        },
        py::arg("scene"), py::arg("displaced"), py::arg("config_json") = "");

    m.def(
        "evaluate",
        [](const sd::Scene& scene, const std::string& handles_json, const std::string& config_json) {
            const sd::HandleSpec spec = sd::parse_handle_spec(json::parse(handles_json));
            const sd::PipelineConfig c = config_of(config_json);
            sd::PckReport rep;
            {
                py::gil_scoped_release release;
                rep = sd::run_evaluation(scene, spec, c);
            }
            return rep.to_json().dump();
        },
        py::arg("scene"), py::arg("handles_json"), py::arg("config_json") = "");

    m.def(
        "pck3d",
        [](const Array& gt, const Array& pred, const std::vector<std::int64_t>& pairs, double tau) {
            const auto g = from_array(gt, "gt_deformed");
            const auto p = from_array(pred, "means_deformed");
            return sd::pck3d(g, p, pairs, tau).score;
        },
        py::arg("gt_deformed"), py::arg("means_deformed"), py::arg("pairs"), py::arg("tau"));

    m.def(
        "save_splats",
        [](const std::string& path, const Array& means, const Array& quats, const Array& scales,
           const Array& opacity) { sd::save_splats(path, splats_from_arrays(means, quats, scales, opacity)); },
        py::arg("path"), py::arg("means"), py::arg("quaternions"), py::arg("scales"), py::arg("opacity"));
}
