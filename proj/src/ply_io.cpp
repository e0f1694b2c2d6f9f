#include "splatdeform/ply_io.hpp"

#include "splatdeform/errors.hpp"

#include <spdlog/spdlog.h>

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace splatdeform {
namespace {

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;
    bool has_list = false;
};

struct Header {
    PlyFormat format = PlyFormat::Ascii;
    std::vector<Element> elements;
    std::vector<std::string> comments;
};

PlyType parse_type(const std::string& t) {
    if (t == "char" || t == "int8") return PlyType::Int8;
    if (t == "uchar" || t == "uint8") return PlyType::UInt8;
    if (t == "short" || t == "int16") return PlyType::Int16;
    if (t == "ushort" || t == "uint16") return PlyType::UInt16;
    if (t == "int" || t == "int32") return PlyType::Int32;
    if (t == "uint" || t == "uint32") return PlyType::UInt32;
    if (t == "float" || t == "float32") return PlyType::Float32;
    if (t == "double" || t == "float64") return PlyType::Float64;
    throw FormatError("unknown PLY property type '" + t + "'");
}

const char* type_name(PlyType t) {
    switch (t) {
        case PlyType::Int8: return "char";
        case PlyType::UInt8: return "uchar";
        case PlyType::Int16: return "short";
        case PlyType::UInt16: return "ushort";
        case PlyType::Int32: return "int";
        case PlyType::UInt32: return "uint";
        case PlyType::Float32: return "float";
        case PlyType::Float64: return "double";
    }
    return "float";
}

std::size_t type_size(PlyType t) {
    switch (t) {
        case PlyType::Int8:
        case PlyType::UInt8: return 1;
        case PlyType::Int16:
        case PlyType::UInt16: return 2;
        case PlyType::Int32:
        case PlyType::UInt32:
        case PlyType::Float32: return 4;
        case PlyType::Float64: return 8;
    }
    return 4;
}

template <typename T>
T load_le(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

double decode(PlyType t, const char* p) {
    switch (t) {
        case PlyType::Int8: return load_le<std::int8_t>(p);
        case PlyType::UInt8: return load_le<std::uint8_t>(p);
        case PlyType::Int16: return load_le<std::int16_t>(p);
        case PlyType::UInt16: return load_le<std::uint16_t>(p);
        case PlyType::Int32: return load_le<std::int32_t>(p);
        case PlyType::UInt32: return load_le<std::uint32_t>(p);
        case PlyType::Float32: return load_le<float>(p);
        case PlyType::Float64: return load_le<double>(p);
    }
    return 0.0;
}

template <typename T>
void store_le(std::string& buf, T v) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    buf.append(bytes, sizeof(T));
}

void encode(std::string& buf, PlyType t, double v) {
    switch (t) {
        case PlyType::Int8: store_le(buf, static_cast<std::int8_t>(std::lround(v))); break;
        case PlyType::UInt8: store_le(buf, static_cast<std::uint8_t>(std::lround(v))); break;
        case PlyType::Int16: store_le(buf, static_cast<std::int16_t>(std::lround(v))); break;
        case PlyType::UInt16: store_le(buf, static_cast<std::uint16_t>(std::lround(v))); break;
        case PlyType::Int32: store_le(buf, static_cast<std::int32_t>(std::llround(v))); break;
        case PlyType::UInt32: store_le(buf, static_cast<std::uint32_t>(std::llround(v))); break;
        case PlyType::Float32: store_le(buf, static_cast<float>(v)); break;
        case PlyType::Float64: store_le(buf, v); break;
    }
}

void append_ascii(std::string& buf, PlyType t, double v) {
    char tmp[64];
    std::to_chars_result res{};
    switch (t) {
        case PlyType::Float32: res = std::to_chars(tmp, tmp + sizeof tmp, static_cast<float>(v)); break;
        case PlyType::Float64: res = std::to_chars(tmp, tmp + sizeof tmp, v); break;
        default: res = std::to_chars(tmp, tmp + sizeof tmp, static_cast<long long>(std::llround(v))); break;
    }
    buf.append(tmp, res.ptr);
}

Header read_header(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw FormatError("missing 'ply' magic line");
    Header h;
    bool have_format = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "end_header") {
            if (!have_format) throw FormatError("PLY header has no format line");
            return h;
        }
        if (key == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "ascii") {
                h.format = PlyFormat::Ascii;
            } else if (fmt == "binary_little_endian") {
                h.format = PlyFormat::BinaryLittleEndian;
            } else {
                throw FormatError("unsupported PLY format '" + fmt + "'");
            }
            have_format = true;
        } else if (key == "comment" || key == "obj_info") {
            h.comments.push_back(line.size() > key.size() + 1 ? line.substr(key.size() + 1) : std::string{});
        } else if (key == "element") {
            Element e;
            ls >> e.name >> e.count;
            if (!ls) throw FormatError("malformed element line: " + line);
            h.elements.push_back(std::move(e));
        } else if (key == "property") {
            if (h.elements.empty()) throw FormatError("property before any element");
            std::string type;
            ls >> type;
            if (type == "list") {
                h.elements.back().has_list = true;
                std::string count_type, item_type, name;
                ls >> count_type >> item_type >> name;
                continue;
            }
            std::string name;
            ls >> name;
            if (!ls) throw FormatError("malformed property line: " + line);
            h.elements.back().properties.push_back({name, parse_type(type)});
        } else if (!key.empty()) {
            throw FormatError("unexpected PLY header line: " + line);
        }
    }
    throw FormatError("PLY header not terminated by end_header");
}

// Reads the vertex element's raw values (row-major, layout order).
std::vector<double> read_vertex_values(std::istream& in, const Header& h, const Element*& vertex) {
    vertex = nullptr;
    for (const auto& e : h.elements) {
        if (e.name == "vertex") {
            vertex = &e;
            break;
        }
        if (e.count > 0) {
            if (e.has_list) throw FormatError("element '" + e.name + "' with list properties precedes vertex");
        }
    }
    if (!vertex) throw FormatError("PLY file has no vertex element");

    const std::size_t nprop = vertex->properties.size();
    std::vector<double> values(vertex->count * nprop);
    if (h.format == PlyFormat::Ascii) {
        for (const auto& e : h.elements) {
            if (&e == vertex) break;
            std::string skip;
            for (std::size_t r = 0; r < e.count; ++r) std::getline(in, skip);
        }
        for (std::size_t r = 0; r < vertex->count; ++r) {
            for (std::size_t k = 0; k < nprop; ++k) {
                std::string tok;
                if (!(in >> tok)) throw FormatError("truncated ASCII PLY body at record " + std::to_string(r));
                double v = 0.0;
                const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
                if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
                    const char* s = tok.c_str();
                    char* end = nullptr;
                    v = std::strtod(s, &end);
                    if (end == s) {
                        throw DataError("unparseable value '" + tok + "' for property '" +
                                            vertex->properties[k].name + "'",
                                        r);
                    }
                }
                values[r * nprop + k] = v;
            }
        }
        return values;
    }

    for (const auto& e : h.elements) {
        if (&e == vertex) break;
        std::size_t stride = 0;
        for (const auto& p : e.properties) stride += type_size(p.type);
        in.ignore(static_cast<std::streamsize>(stride * e.count));
    }
    std::size_t stride = 0;
    for (const auto& p : vertex->properties) stride += type_size(p.type);
    std::string record(stride, '\0');
    for (std::size_t r = 0; r < vertex->count; ++r) {
        if (!in.read(record.data(), static_cast<std::streamsize>(stride))) {
            throw FormatError("truncated binary PLY body at record " + std::to_string(r));
        }
        std::size_t off = 0;
        for (std::size_t k = 0; k < nprop; ++k) {
            values[r * nprop + k] = decode(vertex->properties[k].type, record.data() + off);
            off += type_size(vertex->properties[k].type);
        }
    }
    return values;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

std::size_t require(const PlyLayout& layout, const std::string& name) {
    const auto idx = layout.index_of(name);
    if (!idx) throw FormatError("missing required vertex property '" + name + "'");
    return *idx;
}

void write_header(std::ostream& out, const PlyLayout& layout, std::size_t count) {
    out << "ply\n";
    out << (layout.format == PlyFormat::Ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n");
    for (const auto& c : layout.comments) out << "comment " << c << "\n";
    out << "element vertex " << count << "\n";
    for (const auto& p : layout.properties) out << "property " << type_name(p.type) << " " << p.name << "\n";
    out << "end_header\n";
}

}  // namespace

PlyLayout default_layout(PlyFormat format) {
    PlyLayout layout;
    layout.format = format;
    for (const char* name : {"x", "y", "z", "scale_0", "scale_1", "rot_0", "rot_1", "rot_2", "rot_3", "opacity",
                             "spike_threshold"}) {
        layout.properties.push_back({name, PlyType::Float32});
    }
    return layout;
}

SplatSet read_splats(std::istream& in, const LoadOptions& options, LoadReport* report) {
    const Header header = read_header(in);
    const Element* vertex = nullptr;
    const std::vector<double> values = read_vertex_values(in, header, vertex);

    PlyLayout layout;
    layout.format = header.format;
    layout.properties = vertex->properties;
    layout.comments = header.comments;

    const std::size_t ix = require(layout, "x"), iy = require(layout, "y"), iz = require(layout, "z");
    const std::array<std::size_t, 4> irot{require(layout, "rot_0"), require(layout, "rot_1"),
                                          require(layout, "rot_2"), require(layout, "rot_3")};
    const std::size_t is0 = require(layout, "scale_0"), is1 = require(layout, "scale_1");
    const auto is2 = layout.index_of("scale_2");
    const std::size_t iop = require(layout, "opacity");
    const auto ispike = layout.index_of("spike_threshold");

    LoadReport local;
    LoadReport& rep = report ? *report : local;
    rep = LoadReport{};
    rep.records = vertex->count;
    rep.has_spike_threshold = ispike.has_value();

    SplatSet set;
    set.storage = options.storage;
    const std::size_t nprop = layout.properties.size();
    set.splats.reserve(vertex->count);
    for (std::size_t r = 0; r < vertex->count; ++r) {
        const double* row = values.data() + r * nprop;
        auto get = [&](std::size_t k) {
            const double v = row[k];
            if (!std::isfinite(v)) {
                throw DataError("non-finite value for property '" + layout.properties[k].name + "' in record " +
                                    std::to_string(r),
                                r);
            }
            return v;
        };
        Splat s;
        s.payload.assign(row, row + nprop);
        s.mean = Vec3(get(ix), get(iy), get(iz));
        Quat q(get(irot[0]), get(irot[1]), get(irot[2]), get(irot[3]));
        if (q.norm() < 1e-12) throw DataError("zero-norm rotation in record " + std::to_string(r), r);
        q.normalize();

        auto scale = [&](std::size_t k) {
            const double v = get(k);
            return options.storage.log_scales ? std::exp(v) : v;
        };
        std::array<double, 3> sc{scale(is0), scale(is1), is2 ? scale(*is2) : 0.0};
        for (double v : sc) {
            if (v < 0.0) throw DataError("negative scale in record " + std::to_string(r), r);
        }

        Mat3 frame = q.toRotationMatrix();
        if (is2) {
            // Keep the two largest axes in the splat plane; the smallest becomes
            // the normal and its extent is reported as thickness.
            int smallest = 0;
            for (int k = 1; k < 3; ++k) {
                if (sc[k] < sc[smallest]) smallest = k;
            }
            std::array<int, 2> keep{};
            int w = 0;
            for (int k = 0; k < 3; ++k) {
                if (k != smallest) keep[w++] = k;
            }
            const double largest = std::max(sc[keep[0]], sc[keep[1]]);
            if (sc[smallest] > 1e-3 * largest) ++rep.thick_records;
            Mat3 reordered;
            reordered.col(0) = frame.col(keep[0]);
            reordered.col(1) = frame.col(keep[1]);
            reordered.col(2) = frame.col(smallest);
            if (reordered.determinant() < 0.0) reordered.col(2) = -reordered.col(2);
            s.thickness = sc[smallest];
            sc = {sc[keep[0]], sc[keep[1]], 0.0};
            frame = reordered;
        }
        s.rotation = Quat(frame).normalized();
        s.scales = Vec2(sc[0], sc[1]);

        const double op = get(iop);
        s.opacity = options.storage.logit_opacity ? sigmoid(op) : op;
        if (ispike) {
            const double sp = get(*ispike);
            s.spike_threshold = options.storage.logit_spike_threshold ? sigmoid(sp) : sp;
            if (s.spike_threshold < 0.0) {
                throw DataError("negative spike threshold in record " + std::to_string(r), r);
            }
        }
        if (s.opacity < options.min_contribution) {
            ++rep.dropped_low_opacity;
            continue;
        }
        canonicalize(s);
        set.splats.push_back(std::move(s));
    }
    if (rep.thick_records > 0) {
        rep.warnings.push_back(std::to_string(rep.thick_records) +
                               " records carry a third scale above 1e-3 of their largest scale");
        spdlog::warn("{}", rep.warnings.back());
    }
    if (rep.dropped_low_opacity > 0) {
        rep.warnings.push_back("dropped " + std::to_string(rep.dropped_low_opacity) +
                               " records with opacity below the minimum contribution");
        spdlog::info("{}", rep.warnings.back());
    }
    set.layout = std::move(layout);
    return set;
}

SplatSet load_splats(const std::filesystem::path& path, const LoadOptions& options, LoadReport* report) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    return read_splats(in, options, report);
}

void write_splats(std::ostream& out, const SplatSet& set) {
    const PlyLayout layout = set.layout ? *set.layout : default_layout();
    const StorageFlags& st = set.storage;
    write_header(out, layout, set.size());

    std::vector<double> row(layout.properties.size());
    std::string buf;
    for (const auto& s : set.splats) {
        for (std::size_t k = 0; k < row.size(); ++k) row[k] = k < s.payload.size() ? s.payload[k] : 0.0;
        const Quat q = s.rotation.normalized();
        auto put = [&](const char* name, double v) {
            if (const auto idx = layout.index_of(name)) row[*idx] = v;
        };
        auto enc_scale = [&](double v) { return st.log_scales ? std::log(v) : v; };
        put("x", s.mean.x());
        put("y", s.mean.y());
        put("z", s.mean.z());
        put("rot_0", q.w());
        put("rot_1", q.x());
        put("rot_2", q.y());
        put("rot_3", q.z());
        put("scale_0", enc_scale(s.scales[0]));
        put("scale_1", enc_scale(s.scales[1]));
        if (!st.log_scales || s.thickness > 0.0) put("scale_2", enc_scale(s.thickness));
        put("opacity", st.logit_opacity ? logit(s.opacity) : s.opacity);
        put("spike_threshold", st.logit_spike_threshold ? logit(s.spike_threshold) : s.spike_threshold);

        buf.clear();
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (layout.format == PlyFormat::Ascii) {
                if (k) buf.push_back(' ');
                append_ascii(buf, layout.properties[k].type, row[k]);
            } else {
                encode(buf, layout.properties[k].type, row[k]);
            }
        }
        if (layout.format == PlyFormat::Ascii) buf.push_back('\n');
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
}

void save_splats(const std::filesystem::path& path, const SplatSet& set) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
    write_splats(out, set);
}

std::vector<Vec3> load_points(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    const Header header = read_header(in);
    const Element* vertex = nullptr;
    const std::vector<double> values = read_vertex_values(in, header, vertex);
    PlyLayout layout;
    layout.properties = vertex->properties;
    const std::size_t ix = require(layout, "x"), iy = require(layout, "y"), iz = require(layout, "z");
    const std::size_t nprop = layout.properties.size();
    std::vector<Vec3> points;
    points.reserve(vertex->count);
    for (std::size_t r = 0; r < vertex->count; ++r) {
        const double* row = values.data() + r * nprop;
        Vec3 p(row[ix], row[iy], row[iz]);
        if (!p.allFinite()) throw DataError("non-finite point in record " + std::to_string(r), r);
        points.push_back(p);
    }
    return points;
}

void save_points(const std::filesystem::path& path, const std::vector<Vec3>& points, PlyFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
    PlyLayout layout;
    layout.format = format;
    layout.properties = {{"x", PlyType::Float64}, {"y", PlyType::Float64}, {"z", PlyType::Float64}};
    write_header(out, layout, points.size());
    std::string buf;
    for (const auto& p : points) {
        buf.clear();
        for (int k = 0; k < 3; ++k) {
            if (format == PlyFormat::Ascii) {
                if (k) buf.push_back(' ');
                append_ascii(buf, PlyType::Float64, p[k]);
            } else {
                encode(buf, PlyType::Float64, p[k]);
            }
        }
        if (format == PlyFormat::Ascii) buf.push_back('\n');
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
}

}  // namespace splatdeform
