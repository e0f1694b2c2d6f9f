#pragma once

#include "splatdeform/splat_model.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace splatdeform {

struct LoadOptions {
    StorageFlags storage;
    double min_contribution = kMinContribution;
};

struct LoadReport {
    std::size_t records = 0;
    std::size_t dropped_low_opacity = 0;
    // Records whose dropped third scale exceeded 1e-3 of the largest one.
    std::size_t thick_records = 0;
    bool has_spike_threshold = false;
    std::vector<std::string> warnings;
};

// Reads an ASCII or binary little-endian PLY scene and canonicalizes every
// splat. Records with opacity below the minimum contribution are dropped.
SplatSet read_splats(std::istream& in, const LoadOptions& options = {}, LoadReport* report = nullptr);
SplatSet load_splats(const std::filesystem::path& path, const LoadOptions& options = {},
                     LoadReport* report = nullptr);

// Writes using the set's own layout, or a default float32 binary layout.
void write_splats(std::ostream& out, const SplatSet& set);
void save_splats(const std::filesystem::path& path, const SplatSet& set);

// Plain x/y/z point clouds (reference clouds for evaluation).
std::vector<Vec3> load_points(const std::filesystem::path& path);
void save_points(const std::filesystem::path& path, const std::vector<Vec3>& points,
                 PlyFormat format = PlyFormat::BinaryLittleEndian);

PlyLayout default_layout(PlyFormat format = PlyFormat::BinaryLittleEndian);

}  // namespace splatdeform
