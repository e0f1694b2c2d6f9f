#pragma once

#include "splatdeform/splat_model.hpp"

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace splatdeform {

// Sample layout of the normal-offset estimator. The boundary of the target
// region and the unit circle of the reference region are sampled on a fixed
// angular lattice; interior rings guard against tiny overlaps.
struct NormalOffsetOptions {
    int n_samples = 64;
    int rings = 3;
    int ring_samples = 32;
    // Also offer the exact boundary crossings and per-boundary Z extremes, and
    // locate validity boundaries, zero crossings and local minima between
    // lattice samples instead of reporting the raw lattice minimum.
    bool refine = true;
};

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Smallest |t| such that `to` translated by t along from.normal touches `from`.
// Returns +inf when no translation along the normal produces contact.
// Evaluation stops early once a candidate at or below `stop_at` is found.
double normal_offset(const OccupancyEllipse& from, const OccupancyEllipse& to,
                     const NormalOffsetOptions& options = {}, double stop_at = -1.0);

// Symmetrized epsilon-intersection test: either direction within epsilon.
bool epsilon_intersect(const OccupancyEllipse& a, const OccupancyEllipse& b, double epsilon,
                       const NormalOffsetOptions& options = {});

struct GraphNeighbor {
    std::uint32_t node;
    double weight;
    bool operator==(const GraphNeighbor&) const = default;
};

struct GraphEdge {
    std::uint32_t i;
    std::uint32_t j;
    double weight;
    bool operator==(const GraphEdge&) const = default;
};

// Undirected weighted graph over splat indices. Adjacency lists are sorted by
// neighbor index and mirrored on both endpoints.
class SplatGraph {
public:
    SplatGraph() = default;
    SplatGraph(std::size_t node_count, double epsilon) : epsilon_(epsilon), adjacency_(node_count) {}

    // Edges must satisfy i != j; duplicates collapse to the first weight.
    static SplatGraph from_edges(std::size_t node_count, double epsilon, std::vector<GraphEdge> edges);

    std::size_t node_count() const { return adjacency_.size(); }
    double epsilon() const { return epsilon_; }
    std::span<const GraphNeighbor> neighbors(std::size_t i) const { return adjacency_[i]; }
    std::size_t edge_count() const;
    std::vector<GraphEdge> edges() const;  // i < j, lexicographic

    // Connected component label per node and the number of components.
    std::vector<int> components(int* count = nullptr) const;

    bool operator==(const SplatGraph& other) const {
        return epsilon_ == other.epsilon_ && adjacency_ == other.adjacency_;
    }

private:
    double epsilon_ = 0.0;
    std::vector<std::vector<GraphNeighbor>> adjacency_;
};

struct GraphBuildStats {
    std::size_t candidate_pairs = 0;
    std::size_t edges = 0;
    std::size_t empty_regions = 0;
    int components = 0;
};

// Fixed-radius candidate search over a uniform spatial hash (cell size = the
// largest major semi-axis) followed by the symmetrized intersection test.
SplatGraph build_graph(std::span<const std::optional<OccupancyEllipse>> regions, double epsilon,
                       const NormalOffsetOptions& options = {}, GraphBuildStats* stats = nullptr);
SplatGraph build_graph(const SplatSet& splats, double epsilon, const NormalOffsetOptions& options = {},
                       GraphBuildStats* stats = nullptr);

// Quadratic reference construction; identical edge set to build_graph.
SplatGraph build_graph_all_pairs(std::span<const std::optional<OccupancyEllipse>> regions, double epsilon,
                                 const NormalOffsetOptions& options = {});

struct NodeDistance {
    std::uint32_t node;
    double distance;
    bool operator==(const NodeDistance&) const = default;
};

struct GeodesicNeighborhood {
    std::uint32_t source = 0;
    std::vector<NodeDistance> neighbors;  // ascending distance, source excluded
    bool shortfall = false;               // fewer than k nodes reachable
};

// Dijkstra expansion stopped after k settled non-source nodes. Ties are
// settled in ascending node order.
GeodesicNeighborhood geodesic_knn(const SplatGraph& graph, std::size_t source, std::size_t k);
std::vector<GeodesicNeighborhood> geodesic_neighborhoods(const SplatGraph& graph, std::size_t k);

// Line-oriented text format: header (node count, epsilon, optional metadata)
// followed by one "i j w" line per undirected edge.
void write_graph(std::ostream& out, const SplatGraph& graph,
                 const std::map<std::string, std::string>& metadata = {});
SplatGraph read_graph(std::istream& in, std::map<std::string, std::string>* metadata = nullptr);

}  // namespace splatdeform
