#include "splatdeform/splat_graph.hpp"

#include "splatdeform/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <queue>
#include <sstream>
#include <unordered_map>

namespace splatdeform {

SplatGraph SplatGraph::from_edges(std::size_t node_count, double epsilon, std::vector<GraphEdge> edges) {
    SplatGraph g(node_count, epsilon);
    for (const auto& e : edges) {
        if (e.i == e.j) throw GeometryError("splat_graph", "self-loop on node " + std::to_string(e.i));
        if (e.i >= node_count || e.j >= node_count) {
            throw GeometryError("splat_graph", "edge endpoint out of range");
        }
        g.adjacency_[e.i].push_back({e.j, e.weight});
        g.adjacency_[e.j].push_back({e.i, e.weight});
    }
    for (auto& adj : g.adjacency_) {
        std::stable_sort(adj.begin(), adj.end(), [](const auto& a, const auto& b) { return a.node < b.node; });
        adj.erase(std::unique(adj.begin(), adj.end(), [](const auto& a, const auto& b) { return a.node == b.node; }),
                  adj.end());
    }
    return g;
}

std::size_t SplatGraph::edge_count() const {
    std::size_t total = 0;
    for (const auto& adj : adjacency_) total += adj.size();
    return total / 2;
}

std::vector<GraphEdge> SplatGraph::edges() const {
    std::vector<GraphEdge> out;
    out.reserve(edge_count());
    for (std::uint32_t i = 0; i < adjacency_.size(); ++i) {
        for (const auto& nb : adjacency_[i]) {
            if (nb.node > i) out.push_back({i, nb.node, nb.weight});
        }
    }
    return out;
}

std::vector<int> SplatGraph::components(int* count) const {
    std::vector<int> label(node_count(), -1);
    int next = 0;
    std::vector<std::uint32_t> stack;
    for (std::size_t s = 0; s < node_count(); ++s) {
        if (label[s] >= 0) continue;
        label[s] = next;
        stack.assign(1, static_cast<std::uint32_t>(s));
        while (!stack.empty()) {
            const auto u = stack.back();
            stack.pop_back();
            for (const auto& nb : adjacency_[u]) {
                if (label[nb.node] < 0) {
                    label[nb.node] = next;
                    stack.push_back(nb.node);
                }
            }
        }
        ++next;
    }
    if (count) *count = next;
    return label;
}

namespace {

bool is_candidate(const OccupancyEllipse& a, const OccupancyEllipse& b, double epsilon) {
    const double reach = a.semi_a + b.semi_a + epsilon;
    return (a.center - b.center).squaredNorm() <= reach * reach;
}

SplatGraph assemble(std::span<const std::optional<OccupancyEllipse>> regions, double epsilon,
                    std::vector<std::vector<GraphEdge>>& per_node, GraphBuildStats* stats, std::size_t candidates) {
    std::vector<GraphEdge> edges;
    for (auto& list : per_node) edges.insert(edges.end(), list.begin(), list.end());
    SplatGraph g = SplatGraph::from_edges(regions.size(), epsilon, std::move(edges));
    if (stats) {
        stats->candidate_pairs = candidates;
        stats->edges = g.edge_count();
        stats->empty_regions = static_cast<std::size_t>(
            std::count_if(regions.begin(), regions.end(), [](const auto& r) { return !r.has_value(); }));
        g.components(&stats->components);
    }
    return g;
}

}  // namespace

SplatGraph build_graph(std::span<const std::optional<OccupancyEllipse>> regions, double epsilon,
                       const NormalOffsetOptions& options, GraphBuildStats* stats) {
    if (regions.empty()) throw GeometryError("splat_graph", "cannot build a graph over an empty splat set");
    if (epsilon < 0.0) throw ConfigError("epsilon must be non-negative", "epsilon");
    const std::size_t n = regions.size();

    double cell = 0.0;
    for (const auto& r : regions) {
        if (r) cell = std::max(cell, r->semi_a);
    }
    std::vector<std::vector<GraphEdge>> per_node(n);
    if (cell <= 0.0) return assemble(regions, epsilon, per_node, stats, 0);

    using Key = std::uint64_t;
    auto cell_coord = [&](const Vec3& p) {
        return Eigen::Vector3<std::int64_t>(static_cast<std::int64_t>(std::floor(p.x() / cell)),
                                            static_cast<std::int64_t>(std::floor(p.y() / cell)),
                                            static_cast<std::int64_t>(std::floor(p.z() / cell)));
    };
    auto key_of = [](std::int64_t x, std::int64_t y, std::int64_t z) -> Key {
        const Key mask = (Key{1} << 21) - 1;
        return (static_cast<Key>(x) & mask) | ((static_cast<Key>(y) & mask) << 21) |
               ((static_cast<Key>(z) & mask) << 42);
    };

    // Nodes bucketed by cell, in ascending index within each bucket.
    std::vector<std::pair<Key, std::uint32_t>> order;
    order.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!regions[i]) continue;
        const auto c = cell_coord(regions[i]->center);
        order.emplace_back(key_of(c.x(), c.y(), c.z()), i);
    }
    std::sort(order.begin(), order.end());
    std::unordered_map<Key, std::pair<std::size_t, std::size_t>> buckets;
    buckets.reserve(order.size());
    for (std::size_t b = 0; b < order.size();) {
        std::size_t e = b;
        while (e < order.size() && order[e].first == order[b].first) ++e;
        buckets.emplace(order[b].first, std::make_pair(b, e));
        b = e;
    }

    std::vector<std::size_t> candidate_count(n, 0);
    const auto sn = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 64)
    for (std::int64_t si = 0; si < sn; ++si) {
        const auto i = static_cast<std::uint32_t>(si);
        if (!regions[i]) continue;
        const OccupancyEllipse& ei = *regions[i];
        const auto c = cell_coord(ei.center);
        const auto range = static_cast<std::int64_t>(std::ceil((ei.semi_a + cell + epsilon) / cell));
        auto& out = per_node[i];
        for (std::int64_t dx = -range; dx <= range; ++dx) {
            for (std::int64_t dy = -range; dy <= range; ++dy) {
                for (std::int64_t dz = -range; dz <= range; ++dz) {
                    const auto it = buckets.find(key_of(c.x() + dx, c.y() + dy, c.z() + dz));
                    if (it == buckets.end()) continue;
                    for (std::size_t k = it->second.first; k < it->second.second; ++k) {
                        const std::uint32_t j = order[k].second;
                        if (j <= i) continue;
                        const OccupancyEllipse& ej = *regions[j];
                        if (!is_candidate(ei, ej, epsilon)) continue;
                        ++candidate_count[i];
                        if (epsilon_intersect(ei, ej, epsilon, options)) {
                            out.push_back({i, j, (ei.center - ej.center).norm()});
                        }
                    }
                }
            }
        }
    }
    std::size_t candidates = 0;
    for (auto c : candidate_count) candidates += c;
    return assemble(regions, epsilon, per_node, stats, candidates);
}

SplatGraph build_graph(const SplatSet& splats, double epsilon, const NormalOffsetOptions& options,
                       GraphBuildStats* stats) {
    const auto regions = occupancy_ellipses(splats);
    return build_graph(std::span<const std::optional<OccupancyEllipse>>(regions), epsilon, options, stats);
}

SplatGraph build_graph_all_pairs(std::span<const std::optional<OccupancyEllipse>> regions, double epsilon,
                                 const NormalOffsetOptions& options) {
    if (regions.empty()) throw GeometryError("splat_graph", "cannot build a graph over an empty splat set");
    const std::size_t n = regions.size();
    std::vector<std::vector<GraphEdge>> per_node(n);
    std::size_t candidates = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!regions[i]) continue;
        for (std::uint32_t j = i + 1; j < n; ++j) {
            if (!regions[j] || !is_candidate(*regions[i], *regions[j], epsilon)) continue;
            ++candidates;
            if (epsilon_intersect(*regions[i], *regions[j], epsilon, options)) {
                per_node[i].push_back({i, j, (regions[i]->center - regions[j]->center).norm()});
            }
        }
    }
    return assemble(regions, epsilon, per_node, nullptr, candidates);
}

GeodesicNeighborhood geodesic_knn(const SplatGraph& graph, std::size_t source, std::size_t k) {
    if (source >= graph.node_count()) throw GeometryError("splat_graph", "source node out of range");
    GeodesicNeighborhood out;
    out.source = static_cast<std::uint32_t>(source);
    if (k == 0) return out;

    using Entry = std::pair<double, std::uint32_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    std::unordered_map<std::uint32_t, double> best;
    std::unordered_map<std::uint32_t, bool> settled;
    best[out.source] = 0.0;
    heap.emplace(0.0, out.source);
    while (!heap.empty() && out.neighbors.size() < k) {
        const auto [d, u] = heap.top();
        heap.pop();
        if (settled[u]) continue;
        settled[u] = true;
        if (u != out.source) out.neighbors.push_back({u, d});
        if (out.neighbors.size() >= k) break;
        for (const auto& nb : graph.neighbors(u)) {
            const double nd = d + nb.weight;
            const auto it = best.find(nb.node);
            if (it == best.end() || nd < it->second) {
                best[nb.node] = nd;
                heap.emplace(nd, nb.node);
            }
        }
    }
    out.shortfall = out.neighbors.size() < k;
    return out;
}

std::vector<GeodesicNeighborhood> geodesic_neighborhoods(const SplatGraph& graph, std::size_t k) {
    std::vector<GeodesicNeighborhood> out(graph.node_count());
    const auto n = static_cast<std::int64_t>(graph.node_count());
#pragma omp parallel for schedule(dynamic, 256)
    for (std::int64_t i = 0; i < n; ++i) out[i] = geodesic_knn(graph, static_cast<std::size_t>(i), k);
    return out;
}

void write_graph(std::ostream& out, const SplatGraph& graph, const std::map<std::string, std::string>& metadata) {
    const auto edges = graph.edges();
    char buf[64];
    auto num = [&](double v) {
        const auto res = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, res.ptr);
    };
    out << "splatgraph 1\n";
    out << "nodes " << graph.node_count() << "\n";
    out << "epsilon " << num(graph.epsilon()) << "\n";
    for (const auto& [k, v] : metadata) out << "meta " << k << " " << v << "\n";
    out << "edges " << edges.size() << "\n";
    for (const auto& e : edges) out << e.i << " " << e.j << " " << num(e.weight) << "\n";
}

SplatGraph read_graph(std::istream& in, std::map<std::string, std::string>* metadata) {
    auto fail = [](const std::string& what) { return FormatError("graph file: " + what); };
    std::string line;
    if (!std::getline(in, line) || line != "splatgraph 1") throw fail("bad magic line");
    std::size_t nodes = 0, n_edges = 0;
    double epsilon = 0.0;
    bool have_nodes = false, have_eps = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "nodes") {
            ls >> nodes;
            have_nodes = static_cast<bool>(ls);
        } else if (key == "epsilon") {
            std::string tok;
            ls >> tok;
            const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), epsilon);
            have_eps = res.ec == std::errc{};
        } else if (key == "meta") {
            std::string k;
            ls >> k;
            std::string v;
            std::getline(ls >> std::ws, v);
            if (metadata) (*metadata)[k] = v;
        } else if (key == "edges") {
            ls >> n_edges;
            if (!ls) throw fail("bad edge count");
            break;
        } else {
            throw fail("unexpected header line '" + line + "'");
        }
    }
    if (!have_nodes || !have_eps) throw fail("missing nodes/epsilon header");
    std::vector<GraphEdge> edges;
    edges.reserve(n_edges);
    for (std::size_t e = 0; e < n_edges; ++e) {
        if (!std::getline(in, line)) throw fail("truncated edge list");
        std::istringstream ls(line);
        std::uint64_t i = 0, j = 0;
        std::string wtok;
        ls >> i >> j >> wtok;
        double w = 0.0;
        const auto res = std::from_chars(wtok.data(), wtok.data() + wtok.size(), w);
        if (!ls || res.ec != std::errc{} || i >= nodes || j >= nodes || i == j || !(w >= 0.0)) {
            throw fail("malformed edge line " + std::to_string(e));
        }
        edges.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), w});
    }
    return SplatGraph::from_edges(nodes, epsilon, std::move(edges));
}

}  // namespace splatdeform
