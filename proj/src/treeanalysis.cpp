#include "clintraj/treeanalysis.hpp"

#include "clintraj/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>

namespace clintraj {

std::string to_string(SegmentKind kind) {
    switch (kind) {
        case SegmentKind::internal: return "internal";
        case SegmentKind::terminal: return "terminal";
        case SegmentKind::cycle: return "cycle";
        case SegmentKind::isolated: return "isolated";
    }
    return "internal";
}

std::vector<std::size_t> SegmentDecomposition::segments_of_node(std::size_t v) const {
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < segments.size(); ++s) {
        if (std::find(segments[s].begin(), segments[s].end(), v) != segments[s].end()) out.push_back(s);
    }
    return out;
}

SegmentDecomposition decompose_segments(const PrincipalGraph& g) {
    const auto n = g.node_count();
    const auto deg = g.degrees();
    // Incident (neighbor, edge) pairs in edge index order.
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> inc(n);
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        inc[g.edges[e].a].emplace_back(g.edges[e].b, e);
        inc[g.edges[e].b].emplace_back(g.edges[e].a, e);
    }

    SegmentDecomposition d;
    d.edge_segment.assign(g.edges.size(), std::numeric_limits<std::size_t>::max());
    std::vector<bool> visited(g.edges.size(), false);

    auto walk = [&](std::size_t start, std::size_t first_neighbor, std::size_t first_edge, bool stop_at_start) {
        std::vector<std::size_t> path{start};
        std::vector<std::size_t> edges{first_edge};
        visited[first_edge] = true;
        std::size_t cur = first_neighbor;
        std::size_t via = first_edge;
        while (deg[cur] == 2 && !(stop_at_start && cur == start)) {
            path.push_back(cur);
            std::size_t next_edge = via;
            std::size_t next_node = cur;
            for (const auto& [w, e] : inc[cur]) {
                if (e != via) {
                    next_edge = e;
                    next_node = w;
                    break;
                }
            }
            if (next_edge == via || visited[next_edge]) break;
            visited[next_edge] = true;
            edges.push_back(next_edge);
            via = next_edge;
            cur = next_node;
        }
        if (!(stop_at_start && cur == start)) path.push_back(cur);
        const std::size_t id = d.segments.size();
        for (auto e : edges) d.edge_segment[e] = id;
        return path;
    };

    for (std::size_t v = 0; v < n; ++v) {
        if (deg[v] == 2) continue;
        if (deg[v] == 0) {
            d.segments.push_back({v});
            d.kinds.push_back(SegmentKind::isolated);
            continue;
        }
        for (const auto& [w, e] : inc[v]) {
            if (visited[e]) continue;
            auto path = walk(v, w, e, false);
            const bool leaf_end = deg[path.front()] < 2 || deg[path.back()] < 2;
            d.segments.push_back(std::move(path));
            d.kinds.push_back(leaf_end ? SegmentKind::terminal : SegmentKind::internal);
        }
    }

    // Whatever is left lies on components made only of degree-2 nodes.
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        if (visited[e]) continue;
        auto path = walk(g.edges[e].a, g.edges[e].b, e, true);
        d.segments.push_back(std::move(path));
        d.kinds.push_back(SegmentKind::cycle);
    }
    return d;
}

namespace {

std::vector<std::vector<std::size_t>> node_segments(const SegmentDecomposition& seg, std::size_t n) {
    std::vector<std::vector<std::size_t>> out(n);
    for (std::size_t s = 0; s < seg.segments.size(); ++s) {
        for (auto v : seg.segments[s]) {
            if (out[v].empty() || out[v].back() != s) out[v].push_back(s);
        }
    }
    return out;
}

}  // namespace

std::vector<std::size_t> partition_by_segments(const Points& x, const PrincipalGraph& g,
                                               const SegmentDecomposition& seg) {
    if (x.cols() != g.nodes.cols()) throw PreconditionError("partition_by_segments: dimension mismatch");
    const auto n = g.node_count();
    const auto by_node = node_segments(seg, n);
    std::vector<std::size_t> labels(static_cast<std::size_t>(x.rows()));
    std::vector<double> dist(n);

    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::size_t nearest = 0;
        for (std::size_t j = 0; j < n; ++j) {
            dist[j] = (x.row(i) - g.nodes.row(static_cast<Eigen::Index>(j))).squaredNorm();
            if (dist[j] < dist[nearest]) nearest = j;
        }
        const auto& candidates = by_node[nearest];
        if (candidates.size() == 1) {
            labels[static_cast<std::size_t>(i)] = candidates[0];
            continue;
        }
        std::size_t second = nearest;
        double second_d = std::numeric_limits<double>::infinity();
        for (auto s : candidates) {
            for (auto v : seg.segments[s]) {
                if (v != nearest && dist[v] < second_d) {
                    second_d = dist[v];
                    second = v;
                }
            }
        }
        std::size_t label = candidates.front();
        for (auto s : candidates) {
            const auto& path = seg.segments[s];
            if (std::find(path.begin(), path.end(), second) != path.end()) {
                label = s;
                break;
            }
        }
        labels[static_cast<std::size_t>(i)] = label;
    }
    return labels;
}

std::vector<std::size_t> nearest_edge_segments(const Points& x, const PrincipalGraph& g,
                                               const SegmentDecomposition& seg) {
    std::vector<std::size_t> labels(static_cast<std::size_t>(x.rows()), 0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto p = project_point(x.row(i), g);
        if (p.edge != Projection::no_edge) labels[static_cast<std::size_t>(i)] = seg.edge_segment[p.edge];
    }
    return labels;
}

std::size_t select_root(const PrincipalGraph& g, const PartitionVector& partition, const std::vector<int>& labels,
                        int target_class) {
    if (labels.size() != partition.node.size()) throw PreconditionError("select_root: label count mismatch");
    const double total = static_cast<double>(labels.size());
    const double targets = static_cast<double>(std::count(labels.begin(), labels.end(), target_class));
    if (targets == 0.0) throw PreconditionError("select_root: target class absent from the labels");

    std::vector<double> at_node(g.node_count(), 0.0);
    std::vector<double> target_at_node(g.node_count(), 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        at_node[partition.node[i]] += 1.0;
        if (labels[i] == target_class) target_at_node[partition.node[i]] += 1.0;
    }

    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t v = 0; v < g.node_count(); ++v) {
        const double obs[2][2] = {{target_at_node[v], at_node[v] - target_at_node[v]},
                                  {targets - target_at_node[v], total - at_node[v] - (targets - target_at_node[v])}};
        const double rows[2] = {at_node[v], total - at_node[v]};
        const double cols[2] = {targets, total - targets};
        double chi2 = 0.0;
        bool degenerate = false;
        for (int r = 0; r < 2; ++r) {
            for (int c = 0; c < 2; ++c) {
                const double expected = rows[r] * cols[c] / total;
                if (expected <= 0.0) {
                    degenerate = true;
                    continue;
                }
                chi2 += (obs[r][c] - expected) * (obs[r][c] - expected) / expected;
            }
        }
        const bool enriched = target_at_node[v] > at_node[v] * targets / total;
        const double score = (!degenerate && enriched) ? chi2 : 0.0;
        if (score > best_score) {
            best_score = score;
            best = v;
        }
    }
    return best;
}

std::vector<std::size_t> edge_distances(const PrincipalGraph& g, std::size_t root) {
    if (root >= g.node_count()) throw PreconditionError("root node index out of range");
    const auto adj = g.adjacency();
    std::vector<std::size_t> dist(g.node_count(), std::numeric_limits<std::size_t>::max());
    std::queue<std::size_t> q;
    dist[root] = 0;
    q.push(root);
    while (!q.empty()) {
        const auto v = q.front();
        q.pop();
        for (auto w : adj[v]) {
            if (dist[w] == std::numeric_limits<std::size_t>::max()) {
                dist[w] = dist[v] + 1;
                q.push(w);
            }
        }
    }
    return dist;
}

std::vector<Trajectory> extract_trajectories(const PrincipalGraph& g, std::size_t root) {
    if (!g.is_tree()) throw PreconditionError("extract_trajectories: graph is not a tree");
    if (root >= g.node_count()) throw PreconditionError("root node index out of range");
    const auto adj = g.adjacency();
    std::vector<std::size_t> parent(g.node_count(), root);
    std::vector<bool> seen(g.node_count(), false);
    std::queue<std::size_t> q;
    q.push(root);
    seen[root] = true;
    while (!q.empty()) {
        const auto v = q.front();
        q.pop();
        for (auto w : adj[v]) {
            if (!seen[w]) {
                seen[w] = true;
                parent[w] = v;
                q.push(w);
            }
        }
    }
    std::vector<Trajectory> out;
    for (std::size_t v = 0; v < g.node_count(); ++v) {
        if (v == root || adj[v].size() != 1) continue;
        Trajectory t;
        t.id = out.size();
        for (std::size_t cur = v; cur != root; cur = parent[cur]) t.path.push_back(cur);
        t.path.push_back(root);
        std::reverse(t.path.begin(), t.path.end());
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<std::size_t> PseudotimeAssignment::points_on(std::size_t trajectory) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < trajectories_of_point.size(); ++i) {
        const auto& ids = trajectories_of_point[i];
        if (std::find(ids.begin(), ids.end(), trajectory) != ids.end()) out.push_back(i);
    }
    return out;
}

PseudotimeAssignment compute_pseudotime(const Points& x, const PrincipalGraph& g, std::size_t root,
                                        PseudotimeMetric metric) {
    if (!g.is_tree()) throw PreconditionError("compute_pseudotime: graph is not a tree");
    PseudotimeAssignment out;
    out.root = root;
    const auto hops = edge_distances(g, root);

    // Geodesic distance from the root in the chosen metric.
    std::vector<double> geo(g.node_count(), 0.0);
    std::vector<double> edge_len(g.edges.size(), 1.0);
    if (metric == PseudotimeMetric::euclidean) {
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            edge_len[e] = (g.nodes.row(static_cast<Eigen::Index>(g.edges[e].a)) -
                           g.nodes.row(static_cast<Eigen::Index>(g.edges[e].b)))
                              .norm();
        }
    }
    {
        std::vector<std::size_t> order(g.node_count());
        for (std::size_t v = 0; v < order.size(); ++v) order[v] = v;
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return hops[a] < hops[b]; });
        std::vector<std::vector<std::pair<std::size_t, std::size_t>>> inc(g.node_count());
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            inc[g.edges[e].a].emplace_back(g.edges[e].b, e);
            inc[g.edges[e].b].emplace_back(g.edges[e].a, e);
        }
        for (auto v : order) {
            for (const auto& [w, e] : inc[v]) {
                if (hops[w] == hops[v] + 1) geo[w] = geo[v] + edge_len[e];
            }
        }
    }

    out.trajectories = extract_trajectories(g, root);
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> edge_id;
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        edge_id[{std::min(g.edges[e].a, g.edges[e].b), std::max(g.edges[e].a, g.edges[e].b)}] = e;
    }
    std::vector<std::vector<std::size_t>> edge_traj(g.edges.size());
    for (const auto& t : out.trajectories) {
        for (std::size_t k = 1; k < t.path.size(); ++k) {
            const auto a = t.path[k - 1];
            const auto b = t.path[k];
            edge_traj[edge_id.at({std::min(a, b), std::max(a, b)})].push_back(t.id);
        }
    }

    out.projections = project_points(x, g);
    out.pseudotime.resize(out.projections.size(), 0.0);
    out.trajectories_of_point.resize(out.projections.size());
    for (std::size_t i = 0; i < out.projections.size(); ++i) {
        const auto& p = out.projections[i];
        if (p.edge == Projection::no_edge) continue;
        const auto a = g.edges[p.edge].a;
        const auto b = g.edges[p.edge].b;
        const double step = p.epsilon * edge_len[p.edge];
        out.pseudotime[i] = hops[a] < hops[b] ? geo[a] + step : geo[a] - step;
        out.trajectories_of_point[i] = edge_traj[p.edge];
    }
    return out;
}

}  // namespace clintraj
