#include "clintraj/elpigraph.hpp"

#include "clintraj/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace clintraj {

void ElasticParams::validate() const {
    if (!(lambda > 0.0)) throw ConfigError("elastic.lambda must be positive");
    if (!(mu >= 0.0)) throw ConfigError("elastic.mu must be non-negative");
    if (!(alpha >= 0.0)) throw ConfigError("elastic.alpha must be non-negative");
    if (!(r0 > 0.0)) throw ConfigError("elastic.r0 must be positive");
}

std::vector<std::size_t> PrincipalGraph::degrees() const {
    std::vector<std::size_t> deg(node_count(), 0);
    for (const auto& e : edges) {
        ++deg.at(e.a);
        ++deg.at(e.b);
    }
    return deg;
}

std::vector<std::vector<std::size_t>> PrincipalGraph::adjacency() const {
    std::vector<std::vector<std::size_t>> adj(node_count());
    for (const auto& e : edges) {
        adj.at(e.a).push_back(e.b);
        adj.at(e.b).push_back(e.a);
    }
    return adj;
}

bool PrincipalGraph::is_connected() const {
    const auto n = node_count();
    if (n == 0) return true;
    const auto adj = adjacency();
    std::vector<bool> seen(n, false);
    std::vector<std::size_t> stack{0};
    seen[0] = true;
    std::size_t visited = 1;
    while (!stack.empty()) {
        const auto v = stack.back();
        stack.pop_back();
        for (auto w : adj[v]) {
            if (!seen[w]) {
                seen[w] = true;
                ++visited;
                stack.push_back(w);
            }
        }
    }
    return visited == n;
}

double penalized_lambda(const ElasticParams& params, std::size_t deg_a, std::size_t deg_b) {
    const std::size_t d = std::max<std::size_t>({2, deg_a, deg_b});
    return params.lambda + params.alpha * static_cast<double>(d - 2);
}

// ---------------------------------------------------------------------------
// Partition and energy

PartitionVector partition_points(const Points& x, const PrincipalGraph& g) {
    if (g.node_count() == 0) throw PreconditionError("partition_points: graph has no nodes");
    if (x.cols() != g.nodes.cols()) {
        throw PreconditionError("partition_points: data dimension " + std::to_string(x.cols()) +
                                " does not match node dimension " + std::to_string(g.nodes.cols()));
    }
    const auto n = static_cast<std::size_t>(x.rows());
    const auto m = static_cast<std::size_t>(x.cols());
    const auto k = g.node_count();
    const double r2 = g.params.r0 * g.params.r0;
    PartitionVector p;
    p.node.resize(n);
    p.squared_distance.resize(n);
    p.trimmed.resize(n);
    const double* nodes = g.nodes.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.data() + i * m;
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) {
            const double* v = nodes + j * m;
            double d = 0.0;
            for (std::size_t c = 0; c < m; ++c) {
                const double diff = xi[c] - v[c];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        p.node[i] = best;
        p.squared_distance[i] = best_d;
        p.trimmed[i] = best_d > r2;
    }
    return p;
}

Energy compute_energy(const Points& x, const PrincipalGraph& g, const PartitionVector& partition) {
    Energy e;
    const double r2 = g.params.r0 * g.params.r0;
    const auto n = partition.squared_distance.size();
    if (n) {
        double sum = 0.0;
        for (double d : partition.squared_distance) sum += std::min(d, r2);
        e.msd = sum / static_cast<double>(n);
    }
    (void)x;

    const auto deg = g.degrees();
    for (const auto& edge : g.edges) {
        const double w = penalized_lambda(g.params, deg[edge.a], deg[edge.b]);
        e.u_e += w * (g.nodes.row(static_cast<Eigen::Index>(edge.a)) - g.nodes.row(static_cast<Eigen::Index>(edge.b))).squaredNorm();
    }

    const auto adj = g.adjacency();
    for (std::size_t c = 0; c < adj.size(); ++c) {
        if (adj[c].size() < 2) continue;
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(g.nodes.cols());
        for (auto l : adj[c]) mean += g.nodes.row(static_cast<Eigen::Index>(l));
        mean /= static_cast<double>(adj[c].size());
        e.u_r += g.params.mu * (g.nodes.row(static_cast<Eigen::Index>(c)) - mean).squaredNorm();
    }
    e.total = e.msd + e.u_e + e.u_r;
    return e;
}

// ---------------------------------------------------------------------------
// Splitting optimizer

Points solve_node_positions(const Points& x, const PrincipalGraph& g, const PartitionVector& partition) {
    const auto k = static_cast<Eigen::Index>(g.node_count());
    const auto m = x.cols();
    const auto n = static_cast<std::size_t>(x.rows());
    const double inv_n = n ? 1.0 / static_cast<double>(n) : 0.0;

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, k);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(k, m);
    for (std::size_t i = 0; i < n; ++i) {
        if (partition.trimmed[i]) continue;
        const auto j = static_cast<Eigen::Index>(partition.node[i]);
        a(j, j) += inv_n;
        rhs.row(j) += x.row(static_cast<Eigen::Index>(i)) * inv_n;
    }

    const auto deg = g.degrees();
    for (const auto& e : g.edges) {
        const double w = penalized_lambda(g.params, deg[e.a], deg[e.b]);
        const auto ia = static_cast<Eigen::Index>(e.a);
        const auto ib = static_cast<Eigen::Index>(e.b);
        a(ia, ia) += w;
        a(ib, ib) += w;
        a(ia, ib) -= w;
        a(ib, ia) -= w;
    }

    if (g.params.mu > 0.0) {
        const auto adj = g.adjacency();
        for (std::size_t c = 0; c < adj.size(); ++c) {
            const auto kk = adj[c].size();
            if (kk < 2) continue;
            // r = e_c - (1/kk) sum_l e_l; add mu * r r'.
            std::vector<std::pair<Eigen::Index, double>> r;
            r.emplace_back(static_cast<Eigen::Index>(c), 1.0);
            for (auto l : adj[c]) r.emplace_back(static_cast<Eigen::Index>(l), -1.0 / static_cast<double>(kk));
            for (const auto& [i, vi] : r) {
                for (const auto& [j, vj] : r) a(i, j) += g.params.mu * vi * vj;
            }
        }
    }

    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("elastic system is singular: a node has no data and no elastic coupling");
    }
    Points out = llt.solve(rhs);
    if (!out.allFinite()) throw NumericalError("elastic system produced non-finite node positions");
    return out;
}

FitResult fit_nodes(const Points& x, const PrincipalGraph& g, std::size_t max_epochs, double tol) {
    if (!g.is_connected()) throw PreconditionError("fit_nodes: graph must be connected");
    FitResult r;
    r.graph = g;
    r.partition = partition_points(x, r.graph);
    r.energy = compute_energy(x, r.graph, r.partition);
    r.energy_trace.push_back(r.energy.total);

    for (std::size_t epoch = 0; epoch < max_epochs; ++epoch) {
        r.graph.nodes = solve_node_positions(x, r.graph, r.partition);
        r.partition = partition_points(x, r.graph);
        const double previous = r.energy.total;
        r.energy = compute_energy(x, r.graph, r.partition);
        r.energy_trace.push_back(r.energy.total);
        r.epochs = epoch + 1;
        if (previous - r.energy.total <= tol * std::abs(previous)) {
            r.converged = true;
            break;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Topology search

PrincipalGraph initial_segment(const Points& x, const ElasticParams& params) {
    const auto n = x.rows();
    if (n < 2) throw PreconditionError("need at least 2 data points");
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mean;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered.transpose() * centered);
    Eigen::VectorXd axis = eig.eigenvectors().col(x.cols() - 1);

    Eigen::VectorXd t = centered * axis;
    // Orient the axis by the data: first point with a non-negligible projection
    // lies on the positive side.
    const double scale = t.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::abs(t(i)) > 1e-9 * scale) {
            if (t(i) < 0) {
                axis = -axis;
                t = -t;
            }
            break;
        }
    }

    std::vector<double> sorted(t.data(), t.data() + n);
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(sorted.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, sorted.size() - 1);
        return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    };
    double lo = quantile(0.25);
    double hi = quantile(0.75);
    if (!(hi > lo)) {
        const double sd = std::sqrt(t.squaredNorm() / static_cast<double>(n));
        lo = -sd;
        hi = sd;
    }

    PrincipalGraph g;
    g.params = params;
    g.nodes.resize(2, x.cols());
    g.nodes.row(0) = mean + lo * axis.transpose();
    g.nodes.row(1) = mean + hi * axis.transpose();
    g.edges.push_back({0, 1});
    return g;
}

PrincipalGraph apply_grammar(const PrincipalGraph& g, GrammarOp op, std::size_t site, const Points& x,
                             const PartitionVector& partition) {
    PrincipalGraph out = g;
    const auto k = static_cast<Eigen::Index>(g.node_count());
    out.nodes.conservativeResize(k + 1, Eigen::NoChange);
    const auto fresh = static_cast<std::size_t>(k);

    if (op == GrammarOp::add_node_to_node) {
        if (site >= g.node_count()) throw PreconditionError("add_node_to_node: node index out of range");
        const auto adj = g.adjacency();
        const auto v = static_cast<Eigen::Index>(site);
        if (adj[site].size() == 1) {
            // Leaf: continue the terminal edge.
            const auto nb = static_cast<Eigen::Index>(adj[site][0]);
            out.nodes.row(k) = 2.0 * g.nodes.row(v) - g.nodes.row(nb);
        } else {
            Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(g.nodes.cols());
            std::size_t count = 0;
            for (std::size_t i = 0; i < partition.node.size(); ++i) {
                if (partition.node[i] == site && !partition.trimmed[i]) {
                    sum += x.row(static_cast<Eigen::Index>(i));
                    ++count;
                }
            }
            out.nodes.row(k) = count ? Eigen::RowVectorXd(sum / static_cast<double>(count)) : Eigen::RowVectorXd(g.nodes.row(v));
        }
        out.edges.push_back({site, fresh});
    } else {
        if (site >= g.edges.size()) throw PreconditionError("bisect_edge: edge index out of range");
        const Edge e = g.edges[site];
        out.nodes.row(k) = 0.5 * (g.nodes.row(static_cast<Eigen::Index>(e.a)) + g.nodes.row(static_cast<Eigen::Index>(e.b)));
        out.edges[site] = {e.a, fresh};
        out.edges.push_back({fresh, e.b});
    }
    return out;
}

GrowResult grow_tree(const Points& x, const ElasticParams& params, const GrowOptions& options) {
    params.validate();
    if (params.n_nodes_target < 2) throw PreconditionError("grow_tree: n_nodes_target must be at least 2");
    if (static_cast<std::size_t>(x.rows()) < params.n_nodes_target) {
        throw PreconditionError("grow_tree: " + std::to_string(x.rows()) + " data points but " +
                                std::to_string(params.n_nodes_target) + " nodes requested");
    }

    GrowResult result;
    FitResult current = fit_nodes(x, initial_segment(x, params), options.final_epochs, options.final_tol);

    while (current.graph.node_count() < params.n_nodes_target) {
        const auto& g = current.graph;
        FitResult best;
        bool have_best = false;
        GrowthStep step;
        std::size_t candidates = 0;

        for (GrammarOp op : {GrammarOp::add_node_to_node, GrammarOp::bisect_edge}) {
            const std::size_t sites = op == GrammarOp::add_node_to_node ? g.node_count() : g.edges.size();
            for (std::size_t site = 0; site < sites; ++site) {
                ++candidates;
                auto fitted = fit_nodes(x, apply_grammar(g, op, site, x, current.partition), options.candidate_epochs,
                                        options.candidate_tol);
                if (!have_best || fitted.energy.total < best.energy.total) {
                    best = std::move(fitted);
                    have_best = true;
                    step.op = op;
                    step.site = site;
                }
            }
        }
        step.candidates = candidates;
        step.energy = best.energy.total;
        result.history.push_back(step);
        current = std::move(best);
    }

    current = fit_nodes(x, current.graph, options.final_epochs, options.final_tol);
    result.graph = current.graph;
    result.energy = current.energy;
    result.final_epochs = current.epochs;
    return result;
}

// ---------------------------------------------------------------------------
// Post-processing

PrincipalGraph prune_tree(const PrincipalGraph& g) {
    if (!g.is_tree()) throw PreconditionError("prune_tree: graph is not a tree");
    const auto deg = g.degrees();
    const auto adj = g.adjacency();
    std::vector<bool> remove(g.node_count(), false);
    std::size_t removed = 0;
    for (std::size_t v = 0; v < g.node_count(); ++v) {
        if (deg[v] == 1 && deg[adj[v][0]] > 2) {
            remove[v] = true;
            ++removed;
        }
    }
    if (removed == 0) return g;
    if (g.node_count() - removed < 2) throw PreconditionError("prune_tree: pruning would leave fewer than 2 nodes");

    std::vector<std::size_t> new_index(g.node_count(), Projection::no_edge);
    PrincipalGraph out;
    out.params = g.params;
    out.nodes.resize(static_cast<Eigen::Index>(g.node_count() - removed), g.nodes.cols());
    std::size_t next = 0;
    for (std::size_t v = 0; v < g.node_count(); ++v) {
        if (remove[v]) continue;
        new_index[v] = next;
        out.nodes.row(static_cast<Eigen::Index>(next)) = g.nodes.row(static_cast<Eigen::Index>(v));
        ++next;
    }
    for (const auto& e : g.edges) {
        if (remove[e.a] || remove[e.b]) continue;
        out.edges.push_back({new_index[e.a], new_index[e.b]});
    }
    return out;
}

PrincipalGraph extend_leaves(const Points& x, const PrincipalGraph& g, double margin) {
    PrincipalGraph out = g;
    if (g.node_count() < 2) return out;
    const auto partition = partition_points(x, g);
    const auto adj = g.adjacency();
    for (std::size_t leaf = 0; leaf < g.node_count(); ++leaf) {
        if (adj[leaf].size() != 1) continue;
        const auto l = static_cast<Eigen::Index>(leaf);
        const auto nb = static_cast<Eigen::Index>(adj[leaf][0]);
        const Eigen::RowVectorXd dir = g.nodes.row(l) - g.nodes.row(nb);
        const double length = dir.norm();
        if (!(length > 0.0)) continue;
        const Eigen::RowVectorXd u = dir / length;
        double reach = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < partition.node.size(); ++i) {
            if (partition.node[i] != leaf) continue;
            reach = std::max(reach, (x.row(static_cast<Eigen::Index>(i)) - g.nodes.row(nb)).dot(u));
        }
        if (reach > length) out.nodes.row(l) = g.nodes.row(nb) + (reach + margin * length) * u;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Projection

Projection project_point(const Eigen::Ref<const Eigen::RowVectorXd>& x, const PrincipalGraph& g) {
    if (x.size() != g.nodes.cols()) throw PreconditionError("project_point: dimension mismatch");
    Projection best;
    best.squared_distance = std::numeric_limits<double>::infinity();
    if (g.edges.empty()) {
        for (Eigen::Index j = 0; j < g.nodes.rows(); ++j) {
            const double d = (x - g.nodes.row(j)).squaredNorm();
            if (d < best.squared_distance) best.squared_distance = d;
        }
        return best;
    }
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const auto a = g.nodes.row(static_cast<Eigen::Index>(g.edges[e].a));
        const auto b = g.nodes.row(static_cast<Eigen::Index>(g.edges[e].b));
        const Eigen::RowVectorXd ab = b - a;
        const double len2 = ab.squaredNorm();
        double t = len2 > 0.0 ? (x - a).dot(ab) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double d = (x - (a + t * ab)).squaredNorm();
        if (d < best.squared_distance) {
            best.edge = e;
            best.epsilon = t;
            best.squared_distance = d;
        }
    }
    return best;
}

std::vector<Projection> project_points(const Points& x, const PrincipalGraph& g) {
    std::vector<Projection> out;
    out.reserve(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) out.push_back(project_point(x.row(i), g));
    return out;
}

double explained_variance(const Points& x, const PrincipalGraph& g) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const double total = (x.rowwise() - mean).squaredNorm();
    if (!(total > 0.0)) throw PreconditionError("explained_variance: data has zero total variance");
    double residual = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) residual += project_point(x.row(i), g).squared_distance;
    return 1.0 - residual / total;
}

// ---------------------------------------------------------------------------
// Persistence

std::string graph_to_json(const PrincipalGraph& g, unsigned long long seed, std::size_t epochs, double energy) {
    nlohmann::ordered_json doc;
    nlohmann::ordered_json nodes = nlohmann::ordered_json::array();
    for (Eigen::Index j = 0; j < g.nodes.rows(); ++j) {
        std::vector<double> row(g.nodes.row(j).data(), g.nodes.row(j).data() + g.nodes.cols());
        nodes.push_back(row);
    }
    nlohmann::ordered_json edges = nlohmann::ordered_json::array();
    for (const auto& e : g.edges) edges.push_back({e.a, e.b});
    doc["nodes"] = std::move(nodes);
    doc["edges"] = std::move(edges);
    nlohmann::ordered_json params;
    params["lambda"] = g.params.lambda;
    params["mu"] = g.params.mu;
    params["alpha"] = g.params.alpha;
    params["r0"] = std::isinf(g.params.r0) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(g.params.r0);
    params["n_nodes_target"] = g.params.n_nodes_target;
    doc["params"] = std::move(params);
    doc["provenance"] = {{"seed", seed}, {"epochs", epochs}, {"energy", energy}};
    return doc.dump(1);
}

PrincipalGraph graph_from_json(const std::string& text) {
    PrincipalGraph g;
    try {
        const auto doc = nlohmann::json::parse(text);
        const auto& nodes = doc.at("nodes");
        const auto k = static_cast<Eigen::Index>(nodes.size());
        const auto m = k ? static_cast<Eigen::Index>(nodes[0].size()) : 0;
        g.nodes.resize(k, m);
        for (Eigen::Index j = 0; j < k; ++j) {
            if (static_cast<Eigen::Index>(nodes[static_cast<std::size_t>(j)].size()) != m) throw DataError("graph JSON: ragged node coordinates");
            for (Eigen::Index c = 0; c < m; ++c) g.nodes(j, c) = nodes[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)].get<double>();
        }
        for (const auto& e : doc.at("edges")) {
            Edge edge{e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>()};
            if (edge.a >= g.node_count() || edge.b >= g.node_count()) throw DataError("graph JSON: edge references missing node");
            g.edges.push_back(edge);
        }
        if (doc.contains("params")) {
            const auto& p = doc["params"];
            g.params.lambda = p.value("lambda", g.params.lambda);
            g.params.mu = p.value("mu", g.params.mu);
            g.params.alpha = p.value("alpha", g.params.alpha);
            if (p.contains("r0") && !p["r0"].is_null()) g.params.r0 = p["r0"].get<double>();
            g.params.n_nodes_target = p.value("n_nodes_target", g.params.n_nodes_target);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("graph JSON: ") + e.what());
    }
    return g;
}

}  // namespace clintraj
