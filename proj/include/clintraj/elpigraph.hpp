#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

namespace clintraj {

/// Data points or node positions, one per row, stored row-major so that each
/// point is contiguous.
using Points = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ElasticParams {
    double lambda = 0.05;  // edge stretching
    double mu = 0.1;       // star bending
    double alpha = 0.01;   // branching penalty
    double r0 = std::numeric_limits<double>::infinity();  // trimming radius
    std::size_t n_nodes_target = 50;

    void validate() const;
};

struct Edge {
    std::size_t a = 0;
    std::size_t b = 0;
    friend bool operator==(const Edge&, const Edge&) = default;
};

struct PrincipalGraph {
    Points nodes;
    std::vector<Edge> edges;
    ElasticParams params;

    std::size_t node_count() const { return static_cast<std::size_t>(nodes.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(nodes.cols()); }
    std::vector<std::size_t> degrees() const;
    std::vector<std::vector<std::size_t>> adjacency() const;
    bool is_connected() const;
    bool is_tree() const { return edges.size() + 1 == node_count() && is_connected(); }
};

/// Closest point of the graph viewed as a union of closed segments.
struct Projection {
    static constexpr std::size_t no_edge = std::numeric_limits<std::size_t>::max();

    std::size_t edge = no_edge;  // no_edge only for edgeless graphs
    double epsilon = 0.0;        // 0 at edges[edge].a, 1 at edges[edge].b
    double squared_distance = 0.0;
};

struct PartitionVector {
    std::vector<std::size_t> node;
    std::vector<double> squared_distance;
    std::vector<bool> trimmed;  // farther than r0 from every node
};

struct Energy {
    double total = 0.0;
    double msd = 0.0;
    double u_e = 0.0;
    double u_r = 0.0;
};

/// Edge weight lambda + alpha * (max(2, deg a, deg b) - 2).
double penalized_lambda(const ElasticParams& params, std::size_t deg_a, std::size_t deg_b);

/// Exact nearest node per point; ties go to the lowest node index.
PartitionVector partition_points(const Points& x, const PrincipalGraph& g);

Energy compute_energy(const Points& x, const PrincipalGraph& g, const PartitionVector& partition);

struct FitResult {
    PrincipalGraph graph;
    PartitionVector partition;
    Energy energy;
    std::vector<double> energy_trace;  // energy before the first epoch, then after each epoch
    std::size_t epochs = 0;
    bool converged = false;
};

/// Node positions minimizing the elastic energy for a fixed partition: solves
/// (diag(n_j)/N + L_lambda + mu R'R) Phi = S / N, one system for all coordinates.
Points solve_node_positions(const Points& x, const PrincipalGraph& g, const PartitionVector& partition);

/// Splitting optimizer: alternate partitioning and the exact quadratic solve
/// until the relative energy decrease falls below `tol`.
FitResult fit_nodes(const Points& x, const PrincipalGraph& g, std::size_t max_epochs = 1000, double tol = 1e-6);

enum class GrammarOp { add_node_to_node = 0, bisect_edge = 1 };

struct GrowthStep {
    GrammarOp op = GrammarOp::add_node_to_node;
    std::size_t site = 0;
    std::size_t candidates = 0;
    double energy = 0.0;
};

struct GrowOptions {
    std::size_t candidate_epochs = 10;
    double candidate_tol = 1e-3;
    std::size_t final_epochs = 1000;
    double final_tol = 1e-6;
};

struct GrowResult {
    PrincipalGraph graph;
    Energy energy;
    std::vector<GrowthStep> history;
    std::size_t final_epochs = 0;
};

/// Two nodes on the first principal axis, spanning the interquartile range of
/// the projections, then fitted.
PrincipalGraph initial_segment(const Points& x, const ElasticParams& params);

/// Apply one grammar operation; returns the new graph (unfitted).
PrincipalGraph apply_grammar(const PrincipalGraph& g, GrammarOp op, std::size_t site, const Points& x,
                             const PartitionVector& partition);

/// Greedy topology search with the add-node and bisect-edge grammar until
/// params.n_nodes_target nodes.
GrowResult grow_tree(const Points& x, const ElasticParams& params, const GrowOptions& options = {});

/// Removes every leaf attached directly to a branching node (one pass).
PrincipalGraph prune_tree(const PrincipalGraph& g);

/// Moves each leaf outward along its terminal edge to just past the farthest
/// projection of the points assigned to it.
PrincipalGraph extend_leaves(const Points& x, const PrincipalGraph& g, double margin = 0.05);

Projection project_point(const Eigen::Ref<const Eigen::RowVectorXd>& x, const PrincipalGraph& g);
std::vector<Projection> project_points(const Points& x, const PrincipalGraph& g);

/// 1 - sum of squared distances to the graph / total sum of squares.
double explained_variance(const Points& x, const PrincipalGraph& g);

std::string graph_to_json(const PrincipalGraph& g, unsigned long long seed, std::size_t epochs, double energy);
PrincipalGraph graph_from_json(const std::string& text);

}  // namespace clintraj
