#pragma once

#include "clintraj/elpigraph.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace clintraj {

struct GraphLayout {
    Eigen::MatrixX2d node_xy;
    std::vector<double> stress_trace;  // initial stress, then one value per accepted step
    std::size_t iterations = 0;
};

/// Kamada-Kawai stress sum_{i<j} d_ij^-2 (|x_i - x_j| - d_ij)^2 over graph
/// distances, from a classical MDS start, by gradient descent with backtracking.
GraphLayout layout_graph(const PrincipalGraph& g, std::size_t max_iter = 5000, double tol = 1e-10);

double layout_stress(const PrincipalGraph& g, const Eigen::MatrixX2d& node_xy);

struct PointLayout {
    Eigen::MatrixX2d point_xy;
    std::vector<int> side;        // +1 / -1
    std::vector<double> residual; // full-dimensional distance to the projection
    double scattering = 0.0;
};

/// Scattering that makes the median offset a quarter of the median drawn edge length.
double default_scattering(const std::vector<Projection>& projections, const PrincipalGraph& g,
                          const Eigen::MatrixX2d& node_xy);

/// Each point drawn at the 2D image of its projection, moved perpendicular to
/// the drawn edge by s * residual on a seeded random side.
PointLayout layout_points(const Points& x, const PrincipalGraph& g, const Eigen::MatrixX2d& node_xy,
                          std::optional<double> scattering, std::uint64_t seed);

/// Edge width from the mean value of the points assigned to either endpoint,
/// min/max normalized into [min_width, max_width]. Edges without points and
/// constant variables get `min_width`. NaN values are ignored.
std::vector<double> edge_widths(const PrincipalGraph& g, const std::vector<double>& values,
                                const PartitionVector& partition, double min_width = 1.0, double max_width = 6.0);

struct NodeComposition {
    std::vector<std::string> categories;  // sorted
    Eigen::MatrixXd fractions;            // nodes x categories; zero rows at empty nodes
    std::vector<std::size_t> counts;
};

NodeComposition node_composition(const PrincipalGraph& g, const std::vector<std::string>& labels,
                                 const PartitionVector& partition);

struct Layout2D {
    std::vector<Edge> edges;
    Eigen::MatrixX2d node_xy;
    Eigen::MatrixX2d point_xy;
    double scattering = 0.0;
    std::vector<double> widths;              // per edge; empty means uniform
    std::optional<NodeComposition> composition;
    std::vector<std::string> point_classes;  // colors points; empty means one color
    std::optional<std::size_t> root;
};

struct SvgStyle {
    double width = 800.0;
    double height = 800.0;
    double margin = 40.0;
    double node_radius = 3.0;
    double point_radius = 1.5;
    double pie_radius = 12.0;
    std::string title;
};

/// SVG 1.1 document. Leaf nodes carry class "leaf", the root class "root".
std::string render_svg(const Layout2D& layout, const SvgStyle& style = {});

std::string layout_to_json(const Layout2D& layout);

}  // namespace clintraj
