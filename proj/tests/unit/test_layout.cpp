#include "clintraj/error.hpp"
#include "clintraj/layout.hpp"
#include "clintraj/treeanalysis.hpp"

#include "synthetic.hpp"

#include <gtest/gtest.h>

using namespace clintraj;

namespace {

std::size_t count_of(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
    return n;
}

Layout2D basic_layout(const PrincipalGraph& g, const Points& x, std::uint64_t seed) {
    Layout2D l;
    l.edges = g.edges;
    l.node_xy = layout_graph(g).node_xy;
    const auto pts = layout_points(x, g, l.node_xy, std::nullopt, seed);
    l.point_xy = pts.point_xy;
    l.scattering = pts.scattering;
    return l;
}

}  // namespace

TEST(GraphLayout, TwoNodesAtUnitDistance) {
    const auto l = layout_graph(synth::path_graph(2));
    EXPECT_NEAR((l.node_xy.row(0) - l.node_xy.row(1)).norm(), 1.0, 1e-9);
}

TEST(GraphLayout, PathIsNearlyCollinear) {
    PrincipalGraph g = synth::path_graph(10, 5);
    std::mt19937_64 rng(1);
    g.nodes = synth::gaussian(10, 5, rng);  // geometry must not matter
    const auto l = layout_graph(g);
    const Eigen::RowVector2d a = l.node_xy.row(0);
    const Eigen::RowVector2d b = l.node_xy.row(9);
    const Eigen::RowVector2d u = (b - a).normalized();
    const double length = (b - a).norm();
    for (Eigen::Index i = 0; i < 10; ++i) {
        const Eigen::RowVector2d d = l.node_xy.row(i) - a;
        EXPECT_LT(std::abs(d(0) * u(1) - d(1) * u(0)), 0.05 * length);
    }
}

TEST(GraphLayout, StressDecreasesAndMatchesReportedValue) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const auto g = synth::random_tree(5 + rng() % 30, rng);
        const auto l = layout_graph(g);
        ASSERT_FALSE(l.stress_trace.empty());
        for (std::size_t i = 1; i < l.stress_trace.size(); ++i) EXPECT_LE(l.stress_trace[i], l.stress_trace[i - 1]);
        EXPECT_NEAR(l.stress_trace.back(), layout_stress(g, l.node_xy), 1e-9 * (1 + l.stress_trace.back()));
        EXPECT_TRUE(l.node_xy.allFinite());
    }
}

TEST(GraphLayout, DisconnectedIsAnError) {
    PrincipalGraph g;
    g.nodes = synth::path_graph(3).nodes;
    g.edges = {{0, 1}};
    EXPECT_THROW(layout_graph(g), PreconditionError);
}

TEST(PointLayout, OffsetsArePerpendicularAndProportional) {
    std::mt19937_64 rng(3);
    const auto g = synth::random_tree(12, rng, 4);
    const auto x = synth::gaussian(300, 4, rng);
    const auto node_xy = layout_graph(g).node_xy;
    const auto proj = project_points(x, g);
    const auto one = layout_points(x, g, node_xy, 1.0, 7);
    const auto two = layout_points(x, g, node_xy, 2.0, 7);
    const auto zero = layout_points(x, g, node_xy, 0.0, 7);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto& p = proj[static_cast<std::size_t>(i)];
        const auto& e = g.edges[p.edge];
        const Eigen::RowVector2d a = node_xy.row(static_cast<Eigen::Index>(e.a));
        const Eigen::RowVector2d b = node_xy.row(static_cast<Eigen::Index>(e.b));
        const Eigen::RowVector2d foot = a + p.epsilon * (b - a);
        const Eigen::RowVector2d off1 = one.point_xy.row(i) - foot;
        const Eigen::RowVector2d off2 = two.point_xy.row(i) - foot;
        EXPECT_LT(std::abs(off1.dot(b - a)), 1e-9 * (1 + off1.norm() * (b - a).norm()));
        EXPECT_NEAR(off1.norm(), std::sqrt(p.squared_distance), 1e-9);
        EXPECT_NEAR((off2 - 2.0 * off1).norm(), 0.0, 1e-9);
        EXPECT_NEAR((zero.point_xy.row(i) - foot).norm(), 0.0, 1e-12);
    }
}

TEST(PointLayout, PointOnGraphHasNoOffset) {
    const auto g = synth::path_graph(3);
    Points x(1, 2);
    x << 1.5, 0.0;
    const auto node_xy = layout_graph(g).node_xy;
    const auto l = layout_points(x, g, node_xy, 3.0, 1);
    const Eigen::RowVector2d expected = 0.5 * (node_xy.row(1) + node_xy.row(2));
    EXPECT_NEAR((l.point_xy.row(0) - expected).norm(), 0.0, 1e-12);
}

TEST(PointLayout, DefaultScatteringHitsQuarterEdge) {
    std::mt19937_64 rng(4);
    const auto g = synth::random_tree(9, rng, 3);
    const auto x = synth::gaussian(201, 3, rng);
    const auto node_xy = layout_graph(g).node_xy;
    const auto l = layout_points(x, g, node_xy, std::nullopt, 5);
    std::vector<double> lengths, offsets;
    for (const auto& e : g.edges) lengths.push_back((node_xy.row(static_cast<Eigen::Index>(e.a)) - node_xy.row(static_cast<Eigen::Index>(e.b))).norm());
    for (double r : l.residual) if (r > 0) offsets.push_back(l.scattering * r);
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const auto n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    EXPECT_NEAR(median(offsets), 0.25 * median(lengths), 1e-9);
}

TEST(PointLayout, SidesDependOnlyOnSeed) {
    std::mt19937_64 rng(5);
    const auto g = synth::random_tree(6, rng, 2);
    const auto x = synth::gaussian(100, 2, rng);
    const auto node_xy = layout_graph(g).node_xy;
    EXPECT_EQ(layout_points(x, g, node_xy, 1.0, 3).side, layout_points(x, g, node_xy, 1.0, 3).side);
    EXPECT_NE(layout_points(x, g, node_xy, 1.0, 3).side, layout_points(x, g, node_xy, 1.0, 4).side);
}

TEST(EdgeWidths, ConstantEmptyAndLocalized) {
    const auto g = synth::path_graph(5);
    Points x(50, 2);
    for (Eigen::Index i = 0; i < 50; ++i) x.row(i) << (i % 4) + 0.1, 0.0;  // nothing near node 4
    const auto part = partition_points(x, g);
    const auto same = edge_widths(g, std::vector<double>(50, 3.0), part);
    for (double w : same) EXPECT_EQ(w, same[0]);

    std::vector<double> near_end(50, 0.0);
    for (Eigen::Index i = 0; i < 50; ++i) near_end[static_cast<std::size_t>(i)] = part.node[static_cast<std::size_t>(i)] == 3 ? 1.0 : 0.0;
    const auto w = edge_widths(g, near_end, part);
    EXPECT_EQ(w[3], 6.0);  // edge 3-4: only node 3 has points, all ones
    EXPECT_EQ(w[0], 1.0);

    Points far(3, 2);
    far << 0, 0, 0.1, 0, 4, 0;
    const auto p2 = partition_points(far, g);
    const auto w2 = edge_widths(g, {1.0, 2.0, 5.0}, p2);
    EXPECT_EQ(w2[1], 1.0);  // nodes 1 and 2 have no points
}

TEST(Composition, FractionsAndEmptyNodes) {
    const auto g = synth::path_graph(3);
    Points x(4, 2);
    x << 0, 0, 0.1, 0, 0.2, 0, 2, 0;
    const auto part = partition_points(x, g);
    const auto c = node_composition(g, {"b", "a", "b", "a"}, part);
    EXPECT_EQ(c.categories, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(c.counts, (std::vector<std::size_t>{3, 0, 1}));
    EXPECT_NEAR(c.fractions.row(0).sum(), 1.0, 1e-12);
    EXPECT_NEAR(c.fractions(0, 1), 2.0 / 3.0, 1e-15);
    EXPECT_EQ(c.fractions.row(1).sum(), 0.0);

    const auto single = node_composition(g, {"z", "z", "z", "z"}, part);
    EXPECT_EQ(single.fractions(0, 0), 1.0);
    EXPECT_EQ(single.fractions(2, 0), 1.0);
}

TEST(Svg, DeterministicWithLeafCount) {
    const auto x = synth::y_cloud(6, 80);
    ElasticParams p;
    p.n_nodes_target = 12;
    const auto g = grow_tree(x, p).graph;
    auto a = basic_layout(g, x, 11);
    const auto b = basic_layout(g, x, 11);
    std::size_t root = 0;
    const auto deg = g.degrees();
    while (deg[root] != 1) ++root;
    a.root = root;
    auto b2 = b;
    b2.root = root;
    const auto svg = render_svg(a);
    EXPECT_EQ(svg, render_svg(b2));
    EXPECT_EQ(count_of(svg, "class=\"node leaf\""), extract_trajectories(g, root).size());
    EXPECT_EQ(count_of(svg, "class=\"node root\""), 1u);
    EXPECT_EQ(count_of(svg, "class=\"point\""), static_cast<std::size_t>(x.rows()));
    EXPECT_EQ(count_of(svg, "class=\"edge\""), g.edges.size());
}

TEST(Svg, EmptyPointsGiveSkeleton) {
    const auto g = synth::path_graph(4);
    Layout2D l;
    l.edges = g.edges;
    l.node_xy = layout_graph(g).node_xy;
    l.point_xy.resize(0, 2);
    const auto svg = render_svg(l);
    EXPECT_EQ(count_of(svg, "class=\"point\""), 0u);
    EXPECT_EQ(count_of(svg, "class=\"edge\""), 3u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    EXPECT_NE(layout_to_json(l).find("\"compositions\": null"), std::string::npos);
}
