#include "clintraj/elpigraph.hpp"
#include "clintraj/error.hpp"

#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <functional>

using namespace clintraj;

namespace {

Points rows_1d(std::initializer_list<double> values) {
    Points x(static_cast<Eigen::Index>(values.size()), 1);
    Eigen::Index i = 0;
    for (double v : values) x(i++, 0) = v;
    return x;
}

PrincipalGraph star3(double center_x, double center_y) {
    PrincipalGraph g;
    g.nodes.resize(4, 2);
    g.nodes << center_x, center_y, 1, 0, -0.5, std::sqrt(3.0) / 2, -0.5, -std::sqrt(3.0) / 2;
    g.edges = {{0, 1}, {0, 2}, {0, 3}};
    return g;
}

// Compass search from `start`, halving the step when no coordinate move helps.
double pattern_search(std::vector<double> v, const std::function<double(const std::vector<double>&)>& f, double step) {
    double best = f(v);
    while (step > 1e-9) {
        bool improved = false;
        for (std::size_t i = 0; i < v.size(); ++i) {
            for (double dir : {-1.0, 1.0}) {
                auto trial = v;
                trial[i] += dir * step;
                const double value = f(trial);
                if (value < best) {
                    best = value;
                    v = trial;
                    improved = true;
                }
            }
        }
        if (!improved) step *= 0.5;
    }
    return best;
}

// Elastic energy of a 1D path written out directly: nearest-node squared
// distance, stretching of each edge, bending at interior nodes.
double path_energy_1d(const Points& x, const std::vector<double>& nodes, double lambda, double mu) {
    double msd = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double best = 1e300;
        for (double v : nodes) best = std::min(best, (x(i, 0) - v) * (x(i, 0) - v));
        msd += best;
    }
    msd /= static_cast<double>(x.rows());
    double ue = 0.0;
    for (std::size_t j = 1; j < nodes.size(); ++j) ue += lambda * (nodes[j] - nodes[j - 1]) * (nodes[j] - nodes[j - 1]);
    double ur = 0.0;
    for (std::size_t j = 1; j + 1 < nodes.size(); ++j) {
        const double d = nodes[j] - 0.5 * (nodes[j - 1] + nodes[j + 1]);
        ur += mu * d * d;
    }
    return msd + ue + ur;
}

}  // namespace

TEST(Partition, SingleNodeTakesEverything) {
    std::mt19937_64 rng(1);
    PrincipalGraph g;
    g.nodes = Points::Zero(1, 3);
    const auto p = partition_points(synth::gaussian(50, 3, rng), g);
    for (auto j : p.node) EXPECT_EQ(j, 0u);
}

TEST(Partition, NearestByInspection) {
    PrincipalGraph g;
    g.nodes.resize(2, 2);
    g.nodes << 0, 0, 10, 0;
    Points x(1, 2);
    x << 1, 0;
    EXPECT_EQ(partition_points(x, g).node[0], 0u);
}

TEST(Partition, MatchesBruteForceScan) {
    std::mt19937_64 rng(2);
    const auto x = synth::gaussian(1000, 4, rng);
    PrincipalGraph g;
    g.nodes = synth::gaussian(20, 4, rng);
    const auto p = partition_points(x, g);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::size_t best = 0;
        for (Eigen::Index j = 1; j < g.nodes.rows(); ++j) {
            if ((x.row(i) - g.nodes.row(j)).squaredNorm() < (x.row(i) - g.nodes.row(static_cast<Eigen::Index>(best))).squaredNorm()) {
                best = static_cast<std::size_t>(j);
            }
        }
        EXPECT_EQ(p.node[static_cast<std::size_t>(i)], best);
    }
}

TEST(Partition, TrimmingRadiusAndDimensionCheck) {
    PrincipalGraph g;
    g.nodes = Points::Zero(1, 1);
    g.params.r0 = 1.0;
    const auto p = partition_points(rows_1d({0.5, 3.0}), g);
    EXPECT_FALSE(p.trimmed[0]);
    EXPECT_TRUE(p.trimmed[1]);
    EXPECT_NEAR(compute_energy(rows_1d({0.5, 3.0}), g, p).msd, (0.25 + 1.0) / 2.0, 1e-15);
    EXPECT_THROW(partition_points(Points::Zero(2, 2), g), PreconditionError);
}

TEST(Energy, SingleNodeAtMeanIsMeanSquaredDeviation) {
    const auto x = rows_1d({-1.0, 0.0, 4.0});
    PrincipalGraph g;
    g.nodes = rows_1d({1.0});
    const auto e = compute_energy(x, g, partition_points(x, g));
    EXPECT_NEAR(e.msd, (4.0 + 1.0 + 9.0) / 3.0, 1e-14);
    EXPECT_EQ(e.u_e, 0.0);
    EXPECT_EQ(e.u_r, 0.0);
    EXPECT_NEAR(e.total, e.msd, 1e-15);
}

TEST(Energy, CoincidentChainHasNoStretching) {
    PrincipalGraph g;
    g.nodes = rows_1d({2.0, 2.0});
    g.edges = {{0, 1}};
    const auto x = rows_1d({1.0, 3.0});
    EXPECT_EQ(compute_energy(x, g, partition_points(x, g)).u_e, 0.0);
}

TEST(Energy, StarBendingIsMuTimesDisplacementSquared) {
    Points pts = Points::Zero(1, 2);
    auto g = star3(0.0, 0.0);
    EXPECT_NEAR(compute_energy(pts, g, partition_points(pts, g)).u_r, 0.0, 1e-15);
    for (double d : {0.1, 0.5, 2.0}) {
        g = star3(d * 0.6, d * 0.8);
        EXPECT_NEAR(compute_energy(pts, g, partition_points(pts, g)).u_r, g.params.mu * d * d, 1e-12);
    }
}

TEST(Energy, PenalizedLambdaOnlyAboveDegreeTwo) {
    ElasticParams p;
    EXPECT_EQ(penalized_lambda(p, 1, 2), p.lambda);
    EXPECT_EQ(penalized_lambda(p, 2, 2), p.lambda);
    EXPECT_NEAR(penalized_lambda(p, 4, 1), p.lambda + 2 * p.alpha, 1e-15);
}

TEST(FitNodes, SingleNodeConvergesToMean) {
    std::mt19937_64 rng(3);
    const auto x = synth::gaussian(100, 3, rng);
    PrincipalGraph g;
    g.nodes = Points::Constant(1, 3, 5.0);
    const auto r = fit_nodes(x, g);
    EXPECT_LT((r.graph.nodes.row(0) - x.colwise().mean()).norm(), 1e-12);
}

TEST(FitNodes, EnergyNeverIncreases) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = synth::gaussian(200, 3, rng);
        auto g = synth::random_tree(3 + rng() % 10, rng, 3);
        const auto r = fit_nodes(x, g, 200, 0.0);
        for (std::size_t i = 1; i < r.energy_trace.size(); ++i) {
            EXPECT_LE(r.energy_trace[i], r.energy_trace[i - 1] + 1e-9);
        }
    }
}

TEST(FitNodes, TwoNodeChainMatchesClosedFormAndSearch) {
    const auto x = rows_1d({-1.0, 1.0});
    PrincipalGraph g;
    g.nodes = rows_1d({-0.3, 0.4});
    g.edges = {{0, 1}};
    const auto r = fit_nodes(x, g, 1000, 1e-15);
    // Symmetric optimum at -+c with c = 1 / (1 + 4 lambda).
    const double c = 1.0 / (1.0 + 4.0 * g.params.lambda);
    EXPECT_NEAR(r.graph.nodes(0, 0), -c, 1e-10);
    EXPECT_NEAR(r.graph.nodes(1, 0), c, 1e-10);

    double grid_best = 1e300;
    std::vector<double> start;
    for (double a = -2.0; a <= 2.0; a += 0.02) {
        for (double b = -2.0; b <= 2.0; b += 0.02) {
            const double e = path_energy_1d(x, {a, b}, g.params.lambda, g.params.mu);
            if (e < grid_best) grid_best = e, start = {a, b};
        }
    }
    const double searched = pattern_search(start, [&](const auto& v) { return path_energy_1d(x, v, g.params.lambda, g.params.mu); }, 0.01);
    EXPECT_NEAR(r.energy.total, searched, 1e-4);
}

TEST(FitNodes, ThreeNodePathMatchesNumericMinimizer) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        Points x(30, 1);
        for (Eigen::Index i = 0; i < 30; ++i) x(i, 0) = 2.0 * static_cast<double>(i % 3) - 2.0 + 0.3 * synth::normal(rng);
        PrincipalGraph g;
        g.nodes = rows_1d({-1.0, 0.1, 1.0});
        g.edges = {{0, 1}, {1, 2}};
        const auto r = fit_nodes(x, g, 1000, 1e-14);

        double grid_best = 1e300;
        std::vector<double> start;
        for (double a = -3.0; a <= 3.0; a += 0.1) {
            for (double b = -3.0; b <= 3.0; b += 0.1) {
                for (double c = -3.0; c <= 3.0; c += 0.1) {
                    const double e = path_energy_1d(x, {a, b, c}, g.params.lambda, g.params.mu);
                    if (e < grid_best) grid_best = e, start = {a, b, c};
                }
            }
        }
        const double searched = pattern_search(start, [&](const auto& v) { return path_energy_1d(x, v, g.params.lambda, g.params.mu); }, 0.05);
        EXPECT_NEAR(r.energy.total, searched, 1e-4);
    }
}

TEST(FitNodes, StationarityOfFixedPoint) {
    std::mt19937_64 rng(6);
    const auto x = synth::gaussian(300, 2, rng);
    const auto g = synth::random_tree(6, rng, 2);
    const auto r = fit_nodes(x, g, 1000, 0.0);
    // Resolving with the final partition reproduces the nodes.
    const Points again = solve_node_positions(x, r.graph, r.partition);
    EXPECT_LT((again - r.graph.nodes).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(GrowTree, StraightSegmentGivesPath) {
    Points x(200, 3);
    for (Eigen::Index i = 0; i < 200; ++i) {
        const double t = static_cast<double>(i) / 199.0;
        x.row(i) << t, 2.0 * t, -t;
    }
    ElasticParams p;
    p.n_nodes_target = 10;
    const auto r = grow_tree(x, p);
    EXPECT_EQ(r.graph.node_count(), 10u);
    EXPECT_TRUE(r.graph.is_tree());
    for (auto d : r.graph.degrees()) EXPECT_LE(d, 2u);
}

TEST(GrowTree, AlwaysATreeWithRequestedNodes) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto x = synth::y_cloud(seed, 60);
        ElasticParams p;
        p.n_nodes_target = 12;
        const auto r = grow_tree(x, p);
        EXPECT_EQ(r.graph.node_count(), 12u);
        EXPECT_TRUE(r.graph.is_tree());
        EXPECT_EQ(r.history.size(), 10u);
    }
}

TEST(GrowTree, TooFewPoints) {
    ElasticParams p;
    p.n_nodes_target = 5;
    EXPECT_THROW(grow_tree(rows_1d({1, 2, 3}), p), PreconditionError);
}

TEST(GrowTree, RigidMotionEquivariance) {
    const auto x = synth::y_cloud(9, 60);
    const double c = std::cos(0.7), s = std::sin(0.7);
    Eigen::Matrix2d rot;
    rot << c, -s, s, c;
    const Eigen::RowVector2d shift(3.0, -1.5);
    Points moved = (x * rot.transpose()).rowwise() + shift;
    ElasticParams p;
    p.n_nodes_target = 9;
    const auto a = grow_tree(x, p);
    const auto b = grow_tree(moved, p);
    ASSERT_EQ(a.graph.edges, b.graph.edges);
    const Points expected = (a.graph.nodes * rot.transpose()).rowwise() + shift;
    EXPECT_LT((expected - b.graph.nodes).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Prune, PathUnchanged) {
    const auto g = synth::path_graph(6);
    const auto p = prune_tree(g);
    EXPECT_EQ(p.edges, g.edges);
    EXPECT_EQ(p.nodes, g.nodes);
}

TEST(Prune, ShortArmRemoved) {
    // Center 0; one 1-edge arm (node 1), two 3-edge arms.
    PrincipalGraph g;
    g.nodes = synth::path_graph(8).nodes;
    g.edges = {{0, 1}, {0, 2}, {2, 3}, {3, 4}, {0, 5}, {5, 6}, {6, 7}};
    const auto p = prune_tree(g);
    EXPECT_EQ(p.node_count(), 7u);
    EXPECT_EQ(p.degrees()[0], 2u);
    EXPECT_TRUE(p.is_tree());
}

TEST(Prune, TwoShortArmsAtDifferentBranchesInOnePass) {
    // Spine 0..6 with one-edge arms 7 on node 2 and 8 on node 4.
    PrincipalGraph g;
    g.nodes = synth::path_graph(9).nodes;
    g.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {2, 7}, {4, 8}};
    const auto p = prune_tree(g);
    EXPECT_EQ(p.node_count(), 7u);
    EXPECT_TRUE(p.is_tree());
    for (auto d : p.degrees()) EXPECT_LE(d, 2u);
}

TEST(Prune, RejectsNonTreeAndOverPruning) {
    PrincipalGraph cycle;
    cycle.nodes = synth::path_graph(3).nodes;
    cycle.edges = {{0, 1}, {1, 2}, {2, 0}};
    EXPECT_THROW(prune_tree(cycle), PreconditionError);
    PrincipalGraph star;
    star.nodes = synth::path_graph(4).nodes;
    star.edges = {{0, 1}, {0, 2}, {0, 3}};
    EXPECT_THROW(prune_tree(star), PreconditionError);
}

TEST(Extend, CoversTheDataRange) {
    Points x(101, 1);
    for (Eigen::Index i = 0; i <= 100; ++i) x(i, 0) = 0.1 * static_cast<double>(i);
    PrincipalGraph g;
    g.nodes = rows_1d({2.0, 8.0});
    g.edges = {{0, 1}};
    const auto e = extend_leaves(x, g);
    EXPECT_EQ(e.edges, g.edges);
    EXPECT_EQ(e.node_count(), g.node_count());
    for (const auto& pr : project_points(x, e)) {
        EXPECT_GT(pr.epsilon, 0.0);
        EXPECT_LT(pr.epsilon, 1.0);
        EXPECT_NEAR(pr.squared_distance, 0.0, 1e-20);
    }
}

TEST(Extend, LeafAlreadyBeyondDataIsKept) {
    const auto x = rows_1d({3.0, 4.0, 5.0});
    PrincipalGraph g;
    g.nodes = rows_1d({0.0, 10.0});
    g.edges = {{0, 1}};
    const auto e = extend_leaves(x, g);
    EXPECT_NEAR((e.nodes - g.nodes).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(Project, NodeAndPerpendicularFoot) {
    PrincipalGraph g;
    g.nodes.resize(2, 2);
    g.nodes << 0, 0, 2, 0;
    g.edges = {{0, 1}};
    const Eigen::RowVector2d above(1.0, 5.0);
    const auto p = project_point(above, g);
    EXPECT_EQ(p.edge, 0u);
    EXPECT_NEAR(p.epsilon, 0.5, 1e-15);
    EXPECT_NEAR(p.squared_distance, 25.0, 1e-12);
    const Eigen::RowVector2d at_node(2.0, 0.0);
    const auto q = project_point(at_node, g);
    EXPECT_EQ(q.epsilon, 1.0);
    EXPECT_EQ(q.squared_distance, 0.0);
}

TEST(Project, MatchesBruteForceAndNeverWorseThanNodes) {
    std::mt19937_64 rng(7);
    const auto g = synth::random_tree(15, rng, 3);
    const auto x = synth::gaussian(500, 3, rng);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto p = project_point(x.row(i), g);
        // Oracle: dense sampling of every edge.
        double best = 1e300;
        for (const auto& e : g.edges) {
            for (int s = 0; s <= 2000; ++s) {
                const double t = s / 2000.0;
                const Eigen::RowVectorXd y = (1 - t) * g.nodes.row(static_cast<Eigen::Index>(e.a)) + t * g.nodes.row(static_cast<Eigen::Index>(e.b));
                best = std::min(best, (x.row(i) - y).squaredNorm());
            }
        }
        EXPECT_LE(p.squared_distance, best + 1e-12);
        EXPECT_GT(p.squared_distance, best - 1e-4);
        for (Eigen::Index j = 0; j < g.nodes.rows(); ++j) {
            EXPECT_LE(p.squared_distance, (x.row(i) - g.nodes.row(j)).squaredNorm() + 1e-12);
        }
    }
}

TEST(ExplainedVariance, ExactFitAndMean) {
    const auto x = rows_1d({0.0, 1.0, 2.0, 3.0});
    PrincipalGraph through;
    through.nodes = rows_1d({0.0, 3.0});
    through.edges = {{0, 1}};
    EXPECT_NEAR(explained_variance(x, through), 1.0, 1e-15);
    PrincipalGraph mean;
    mean.nodes = rows_1d({1.5});
    EXPECT_NEAR(explained_variance(x, mean), 0.0, 1e-15);
    EXPECT_THROW(explained_variance(rows_1d({1.0, 1.0}), mean), PreconditionError);
}

TEST(GraphJson, RoundTrips) {
    std::mt19937_64 rng(8);
    auto g = synth::random_tree(7, rng, 3);
    g.params.lambda = 0.2;
    const auto back = graph_from_json(graph_to_json(g, 42, 3, 1.5));
    EXPECT_EQ(back.nodes, g.nodes);
    EXPECT_EQ(back.edges, g.edges);
    EXPECT_EQ(back.params.lambda, 0.2);
    EXPECT_TRUE(std::isinf(back.params.r0));
    EXPECT_THROW(graph_from_json("{\"nodes\": [[0]], \"edges\": [[0, 3]]}"), DataError);
}
