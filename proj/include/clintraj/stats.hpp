#pragma once

#include "clintraj/dataset.hpp"
#include "clintraj/treeanalysis.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace clintraj {

enum class AssociationTest { chi2, anova };

/// One cell (chi2: segment x value) or one segment (anova) of an association.
struct SegmentEffect {
    std::size_t segment = 0;
    int value = -1;       // category for chi2 cells, -1 for anova
    double score = 0.0;   // deviation score (chi2) or mean offset (anova)
    double p_value = 1.0;
    double observed = 0.0;
    double expected = 0.0;
};

struct AssociationResult {
    std::string variable;
    AssociationTest test = AssociationTest::chi2;
    double statistic = 0.0;
    double dof = 0.0;
    double p_value = 1.0;
    std::vector<SegmentEffect> per_segment;
    std::vector<std::string> warnings;
};

/// Pearson chi-square independence test of segment x value, with per-cell
/// deviation score (E - O) / E. Set `enrichment_positive` to report (O - E) / E
/// instead, so that over-representation is positive.
AssociationResult chi2_association(const std::vector<std::size_t>& segments, const std::vector<int>& values,
                                   const std::string& variable = {}, bool enrichment_positive = false);

/// One-way ANOVA of a numeric variable on one-hot segment indicators. Segment
/// effects are offsets of the segment mean from the grand mean with t-based
/// p-values. Pass `segment_count` to have empty segments reported as warnings.
AssociationResult anova_association(const std::vector<std::size_t>& segments, const std::vector<double>& values,
                                    const std::string& variable = {}, std::size_t segment_count = 0);

std::vector<double> benjamini_hochberg(const std::vector<double>& p_values);

enum class RegressionKind { linear, gaussian_kernel, logistic };

std::string to_string(RegressionKind kind);

struct RegressionFit {
    RegressionKind kind = RegressionKind::linear;
    double r_squared = 0.0;
    std::vector<double> coefficients;  // linear/logistic: intercept, slope on pseudotime
    double bandwidth = 0.0;            // gaussian_kernel only
    std::vector<double> grid;
    std::vector<double> curve;
    std::vector<std::string> warnings;
};

/// Silverman's rule 0.9 min(sd, IQR/1.34) n^(-1/5), floored at 0.25.
double silverman_bandwidth(std::span<const double> t);

/// Regression of a variable on pseudotime. Logistic fits expect 0/1 outcomes
/// and report the squared correlation between outcome and fitted probability.
RegressionFit regress_on_pseudotime(std::span<const double> pt, std::span<const double> y, RegressionKind kind,
                                    std::size_t grid_size = 50);

struct TrajectoryScreen {
    std::vector<std::string> variables;
    std::vector<RegressionKind> kinds;
    Eigen::MatrixXd r_squared;  // variables x trajectories, NaN where too few points
    BoolMatrix passed;
    double threshold = 0.0;

    std::size_t variables_passing() const;
};

/// R^2 of every variable against pseudotime on every trajectory. Two-valued
/// variables get logistic fits; the rest use `continuous_kind`.
TrajectoryScreen screen_trajectory_associations(const PseudotimeAssignment& assignment, const NumericMatrix& variables,
                                                double threshold,
                                                RegressionKind continuous_kind = RegressionKind::gaussian_kernel);

}  // namespace clintraj
