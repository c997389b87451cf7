#pragma once

#include "clintraj/dataset.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace clintraj {

/// Quantile quantification of one ordinal (or binary) variable. Only levels
/// observed at least once receive a value; values are strictly increasing.
struct QuantifiedVariable {
    std::string column;
    std::vector<std::string> levels;
    std::vector<std::size_t> counts;
    std::vector<double> level_values;
    std::vector<double> level_probs;

    /// Throws DataError for a level that was not observed.
    double value_of(const std::string& level) const;
};

/// x_i = PhiInv(sum_{j<i} p_j + p_i / 2) with p_i = n_i / N. Zero-count levels
/// are dropped before the cumulative sums.
QuantifiedVariable quantify_ordinal_univariate(const std::string& column, const std::vector<std::string>& levels,
                                               const std::vector<std::size_t>& counts);
QuantifiedVariable quantify_ordinal_univariate(const MixedDataTable& table, std::size_t col);

/// Scaled values of the distinct levels of one ordinal column.
struct ScaledColumn {
    std::size_t column = 0;
    std::vector<double> original_values;  // ascending
    std::vector<double> scaled_values;    // non-decreasing
};

struct ScalingResult {
    NumericMatrix scaled;                 // every column standardized
    std::vector<ScaledColumn> columns;
    std::vector<double> objective_trace;  // initial value, then one entry per sweep
    std::size_t iterations = 0;
    bool converged = false;
};

/// Sum over column pairs j < k of corr(col_j, col_k)^2.
double pairwise_correlation_objective(const Eigen::MatrixXd& x);

/// Monotone optimal scaling of ordinal columns maximizing the sum of squared
/// pairwise correlations.
///
/// Each sweep visits the ordinal columns in index order. For column j the
/// objective is a convex quadratic z' A z in the standardized column, so its
/// linearization at the current z is a minorizer; the maximizer of that linear
/// form over monotone, centered, unit-variance level assignments is the
/// weighted isotonic regression of A z on the level order, rescaled. The
/// objective therefore never decreases.
ScalingResult optimal_scale(const NumericMatrix& m, const std::vector<std::size_t>& ordinal_columns,
                            std::size_t max_iter = 100, double tol = 1e-10);

/// Weighted pool-adjacent-violators: non-decreasing fit minimizing
/// sum w_i (y_i - f_i)^2.
std::vector<double> isotonic_regression(const std::vector<double>& y, const std::vector<double>& w);

/// One 0/1 indicator column per level, named "<column>_<level>".
NumericMatrix encode_categorical(const MixedDataTable& table, const std::string& column);

/// Per-output-column metadata of a quantified table.
struct ColumnInfo {
    std::string name;
    std::string source;  // originating table variable
    VariableKind kind = VariableKind::continuous;
    std::vector<double> legal_values;  // discrete columns only, ascending
    int exclusive_group = -1;          // dummy columns of one categorical share a group
};

struct QuantifiedTable {
    NumericMatrix matrix;
    std::vector<ColumnInfo> columns;
    std::vector<QuantifiedVariable> variables;  // ordinal and binary variables
};

/// Hybrid first stage: univariate quantile quantification of ordinal and
/// binary variables, dummy coding of categoricals, z-scores for continuous.
QuantifiedTable quantify_table(const MixedDataTable& table);

/// {column: {level: value}} for audit and replay.
std::string quantification_to_json(const std::vector<QuantifiedVariable>& variables,
                                   const std::vector<ScaledColumn>& scaled = {},
                                   const std::vector<std::string>& column_names = {});

}  // namespace clintraj
