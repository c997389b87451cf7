#pragma once

#include "clintraj/dataset.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace clintraj {

enum class ImputerKind { svd_complete, svd_full };

struct MissingnessPolicy {
    double delta_row = 0.2;
    double delta_column = 0.3;
    std::optional<std::size_t> svd_order;  // nullopt: PCA dimension estimate on complete rows
    ImputerKind imputer = ImputerKind::svd_complete;
    bool round_discrete = true;

    void validate() const;
};

struct FilterReport {
    std::vector<std::size_t> dropped_columns;  // indices into the input
    std::vector<std::size_t> dropped_rows;     // indices into the input
    std::vector<std::size_t> kept_columns;
    std::vector<std::size_t> kept_rows;
};

struct FilterResult {
    NumericMatrix matrix;
    FilterReport report;
};

/// Drops columns whose missing fraction exceeds delta_column, then rows whose
/// missing fraction over the surviving columns exceeds delta_row.
FilterResult filter_missing(const NumericMatrix& m, const MissingnessPolicy& policy);

/// Same two passes on a raw missingness mask, for callers that filter before
/// quantifying.
FilterReport filter_missing_mask(const BoolMatrix& missing, double delta_row, double delta_column);

/// Discrete structure the imputer may round to.
struct DiscreteColumns {
    // Per column: ascending legal values, or empty for continuous columns.
    std::vector<std::vector<double>> legal_values;
    // Groups of 0/1 dummy columns where exactly one column is 1 per row.
    std::vector<std::vector<std::size_t>> exclusive_groups;
};

struct ImputedCell {
    std::size_t row = 0;
    std::size_t column = 0;
    double value = 0.0;
    bool was_rounded = false;
};

struct ImputationResult {
    NumericMatrix matrix;  // complete
    std::vector<ImputedCell> cells;
    std::vector<std::string> warnings;
    std::size_t order = 0;
    std::size_t iterations = 0;
    bool converged = true;
    std::vector<double> objective_trace;  // SVDFull only: observed-entry residual per iteration
};

/// Rank-k affine subspace (mean + leading principal directions).
struct PrincipalSubspace {
    Eigen::VectorXd mean;
    Eigen::MatrixXd basis;  // columns orthonormal, m x k
};

PrincipalSubspace fit_principal_subspace(const Eigen::MatrixXd& x, std::size_t k);

/// Least-squares fit of the observed coordinates of `row` by the subspace; the
/// missing coordinates are read off the fitted point.
Eigen::VectorXd project_onto_subspace(const Eigen::VectorXd& row, const std::vector<bool>& missing,
                                      const PrincipalSubspace& subspace);

ImputationResult impute_svd_complete(const NumericMatrix& m, std::size_t k, const DiscreteColumns& discrete = {},
                                     bool round_discrete = false);

ImputationResult impute_svd_full(const NumericMatrix& m, std::size_t k, const DiscreteColumns& discrete = {},
                                 bool round_discrete = false, std::size_t max_iter = 500, double tol = 1e-9);

/// Dispatches on policy.imputer; resolves a missing svd_order by the PCA
/// dimension estimate (ratio 10) of the complete rows.
ImputationResult impute(const NumericMatrix& m, const MissingnessPolicy& policy, const DiscreteColumns& discrete = {});

std::string imputation_report_json(const ImputationResult& result, const std::vector<std::string>& column_names);

}  // namespace clintraj
