#include "clintraj/impute.hpp"

#include "clintraj/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace clintraj {

void MissingnessPolicy::validate() const {
    if (!(delta_row >= 0.0 && delta_row <= 1.0)) throw ConfigError("policy.delta_row must lie in [0, 1]");
    if (!(delta_column >= 0.0 && delta_column <= 1.0)) throw ConfigError("policy.delta_column must lie in [0, 1]");
    if (svd_order && *svd_order < 1) throw ConfigError("policy.svd_order must be at least 1");
}

FilterReport filter_missing_mask(const BoolMatrix& missing, double delta_row, double delta_column) {
    FilterReport report;
    const auto n = missing.rows();
    const auto m = missing.cols();
    for (Eigen::Index c = 0; c < m; ++c) {
        const double frac = n ? static_cast<double>(missing.col(c).count()) / static_cast<double>(n) : 0.0;
        (frac > delta_column ? report.dropped_columns : report.kept_columns).push_back(static_cast<std::size_t>(c));
    }
    const auto kept = static_cast<double>(report.kept_columns.size());
    for (Eigen::Index r = 0; r < n; ++r) {
        std::size_t count = 0;
        for (auto c : report.kept_columns) count += missing(r, static_cast<Eigen::Index>(c)) ? 1 : 0;
        const double frac = kept > 0 ? static_cast<double>(count) / kept : 0.0;
        (frac > delta_row ? report.dropped_rows : report.kept_rows).push_back(static_cast<std::size_t>(r));
    }
    return report;
}

FilterResult filter_missing(const NumericMatrix& m, const MissingnessPolicy& policy) {
    policy.validate();
    FilterResult out;
    out.report = filter_missing_mask(m.missing, policy.delta_row, policy.delta_column);
    const auto& rows = out.report.kept_rows;
    const auto& cols = out.report.kept_columns;
    if (rows.empty() || cols.empty()) throw DataError("missingness filter removed every row or column");

    Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    BoolMatrix mask(values.rows(), values.cols());
    std::vector<std::string> names;
    for (std::size_t j = 0; j < cols.size(); ++j) names.push_back(m.column_names[cols[j]]);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            const auto r = static_cast<Eigen::Index>(rows[i]);
            const auto c = static_cast<Eigen::Index>(cols[j]);
            values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m.values(r, c);
            mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m.missing(r, c);
        }
    }
    out.matrix = NumericMatrix(std::move(values), std::move(mask), std::move(names));
    return out;
}

PrincipalSubspace fit_principal_subspace(const Eigen::MatrixXd& x, std::size_t k) {
    PrincipalSubspace s;
    s.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - s.mean.transpose();
    const Eigen::MatrixXd scatter = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scatter);
    const auto m = x.cols();
    const auto kk = std::min<Eigen::Index>(static_cast<Eigen::Index>(k), m);
    // Eigen returns ascending eigenvalues; take the last kk, largest first.
    s.basis.resize(m, kk);
    for (Eigen::Index j = 0; j < kk; ++j) {
        Eigen::VectorXd v = eig.eigenvectors().col(m - 1 - j);
        // Sign convention: largest-magnitude coordinate positive.
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        s.basis.col(j) = v;
    }
    return s;
}

Eigen::VectorXd project_onto_subspace(const Eigen::VectorXd& row, const std::vector<bool>& missing,
                                      const PrincipalSubspace& subspace) {
    const auto m = row.size();
    std::vector<Eigen::Index> observed;
    for (Eigen::Index c = 0; c < m; ++c) {
        if (!missing[static_cast<std::size_t>(c)]) observed.push_back(c);
    }
    Eigen::VectorXd out = row;
    if (observed.size() == static_cast<std::size_t>(m)) return out;

    const auto k = subspace.basis.cols();
    Eigen::MatrixXd b(static_cast<Eigen::Index>(observed.size()), k);
    Eigen::VectorXd y(static_cast<Eigen::Index>(observed.size()));
    for (std::size_t i = 0; i < observed.size(); ++i) {
        b.row(static_cast<Eigen::Index>(i)) = subspace.basis.row(observed[i]);
        y(static_cast<Eigen::Index>(i)) = row(observed[i]) - subspace.mean(observed[i]);
    }
    Eigen::VectorXd coeff = Eigen::VectorXd::Zero(k);
    if (!observed.empty()) coeff = b.completeOrthogonalDecomposition().solve(y);
    const Eigen::VectorXd fitted = subspace.mean + subspace.basis * coeff;
    for (Eigen::Index c = 0; c < m; ++c) {
        if (missing[static_cast<std::size_t>(c)]) out(c) = fitted(c);
    }
    return out;
}

namespace {

std::vector<bool> row_mask(const BoolMatrix& mask, Eigen::Index r) {
    std::vector<bool> out(static_cast<std::size_t>(mask.cols()));
    for (Eigen::Index c = 0; c < mask.cols(); ++c) out[static_cast<std::size_t>(c)] = mask(r, c);
    return out;
}

double nearest_legal(const std::vector<double>& legal, double v) {
    auto it = std::lower_bound(legal.begin(), legal.end(), v);
    if (it == legal.begin()) return legal.front();
    if (it == legal.end()) return legal.back();
    const double hi = *it;
    const double lo = *(it - 1);
    return (v - lo) <= (hi - v) ? lo : hi;
}

// Collects imputed cells and applies discrete rounding in place.
void finish(const NumericMatrix& input, Eigen::MatrixXd& filled, const DiscreteColumns& discrete, bool round,
            ImputationResult& result) {
    const auto n = filled.rows();
    const auto m = filled.cols();
    std::vector<bool> rounded_cell(static_cast<std::size_t>(n * m), false);
    auto flag = [&](Eigen::Index r, Eigen::Index c) -> std::vector<bool>::reference {
        return rounded_cell[static_cast<std::size_t>(r * m + c)];
    };

    if (round) {
        std::vector<bool> in_group(static_cast<std::size_t>(m), false);
        for (const auto& g : discrete.exclusive_groups) {
            for (auto c : g) in_group.at(c) = true;
        }
        for (Eigen::Index r = 0; r < n; ++r) {
            for (Eigen::Index c = 0; c < m; ++c) {
                if (!input.missing(r, c) || in_group[static_cast<std::size_t>(c)]) continue;
                if (static_cast<std::size_t>(c) >= discrete.legal_values.size()) continue;
                const auto& legal = discrete.legal_values[static_cast<std::size_t>(c)];
                if (legal.empty()) continue;
                const double v = nearest_legal(legal, filled(r, c));
                flag(r, c) = v != filled(r, c);
                filled(r, c) = v;
            }
            for (const auto& g : discrete.exclusive_groups) {
                bool any_missing = false;
                bool observed_one = false;
                for (auto c : g) {
                    const auto ci = static_cast<Eigen::Index>(c);
                    if (input.missing(r, ci)) any_missing = true;
                    else if (filled(r, ci) == 1.0) observed_one = true;
                }
                if (!any_missing) continue;
                Eigen::Index best = -1;
                for (auto c : g) {
                    const auto ci = static_cast<Eigen::Index>(c);
                    if (!input.missing(r, ci)) continue;
                    if (best < 0 || filled(r, ci) > filled(r, best)) best = ci;
                }
                for (auto c : g) {
                    const auto ci = static_cast<Eigen::Index>(c);
                    if (!input.missing(r, ci)) continue;
                    const double v = (!observed_one && ci == best) ? 1.0 : 0.0;
                    flag(r, ci) = v != filled(r, ci);
                    filled(r, ci) = v;
                }
            }
        }
    }

    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < m; ++c) {
            if (!input.missing(r, c)) continue;
            result.cells.push_back({static_cast<std::size_t>(r), static_cast<std::size_t>(c), filled(r, c), flag(r, c)});
        }
    }
    result.matrix = NumericMatrix(filled, BoolMatrix::Constant(n, m, false), input.column_names);
}

}  // namespace

ImputationResult impute_svd_complete(const NumericMatrix& m, std::size_t k, const DiscreteColumns& discrete,
                                     bool round_discrete) {
    if (k < 1) throw PreconditionError("SVD order must be at least 1");
    const auto complete = m.complete_rows();
    if (complete.size() < k + 1) {
        throw PreconditionError("SVDComplete needs at least k+1 = " + std::to_string(k + 1) + " complete rows, found " +
                                std::to_string(complete.size()));
    }
    ImputationResult result;
    result.order = k;
    const double fraction = static_cast<double>(complete.size()) / static_cast<double>(m.rows());
    if (fraction < 0.4) {
        result.warnings.push_back("only " + std::to_string(complete.size()) + " of " + std::to_string(m.rows()) +
                                  " rows are complete; SVDComplete is unreliable below 40%");
    }

    Eigen::MatrixXd sub(static_cast<Eigen::Index>(complete.size()), m.values.cols());
    for (std::size_t i = 0; i < complete.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = m.values.row(static_cast<Eigen::Index>(complete[i]));
    const auto subspace = fit_principal_subspace(sub, k);

    Eigen::MatrixXd filled = m.values;
    for (Eigen::Index r = 0; r < filled.rows(); ++r) {
        if (!m.missing.row(r).any()) continue;
        filled.row(r) = project_onto_subspace(m.values.row(r).transpose(), row_mask(m.missing, r), subspace).transpose();
    }
    finish(m, filled, discrete, round_discrete, result);
    return result;
}

ImputationResult impute_svd_full(const NumericMatrix& m, std::size_t k, const DiscreteColumns& discrete,
                                 bool round_discrete, std::size_t max_iter, double tol) {
    if (k < 1) throw PreconditionError("SVD order must be at least 1");
    const auto n = m.values.rows();
    const auto p = m.values.cols();
    for (Eigen::Index r = 0; r < n; ++r) {
        if (m.missing.row(r).all()) throw PreconditionError("SVDFull: row " + std::to_string(r) + " has no observed entry");
    }
    for (Eigen::Index c = 0; c < p; ++c) {
        if (m.missing.col(c).all()) throw PreconditionError("SVDFull: column '" + m.column_names[static_cast<std::size_t>(c)] + "' has no observed entry");
    }

    ImputationResult result;
    result.order = k;
    Eigen::MatrixXd filled = m.values;
    for (Eigen::Index c = 0; c < p; ++c) {
        double sum = 0.0;
        Eigen::Index count = 0;
        for (Eigen::Index r = 0; r < n; ++r) {
            if (!m.missing(r, c)) {
                sum += m.values(r, c);
                ++count;
            }
        }
        const double mean = sum / static_cast<double>(count);
        for (Eigen::Index r = 0; r < n; ++r) {
            if (m.missing(r, c)) filled(r, c) = mean;
        }
    }

    if (m.missing_count() > 0) {
        result.converged = false;
        for (std::size_t iter = 0; iter < max_iter; ++iter) {
            const auto subspace = fit_principal_subspace(filled, k);
            const Eigen::MatrixXd centered = filled.rowwise() - subspace.mean.transpose();
            const Eigen::MatrixXd recon =
                (centered * subspace.basis * subspace.basis.transpose()).rowwise() + subspace.mean.transpose();
            double residual = 0.0;
            double change = 0.0;
            for (Eigen::Index r = 0; r < n; ++r) {
                for (Eigen::Index c = 0; c < p; ++c) {
                    if (m.missing(r, c)) {
                        change = std::max(change, std::abs(recon(r, c) - filled(r, c)));
                        filled(r, c) = recon(r, c);
                    } else {
                        const double d = m.values(r, c) - recon(r, c);
                        residual += d * d;
                    }
                }
            }
            result.objective_trace.push_back(residual);
            result.iterations = iter + 1;
            if (change < tol) {
                result.converged = true;
                break;
            }
        }
        if (!result.converged) {
            result.warnings.push_back("SVDFull did not converge within " + std::to_string(max_iter) +
                                      " iterations; returning the last iterate");
        }

        const auto subspace = fit_principal_subspace(filled, k);
        for (Eigen::Index r = 0; r < n; ++r) {
            if (!m.missing.row(r).any()) continue;
            filled.row(r) = project_onto_subspace(m.values.row(r).transpose(), row_mask(m.missing, r), subspace).transpose();
        }
    }
    finish(m, filled, discrete, round_discrete, result);
    return result;
}

ImputationResult impute(const NumericMatrix& m, const MissingnessPolicy& policy, const DiscreteColumns& discrete) {
    policy.validate();
    std::size_t k = 0;
    if (policy.svd_order) {
        k = *policy.svd_order;
    } else {
        const auto complete = m.complete_rows();
        if (complete.size() < 2) throw PreconditionError("cannot estimate SVD order: fewer than 2 complete rows");
        Eigen::MatrixXd sub(static_cast<Eigen::Index>(complete.size()), m.values.cols());
        for (std::size_t i = 0; i < complete.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = m.values.row(static_cast<Eigen::Index>(complete[i]));
        k = std::max<std::size_t>(1, estimate_dimension_pca(NumericMatrix(sub, m.column_names), 10.0));
    }
    if (policy.imputer == ImputerKind::svd_complete) return impute_svd_complete(m, k, discrete, policy.round_discrete);
    return impute_svd_full(m, k, discrete, policy.round_discrete);
}

std::string imputation_report_json(const ImputationResult& result, const std::vector<std::string>& column_names) {
    nlohmann::ordered_json doc;
    doc["order"] = result.order;
    doc["iterations"] = result.iterations;
    doc["converged"] = result.converged;
    doc["warnings"] = result.warnings;
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    for (const auto& c : result.cells) {
        nlohmann::ordered_json e;
        e["row"] = c.row;
        e["column"] = column_names.at(c.column);
        e["imputed_value"] = c.value;
        e["was_rounded"] = c.was_rounded;
        cells.push_back(std::move(e));
    }
    doc["cells"] = std::move(cells);
    return doc.dump(1);
}

}  // namespace clintraj
