#include "clintraj/quantify.hpp"

#include "clintraj/distributions.hpp"
#include "clintraj/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>

namespace clintraj {

double QuantifiedVariable::value_of(const std::string& level) const {
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (levels[i] == level) return level_values[i];
    }
    throw DataError("column '" + column + "': level '" + level + "' was not observed");
}

QuantifiedVariable quantify_ordinal_univariate(const std::string& column, const std::vector<std::string>& levels,
                                               const std::vector<std::size_t>& counts) {
    if (levels.size() != counts.size()) throw PreconditionError("levels and counts differ in length");
    QuantifiedVariable q;
    q.column = column;
    std::size_t total = 0;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (counts[i] == 0) continue;
        q.levels.push_back(levels[i]);
        q.counts.push_back(counts[i]);
        total += counts[i];
    }
    if (total == 0) throw DataError("column '" + column + "' has no observed values");

    double below = 0.0;
    for (std::size_t n : q.counts) {
        const double p = static_cast<double>(n) / static_cast<double>(total);
        q.level_probs.push_back(p);
        q.level_values.push_back(dist::normal_quantile(below + 0.5 * p));
        below += p;
    }
    return q;
}

QuantifiedVariable quantify_ordinal_univariate(const MixedDataTable& table, std::size_t col) {
    const auto levels = table.levels(col);
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < levels.size(); ++i) index[levels[i]] = i;
    std::vector<std::size_t> counts(levels.size(), 0);
    for (std::size_t r = 0; r < table.rows(); ++r) {
        if (!table.missing(r, col)) ++counts[index.at(table.cell(r, col))];
    }
    return quantify_ordinal_univariate(table.variable(col).name, levels, counts);
}

// ---------------------------------------------------------------------------
// Optimal scaling

std::vector<double> isotonic_regression(const std::vector<double>& y, const std::vector<double>& w) {
    struct Block {
        double sum_wy;
        double sum_w;
        std::size_t size;
        double mean() const { return sum_wy / sum_w; }
    };
    std::vector<Block> blocks;
    blocks.reserve(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        blocks.push_back({w[i] * y[i], w[i], 1});
        while (blocks.size() > 1 && blocks[blocks.size() - 2].mean() > blocks.back().mean()) {
            Block top = blocks.back();
            blocks.pop_back();
            blocks.back().sum_wy += top.sum_wy;
            blocks.back().sum_w += top.sum_w;
            blocks.back().size += top.size;
        }
    }
    std::vector<double> out;
    out.reserve(y.size());
    for (const auto& b : blocks) out.insert(out.end(), b.size, b.mean());
    return out;
}

double pairwise_correlation_objective(const Eigen::MatrixXd& x) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    Eigen::MatrixXd z = x.rowwise() - mean;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        const double norm = z.col(c).norm();
        if (norm > 0.0) z.col(c) /= norm;
    }
    const Eigen::MatrixXd corr = z.transpose() * z;
    double total = 0.0;
    for (Eigen::Index j = 0; j < corr.cols(); ++j) {
        for (Eigen::Index k = j + 1; k < corr.cols(); ++k) total += corr(j, k) * corr(j, k);
    }
    return total;
}

ScalingResult optimal_scale(const NumericMatrix& m, const std::vector<std::size_t>& ordinal_columns,
                            std::size_t max_iter, double tol) {
    if (ordinal_columns.empty()) throw PreconditionError("optimal_scale: no ordinal columns given");
    if (!m.complete()) throw PreconditionError("optimal_scale needs a complete matrix; impute first");
    const auto n = static_cast<Eigen::Index>(m.rows());
    const double dn = static_cast<double>(n);
    if (n < 2) throw PreconditionError("optimal_scale needs at least 2 rows");

    // Columns scaled to mean 0 and squared norm n, so corr(j, k) = z_j . z_k / n.
    Eigen::MatrixXd z = m.values;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        z.col(c).array() -= z.col(c).mean();
        const double norm2 = z.col(c).squaredNorm();
        if (norm2 <= 0.0) throw DataError("optimal_scale: constant column '" + m.column_names[c] + "'");
        z.col(c) *= std::sqrt(dn / norm2);
    }

    struct Levels {
        std::vector<double> values;
        std::vector<std::size_t> row_level;
        std::vector<double> weight;
    };
    std::vector<Levels> levels;
    for (auto col : ordinal_columns) {
        if (col >= m.cols()) throw PreconditionError("optimal_scale: ordinal column index out of range");
        Levels lv;
        lv.values.assign(m.values.col(static_cast<Eigen::Index>(col)).data(),
                         m.values.col(static_cast<Eigen::Index>(col)).data() + n);
        std::sort(lv.values.begin(), lv.values.end());
        lv.values.erase(std::unique(lv.values.begin(), lv.values.end()), lv.values.end());
        lv.weight.assign(lv.values.size(), 0.0);
        lv.row_level.resize(static_cast<std::size_t>(n));
        for (Eigen::Index r = 0; r < n; ++r) {
            const auto it = std::lower_bound(lv.values.begin(), lv.values.end(), m.values(r, static_cast<Eigen::Index>(col)));
            const auto l = static_cast<std::size_t>(it - lv.values.begin());
            lv.row_level[static_cast<std::size_t>(r)] = l;
            lv.weight[l] += 1.0;
        }
        levels.push_back(std::move(lv));
    }

    auto objective = [&] {
        const Eigen::MatrixXd corr = z.transpose() * z / dn;
        double total = 0.0;
        for (Eigen::Index j = 0; j < corr.cols(); ++j) {
            for (Eigen::Index k = j + 1; k < corr.cols(); ++k) total += corr(j, k) * corr(j, k);
        }
        return total;
    };
    // Terms of the objective that involve column j, for candidate values zj.
    auto contribution = [&](Eigen::Index j, const Eigen::VectorXd& zj) {
        Eigen::VectorXd c = z.transpose() * zj / dn;
        c(j) = 0.0;
        return c.squaredNorm();
    };

    ScalingResult result;
    result.objective_trace.push_back(objective());

    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        for (std::size_t o = 0; o < ordinal_columns.size(); ++o) {
            const auto j = static_cast<Eigen::Index>(ordinal_columns[o]);
            const auto& lv = levels[o];
            const std::size_t nl = lv.values.size();
            if (nl < 2) continue;

            Eigen::VectorXd c = z.transpose() * z.col(j) / dn;
            c(j) = 0.0;
            const Eigen::VectorXd target = z * c;

            std::vector<double> level_mean(nl, 0.0);
            for (Eigen::Index r = 0; r < n; ++r) level_mean[lv.row_level[static_cast<std::size_t>(r)]] += target(r);
            for (std::size_t l = 0; l < nl; ++l) level_mean[l] /= lv.weight[l];

            std::vector<double> q = isotonic_regression(level_mean, lv.weight);
            double wmean = 0.0;
            for (std::size_t l = 0; l < nl; ++l) wmean += lv.weight[l] * q[l];
            wmean /= dn;
            double norm2 = 0.0;
            for (std::size_t l = 0; l < nl; ++l) {
                q[l] -= wmean;
                norm2 += lv.weight[l] * q[l] * q[l];
            }
            if (!(norm2 > 1e-24 * dn)) continue;
            const double scale = std::sqrt(dn / norm2);

            Eigen::VectorXd candidate(n);
            for (Eigen::Index r = 0; r < n; ++r) candidate(r) = scale * q[lv.row_level[static_cast<std::size_t>(r)]];
            if (contribution(j, candidate) >= contribution(j, z.col(j))) z.col(j) = candidate;
        }
        const double value = objective();
        const double previous = result.objective_trace.back();
        result.objective_trace.push_back(value);
        result.iterations = iter + 1;
        if (value - previous < tol) {
            result.converged = true;
            break;
        }
    }

    result.scaled = m;
    const double to_sample = std::sqrt((dn - 1.0) / dn);
    for (std::size_t o = 0; o < ordinal_columns.size(); ++o) {
        const auto j = static_cast<Eigen::Index>(ordinal_columns[o]);
        result.scaled.values.col(j) = z.col(j) * to_sample;
        ScaledColumn sc;
        sc.column = ordinal_columns[o];
        sc.original_values = levels[o].values;
        sc.scaled_values.assign(levels[o].values.size(), 0.0);
        for (Eigen::Index r = 0; r < n; ++r) {
            sc.scaled_values[levels[o].row_level[static_cast<std::size_t>(r)]] = result.scaled.values(r, j);
        }
        result.columns.push_back(std::move(sc));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Dummy coding and table quantification

NumericMatrix encode_categorical(const MixedDataTable& table, const std::string& column) {
    const std::size_t col = table.column_index(column);
    if (table.variable(col).kind != VariableKind::categorical) {
        throw PreconditionError("column '" + column + "' is not categorical");
    }
    const auto levels = table.levels(col);
    const auto n = static_cast<Eigen::Index>(table.rows());
    const auto k = static_cast<Eigen::Index>(levels.size());
    Eigen::MatrixXd values = Eigen::MatrixXd::Zero(n, k);
    BoolMatrix mask = BoolMatrix::Constant(n, k, false);
    std::vector<std::string> names;
    for (const auto& l : levels) names.push_back(column + "_" + l);
    for (Eigen::Index r = 0; r < n; ++r) {
        if (table.missing(static_cast<std::size_t>(r), col)) {
            mask.row(r).setConstant(true);
            continue;
        }
        const auto& tok = table.cell(static_cast<std::size_t>(r), col);
        const auto it = std::find(levels.begin(), levels.end(), tok);
        values(r, it - levels.begin()) = 1.0;
    }
    return NumericMatrix(std::move(values), std::move(mask), std::move(names));
}

QuantifiedTable quantify_table(const MixedDataTable& table) {
    QuantifiedTable out;
    const auto n = static_cast<Eigen::Index>(table.rows());
    std::vector<Eigen::VectorXd> columns;
    std::vector<std::vector<bool>> masks;
    int group = 0;

    auto push = [&](Eigen::VectorXd v, std::vector<bool> mask, ColumnInfo info) {
        columns.push_back(std::move(v));
        masks.push_back(std::move(mask));
        out.columns.push_back(std::move(info));
    };

    for (std::size_t c = 0; c < table.cols(); ++c) {
        const auto& var = table.variable(c);
        std::vector<bool> mask(static_cast<std::size_t>(n));
        for (Eigen::Index r = 0; r < n; ++r) mask[static_cast<std::size_t>(r)] = table.missing(static_cast<std::size_t>(r), c);

        switch (var.kind) {
            case VariableKind::continuous: {
                Eigen::VectorXd v(n);
                double sum = 0.0;
                std::size_t count = 0;
                for (Eigen::Index r = 0; r < n; ++r) {
                    if (mask[static_cast<std::size_t>(r)]) {
                        v(r) = std::numeric_limits<double>::quiet_NaN();
                        continue;
                    }
                    v(r) = std::stod(table.cell(static_cast<std::size_t>(r), c));
                    sum += v(r);
                    ++count;
                }
                const double mean = count ? sum / static_cast<double>(count) : 0.0;
                double ss = 0.0;
                for (Eigen::Index r = 0; r < n; ++r) {
                    if (!mask[static_cast<std::size_t>(r)]) ss += (v(r) - mean) * (v(r) - mean);
                }
                if (count < 2 || ss <= 0.0) throw DataError("cannot standardize constant column '" + var.name + "'");
                const double sd = std::sqrt(ss / static_cast<double>(count - 1));
                for (Eigen::Index r = 0; r < n; ++r) {
                    if (!mask[static_cast<std::size_t>(r)]) v(r) = (v(r) - mean) / sd;
                }
                push(std::move(v), std::move(mask), ColumnInfo{var.name, var.name, var.kind, {}, -1});
                break;
            }
            case VariableKind::binary:
            case VariableKind::ordinal: {
                auto q = quantify_ordinal_univariate(table, c);
                Eigen::VectorXd v(n);
                for (Eigen::Index r = 0; r < n; ++r) {
                    v(r) = mask[static_cast<std::size_t>(r)] ? std::numeric_limits<double>::quiet_NaN()
                                                             : q.value_of(table.cell(static_cast<std::size_t>(r), c));
                }
                push(std::move(v), std::move(mask), ColumnInfo{var.name, var.name, var.kind, q.level_values, -1});
                out.variables.push_back(std::move(q));
                break;
            }
            case VariableKind::categorical: {
                const auto dummies = encode_categorical(table, var.name);
                for (std::size_t d = 0; d < dummies.cols(); ++d) {
                    push(dummies.values.col(static_cast<Eigen::Index>(d)), mask,
                         ColumnInfo{dummies.column_names[d], var.name, VariableKind::binary, {0.0, 1.0}, group});
                }
                ++group;
                break;
            }
        }
    }

    const auto k = static_cast<Eigen::Index>(columns.size());
    Eigen::MatrixXd values(n, k);
    BoolMatrix mask(n, k);
    std::vector<std::string> names;
    for (Eigen::Index c = 0; c < k; ++c) {
        values.col(c) = columns[static_cast<std::size_t>(c)];
        for (Eigen::Index r = 0; r < n; ++r) mask(r, c) = masks[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)];
        names.push_back(out.columns[static_cast<std::size_t>(c)].name);
    }
    out.matrix = NumericMatrix(std::move(values), std::move(mask), std::move(names));
    return out;
}

std::string quantification_to_json(const std::vector<QuantifiedVariable>& variables,
                                   const std::vector<ScaledColumn>& scaled,
                                   const std::vector<std::string>& column_names) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::object();
    for (const auto& q : variables) {
        nlohmann::ordered_json levels = nlohmann::ordered_json::object();
        for (std::size_t i = 0; i < q.levels.size(); ++i) levels[q.levels[i]] = q.level_values[i];
        nlohmann::ordered_json entry;
        entry["univariate"] = levels;
        for (const auto& sc : scaled) {
            if (sc.column >= column_names.size() || column_names[sc.column] != q.column) continue;
            nlohmann::ordered_json mapped = nlohmann::ordered_json::object();
            for (std::size_t i = 0; i < q.levels.size(); ++i) {
                const auto it = std::find(sc.original_values.begin(), sc.original_values.end(), q.level_values[i]);
                if (it != sc.original_values.end()) {
                    mapped[q.levels[i]] = sc.scaled_values[static_cast<std::size_t>(it - sc.original_values.begin())];
                }
            }
            entry["optimal_scaling"] = mapped;
        }
        doc[q.column] = entry;
    }
    return doc.dump(2);
}

}  // namespace clintraj
