#include "clintraj/stats.hpp"

#include "clintraj/distributions.hpp"
#include "clintraj/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace clintraj {

namespace {

constexpr double kMinExpected = 1e-9;

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double r_squared(std::span<const double> y, const std::vector<double>& fitted) {
    const double mean = mean_of(y);
    double ss_tot = 0.0;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ss_tot += (y[i] - mean) * (y[i] - mean);
        ss_res += (y[i] - fitted[i]) * (y[i] - fitted[i]);
    }
    return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
}

double pearson(std::span<const double> a, const std::vector<double>& b) {
    const double ma = mean_of(a);
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

AssociationResult chi2_association(const std::vector<std::size_t>& segments, const std::vector<int>& values,
                                   const std::string& variable, bool enrichment_positive) {
    if (segments.size() != values.size()) throw PreconditionError("chi2_association: length mismatch");
    std::map<std::size_t, std::size_t> row_of;
    std::map<int, std::size_t> col_of;
    for (auto s : segments) row_of.emplace(s, 0);
    for (auto v : values) col_of.emplace(v, 0);
    if (row_of.size() < 2 || col_of.size() < 2) {
        throw PreconditionError("chi2_association: degenerate contingency table (needs >= 2 segments and >= 2 values)");
    }
    std::vector<std::size_t> row_keys;
    std::vector<int> col_keys;
    for (auto& [k, idx] : row_of) {
        idx = row_keys.size();
        row_keys.push_back(k);
    }
    for (auto& [k, idx] : col_of) {
        idx = col_keys.size();
        col_keys.push_back(k);
    }

    const auto r = row_keys.size();
    const auto c = col_keys.size();
    Eigen::MatrixXd observed = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (std::size_t i = 0; i < segments.size(); ++i) {
        observed(static_cast<Eigen::Index>(row_of[segments[i]]), static_cast<Eigen::Index>(col_of[values[i]])) += 1.0;
    }
    const double n = observed.sum();
    const Eigen::VectorXd row_sum = observed.rowwise().sum();
    const Eigen::RowVectorXd col_sum = observed.colwise().sum();

    AssociationResult out;
    out.variable = variable;
    out.test = AssociationTest::chi2;
    out.dof = static_cast<double>((r - 1) * (c - 1));
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            const auto ii = static_cast<Eigen::Index>(i);
            const auto jj = static_cast<Eigen::Index>(j);
            const double e = row_sum(ii) * col_sum(jj) / n;
            const double o = observed(ii, jj);
            out.statistic += (o - e) * (o - e) / e;
            if (e < kMinExpected) continue;
            SegmentEffect cell;
            cell.segment = row_keys[i];
            cell.value = col_keys[j];
            cell.observed = o;
            cell.expected = e;
            cell.score = enrichment_positive ? (o - e) / e : (e - o) / e;
            const double var = e * (1.0 - row_sum(ii) / n) * (1.0 - col_sum(jj) / n);
            cell.p_value = var > 0.0 ? dist::z_two_sided((o - e) / std::sqrt(var)) : 1.0;
            out.per_segment.push_back(cell);
        }
    }
    out.p_value = dist::chi2_sf(out.statistic, out.dof);
    return out;
}

AssociationResult anova_association(const std::vector<std::size_t>& segments, const std::vector<double>& values,
                                    const std::string& variable, std::size_t segment_count) {
    if (segments.size() != values.size()) throw PreconditionError("anova_association: length mismatch");
    AssociationResult out;
    out.variable = variable;
    out.test = AssociationTest::anova;

    std::map<std::size_t, std::pair<double, double>> groups;  // segment -> (count, sum)
    for (std::size_t i = 0; i < segments.size(); ++i) {
        auto& g = groups[segments[i]];
        g.first += 1.0;
        g.second += values[i];
    }
    for (std::size_t s = 0; s < segment_count; ++s) {
        if (!groups.count(s)) out.warnings.push_back("segment " + std::to_string(s) + " has no points; dropped");
    }
    if (groups.size() < 2) throw PreconditionError("anova_association: needs at least 2 non-empty segments");

    const double n = static_cast<double>(values.size());
    const double grand = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss_total = 0.0;
    for (double v : values) ss_total += (v - grand) * (v - grand);
    if (!(ss_total > 0.0)) throw DataError("anova_association: variable '" + variable + "' is constant");

    double ss_between = 0.0;
    for (const auto& [s, g] : groups) {
        const double m = g.second / g.first;
        ss_between += g.first * (m - grand) * (m - grand);
    }
    const double ss_within = std::max(0.0, ss_total - ss_between);
    const double k = static_cast<double>(groups.size());
    const double df1 = k - 1.0;
    const double df2 = n - k;
    out.dof = df1;
    if (df2 <= 0.0) throw PreconditionError("anova_association: not enough points for the number of segments");
    const double msw = ss_within / df2;
    out.statistic = msw > 0.0 ? (ss_between / df1) / msw : std::numeric_limits<double>::infinity();
    out.p_value = dist::f_sf(out.statistic, df1, df2);

    for (const auto& [s, g] : groups) {
        SegmentEffect e;
        e.segment = s;
        e.observed = g.first;
        e.score = g.second / g.first - grand;
        // Var(mean_s - grand mean) = sigma^2 (N - n_s) / (N n_s).
        const double se = std::sqrt(msw * (n - g.first) / (n * g.first));
        if (se > 0.0) {
            e.p_value = dist::t_two_sided(e.score / se, df2);
        } else {
            e.p_value = e.score == 0.0 ? 1.0 : 0.0;
        }
        out.per_segment.push_back(e);
    }
    return out;
}

std::vector<double> benjamini_hochberg(const std::vector<double>& p_values) {
    const auto m = p_values.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p_values[a] < p_values[b]; });
    std::vector<double> adjusted(m);
    double running = 1.0;
    for (std::size_t k = m; k-- > 0;) {
        const auto i = order[k];
        running = std::min(running, p_values[i] * static_cast<double>(m) / static_cast<double>(k + 1));
        adjusted[i] = running;
    }
    return adjusted;
}

// ---------------------------------------------------------------------------
// Pseudotime regression

std::string to_string(RegressionKind kind) {
    switch (kind) {
        case RegressionKind::linear: return "linear";
        case RegressionKind::gaussian_kernel: return "gaussian_kernel";
        case RegressionKind::logistic: return "logistic";
    }
    return "linear";
}

double silverman_bandwidth(std::span<const double> t) {
    const auto n = t.size();
    if (n < 2) return 0.25;
    const double mean = mean_of(t);
    double ss = 0.0;
    for (double v : t) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    std::vector<double> sorted(t.begin(), t.end());
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(n - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, n - 1);
        return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    };
    const double iqr = quantile(0.75) - quantile(0.25);
    double spread = std::min(sd, iqr / 1.34);
    if (!(spread > 0.0)) spread = sd;
    return std::max(0.25, 0.9 * spread * std::pow(static_cast<double>(n), -0.2));
}

namespace {

std::vector<double> make_grid(std::span<const double> pt, std::size_t size) {
    const auto [lo, hi] = std::minmax_element(pt.begin(), pt.end());
    std::vector<double> grid(size);
    for (std::size_t k = 0; k < size; ++k) {
        grid[k] = size == 1 ? *lo : *lo + (*hi - *lo) * static_cast<double>(k) / static_cast<double>(size - 1);
    }
    return grid;
}

// Nadaraya-Watson estimate at `at`, summing points within 6 bandwidths.
class KernelSmoother {
public:
    KernelSmoother(std::span<const double> pt, std::span<const double> y, double h) : h_(h) {
        std::vector<std::size_t> order(pt.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return pt[a] < pt[b]; });
        for (auto i : order) {
            t_.push_back(pt[i]);
            y_.push_back(y[i]);
        }
    }

    double operator()(double at) const {
        const double reach = 6.0 * h_;
        auto lo = std::lower_bound(t_.begin(), t_.end(), at - reach) - t_.begin();
        auto hi = std::upper_bound(t_.begin(), t_.end(), at + reach) - t_.begin();
        double wsum = 0.0, wy = 0.0;
        for (auto i = lo; i < hi; ++i) {
            const double u = (t_[static_cast<std::size_t>(i)] - at) / h_;
            const double w = std::exp(-0.5 * u * u);
            wsum += w;
            wy += w * y_[static_cast<std::size_t>(i)];
        }
        if (wsum > 0.0) return wy / wsum;
        // Isolated evaluation point: fall back to the nearest observation.
        const auto near = std::min<std::ptrdiff_t>(std::max<std::ptrdiff_t>(lo, 0), static_cast<std::ptrdiff_t>(t_.size()) - 1);
        return y_[static_cast<std::size_t>(near)];
    }

private:
    double h_;
    std::vector<double> t_;
    std::vector<double> y_;
};

struct LogisticFit {
    double b0 = 0.0;
    double b1 = 0.0;
    bool converged = false;
};

// Newton-Raphson (IRLS) on standardized pseudotime with optional ridge on the slope.
LogisticFit fit_logistic(const std::vector<double>& z, std::span<const double> y, double ridge) {
    LogisticFit f;
    for (int iter = 0; iter < 100; ++iter) {
        double g0 = 0.0, g1 = -ridge * f.b1;
        double h00 = 0.0, h01 = 0.0, h11 = ridge;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double p = 1.0 / (1.0 + std::exp(-(f.b0 + f.b1 * z[i])));
            const double w = p * (1.0 - p);
            g0 += y[i] - p;
            g1 += (y[i] - p) * z[i];
            h00 += w;
            h01 += w * z[i];
            h11 += w * z[i] * z[i];
        }
        const double det = h00 * h11 - h01 * h01;
        if (!(det > 1e-300)) break;
        const double d0 = (h11 * g0 - h01 * g1) / det;
        const double d1 = (h00 * g1 - h01 * g0) / det;
        f.b0 += d0;
        f.b1 += d1;
        if (std::abs(d0) < 1e-10 && std::abs(d1) < 1e-10) {
            f.converged = true;
            break;
        }
        if (std::abs(f.b1) > 50.0) break;
    }
    return f;
}

}  // namespace

RegressionFit regress_on_pseudotime(std::span<const double> pt, std::span<const double> y, RegressionKind kind,
                                    std::size_t grid_size) {
    if (pt.size() != y.size()) throw PreconditionError("regress_on_pseudotime: length mismatch");
    const auto n = pt.size();
    if (n < 10) throw PreconditionError("regress_on_pseudotime: needs at least 10 points, got " + std::to_string(n));

    RegressionFit fit;
    fit.kind = kind;
    fit.grid = make_grid(pt, std::max<std::size_t>(grid_size, 2));
    std::vector<double> fitted(n);

    switch (kind) {
        case RegressionKind::linear: {
            const double mt = mean_of(pt);
            const double my = mean_of(y);
            double stt = 0.0, sty = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                stt += (pt[i] - mt) * (pt[i] - mt);
                sty += (pt[i] - mt) * (y[i] - my);
            }
            const double slope = stt > 0.0 ? sty / stt : 0.0;
            const double intercept = my - slope * mt;
            fit.coefficients = {intercept, slope};
            for (std::size_t i = 0; i < n; ++i) fitted[i] = intercept + slope * pt[i];
            for (double t : fit.grid) fit.curve.push_back(intercept + slope * t);
            fit.r_squared = r_squared(y, fitted);
            break;
        }
        case RegressionKind::gaussian_kernel: {
            fit.bandwidth = silverman_bandwidth(pt);
            const KernelSmoother smooth(pt, y, fit.bandwidth);
            if (n <= 2000) {
                for (std::size_t i = 0; i < n; ++i) fitted[i] = smooth(pt[i]);
            } else {
                // Large trajectories: evaluate on a fine grid and interpolate linearly.
                const auto dense = make_grid(pt, 1024);
                std::vector<double> values(dense.size());
                for (std::size_t k = 0; k < dense.size(); ++k) values[k] = smooth(dense[k]);
                const double lo = dense.front();
                const double step = dense[1] - dense[0];
                for (std::size_t i = 0; i < n; ++i) {
                    if (!(step > 0.0)) {
                        fitted[i] = values[0];
                        continue;
                    }
                    const double pos = (pt[i] - lo) / step;
                    const auto k = std::min<std::size_t>(static_cast<std::size_t>(pos), dense.size() - 2);
                    const double frac = pos - static_cast<double>(k);
                    fitted[i] = values[k] + frac * (values[k + 1] - values[k]);
                }
            }
            for (double t : fit.grid) fit.curve.push_back(smooth(t));
            fit.r_squared = r_squared(y, fitted);
            break;
        }
        case RegressionKind::logistic: {
            for (double v : y) {
                if (v != 0.0 && v != 1.0) throw PreconditionError("logistic regression needs a 0/1 outcome");
            }
            const double mt = mean_of(pt);
            double ss = 0.0;
            for (double t : pt) ss += (t - mt) * (t - mt);
            const double sd = ss > 0.0 ? std::sqrt(ss / static_cast<double>(n - 1)) : 1.0;
            std::vector<double> z(n);
            for (std::size_t i = 0; i < n; ++i) z[i] = (pt[i] - mt) / sd;

            const double ybar = mean_of(y);
            LogisticFit lf;
            if (ybar == 0.0 || ybar == 1.0) {
                fit.warnings.push_back("outcome is constant on this trajectory");
                lf.b0 = ybar == 0.0 ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
                lf.converged = true;
            } else {
                lf = fit_logistic(z, y, 0.0);
                if (!lf.converged) {
                    lf = fit_logistic(z, y, 1.0);
                    fit.warnings.push_back("quasi-separation: slope fitted with ridge damping");
                }
            }
            auto prob = [&](double t) {
                if (std::isinf(lf.b0)) return lf.b0 > 0 ? 1.0 : 0.0;
                return 1.0 / (1.0 + std::exp(-(lf.b0 + lf.b1 * (t - mt) / sd)));
            };
            fit.coefficients = {lf.b0 - lf.b1 * mt / sd, lf.b1 / sd};
            for (std::size_t i = 0; i < n; ++i) fitted[i] = prob(pt[i]);
            for (double t : fit.grid) fit.curve.push_back(prob(t));
            const double r = pearson(y, fitted);
            fit.r_squared = r * r;
            break;
        }
    }
    return fit;
}

std::size_t TrajectoryScreen::variables_passing() const {
    std::size_t count = 0;
    for (Eigen::Index v = 0; v < passed.rows(); ++v) count += passed.row(v).any() ? 1 : 0;
    return count;
}

TrajectoryScreen screen_trajectory_associations(const PseudotimeAssignment& assignment, const NumericMatrix& variables,
                                                double threshold, RegressionKind continuous_kind) {
    if (variables.rows() != assignment.pseudotime.size()) {
        throw PreconditionError("screen_trajectory_associations: variable rows do not match assigned points");
    }
    const auto nv = static_cast<Eigen::Index>(variables.cols());
    const auto nt = static_cast<Eigen::Index>(assignment.trajectories.size());
    TrajectoryScreen screen;
    screen.variables = variables.column_names;
    screen.threshold = threshold;
    screen.r_squared = Eigen::MatrixXd::Constant(nv, nt, std::numeric_limits<double>::quiet_NaN());
    screen.passed = BoolMatrix::Constant(nv, nt, false);

    std::vector<std::vector<std::size_t>> members;
    for (Eigen::Index t = 0; t < nt; ++t) members.push_back(assignment.points_on(static_cast<std::size_t>(t)));

    for (Eigen::Index v = 0; v < nv; ++v) {
        std::vector<double> distinct;
        for (std::size_t i = 0; i < variables.rows() && distinct.size() <= 2; ++i) {
            const double val = variables.values(static_cast<Eigen::Index>(i), v);
            if (std::find(distinct.begin(), distinct.end(), val) == distinct.end()) distinct.push_back(val);
        }
        const bool binary = distinct.size() == 2;
        const double low = binary ? std::min(distinct[0], distinct[1]) : 0.0;
        const auto kind = binary ? RegressionKind::logistic : continuous_kind;
        screen.kinds.push_back(kind);

        for (Eigen::Index t = 0; t < nt; ++t) {
            const auto& idx = members[static_cast<std::size_t>(t)];
            if (idx.size() < 10) continue;
            std::vector<double> pt, y;
            pt.reserve(idx.size());
            y.reserve(idx.size());
            for (auto i : idx) {
                pt.push_back(assignment.pseudotime[i]);
                const double val = variables.values(static_cast<Eigen::Index>(i), v);
                y.push_back(binary ? (val == low ? 0.0 : 1.0) : val);
            }
            const auto fit = regress_on_pseudotime(pt, y, kind);
            screen.r_squared(v, t) = fit.r_squared;
            screen.passed(v, t) = fit.r_squared > threshold;
        }
    }
    return screen;
}

}  // namespace clintraj
