#include "clintraj/survival.hpp"

#include "clintraj/distributions.hpp"
#include "clintraj/error.hpp"
#include "format.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace clintraj {

void EventTable::validate() const {
    const auto n = time.size();
    if (event.size() != n) throw PreconditionError("event table: event column length differs from time column");
    if (!cause.empty() && cause.size() != n) throw PreconditionError("event table: cause column length differs");
    if (covariates.rows() != 0 && static_cast<std::size_t>(covariates.rows()) != n) {
        throw PreconditionError("event table: covariate rows differ from subject count");
    }
    if (static_cast<std::size_t>(covariates.cols()) != covariate_names.size()) {
        throw PreconditionError("event table: covariate names do not match covariate columns");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!(time[i] >= 0.0) || !std::isfinite(time[i])) {
            throw DataError("event table: subject " + std::to_string(i) + " has invalid time");
        }
        if (event[i] != 0 && event[i] != 1) throw DataError("event table: event indicator must be 0 or 1");
        if (!cause.empty()) {
            if (cause[i] >= 0 && event[i] == 0) {
                throw DataError("event table: subject " + std::to_string(i) + " is censored but has a cause");
            }
            if (cause[i] >= static_cast<int>(cause_names.size())) throw DataError("event table: cause index out of range");
        }
    }
}

EventTable EventTable::select(const std::vector<std::size_t>& rows) const {
    EventTable out;
    out.cause_names = cause_names;
    out.covariate_names = covariate_names;
    out.covariates.resize(static_cast<Eigen::Index>(rows.size()), covariates.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto i = rows[k];
        out.time.push_back(time.at(i));
        out.event.push_back(event.at(i));
        if (!cause.empty()) out.cause.push_back(cause[i]);
        if (covariates.cols() > 0) out.covariates.row(static_cast<Eigen::Index>(k)) = covariates.row(static_cast<Eigen::Index>(i));
    }
    return out;
}

double HazardCurve::at(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 0.0;
    return cumulative_hazard[static_cast<std::size_t>(it - times.begin() - 1)];
}

namespace {

// Nelson-Aalen over subjects whose event counts when `counts(i)` holds.
template <typename Counts>
HazardCurve nelson_aalen_where(const std::vector<double>& time, Counts counts) {
    const auto n = time.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return time[a] < time[b]; });

    HazardCurve curve;
    double h = 0.0;
    double var = 0.0;
    std::size_t k = 0;
    while (k < n) {
        const double t = time[order[k]];
        const double at_risk = static_cast<double>(n - k);
        double d = 0.0;
        std::size_t j = k;
        for (; j < n && time[order[j]] == t; ++j) d += counts(order[j]) ? 1.0 : 0.0;
        if (d > 0.0) {
            h += d / at_risk;
            var += d / (at_risk * at_risk);
            curve.times.push_back(t);
            curve.cumulative_hazard.push_back(h);
            curve.variance.push_back(var);
            curve.at_risk.push_back(at_risk);
            curve.events.push_back(d);
        }
        k = j;
    }
    return curve;
}

}  // namespace

HazardCurve nelson_aalen(const EventTable& events) {
    events.validate();
    if (events.size() == 0) throw PreconditionError("nelson_aalen: no subjects");
    return nelson_aalen_where(events.time, [&](std::size_t i) { return events.event[i] == 1; });
}

std::map<std::string, HazardCurve> cause_specific_hazards(const EventTable& events,
                                                          const std::vector<std::string>& causes) {
    events.validate();
    if (events.size() == 0) throw PreconditionError("cause_specific_hazards: no subjects");
    if (events.cause.empty()) throw PreconditionError("cause_specific_hazards: event table has no cause labels");
    const auto& wanted = causes.empty() ? events.cause_names : causes;
    std::map<std::string, HazardCurve> out;
    for (const auto& name : wanted) {
        const auto it = std::find(events.cause_names.begin(), events.cause_names.end(), name);
        if (it == events.cause_names.end()) throw PreconditionError("cause_specific_hazards: unknown cause '" + name + "'");
        const int c = static_cast<int>(it - events.cause_names.begin());
        out[name] = nelson_aalen_where(events.time,
                                       [&](std::size_t i) { return events.event[i] == 1 && events.cause[i] == c; });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cox regression

namespace {

struct CoxTerms {
    double loglik = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd information;
};

// Breslow partial likelihood with gradient and observed information. `order`
// sorts subjects by decreasing time so risk sets accumulate in one sweep.
CoxTerms cox_terms(const EventTable& ev, const std::vector<std::size_t>& order, const Eigen::VectorXd& beta) {
    const auto p = beta.size();
    CoxTerms out;
    out.gradient = Eigen::VectorXd::Zero(p);
    out.information = Eigen::MatrixXd::Zero(p, p);
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
    const auto n = order.size();
    std::size_t k = 0;
    while (k < n) {
        const double t = ev.time[order[k]];
        std::size_t j = k;
        double d = 0.0;
        Eigen::VectorXd xsum = Eigen::VectorXd::Zero(p);
        for (; j < n && ev.time[order[j]] == t; ++j) {
            const auto i = static_cast<Eigen::Index>(order[j]);
            const Eigen::VectorXd x = ev.covariates.row(i).transpose();
            const double w = std::exp(x.dot(beta));
            s0 += w;
            s1 += w * x;
            s2 += w * x * x.transpose();
            if (ev.event[order[j]] == 1) {
                d += 1.0;
                xsum += x;
                out.loglik += x.dot(beta);
            }
        }
        if (d > 0.0) {
            const Eigen::VectorXd mean = s1 / s0;
            out.loglik -= d * std::log(s0);
            out.gradient += xsum - d * mean;
            out.information += d * (s2 / s0 - mean * mean.transpose());
        }
        k = j;
    }
    return out;
}

std::vector<std::size_t> decreasing_time_order(const EventTable& ev) {
    std::vector<std::size_t> order(ev.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return ev.time[a] > ev.time[b]; });
    return order;
}

struct NewtonResult {
    Eigen::VectorXd beta;
    CoxTerms terms;
    int iterations = 0;
    bool converged = false;
};

NewtonResult newton(const EventTable& ev, const std::vector<std::size_t>& order, double ridge) {
    const auto p = ev.covariates.cols();
    auto penalized = [&](const Eigen::VectorXd& b) {
        auto t = cox_terms(ev, order, b);
        t.loglik -= 0.5 * ridge * b.squaredNorm();
        t.gradient -= ridge * b;
        t.information += ridge * Eigen::MatrixXd::Identity(p, p);
        return t;
    };
    NewtonResult r;
    r.beta = Eigen::VectorXd::Zero(p);
    r.terms = penalized(r.beta);
    for (r.iterations = 0; r.iterations < 100; ++r.iterations) {
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(r.terms.information);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
        const Eigen::VectorXd step = ldlt.solve(r.terms.gradient);
        // Under separation the gradient vanishes while Newton steps stay of
        // order one, so a small gradient alone is not convergence.
        if ((r.terms.gradient.norm() < 1e-8 && step.norm() < 1e-6 * (1.0 + r.beta.norm())) ||
            step.norm() < 1e-12 * (1.0 + r.beta.norm())) {
            r.converged = true;
            break;
        }
        double scale = 1.0;
        bool improved = false;
        for (int halving = 0; halving < 40; ++halving, scale *= 0.5) {
            const Eigen::VectorXd candidate = r.beta + scale * step;
            auto t = penalized(candidate);
            if (std::isfinite(t.loglik) && t.loglik >= r.terms.loglik - 1e-12 * std::abs(r.terms.loglik)) {
                r.beta = candidate;
                r.terms = std::move(t);
                improved = true;
                break;
            }
        }
        if (!improved) break;
        if (r.beta.cwiseAbs().maxCoeff() > 30.0) break;
    }
    return r;
}

void check_collinearity(const EventTable& ev) {
    // Greedy in column order, so the reported names are the later columns
    // that add nothing to the span of the earlier ones.
    const Eigen::MatrixXd centered = ev.covariates.rowwise() - ev.covariates.colwise().mean();
    std::string names;
    Eigen::Index rank = 0;
    for (Eigen::Index k = 0; k < centered.cols(); ++k) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(centered.leftCols(k + 1));
        qr.setThreshold(1e-10);
        if (qr.rank() > rank) {
            rank = qr.rank();
            continue;
        }
        if (!names.empty()) names += ", ";
        names += ev.covariate_names[static_cast<std::size_t>(k)];
    }
    if (!names.empty()) throw DataError("cox_fit: singular information; collinear or constant covariates: " + names);
}

}  // namespace

double cox_log_partial_likelihood(const EventTable& events, const Eigen::VectorXd& beta) {
    events.validate();
    return cox_terms(events, decreasing_time_order(events), beta).loglik;
}

CoxFit cox_fit(const EventTable& events) {
    events.validate();
    if (events.covariates.cols() == 0) throw PreconditionError("cox_fit: no covariates to fit");
    {
        std::vector<double> event_times;
        for (std::size_t i = 0; i < events.size(); ++i) {
            if (events.event[i] == 1) event_times.push_back(events.time[i]);
        }
        std::sort(event_times.begin(), event_times.end());
        if (std::unique(event_times.begin(), event_times.end()) - event_times.begin() < 2) {
            throw PreconditionError("cox_fit: needs at least 2 distinct event times");
        }
    }
    check_collinearity(events);

    const auto order = decreasing_time_order(events);
    CoxFit fit;
    fit.covariate_names = events.covariate_names;
    auto r = newton(events, order, 0.0);
    if (!r.converged) {
        fit.ridge = 1.0;
        fit.warnings.push_back("monotone partial likelihood (separation); coefficients are ridge-penalized");
        r = newton(events, order, fit.ridge);
    }
    fit.coefficients = r.beta;
    fit.iterations = r.iterations;
    fit.converged = r.converged;
    fit.log_partial_likelihood = cox_terms(events, order, r.beta).loglik;

    const Eigen::LDLT<Eigen::MatrixXd> ldlt(r.terms.information);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        throw NumericalError("cox_fit: observed information is not positive definite at the optimum");
    }
    const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(r.beta.size(), r.beta.size()));
    fit.standard_errors = cov.diagonal().cwiseSqrt();
    fit.p_values.resize(r.beta.size());
    for (Eigen::Index k = 0; k < r.beta.size(); ++k) {
        fit.p_values(k) = dist::z_two_sided(r.beta(k) / fit.standard_errors(k));
    }
    return fit;
}

GroupComparison group_cumhazard_compare(const EventTable& events, const std::vector<int>& group) {
    events.validate();
    if (group.size() != events.size()) throw PreconditionError("group_cumhazard_compare: group length mismatch");
    std::vector<std::size_t> idx0, idx1;
    for (std::size_t i = 0; i < group.size(); ++i) {
        if (group[i] == 0) {
            idx0.push_back(i);
        } else if (group[i] == 1) {
            idx1.push_back(i);
        } else {
            throw PreconditionError("group_cumhazard_compare: group labels must be 0 or 1");
        }
    }
    if (idx0.empty() || idx1.empty()) throw PreconditionError("group_cumhazard_compare: a group is empty");

    GroupComparison out;
    out.group0 = nelson_aalen(events.select(idx0));
    out.group1 = nelson_aalen(events.select(idx1));

    std::vector<std::size_t> order(events.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return events.time[a] < events.time[b]; });
    double n = static_cast<double>(events.size());
    double n1 = static_cast<double>(idx1.size());
    double observed_minus_expected = 0.0;
    double variance = 0.0;
    double total_events = 0.0;
    std::size_t k = 0;
    while (k < order.size()) {
        const double t = events.time[order[k]];
        double d = 0.0, d1 = 0.0, leaving = 0.0, leaving1 = 0.0;
        std::size_t j = k;
        for (; j < order.size() && events.time[order[j]] == t; ++j) {
            const auto i = order[j];
            const bool in1 = group[i] == 1;
            leaving += 1.0;
            leaving1 += in1 ? 1.0 : 0.0;
            if (events.event[i] == 1) {
                d += 1.0;
                d1 += in1 ? 1.0 : 0.0;
            }
        }
        if (d > 0.0) {
            observed_minus_expected += d1 - d * n1 / n;
            if (n > 1.0) variance += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1.0);
            total_events += d;
        }
        n -= leaving;
        n1 -= leaving1;
        k = j;
    }
    if (total_events == 0.0 || !(variance > 0.0)) {
        out.warnings.push_back("no events to compare; log-rank p set to 1");
        out.p_value = 1.0;
        return out;
    }
    out.statistic = observed_minus_expected * observed_minus_expected / variance;
    out.p_value = dist::chi2_sf(out.statistic, 1.0);
    return out;
}

void write_hazard_csv(std::ostream& out, const HazardCurve& curve) {
    out << "t,H,var,at_risk,events\n";
    for (std::size_t k = 0; k < curve.times.size(); ++k) {
        out << detail::format_exact(curve.times[k]) << ',' << detail::format_exact(curve.cumulative_hazard[k]) << ','
            << detail::format_exact(curve.variance[k]) << ',' << detail::format_exact(curve.at_risk[k]) << ','
            << detail::format_exact(curve.events[k]) << '\n';
    }
}

std::string cox_to_json(const CoxFit& fit) {
    nlohmann::ordered_json doc;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < fit.covariate_names.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        rows.push_back({{"covariate", fit.covariate_names[k]},
                        {"coefficient", fit.coefficients(i)},
                        {"hazard_ratio", std::exp(fit.coefficients(i))},
                        {"standard_error", fit.standard_errors(i)},
                        {"p_value", fit.p_values(i)}});
    }
    doc["coefficients"] = rows;
    doc["log_partial_likelihood"] = fit.log_partial_likelihood;
    doc["iterations"] = fit.iterations;
    doc["converged"] = fit.converged;
    doc["ridge"] = fit.ridge;
    doc["warnings"] = fit.warnings;
    return doc.dump(2);
}

}  // namespace clintraj
