#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace clintraj {

/// Per-subject pseudotime, event indicator, optional cause and covariates.
/// Subjects without an event are censored at their own time.
struct EventTable {
    std::vector<double> time;
    std::vector<int> event;  // 1 = event, 0 = censored
    std::vector<int> cause;  // index into cause_names, -1 when censored or unknown; may be empty
    std::vector<std::string> cause_names;
    Eigen::MatrixXd covariates;  // subjects x covariates; may have zero columns
    std::vector<std::string> covariate_names;

    std::size_t size() const { return time.size(); }
    void validate() const;
    EventTable select(const std::vector<std::size_t>& rows) const;
};

struct HazardCurve {
    std::vector<double> times;  // distinct event times, ascending
    std::vector<double> cumulative_hazard;
    std::vector<double> variance;
    std::vector<double> at_risk;
    std::vector<double> events;

    /// H(t) as a right-continuous step function, 0 before the first event.
    double at(double t) const;
};

HazardCurve nelson_aalen(const EventTable& events);

/// Nelson-Aalen curve per cause, treating other causes as censoring. An empty
/// `causes` list means every declared cause.
std::map<std::string, HazardCurve> cause_specific_hazards(const EventTable& events,
                                                          const std::vector<std::string>& causes = {});

struct CoxFit {
    std::vector<std::string> covariate_names;
    Eigen::VectorXd coefficients;
    Eigen::VectorXd standard_errors;
    Eigen::VectorXd p_values;
    double log_partial_likelihood = 0.0;
    int iterations = 0;
    bool converged = false;
    double ridge = 0.0;
    std::vector<std::string> warnings;
};

/// Cox proportional hazards with Breslow ties, fitted by Newton-Raphson.
/// Falls back to a ridge-penalized fit when the likelihood is monotone.
CoxFit cox_fit(const EventTable& events);

/// Breslow log partial likelihood at `beta`.
double cox_log_partial_likelihood(const EventTable& events, const Eigen::VectorXd& beta);

struct GroupComparison {
    HazardCurve group0;
    HazardCurve group1;
    double statistic = 0.0;
    double p_value = 1.0;
    std::vector<std::string> warnings;
};

/// Per-group Nelson-Aalen curves and the log-rank test; `group` holds 0/1 per subject.
GroupComparison group_cumhazard_compare(const EventTable& events, const std::vector<int>& group);

void write_hazard_csv(std::ostream& out, const HazardCurve& curve);
std::string cox_to_json(const CoxFit& fit);

}  // namespace clintraj
