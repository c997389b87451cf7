#include "clintraj/error.hpp"
#include "clintraj/survival.hpp"

#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

using namespace clintraj;

namespace {

EventTable table(std::vector<double> t, std::vector<int> e) {
    EventTable ev;
    ev.time = std::move(t);
    ev.event = std::move(e);
    ev.covariates.resize(static_cast<Eigen::Index>(ev.time.size()), 0);
    return ev;
}

// Exponential survival with hazard exp(beta * z), uniform censoring.
EventTable simulate(std::mt19937_64& rng, std::size_t n, double beta, bool binary) {
    EventTable ev;
    ev.covariates.resize(static_cast<Eigen::Index>(n), 1);
    ev.covariate_names = {"z"};
    for (std::size_t i = 0; i < n; ++i) {
        const double z = binary ? (synth::uniform(rng) < 0.5 ? 1.0 : 0.0) : synth::normal(rng);
        const double event_time = -std::log(1.0 - synth::uniform(rng)) / std::exp(beta * z);
        const double censor = 3.0 * synth::uniform(rng);
        ev.time.push_back(std::min(event_time, censor));
        ev.event.push_back(event_time <= censor ? 1 : 0);
        ev.covariates(static_cast<Eigen::Index>(i), 0) = z;
    }
    return ev;
}

// Breslow log partial likelihood for one covariate, written from the
// definition: sum over distinct event times of sum_{D} b z - d log sum_{R} e^{b z}.
double breslow_1d(const EventTable& ev, double b) {
    double ll = 0.0;
    std::vector<double> times;
    for (std::size_t i = 0; i < ev.size(); ++i) if (ev.event[i]) times.push_back(ev.time[i]);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    for (double t : times) {
        double d = 0, num = 0, risk = 0;
        for (std::size_t i = 0; i < ev.size(); ++i) {
            const double z = ev.covariates(static_cast<Eigen::Index>(i), 0);
            if (ev.time[i] >= t) risk += std::exp(b * z);
            if (ev.event[i] && ev.time[i] == t) d += 1, num += b * z;
        }
        ll += num - d * std::log(risk);
    }
    return ll;
}

}  // namespace

TEST(NelsonAalen, SingleEvent) {
    std::vector<double> t{1};
    std::vector<int> e{1};
    for (int i = 0; i < 9; ++i) t.push_back(2.0 + i), e.push_back(0);
    const auto h = nelson_aalen(table(t, e));
    ASSERT_EQ(h.times.size(), 1u);
    EXPECT_DOUBLE_EQ(h.at(1.0), 0.1);
    EXPECT_DOUBLE_EQ(h.at(0.999), 0.0);
    EXPECT_DOUBLE_EQ(h.variance[0], 0.01);
}

TEST(NelsonAalen, TwoEventsHandComputed) {
    const auto h = nelson_aalen(table({1, 2, 3, 4, 5}, {1, 1, 0, 0, 0}));
    EXPECT_DOUBLE_EQ(h.at(2.0), 1.0 / 5.0 + 1.0 / 4.0);
    EXPECT_DOUBLE_EQ(h.at(2.0), 0.45);
    EXPECT_EQ(h.at_risk, (std::vector<double>{5, 4}));
    EXPECT_DOUBLE_EQ(h.variance[1], 1.0 / 25.0 + 1.0 / 16.0);
}

TEST(NelsonAalen, NoEventsIsFlatZero) {
    const auto h = nelson_aalen(table({1, 2, 3}, {0, 0, 0}));
    EXPECT_TRUE(h.times.empty());
    EXPECT_EQ(h.at(100.0), 0.0);
}

TEST(NelsonAalen, TiesAndCensoringAtEventTime) {
    // Censored at 2 is still at risk at 2.
    const auto h = nelson_aalen(table({2, 2, 2, 3}, {1, 1, 0, 1}));
    EXPECT_DOUBLE_EQ(h.cumulative_hazard[0], 2.0 / 4.0);
    EXPECT_DOUBLE_EQ(h.cumulative_hazard[1], 2.0 / 4.0 + 1.0);
}

TEST(NelsonAalen, LateCensoredSubjectJoinsEveryRiskSet) {
    std::mt19937_64 rng(1);
    const auto ev = simulate(rng, 100, 0.0, true);
    const auto base = nelson_aalen(ev);
    for (std::size_t i = 1; i < base.cumulative_hazard.size(); ++i) {
        EXPECT_GT(base.cumulative_hazard[i], base.cumulative_hazard[i - 1]);
    }
    auto longer = ev;
    longer.time.push_back(base.times.back() + 1.0);
    longer.event.push_back(0);
    longer.covariates.conservativeResize(101, 1);
    longer.covariates(100, 0) = 0.0;
    const auto h = nelson_aalen(longer);
    ASSERT_EQ(h.times, base.times);
    for (std::size_t i = 0; i < h.times.size(); ++i) EXPECT_EQ(h.at_risk[i], base.at_risk[i] + 1.0);
}

TEST(CauseSpecific, AdditiveAcrossCauses) {
    std::mt19937_64 rng(2);
    EventTable ev = simulate(rng, 300, 0.0, true);
    ev.cause_names = {"a", "b", "never"};
    for (std::size_t i = 0; i < ev.size(); ++i) ev.cause.push_back(ev.event[i] ? static_cast<int>(rng() % 2) : -1);
    const auto total = nelson_aalen(ev);
    const auto per = cause_specific_hazards(ev);
    ASSERT_EQ(per.size(), 3u);
    for (double t : total.times) {
        EXPECT_NEAR(per.at("a").at(t) + per.at("b").at(t) + per.at("never").at(t), total.at(t), 1e-12);
    }
    EXPECT_TRUE(per.at("never").times.empty());
    EXPECT_EQ(per.at("never").at(10.0), 0.0);
    EXPECT_THROW(cause_specific_hazards(ev, {"missing"}), PreconditionError);
}

TEST(CauseSpecific, SingleCauseEqualsTotal) {
    EventTable ev = table({1, 2, 3, 4}, {1, 0, 1, 1});
    ev.cause_names = {"only"};
    ev.cause = {0, -1, 0, 0};
    const auto per = cause_specific_hazards(ev);
    EXPECT_EQ(per.at("only").cumulative_hazard, nelson_aalen(ev).cumulative_hazard);
}

TEST(Cox, LikelihoodMatchesDefinition) {
    std::mt19937_64 rng(3);
    auto ev = simulate(rng, 80, 0.5, false);
    for (auto& t : ev.time) t = std::round(t * 4.0) / 4.0;  // force ties
    for (double b : {-1.0, 0.0, 0.3, 2.0}) {
        EXPECT_NEAR(cox_log_partial_likelihood(ev, Eigen::VectorXd::Constant(1, b)), breslow_1d(ev, b), 1e-9);
    }
    // Maximizer agrees with a golden-section search on the definition.
    double lo = -5, hi = 5;
    const double g = (std::sqrt(5.0) - 1) / 2;
    for (int it = 0; it < 200; ++it) {
        const double a = hi - g * (hi - lo);
        const double b = lo + g * (hi - lo);
        if (breslow_1d(ev, a) > breslow_1d(ev, b)) {
            hi = b;
        } else {
            lo = a;
        }
    }
    const auto fit = cox_fit(ev);
    EXPECT_TRUE(fit.converged);
    EXPECT_NEAR(fit.coefficients(0), 0.5 * (lo + hi), 1e-6);
}

TEST(Cox, RecoversLogTwo) {
    std::mt19937_64 rng(4);
    const auto ev = simulate(rng, 2000, std::log(2.0), true);
    const auto fit = cox_fit(ev);
    EXPECT_TRUE(fit.converged);
    EXPECT_NEAR(fit.coefficients(0), std::log(2.0), 3.0 * fit.standard_errors(0));
    EXPECT_LT(fit.p_values(0), 1e-6);
}

TEST(Cox, PermutationNull) {
    std::mt19937_64 rng(5);
    const auto base = simulate(rng, 200, 1.0, false);
    int accepted = 0;
    for (int k = 0; k < 100; ++k) {
        EventTable ev = base;
        std::vector<Eigen::Index> perm(ev.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t i = 0; i < ev.size(); ++i) ev.covariates(static_cast<Eigen::Index>(i), 0) = base.covariates(perm[i], 0);
        accepted += cox_fit(ev).p_values(0) > 0.05;
    }
    EXPECT_GE(accepted, 95);
}

TEST(Cox, TimeShiftInvariance) {
    std::mt19937_64 rng(6);
    auto ev = simulate(rng, 150, -0.7, false);
    const auto a = cox_fit(ev);
    for (auto& t : ev.time) t += 17.0;
    const auto b = cox_fit(ev);
    EXPECT_NEAR(a.coefficients(0), b.coefficients(0), 1e-12);
    EXPECT_NEAR(a.standard_errors(0), b.standard_errors(0), 1e-12);
}

TEST(Cox, Errors) {
    EXPECT_THROW(cox_fit(table({1, 2, 3}, {1, 1, 0})), PreconditionError);

    std::mt19937_64 rng(7);
    auto ev = simulate(rng, 100, 0.5, false);
    ev.covariates.conservativeResize(Eigen::NoChange, 2);
    ev.covariates.col(1) = 2.0 * ev.covariates.col(0);
    ev.covariate_names = {"z", "twice_z"};
    try {
        cox_fit(ev);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("twice_z"), std::string::npos);
    }

    EventTable one_time = table({1, 1, 2}, {1, 1, 0});
    one_time.covariates = Eigen::MatrixXd::Ones(3, 1);
    one_time.covariates(0, 0) = 0;
    one_time.covariate_names = {"z"};
    EXPECT_THROW(cox_fit(one_time), PreconditionError);
}

TEST(Cox, SeparationFallsBackToRidge) {
    EventTable ev = table({1, 2, 3, 4, 5, 6}, {1, 1, 1, 1, 1, 1});
    ev.covariates.resize(6, 1);
    ev.covariates << 6, 5, 4, 3, 2, 1;
    ev.covariate_names = {"z"};
    const auto fit = cox_fit(ev);
    EXPECT_FALSE(fit.warnings.empty());
    EXPECT_GT(fit.ridge, 0.0);
    EXPECT_TRUE(std::isfinite(fit.coefficients(0)));
    EXPECT_GT(fit.coefficients(0), 0.0);
}

TEST(LogRank, IdenticalGroups) {
    std::mt19937_64 rng(8);
    const auto base = simulate(rng, 60, 0.0, true);
    std::vector<std::size_t> rows;
    std::vector<int> group;
    for (int copy = 0; copy < 2; ++copy) {
        for (std::size_t i = 0; i < base.size(); ++i) rows.push_back(i), group.push_back(copy);
    }
    const auto r = group_cumhazard_compare(base.select(rows), group);
    EXPECT_NEAR(r.statistic, 0.0, 1e-12);
    EXPECT_NEAR(r.p_value, 1.0, 1e-9);
    EXPECT_EQ(r.group0.cumulative_hazard, r.group1.cumulative_hazard);
}

TEST(LogRank, HazardRatioThreeIsDetected) {
    int detected = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(100 + seed);
        const auto ev = simulate(rng, 200, std::log(3.0), true);
        std::vector<int> group;
        for (std::size_t i = 0; i < ev.size(); ++i) group.push_back(static_cast<int>(ev.covariates(static_cast<Eigen::Index>(i), 0)));
        detected += group_cumhazard_compare(ev, group).p_value < 0.01;
    }
    EXPECT_GE(detected, 18);
}

TEST(LogRank, EmptyGroupAndNoEvents) {
    const auto ev = table({1, 2, 3}, {1, 0, 1});
    EXPECT_THROW(group_cumhazard_compare(ev, {0, 0, 0}), PreconditionError);
    const auto r = group_cumhazard_compare(table({1, 2, 3}, {0, 0, 0}), {0, 1, 1});
    EXPECT_EQ(r.p_value, 1.0);
    EXPECT_FALSE(r.warnings.empty());
}

TEST(Export, HazardCsvAndCoxJson) {
    std::ostringstream out;
    write_hazard_csv(out, nelson_aalen(table({1, 2, 3}, {1, 1, 0})));
    EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "t,H,var,at_risk,events");
    std::mt19937_64 rng(9);
    const auto json = cox_to_json(cox_fit(simulate(rng, 100, 0.3, false)));
    EXPECT_NE(json.find("\"z\""), std::string::npos);
}

TEST(EventTableValidation, RejectsCauseOnCensoredSubject) {
    EventTable ev = table({1, 2}, {1, 0});
    ev.cause_names = {"x"};
    ev.cause = {0, 0};
    EXPECT_THROW(ev.validate(), DataError);
}
