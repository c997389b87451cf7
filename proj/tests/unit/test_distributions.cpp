// Special functions checked against Boost.Math, used here purely as an
// independent reference implementation.

#include "clintraj/distributions.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <gtest/gtest.h>

#include <cmath>

namespace dist = clintraj::dist;
namespace bm = boost::math;

TEST(Normal, QuantileKnownValues) {
    EXPECT_NEAR(dist::normal_quantile(0.5), 0.0, 1e-15);
    EXPECT_NEAR(dist::normal_quantile(0.25), -0.6744897501960817, 1e-12);
    EXPECT_NEAR(dist::normal_quantile(0.875), 1.1503493803760079, 1e-12);
    EXPECT_NEAR(dist::normal_quantile(0.975), 1.959963984540054, 1e-12);
}

TEST(Normal, QuantileMatchesReferenceAcrossRange) {
    const bm::normal n;
    for (double p : {1e-300, 1e-100, 1e-15, 1e-8, 1e-3, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.9, 0.97575, 0.999, 1 - 1e-10}) {
        const double expected = bm::quantile(n, p);
        EXPECT_NEAR(dist::normal_quantile(p), expected, 1e-12 * std::max(1.0, std::abs(expected))) << "p=" << p;
    }
}

TEST(Normal, CdfInvertsQuantile) {
    for (double p = 0.001; p < 1.0; p += 0.0137) {
        EXPECT_NEAR(dist::normal_cdf(dist::normal_quantile(p)), p, 1e-13);
    }
}

TEST(Normal, CdfMatchesReference) {
    const bm::normal n;
    for (double x = -30.0; x <= 8.0; x += 0.37) {
        const double expected = bm::cdf(n, x);
        EXPECT_NEAR(dist::normal_cdf(x), expected, 1e-14 + 1e-12 * expected) << "x=" << x;
    }
}

TEST(IncompleteGamma, MatchesReference) {
    for (double a : {0.5, 1.0, 2.5, 10.0, 57.0, 300.0}) {
        for (double x : {0.01, 0.5, 1.0, 3.0, 9.5, 40.0, 120.0, 350.0}) {
            EXPECT_NEAR(dist::gamma_p(a, x), bm::gamma_p(a, x), 1e-10) << a << ' ' << x;
            const double q = bm::gamma_q(a, x);
            EXPECT_NEAR(dist::gamma_q(a, x), q, 1e-10 * std::max(q, 1e-300) + 1e-300) << a << ' ' << x;
        }
    }
}

TEST(IncompleteGamma, TailsAreComplementary) {
    for (double a : {0.7, 4.0, 25.0}) {
        for (double x : {0.2, 3.0, 30.0}) EXPECT_NEAR(dist::gamma_p(a, x) + dist::gamma_q(a, x), 1.0, 1e-12);
    }
}

TEST(IncompleteBeta, MatchesReference) {
    for (double a : {0.5, 1.0, 3.0, 20.0, 150.0}) {
        for (double b : {0.5, 2.0, 7.0, 90.0}) {
            for (double x : {0.001, 0.1, 0.45, 0.8, 0.999}) {
                EXPECT_NEAR(dist::beta_inc(a, b, x), bm::ibeta(a, b, x), 1e-10) << a << ' ' << b << ' ' << x;
            }
        }
    }
}

TEST(Tails, ChiSquare) {
    EXPECT_NEAR(dist::chi2_sf(3.841458820694124, 1.0), 0.05, 1e-12);
    for (double k : {1.0, 2.0, 5.0, 33.0}) {
        const bm::chi_squared c(k);
        for (double s : {0.1, 1.0, 7.0, 20.0, 80.0}) {
            const double expected = bm::cdf(bm::complement(c, s));
            EXPECT_NEAR(dist::chi2_sf(s, k), expected, 1e-10 * expected + 1e-300) << k << ' ' << s;
        }
    }
    EXPECT_EQ(dist::chi2_sf(0.0, 3.0), 1.0);
}

TEST(Tails, FisherF) {
    for (double d1 : {1.0, 3.0, 10.0}) {
        for (double d2 : {5.0, 40.0, 500.0}) {
            const bm::fisher_f f(d1, d2);
            for (double s : {0.2, 1.0, 4.0, 30.0}) {
                const double expected = bm::cdf(bm::complement(f, s));
                EXPECT_NEAR(dist::f_sf(s, d1, d2), expected, 1e-10 * std::max(expected, 1e-12)) << d1 << ' ' << d2 << ' ' << s;
            }
        }
    }
}

TEST(Tails, StudentTwoSided) {
    for (double df : {1.0, 4.0, 30.0, 1000.0}) {
        const bm::students_t t(df);
        for (double s : {0.0, 0.5, -2.0, 6.0}) {
            const double expected = 2.0 * bm::cdf(bm::complement(t, std::abs(s)));
            EXPECT_NEAR(dist::t_two_sided(s, df), expected, 1e-10) << df << ' ' << s;
        }
    }
}

TEST(Tails, NormalTwoSided) {
    EXPECT_NEAR(dist::z_two_sided(1.959963984540054), 0.05, 1e-12);
    EXPECT_NEAR(dist::z_two_sided(-1.959963984540054), 0.05, 1e-12);
    EXPECT_EQ(dist::z_two_sided(0.0), 1.0);
}
