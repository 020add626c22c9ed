#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dilute/scales.hpp"

using namespace dilute;

TEST(Scales, ModerateDensityValuesAndVerdict) {
    auto s = build_scales(1e-6, 0.05);
    EXPECT_NEAR(s.lm1, 124.044627532127088, 1e-9);
    EXPECT_NEAR(s.l0, 41.6751994511606853, 1e-9);
    EXPECT_NEAR(s.l1, 273.615477293576261, 1e-8);
    EXPECT_NEAR(s.eps, 26.3694345561234515, 1e-10);
    EXPECT_GT(s.eps, 1.0);
    // At this density l0 < lm1 and the unsnapped l2 < l1: the hierarchy fails.
    EXPECT_FALSE(s.hierarchy_ok());
    EXPECT_TRUE(s.snap_clamped);
    auto bad = s.failing_ratios();
    ASSERT_FALSE(bad.empty());
    EXPECT_EQ(bad.front().rfind("l0_over_lm1", 0), 0u);
    try {
        s.require_hierarchy();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("not small enough"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("l0_over_lm1"), std::string::npos);
    }
}

TEST(Scales, RejectsEtaAtOpenIntervalEnds) {
    EXPECT_THROW(build_scales(1e-6, 0.0), ConfigError);
    EXPECT_THROW(build_scales(1e-6, 1.0 / 15.0), ConfigError);
    EXPECT_THROW(build_scales(0.5, 0.05), ConfigError);
    EXPECT_NO_THROW(build_scales(1e-6, 0.0666));
}

TEST(Scales, EpsilonDecreasesBeyondTurningPoint) {
    double prev = 1e300;
    std::optional<int> first_below;
    for (int k = 4; k <= 30; ++k) {
        auto s = build_scales(std::pow(10.0, -k), 0.05);
        EXPECT_LT(s.eps, prev) << k;
        prev = s.eps;
        if (!first_below && s.eps < 1.0) first_below = k;
    }
    // eps = 1 at |ln rho| = 30.867 (rho = 3.93e-14).
    ASSERT_TRUE(first_below);
    EXPECT_EQ(*first_below, 14);
}

TEST(Scales, SnapFactorWithinHalfOctaveWhenUnclamped) {
    for (int k = 40; k <= 200; k += 7) {
        auto s = build_scales(std::pow(10.0, -k), 0.05);
        if (s.snap_clamped) continue;
        EXPECT_GE(s.snap_factor, std::pow(2.0, -0.5) * (1 - 1e-12));
        EXPECT_LE(s.snap_factor, std::pow(2.0, 0.5) * (1 + 1e-12));
        EXPECT_DOUBLE_EQ(s.l2, std::ldexp(s.l1, s.h));
    }
}

TEST(Scales, HierarchyRatiosMonotoneInDensity) {
    std::vector<double> prev;
    for (int k = 6; k <= 30; ++k) {
        auto s = build_scales(std::pow(10.0, -k), 0.05);
        for (std::size_t i = 0; i < prev.size(); ++i)
            EXPECT_GE(s.ratios[i].value, prev[i]) << s.ratios[i].name << " k=" << k;
        prev.clear();
        for (std::size_t i = 0; i < 4; ++i) prev.push_back(s.ratios[i].value);
    }
}

TEST(Headline, LeeYangFactorAndVacuity) {
    EXPECT_NEAR(lee_yang_factor(1e-6), 1.00481441777960752, 1e-15);
    auto s = build_scales(1e-6, 0.05);
    auto b = headline_bound(s, 1.0, 1.0);
    EXPECT_TRUE(b.vacuous);
    EXPECT_LE(b.energy_per_particle, 0.0);
    auto t = build_scales(1e-30, 0.05);
    auto c = headline_bound(t, 1.0, 1.0);
    EXPECT_FALSE(c.vacuous);
    EXPECT_NEAR(c.leading, 4 * std::numbers::pi * 1e-30, 1e-44);
    EXPECT_LT(c.ratio_to_lee_yang, 1.0);
}

TEST(Headline, PreviousBestCrossover) {
    // Root of x (1/3 - 1/17) = 3 ln x beyond the minimum: x = 40.4314221962879.
    EXPECT_NEAR(previous_best_crossover(1.0, 1.0), 2.75966550240864739e-18, 1e-28);
}

TEST(ErrorBudget, ZeroParticlesGivesZeroTerms) {
    for (const auto& t : error_budget(build_scales(1e-8, 0.05), 0.0)) EXPECT_EQ(t.value, 0.0) << t.name;
}

TEST(ErrorBudget, SurfaceTermEqualsRhoL0SquaredBelowEpsilon) {
    for (int k = 6; k <= 30; ++k) {
        auto s = build_scales(std::pow(10.0, -k), 0.05);
        auto terms = error_budget(s);
        double expect = s.rho * s.l0 * s.l0;
        EXPECT_NEAR(terms[2].value / expect, 1.0, 1e-12);
        EXPECT_NEAR(expect, std::cbrt(s.rho) * std::pow(s.log_rho, -2.0 / 3.0), 1e-12 * expect);
        EXPECT_LE(terms[2].value, s.eps);
    }
}

TEST(ErrorBudget, ScanTermsEventuallyBelowEpsilon) {
    auto scan = scan_error_budget(6, 30, 0.05);
    ASSERT_EQ(scan.names.size(), 4u);
    EXPECT_EQ(scan.names[1], "n_l1sq_over_l0cu");
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_TRUE(scan.eventually_below_one[i]) << scan.names[i];
        EXPECT_TRUE(scan.nonincreasing[i]) << scan.names[i];
    }
    ASSERT_TRUE(scan.crossover_k);
    // Exponent arithmetic: term/eps for the large-cell terms is |ln rho|^{-1/3 + 5 eta}.
    for (const auto& r : scan.rows) EXPECT_NEAR(r.term_over_eps[3], std::pow(std::log(1.0 / r.rho), -1.0 / 3.0 + 0.25), 1e-9);
}

TEST(ErrorBudget, TempleRatioGrowsAsDensityFalls) {
    double prev = 0.0;
    for (int k = 6; k <= 30; ++k) {
        double r = temple_applicability_ratio(build_scales(std::pow(10.0, -k), 0.05), 1.0);
        EXPECT_GT(r, prev);
        prev = r;
    }
}
