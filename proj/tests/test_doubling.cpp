#include <cmath>
#include <cstdint>

#include <gtest/gtest.h>

#include "dilute/doubling.hpp"

using namespace dilute;

namespace {

DoublingSchedule flat_schedule(double K, double K_next, double volume = 1.0) {
    DoublingSchedule d;
    d.rho = 1e-4;
    d.eta = 0.05;
    d.log_rho = std::abs(std::log(d.rho));
    d.l1 = std::cbrt(volume);
    d.base = d.rho * volume;
    d.h = 1;
    d.K = {0.0, K, K_next, 2 * K_next, 4 * K_next};
    return d;
}

}  // namespace

TEST(PiecewiseQuadratic, ContinuousAndConvex) {
    for (double K : {2.0, 7.5, 20.0, 123.456}) {
        PiecewiseQuadratic f{K};
        double below = K * (K - 1), above = (2 * K - 1) * K - K * K;
        EXPECT_NEAR(below, above, 1e-12 * K * K);
        for (int t = 1; t < static_cast<int>(4 * K); ++t) EXPECT_GE(f(t + 1) - 2 * f(t) + f(t - 1), -1e-9);
        for (int t = 1; t < static_cast<int>(4 * K); ++t) EXPECT_GE(f(t + 1), f(t));
    }
}

TEST(Schedule, ExampleInvariants) {
    for (int k = 4; k <= 12; ++k) {
        double rho = std::pow(10.0, -k);
        auto sc = build_scales(rho, 0.05);
        auto d = example_schedule(sc, sc.h);
        EXPECT_TRUE(d.first_knee_ok());
        EXPECT_TRUE(d.final_knee_ok());
        EXPECT_GT(d.knee(3 * d.h + 1), sc.rho_l2_cubed());
        for (const auto& c : d.checks()) {
            EXPECT_TRUE(c.above_density) << "k=" << k << " s=" << c.s;
            EXPECT_TRUE(c.gap_positive) << "k=" << k << " s=" << c.s;
            EXPECT_GT(c.gap_ratio, 0.0);
        }
    }
}

TEST(Schedule, BoxGeometry) {
    auto d = example_schedule(1e-6, 0.05, 10.0, 2);
    EXPECT_DOUBLE_EQ(d.box_volume(1), 1000.0);
    EXPECT_DOUBLE_EQ(d.box_volume(4), 8000.0);
    auto a1 = d.box_dims(1), a2 = d.box_dims(2), a3 = d.box_dims(3), a4 = d.box_dims(4);
    EXPECT_EQ(a1, (std::array<double, 3>{10, 10, 10}));
    EXPECT_EQ(a2, (std::array<double, 3>{10, 10, 20}));
    EXPECT_EQ(a3, (std::array<double, 3>{10, 20, 20}));
    EXPECT_EQ(a4, (std::array<double, 3>{20, 20, 20}));
    for (int s = 1; s <= d.s_max(); ++s) {
        auto u = d.union_dims(s);
        EXPECT_DOUBLE_EQ(u[0] * u[1] * u[2], 2 * d.box_volume(s));
    }
}

TEST(Schedule, RejectsBadInput) {
    EXPECT_THROW(example_schedule(1e-6, 0.05, 10.0, 0), ConfigError);
    EXPECT_THROW(example_schedule(0.5, 0.05, 10.0, 1), ConfigError);
    EXPECT_THROW(example_schedule(1e-6, 0.1, 10.0, 1), ConfigError);
}

TEST(EvalF, ZeroRandomizedIsPlainSum) {
    auto d = flat_schedule(7.5, 14.0, 3.0);
    auto f = d.f(1);
    EXPECT_DOUBLE_EQ(eval_F_exact(d, 1, 4, 11, 0), (f(4) + f(11)) / 3.0);
}

TEST(EvalF, TwoRandomized) {
    auto d = flat_schedule(5.0, 9.0, 8.0);
    EXPECT_NEAR(eval_F_exact(d, 1, 0, 0, 2) * d.box_volume(1), 1.0, 1e-14);
}

TEST(EvalF, QuadraticRegimeMatchesBinomialMoment) {
    auto d = flat_schedule(1000.0, 1900.0);
    for (int n : {1, 2, 5, 17, 64, 300}) {
        double expect = 2.0 * (n * n / 4.0 - n / 4.0);
        EXPECT_NEAR(eval_F_exact(d, 1, 0, 0, n), expect, 1e-9 * std::max(1.0, expect)) << n;
    }
}

TEST(EvalF, FrozenRationalValues) {
    auto d = flat_schedule(7.5, 14.0);
    EXPECT_NEAR(eval_F_exact(d, 1, 3, 1, 5), 4607.0 / 128.0, 1e-12);
    EXPECT_NEAR(eval_F_exact(d, 1, 0, 0, 12), 267939.0 / 4096.0, 1e-12);
    EXPECT_NEAR(eval_F_exact(d, 1, 2, 9, 7), 4647.0 / 32.0, 1e-12);
    ExactF ex(d, 1);
    EXPECT_EQ(ex.F(3, 1, 5), mpq_class(4607, 128));
    EXPECT_EQ(ex.F(0, 0, 12), mpq_class(267939, 4096));
    EXPECT_EQ(ex.F(2, 9, 7), mpq_class(4647, 32));
}

TEST(EvalF, SymmetricAndBudget) {
    auto d = flat_schedule(12.25, 23.0);
    for (int nA = 0; nA < 6; ++nA)
        for (int nB = 0; nB < 6; ++nB) EXPECT_DOUBLE_EQ(eval_F_exact(d, 1, nA, nB, 9), eval_F_exact(d, 1, nB, nA, 9));
    EXPECT_NO_THROW(eval_F_exact(d, 1, 0, 0, 10000));
    EXPECT_THROW(eval_F_exact(d, 1, 0, 0, 10001), BudgetError);
    EXPECT_THROW(eval_F_exact(d, 1, -1, 0, 3), ConfigError);
}

TEST(EvalF, DoubleMatchesExactAtLargeK) {
    auto d = flat_schedule(1500.5, 2900.0);
    ExactF ex(d, 1);
    double exact = ex.F(40, 13, 3000).get_d();
    EXPECT_NEAR(eval_F_exact(d, 1, 40, 13, 3000), exact, 1e-11 * exact);
}

TEST(EvalF, MonteCarloWithinFourSigma) {
    // States whose knee sits near the mean load, so both branches are sampled.
    StreamRng pick(2024, "doubling", "mc-states");
    for (int i = 0; i < 50; ++i) {
        auto nA = static_cast<std::int64_t>(pick.below(40));
        auto nB = static_cast<std::int64_t>(pick.below(40));
        auto k = static_cast<std::int64_t>(8 + pick.below(90));
        double load = 0.5 * static_cast<double>(nA + nB + k);
        auto d = flat_schedule(std::floor(load * pick.uniform(0.8, 1.2)) + 0.5, 2 * load, 2.0);
        auto mc = sample_F(d, 1, nA, nB, k, 1000000, StreamRng(2024, "doubling", "mc").substream(static_cast<std::uint64_t>(i)));
        double exact = eval_F_exact(d, 1, nA, nB, k);
        EXPECT_GT(mc.stderr_, 0.0);
        EXPECT_LE(std::abs(mc.mean - exact), 4.0 * mc.stderr_ + 1e-9 * exact) << nA << " " << nB << " " << k;
    }
}

TEST(Atypical, CounterexampleBelowGapCondition) {
    // K_{s+1} = 38 < 2K_s but 2K_s - K_{s+1} = 2 < sqrt(2K_s): the split n = 51 falls short.
    auto rep = verify_atypical_knees(20.0, 38.0, 1, 51);
    EXPECT_EQ(rep.n_first, 51);
    ASSERT_EQ(rep.rows.size(), 1u);
    EXPECT_DOUBLE_EQ(rep.rows[0].min_split, 1189.0);
    EXPECT_DOUBLE_EQ(rep.rows[0].target, 1190.5);
    EXPECT_EQ(rep.counterexamples.size(), 1u);
    EXPECT_TRUE(rep.slope_ok);
    EXPECT_FALSE(rep.ok());
}

TEST(Atypical, EvenSplitAttainsMinimum) {
    auto rep = verify_atypical_knees(40.0, 70.0, 1, 400);
    for (const auto& r : rep.rows) {
        if (r.n % 2 == 0) {
            EXPECT_DOUBLE_EQ(r.min_split, 2 * PiecewiseQuadratic{40.0}(r.n / 2.0)) << r.n;
        }
    }
}

TEST(Atypical, ProofIdentityBelowOldKnee) {
    double Ks = 40.0, Kn = 70.0;
    PiecewiseQuadratic fs{Ks}, fn{Kn};
    for (double n = Kn + 1; n <= 2 * Ks; n += 1.0)
        EXPECT_NEAR(4 * fs(n / 2) - fn(n), doubling_identity(n, Kn), 1e-9);
}

TEST(Atypical, ExampleScheduleHasNoViolations) {
    for (double rho : {1e-4, 1e-6, 1e-8}) {
        auto sc = build_scales(rho, 0.05);
        auto d = example_schedule(sc, 2);
        for (int s = 1; s <= d.s_max(); ++s) {
            auto n_max = static_cast<std::int64_t>(4 * d.knee(s + 1));
            auto rep = verify_lemma_doubling_atypical(d, s, n_max, false);
            EXPECT_TRUE(rep.ok()) << "rho=" << rho << " s=" << s << " worst=" << rep.worst_margin;
        }
    }
}

TEST(Atypical, SweepOfSmallKnees) {
    // Pairs (K_s, K_{s+1}) obeying 2K_s - K_{s+1} >= sqrt(2K_s) hold exhaustively.
    for (int Ks = 4; Ks <= 200; Ks += 4) {
        double Kn = 2.0 * Ks - std::sqrt(2.0 * Ks);
        auto rep = verify_atypical_knees(Ks, Kn, 1, static_cast<std::int64_t>(4 * Kn), false);
        EXPECT_TRUE(rep.ok()) << Ks;
    }
}

TEST(FEstimate, TwoParticles) {
    auto d = flat_schedule(5.0, 9.0, 8.0);
    auto rep = verify_F_estimate(d, 1, 1e-4);
    ASSERT_GE(rep.rows.size(), 3u);
    EXPECT_NEAR(rep.rows[2].lhs, 2.0, 1e-12);
    EXPECT_DOUBLE_EQ(PiecewiseQuadratic{9.0}(2.0), 2.0);
}

TEST(FEstimate, ExampleScheduleFirstStep) {
    auto sc = build_scales(1e-4, 0.05);
    auto d = example_schedule(sc, 1);
    auto rep = verify_F_estimate(d, 1, 1e-4);
    for (const auto& c : rep.counterexamples) ADD_FAILURE() << "n=" << c.n << " lhs=" << c.lhs << " rhs=" << c.rhs;
    EXPECT_TRUE(rep.ok());
}

TEST(FEstimate, HoldsWithWideLengthPrefactor) {
    ScalePrefactors p;
    p.l1 = 2.0;
    auto sc = build_scales(1e-4, 0.05, p);
    auto d = example_schedule(sc, 1);
    for (int s = 1; s <= d.s_max(); ++s) EXPECT_TRUE(verify_F_estimate(d, s, 1e-4, false).ok()) << s;
}

TEST(Chernoff, DominatesExactTail) {
    auto rep = verify_chernoff(2000);
    EXPECT_EQ(rep.violations, 0);
    EXPECT_GT(rep.checks, 1000000);
    EXPECT_GE(rep.worst_log_slack, -1e-12);
}

TEST(Moments, ImbalanceThree) {
    auto d = flat_schedule(9.5, 18.0);
    auto m = gk_Mk_moments(d, 1, 5, 2, 4);
    EXPECT_EQ(m.M_mean, 1);
    EXPECT_EQ(m.M_var, 36);
    EXPECT_TRUE(m.all());
}

TEST(Moments, BalancedHasNoVariance) {
    auto d = flat_schedule(9.5, 18.0);
    auto m = gk_Mk_moments(d, 1, 3, 3, 6);
    EXPECT_EQ(m.M_var, 0);
    EXPECT_EQ(m.M_mean, 1);
    EXPECT_TRUE(m.all());
}

TEST(Moments, RandomStatesExact) {
    StreamRng rng(7, "doubling", "moments");
    for (int i = 0; i < 500; ++i) {
        double K = 2.0 + static_cast<double>(rng.below(4000)) / 16.0;
        auto nA = static_cast<std::int64_t>(rng.below(60));
        auto nB = static_cast<std::int64_t>(rng.below(60));
        auto k = static_cast<std::int64_t>(1 + rng.below(80));
        ExactF ex(K, 1.0 + static_cast<double>(rng.below(1000)));
        auto m = gk_Mk_moments(ex, nA, nB, k);
        EXPECT_TRUE(m.all()) << K << " " << nA << " " << nB << " " << k;
    }
    EXPECT_THROW(gk_Mk_moments(ExactF(3.0, 1.0), 0, 0, 0), ConfigError);
}

TEST(Randomization, TermsSmallAgainstF) {
    auto sc = build_scales(1e-6, 0.05);
    auto d = example_schedule(sc, 1);
    auto n = static_cast<std::int64_t>(std::floor(2 * sc.rho_l1_cubed()));
    std::vector<bool> in_A(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) in_A[static_cast<std::size_t>(i)] = i % 2 == 0;
    RandomizationInputs in;
    in.a = 0.8;
    in.c0 = 0.985;
    auto rep = randomization_step_certificate(d, 1, in_A, sc.l0, in);
    ASSERT_EQ(static_cast<std::int64_t>(rep.steps.size()), n);
    EXPECT_GT(rep.F_full, 0.0);
    EXPECT_TRUE(std::isfinite(rep.realized_C_density));
    const auto& last = rep.steps.back();
    EXPECT_EQ(last.nA, 0);
    EXPECT_EQ(last.nB, 0);
    EXPECT_DOUBLE_EQ(last.majorant_imbalance, 0.0);
    for (const auto& st : rep.steps) {
        EXPECT_GE(st.g_shift, 0.0);
        EXPECT_GE(st.g_var_over_gap, 0.0);
        EXPECT_LE(std::abs(st.nA - st.nB), 1);
    }
}

TEST(Randomization, RejectsAtypicalN) {
    auto d = flat_schedule(5.0, 9.0);
    std::vector<bool> in_A(20, true);
    EXPECT_THROW(randomization_step_certificate(d, 1, in_A, 1.0, {}), ConfigError);
}

TEST(Jensen, EqualOccupancyIsTight) {
    PiecewiseQuadratic f{30.0};
    EXPECT_DOUBLE_EQ(jensen_floor(f, 4, 100), 4 * f(25));
}

TEST(Jensen, UnevenOccupancyAboveFloor) {
    PiecewiseQuadratic f{30.0};
    double uneven = f(97) + 3 * f(1);
    EXPECT_LT(jensen_floor(f, 4, 100), uneven);
    EXPECT_THROW(jensen_floor(f, 0, 100), ConfigError);
}

TEST(Jensen, RandomCompositionsWitness) {
    auto w = jensen_witness(PiecewiseQuadratic{12.0}, 27, 300, 10000, StreamRng(3, "doubling", "jensen"));
    EXPECT_TRUE(w.ok());
    EXPECT_GT(w.min_sum, w.floor);
}

TEST(Jensen, AssemblyRatio) {
    auto sc = build_scales(1e-8, 0.05);
    auto j = jensen_assembly(sc, 3);
    EXPECT_NEAR(j.ratio, 1.0 - 1.0 / sc.rho_l2_cubed(), 1e-12);
    EXPECT_LT(j.ratio, 1.0);
}

TEST(Jensen, FinalProfileDominatesFbar) {
    for (double rho : {1e-4, 1e-6, 1e-8, 1e-10}) {
        auto sc = build_scales(rho, 0.05);
        auto d = example_schedule(sc, sc.h);
        auto r = check_final_domination(d, sc.rho_l2_cubed());
        EXPECT_TRUE(r.ok()) << rho << " at t=" << r.first_violation;
    }
}
