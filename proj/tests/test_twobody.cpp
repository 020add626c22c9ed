#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <sstream>

#include <boost/math/tools/roots.hpp>
#include <boost/numeric/odeint.hpp>

#include "dilute/twobody.hpp"

using namespace dilute;

namespace {

double barrier_a(double v0, double r0) {
    double k = std::sqrt(v0 / 2.0);
    return r0 - std::tanh(k * r0) / k;
}

// Square barrier Neumann ground state from the matching condition: interior
// sinh(q r), exterior sin(k (r - R0) + delta), boundary u'(kappa) = u/kappa.
double barrier_neumann_e0(double v0, double r0, double kappa) {
    auto g = [&](double e) {
        double q = std::sqrt(v0 / 2.0 - e);
        double k = std::sqrt(e);
        double delta = std::atan(k * std::tanh(q * r0) / q);
        double th = k * (kappa - r0) + delta;
        return k * std::cos(th) - std::sin(th) / kappa;
    };
    double a = barrier_a(v0, r0);
    double hi = 2.0 * 3.0 * a / std::pow(kappa, 3) * (1.0 + 8.0 * r0 / kappa);
    double lo = 1e-3 * hi;
    std::uintmax_t it = 200;
    auto root = boost::math::tools::toms748_solve(g, lo, hi, boost::math::tools::eps_tolerance<double>(52), it);
    return 0.5 * (root.first + root.second);
}

// Adaptive Fehlberg 7(8) integration of u'' = V/2 u, a = r - u/u' in the free region.
double odeint_scattering_length(const PotentialSpec& pot) {
    using state = std::array<double, 2>;
    namespace ode = boost::numeric::odeint;
    state y{0.0, 1.0};
    auto rhs = [&](const state& s, state& d, double r) {
        d[0] = s[1];
        d[1] = 0.5 * pot(r) * s[0];
    };
    auto stepper = ode::make_controlled(1e-14, 1e-14, ode::runge_kutta_fehlberg78<state>());
    ode::integrate_adaptive(stepper, rhs, y, 0.0, pot.support, 1e-4);
    ode::integrate_adaptive(stepper, rhs, y, pot.support, 2.0 * pot.support, 1e-4);
    return 2.0 * pot.support - y[0] / y[1];
}

}  // namespace

TEST(ZeroEnergy, SquareBarrierMatchesAnalyticLength) {
    auto sol = solve_zero_energy(PotentialSpec::square_barrier(50.0, 1.0));
    double exact = 1.0 - std::tanh(5.0) / 5.0;
    EXPECT_NEAR(exact, 0.800018159147481, 1e-15);
    EXPECT_LT(std::abs(sol.scattering_length - exact) / exact, 1e-6);
    EXPECT_LT(sol.fit_residual, 1e-10);
}

TEST(ZeroEnergy, FreePotentialGivesZeroLengthAndLinearProfile) {
    auto sol = solve_zero_energy(PotentialSpec::square_barrier(0.0, 1.0));
    EXPECT_EQ(sol.scattering_length, 0.0);
    for (std::size_t i = 0; i < sol.r.size(); i += 97) EXPECT_NEAR(sol.u[i], sol.r[i], 1e-12 * sol.r[i]);
}

TEST(ZeroEnergy, GaussianAgreesWithIndependentIntegrator) {
    auto pot = PotentialSpec::gaussian(10.0, 0.5);
    EXPECT_NEAR(pot.support, 0.5 * std::sqrt(2.0 * std::log(1e12)), 1e-14);
    EXPECT_LE(pot.interior(pot.support), 1e-12 * 10.0 * (1 + 1e-12));
    auto coarse = solve_zero_energy(pot);
    double ref = odeint_scattering_length(pot);
    EXPECT_LT(std::abs(coarse.scattering_length - ref) / ref, 1e-6);
    auto fine = solve_zero_energy(pot, ZeroEnergyGrid{8000, 4.0});
    EXPECT_LT(std::abs(coarse.scattering_length - fine.scattering_length) / ref, 1e-6);
}

TEST(ZeroEnergy, LengthIsBetweenZeroAndSupport) {
    for (double v0 : {0.5, 5.0, 50.0, 500.0}) {
        for (auto pot : {PotentialSpec::square_barrier(v0, 1.0), PotentialSpec::gaussian(v0, 0.4),
                         PotentialSpec::smooth_bump(v0, 1.0)}) {
            auto sol = solve_zero_energy(pot);
            EXPECT_GE(sol.scattering_length, 0.0);
            EXPECT_LE(sol.scattering_length, pot.support);
        }
    }
}

TEST(ZeroEnergy, RefinementShowsHighOrderConvergence) {
    for (auto pot : {PotentialSpec::gaussian(10.0, 0.5), PotentialSpec::square_barrier(50.0, 1.0)}) {
        double a1 = solve_zero_energy(pot, {25, 4.0}).scattering_length;
        double a2 = solve_zero_energy(pot, {50, 4.0}).scattering_length;
        double a3 = solve_zero_energy(pot, {100, 4.0}).scattering_length;
        EXPECT_GE(std::abs(a1 - a2) / std::abs(a2 - a3), 3.0) << pot.describe();
    }
}

TEST(ZeroEnergy, ResidualIsSecondOrderSmall) {
    auto pot = PotentialSpec::gaussian(10.0, 0.5);
    auto sol = solve_zero_energy(pot, {400, 4.0});
    double h = sol.inner_step, worst = 0.0, scale = 0.0;
    for (std::size_t i = 1; i < sol.inner_steps; ++i) {
        double d2 = (sol.u[i + 1] - 2 * sol.u[i] + sol.u[i - 1]) / (h * h);
        worst = std::max(worst, std::abs(-d2 + 0.5 * pot(sol.r[i]) * sol.u[i]));
        scale = std::max(scale, std::abs(0.5 * pot(sol.r[i]) * sol.u[i]));
    }
    EXPECT_LT(worst, 10.0 * h * h * scale / (pot.range * pot.range));
}

TEST(ZeroEnergy, RejectsShortMarginAndCoarseGrid) {
    auto pot = PotentialSpec::square_barrier(50.0, 1.0);
    EXPECT_THROW(solve_zero_energy(pot, {2000, 3.0}), ConfigError);
    EXPECT_THROW(solve_zero_energy(PotentialSpec::square_barrier(5e5, 1.0), {100, 4.0}), ResolutionError);
}

TEST(Neumann, FreePotentialHasZeroEigenvalueAndFlatProfile) {
    auto sol = solve_neumann_mode(PotentialSpec::square_barrier(0.0, 1.0), 10.0);
    EXPECT_EQ(sol.eigenvalue, 0.0);
    for (double r : {0.0, 0.3, 1.0, 5.0, 9.99, 12.0}) EXPECT_NEAR(sol.tau(r), 0.0, 1e-13);
    auto b = check_profile_bounds(sol);
    EXPECT_NEAR(b.phi_min, 1.0, 1e-13);
    EXPECT_NEAR(b.c1, 0.0, 1e-12);
}

TEST(Neumann, SquareBarrierMatchesTranscendentalRoot) {
    auto pot = PotentialSpec::square_barrier(50.0, 1.0);
    double exact = barrier_neumann_e0(50.0, 1.0, 10.0);
    EXPECT_NEAR(exact, 0.002790643237231283, 1e-15);
    auto sol = solve_neumann_mode(pot, 10.0);
    EXPECT_LT(std::abs(sol.eigenvalue - exact) / exact, 1e-8);
    EXPECT_NEAR(sol.du.back(), sol.u.back() / 10.0, 1e-10);
    EXPECT_NEAR(sol.phi(10.0), 1.0, 1e-14);
    EXPECT_EQ(sol.tau(10.5), 0.0);
    double lower = 3.0 * sol.scattering_length / 1000.0;
    EXPECT_GE(sol.eigenvalue, lower);
    double realized_c = (sol.eigenvalue / lower - 1.0) * 10.0;
    EXPECT_TRUE(std::isfinite(realized_c));
    EXPECT_GT(realized_c, 0.0);
}

TEST(Neumann, EigenvalueBoundsOverTwentyPairs) {
    std::vector<PotentialSpec> pots{PotentialSpec::square_barrier(1.0, 1.0), PotentialSpec::square_barrier(50.0, 1.0),
                                    PotentialSpec::gaussian(10.0, 0.3), PotentialSpec::smooth_bump(20.0, 1.0)};
    int count = 0;
    for (const auto& pot : pots) {
        double a = solve_zero_energy(pot).scattering_length;
        for (double mult : {4.0, 6.0, 10.0, 20.0, 40.0}) {
            double kappa = mult * pot.support;
            auto sol = solve_neumann_mode(pot, kappa, a);
            double base = 3.0 * a / std::pow(kappa, 3);
            EXPECT_GE(sol.eigenvalue, base) << pot.describe() << " kappa=" << kappa;
            EXPECT_LE(sol.eigenvalue / base - 1.0, 8.0 * pot.support / kappa) << pot.describe() << " kappa=" << kappa;
            ++count;
        }
    }
    EXPECT_EQ(count, 20);
}

TEST(Neumann, ScaledEigenvalueApproachesScatteringLength) {
    auto pot = PotentialSpec::square_barrier(50.0, 1.0);
    double a = solve_zero_energy(pot).scattering_length;
    double prev = 1e9;
    for (double kappa : {8.0, 16.0, 32.0, 64.0}) {
        auto sol = solve_neumann_mode(pot, kappa, a);
        double gap = sol.eigenvalue * std::pow(kappa, 3) / 3.0 - a;
        EXPECT_GT(gap, 0.0);
        EXPECT_LT(gap, prev);
        prev = gap;
    }
    double exact64 = barrier_neumann_e0(50.0, 1.0, 64.0);
    EXPECT_NEAR(exact64, 9.365298978486844e-06, 1e-19);
    EXPECT_LT(std::abs(solve_neumann_mode(pot, 64.0, a).eigenvalue - exact64) / exact64, 1e-8);
}

TEST(Neumann, RefinementOrder) {
    auto pot = PotentialSpec::gaussian(10.0, 0.5);
    double a = solve_zero_energy(pot).scattering_length;
    auto e = [&](double pts, std::size_t inner) {
        NeumannOptions o;
        o.points_per_kappa = pts;
        o.min_inner_steps = inner;
        return solve_neumann_mode(pot, 16.0, a, o).eigenvalue;
    };
    double e1 = e(200, 25), e2 = e(400, 50), e3 = e(800, 100);
    EXPECT_GE(std::abs(e1 - e2) / std::abs(e2 - e3), 3.0);
}

TEST(Neumann, ProfileIsNodeFree) {
    auto sol = solve_neumann_mode(PotentialSpec::smooth_bump(100.0, 1.0), 6.0);
    for (std::size_t i = 1; i < sol.u.size(); ++i) ASSERT_GT(sol.u[i], 0.0);
}

TEST(Neumann, RejectsSmallKappa) {
    EXPECT_THROW(solve_neumann_mode(PotentialSpec::square_barrier(50.0, 1.0), 3.9), ConfigError);
}

TEST(ProfileBounds, LowerConstantNearlyIndependentOfKappa) {
    // Closed-form phi(0) for the square barrier, normalized to phi(kappa) = 1.
    const double expected[] = {0.0152433708218166891, 0.0143195582738455480, 0.0138882557669814032};
    auto pot = PotentialSpec::square_barrier(50.0, 1.0);
    double a = solve_zero_energy(pot).scattering_length;
    std::vector<ProfileBounds> bs;
    int i = 0;
    for (double kappa : {10.0, 20.0, 40.0}) {
        auto b = check_profile_bounds(solve_neumann_mode(pot, kappa, a));
        EXPECT_NEAR(b.phi_min, expected[i++], 1e-8);
        EXPECT_LE(b.phi_max, 1.0 + 1e-12);
        EXPECT_GT(b.phi_min, 0.0);
        EXPECT_TRUE(std::isfinite(b.c1));
        EXPECT_NEAR(b.tau_max, 1.0 - b.phi_min, 1e-15);
        bs.push_back(b);
    }
    // Drift is O(a / kappa) relative to the infinite-volume value 1/cosh(5).
    double limit = 1.0 / std::cosh(5.0);
    EXPECT_NEAR(bs[1].phi_min, bs[2].phi_min, 1e-3);
    EXPECT_LT(std::abs(bs[0].phi_min - limit), 2.0 * limit * a / 10.0);
}

TEST(ProfileBounds, TauDecaysLikeInverseRadius) {
    auto pot = PotentialSpec::square_barrier(50.0, 1.0);
    auto sol = solve_neumann_mode(pot, 16.0);
    auto b = check_profile_bounds(sol);
    for (double r = 4.0; r <= 16.0; r += 0.0137) EXPECT_LE(sol.tau(r), b.c1 / r * (1 + 1e-9) + 1e-14) << r;
}

TEST(RadialCsv, HeaderNamesKindAndParameters) {
    auto sol = solve_neumann_mode(PotentialSpec::square_barrier(50.0, 1.0), 8.0);
    std::ostringstream os;
    sol.write_csv(os);
    std::string text = os.str();
    EXPECT_EQ(text.rfind("# kind=neumann-mode shape=square-barrier", 0), 0u);
    EXPECT_NE(text.find("\nr,u\n"), std::string::npos);
}
