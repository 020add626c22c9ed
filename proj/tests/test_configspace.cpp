#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "dilute/configspace.hpp"

using namespace dilute;

namespace {

constexpr double kL0 = 16.0, kLm1 = 4.0, kL1 = 80.0;

const TauTable& desk_table() {
    static TauTable t(PotentialSpec::square_barrier(50.0, 1.0), kL0, kLm1);
    return t;
}

ParticleConfig line_config(std::initializer_list<double> xs, double L = 200.0) {
    ParticleConfig c;
    c.L = L;
    for (double v : xs) c.x.push_back({v, 50.0, 50.0});
    return c;
}

}  // namespace

TEST(Neighbors, CollinearTriple) {
    auto c = line_config({10.0, 11.0, 15.0});
    auto nb = build_neighbors(c, kL0, kLm1, NeighborMode::brute_force);
    EXPECT_DOUBLE_EQ(nb.t(0, 1), 2.5);
    EXPECT_DOUBLE_EQ(nb.t(0, 2), 0.5);
    EXPECT_DOUBLE_EQ(nb.t(2, 0), 2.0);
    auto cl = build_neighbors(c, kL0, kLm1);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            if (i != j) {
                EXPECT_EQ(nb.t(i, j), cl.t(i, j));
            }
}

TEST(Neighbors, PairHasInfiniteReach) {
    auto c = line_config({10.0, 11.0});
    auto nb = build_neighbors(c, kL0, kLm1);
    EXPECT_TRUE(std::isinf(nb.t(0, 1)));
    EXPECT_TRUE(nb.F(0, 1));
    EXPECT_TRUE(nb.G(1, 0));
}

TEST(Neighbors, CellListMatchesBruteForce) {
    for (std::size_t n : {64u, 400u, 600u}) {
        StreamRng rng(11, "configspace", n);
        auto c = ParticleConfig::uniform(n, 120.0, rng);
        auto bf = build_neighbors(c, kL0, kLm1, NeighborMode::brute_force);
        auto cl = build_neighbors(c, kL0, kLm1, NeighborMode::cell_list);
        std::size_t mismatches = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j && bf.t(i, j) != cl.t(i, j)) ++mismatches;
        EXPECT_EQ(mismatches, 0u) << n;
    }
}

TEST(Neighbors, IndependentOfMovedParticle) {
    StreamRng rng(12, "configspace", "move");
    auto c = ParticleConfig::uniform(300, 100.0, rng);
    auto before = build_neighbors(c, kL0, kLm1);
    for (std::size_t j : {0u, 17u, 299u}) {
        auto moved = c;
        moved.x[j] = {rng.uniform() * 100.0, rng.uniform() * 100.0, rng.uniform() * 100.0};
        auto after = build_neighbors(moved, kL0, kLm1);
        for (std::size_t i = 0; i < c.size(); ++i) {
            if (i == j) continue;
            EXPECT_EQ(before.t(i, j), after.t(i, j));
            EXPECT_EQ(before.F(i, j), after.F(i, j));
            EXPECT_EQ(before.G(i, j), after.G(i, j));
        }
    }
}

TEST(Neighbors, CutoffOrdering) {
    StreamRng rng(13, "configspace", "cutoffs");
    auto c = ParticleConfig::uniform(200, 80.0, rng);
    auto nb = build_neighbors(c, kL0, kLm1);
    for (std::size_t i = 0; i < c.size(); ++i)
        for (std::size_t j = 0; j < c.size(); ++j)
            if (i != j && nb.F(i, j)) {
                EXPECT_TRUE(nb.G(i, j));
            }
    EXPECT_THROW(build_neighbors(c, 4.0, 16.0), ConfigError);
}

TEST(Config, CsvRoundTrip) {
    StreamRng rng(14, "configspace", "csv");
    auto c = ParticleConfig::uniform(20, 37.5, rng);
    std::stringstream ss;
    c.write_csv(ss);
    auto back = ParticleConfig::read_csv(ss);
    EXPECT_EQ(back.L, c.L);
    ASSERT_EQ(back.size(), c.size());
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(back.x[i], c.x[i]);
    std::stringstream bad("x,y,z\n1,2,3\n");
    EXPECT_THROW(ParticleConfig::read_csv(bad), ConfigError);
    std::stringstream outside("# L=2\nx,y,z\n1,2,3\n");
    EXPECT_THROW(ParticleConfig::read_csv(outside), ConfigError);
}

TEST(TauTableTest, LadderRoundsDown) {
    const auto& t = desk_table();
    EXPECT_EQ(t.quantize(16.0), 16.0);
    EXPECT_EQ(t.quantize(40.0), 16.0);
    EXPECT_DOUBLE_EQ(t.quantize(4.0), 4.0);
    for (double k : {4.1, 5.0, 7.3, 12.9, 15.99}) {
        double q = t.quantize(k);
        EXPECT_LE(q, k);
        EXPECT_GT(q * 1.02, k * (1 - 1e-12));
    }
    EXPECT_THROW(t.quantize(3.9), ConfigError);
}

TEST(WFunction, FarParticleLeavesOne) {
    auto c = line_config({10.0, 60.0});
    auto nb = build_neighbors(c, kL0, kLm1);
    EXPECT_EQ(eval_W(c, nb, desk_table(), 1, {30.0, 50.0, 50.0}), 1.0);
}

TEST(WFunction, SingleNeighborInsideBall) {
    auto c = line_config({10.0, 60.0});
    auto nb = build_neighbors(c, kL0, kLm1);
    const auto& t = desk_table();
    for (double d : {0.3, 1.0, 2.5, 9.0, 15.5})
        EXPECT_NEAR(eval_W(c, nb, t, 1, {10.0 + d, 50.0, 50.0}), 1.0 - t.tau(kL0, d), 1e-12);
}

TEST(WFunction, LowerBoundAlongSweep) {
    const auto& t = desk_table();
    double c0 = t.c0();
    auto c = line_config({10.0, 60.0});
    auto nb = build_neighbors(c, kL0, kLm1);
    for (int k = 0; k <= 400; ++k) {
        double w = eval_W(c, nb, t, 1, {10.0 + 20.0 * k / 400.0, 50.0, 50.0});
        EXPECT_GE(w, 1.0 - c0 - 1e-12);
        EXPECT_LE(w, 1.0);
    }
}

TEST(WFunction, RangeOverRandomConfigs) {
    const auto& t = desk_table();
    double c0 = t.c0();
    for (int trial = 0; trial < 5; ++trial) {
        StreamRng rng(15, "configspace", static_cast<std::uint64_t>(trial));
        auto c = ParticleConfig::uniform(150, 60.0, rng);
        auto nb = build_neighbors(c, kL0, kLm1);
        for (int p = 0; p < 2000; ++p) {
            std::size_t j = rng.below(c.size());
            // probes near other particles exercise every branch
            Vec3 y = c.x[rng.below(c.size())];
            for (auto& v : y) v += rng.uniform(-3.0, 3.0);
            double w = eval_W(c, nb, t, j, c.wrap(y));
            EXPECT_GE(w, 1.0 - c0 - 1e-12);
            EXPECT_LE(w, 1.0);
        }
    }
}

TEST(WSquared, EmptyNeighbourhoodIsExact) {
    auto c = line_config({10.0, 150.0});
    auto nb = build_neighbors(c, kL0, kLm1);
    Box b = Box::cube({40.0, 20.0, 20.0}, 40.0);
    auto r = integrate_W_squared(c, nb, desk_table(), 0, b, {});
    EXPECT_TRUE(r.exact);
    EXPECT_EQ(r.estimate, b.volume());
    EXPECT_THROW(integrate_W_squared(c, nb, desk_table(), 0, Box::cube({0, 0, 0}, 0.0), {}), ConfigError);
}

TEST(WSquared, OneInteriorParticleMatchesQuadrature) {
    auto c = line_config({50.0, 190.0});
    auto nb = build_neighbors(c, kL0, kLm1);
    const auto& t = desk_table();
    Box b = Box::cube({30.0, 30.0, 30.0}, 40.0);
    MonteCarloSpec mc;
    mc.samples = 400000;
    mc.seed = 5;
    auto r = integrate_W_squared(c, nb, t, 1, b, mc);
    double expect = b.volume() - ball_deficit(t.at_l0());
    EXPECT_LE(std::abs(r.estimate - expect), 3.0 * r.stderr_) << r.estimate << " vs " << expect;
    EXPECT_TRUE(r.upper_ok);
}

TEST(WSquared, UniformCellDeficitPerParticle) {
    const auto& t = desk_table();
    double rho = 1e-4;
    auto n = static_cast<std::size_t>(std::lround(rho * std::pow(2 * kL1, 3)));
    StreamRng rng(16, "configspace", "uniform-cell");
    auto c = ParticleConfig::uniform(n, 2 * kL1, rng);
    auto nb = build_neighbors(c, kL0, kLm1);
    Box b = Box::cube({40.0, 40.0, 40.0}, kL1);
    MonteCarloSpec mc;
    mc.samples = 200000;
    auto r = integrate_W_squared(c, nb, t, 0, b, mc);
    double per = 4.0 * std::numbers::pi * t.bounds().c1 * kL0 * kL0;
    EXPECT_LE(r.deficit, static_cast<double>(r.near_count) * per + 3.0 * r.stderr_);
    EXPECT_TRUE(r.upper_ok);
    EXPECT_GT(r.near_count, 0u);
}

TEST(SoftPotential, Branches) {
    const auto& t = desk_table();
    // 0 and 1 far apart: F = 1
    auto c = line_config({10.0, 100.0});
    auto nb = build_neighbors(c, kL0, kLm1);
    EXPECT_EQ(eval_soft_potential(c, nb, t, 0, 1, {20.0, 50.0, 50.0}), t.e0(kL0));
    EXPECT_EQ(eval_soft_potential(c, nb, t, 0, 1, {26.5, 50.0, 50.0}), 0.0);

    // x_0 with a third particle at distance 20: t_01 = 10 (G only)
    auto g = line_config({10.0, 100.0, 30.0});
    auto ng = build_neighbors(g, kL0, kLm1);
    ASSERT_DOUBLE_EQ(ng.t(0, 1), 10.0);
    EXPECT_EQ(eval_soft_potential(g, ng, t, 0, 1, {15.0, 50.0, 50.0}), t.e0(10.0));
    EXPECT_GT(t.e0(10.0), t.e0(kL0));

    // third particle at distance 6: t_01 = 3 < lm1
    auto z = line_config({10.0, 100.0, 16.0});
    auto nz = build_neighbors(z, kL0, kLm1);
    EXPECT_EQ(eval_soft_potential(z, nz, t, 0, 1, {11.0, 50.0, 50.0}), 0.0);
}

TEST(SoftPotential, NotSymmetric) {
    const auto& t = desk_table();
    // t_01 = 5 but t_10 = 6.5
    auto c = line_config({10.0, 13.0, 0.0});
    auto nb = build_neighbors(c, kL0, kLm1);
    double q01 = eval_soft_potential(c, nb, t, 0, 1, c.x[1]);
    double q10 = eval_soft_potential(c, nb, t, 1, 0, c.x[0]);
    EXPECT_EQ(q01, t.e0(5.0));
    EXPECT_EQ(q10, t.e0(6.5));
    EXPECT_NE(q01, q10);
}

TEST(SoftPotential, SupportedInL0Ball) {
    const auto& t = desk_table();
    StreamRng rng(17, "configspace", "support");
    auto c = ParticleConfig::uniform(100, 60.0, rng);
    auto nb = build_neighbors(c, kL0, kLm1);
    for (int p = 0; p < 5000; ++p) {
        std::size_t i = rng.below(c.size()), j = rng.below(c.size());
        Vec3 y{rng.uniform() * 60.0, rng.uniform() * 60.0, rng.uniform() * 60.0};
        if (c.dist(c.x[i], y) > kL0) {
            EXPECT_EQ(eval_soft_potential(c, nb, t, i, j, y), 0.0);
        }
    }
}

TEST(Grid, TruncationAtCentreAndFace) {
    const auto& t = desk_table();
    GridDecomposition grid(160.0, kL1, 2 * kL0, {0.0, 0.0, 0.0});
    auto c = line_config({40.0, 100.0}, 160.0);
    c.x[0] = {40.0, 40.0, 40.0};
    c.x[1] = {45.0, 40.0, 40.0};
    auto nb = build_neighbors(c, kL0, kLm1);
    EXPECT_EQ(eval_truncated_soft_potential(grid, c, nb, t, 0, 1, c.x[1]), eval_soft_potential(c, nb, t, 0, 1, c.x[1]));
    auto f = c;
    f.x[0] = {40.0, 40.0, 5.0};
    f.x[1] = {40.0, 40.0, 10.0};
    auto nf = build_neighbors(f, kL0, kLm1);
    EXPECT_GT(eval_soft_potential(f, nf, t, 0, 1, f.x[1]), 0.0);
    EXPECT_EQ(eval_truncated_soft_potential(grid, f, nf, t, 0, 1, f.x[1]), 0.0);
}

TEST(Grid, PartitionAndAverageInnerFraction) {
    double L = 160.0;
    StreamRng rng(18, "configspace", "grid");
    Vec3 x{37.2, 101.9, 3.3};
    int trials = 10000;
    double hits = 0.0;
    for (int k = 0; k < trials; ++k) {
        Vec3 u{rng.uniform(-40.0, 40.0), rng.uniform(-40.0, 40.0), rng.uniform(-40.0, 40.0)};
        GridDecomposition g(L, kL1, 2 * kL0, u);
        // exactly one cell contains x
        int owners = 0;
        for (int a = 0; a < g.per_axis; ++a)
            for (int b = 0; b < g.per_axis; ++b)
                for (int cc = 0; cc < g.per_axis; ++cc) owners += (g.cell_of(x) == std::array<int, 3>{a, b, cc});
        EXPECT_EQ(owners, 1);
        hits += g.inner(x) ? 1.0 : 0.0;
    }
    double p = std::pow((kL1 - 4 * kL0) / kL1, 3);
    double sigma = std::sqrt(p * (1 - p) / trials);
    EXPECT_NEAR(hits / trials, p, 3 * sigma);
    EXPECT_DOUBLE_EQ(GridDecomposition(L, kL1, 2 * kL0, {}).inner_fraction(), p);
    EXPECT_THROW(GridDecomposition(150.0, kL1, 2 * kL0, {}), ConfigError);
    EXPECT_THROW(GridDecomposition(L, kL1, 2 * kL0, {40.0, 0.0, 0.0}), ConfigError);
}

TEST(Split, EqualWeightsGiveZeroGap) {
    auto c = line_config({50.0, 55.0}, 200.0);
    auto nb = build_neighbors(c, kL0, kLm1);
    Box A = Box::cube({40.0, 40.0, 40.0}, 20.0), B = Box::cube({60.0, 40.0, 40.0}, 20.0);
    auto e = expectation_split(c, nb, desk_table(), 1, A, B, 1.0, 1.0, {});
    EXPECT_EQ(e.with_W, 1.0);
    EXPECT_EQ(e.uniform, 1.0);
    EXPECT_EQ(e.gap, 0.0);
}

TEST(Split, EmptyConfigurationIsUniform) {
    auto c = line_config({5.0}, 200.0);
    auto nb = build_neighbors(c, kL0, kLm1);
    Box A = Box::cube({40.0, 40.0, 40.0}, 20.0), B = Box::cube({60.0, 40.0, 40.0}, 20.0);
    auto e = expectation_split(c, nb, desk_table(), 0, A, B, 3.0, 1.0, {});
    EXPECT_DOUBLE_EQ(e.with_W, 2.0);
    EXPECT_DOUBLE_EQ(e.uniform, 2.0);
    EXPECT_DOUBLE_EQ(e.gap, 0.0);
}

TEST(Split, UniformParticlesDeskBound) {
    const auto& t = desk_table();
    double rho = 1e-4;
    double L = 2 * kL1;
    auto n = static_cast<std::size_t>(std::lround(rho * L * L * L));
    StreamRng rng(19, "configspace", "split");
    auto c = ParticleConfig::uniform(n, L, rng);
    auto nb = build_neighbors(c, kL0, kLm1);
    Box A = Box::cube({0.0, 40.0, 40.0}, kL1), B = Box::cube({kL1, 40.0, 40.0}, kL1);
    MonteCarloSpec mc;
    mc.samples = 200000;
    auto e = expectation_split(c, nb, t, 0, A, B, 1.0, 0.0, mc, rho);
    double c1 = t.bounds().c1;
    EXPECT_LE(e.realized_C, 10.0 * c1 * c1 * 4.0 * std::numbers::pi);
    EXPECT_GE(e.with_W, 0.0);
    EXPECT_LE(e.with_W, 1.0);
}
