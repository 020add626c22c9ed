#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <gmpxx.h>

#include "dilute/errors.hpp"
#include "dilute/rng.hpp"
#include "dilute/scales.hpp"

namespace dilute {

/// t(t-1) up to the knee K, then the tangent line (2K-1)t - K^2.
struct PiecewiseQuadratic {
    double knee = 0.0;

    double operator()(double t) const { return t <= knee ? t * (t - 1.0) : (2.0 * knee - 1.0) * t - knee * knee; }
};

enum class GapVerdict { satisfied, marginal, violated };

inline std::string to_string(GapVerdict v) {
    switch (v) {
        case GapVerdict::satisfied: return "satisfied";
        case GapVerdict::marginal: return "marginal";
        case GapVerdict::violated: return "violated";
    }
    return "unknown";
}

/// ">>" read as: ratio >= 10 satisfied, [2, 10) marginal, below 2 violated.
inline GapVerdict classify_gap(double ratio) {
    if (ratio >= 10.0) return GapVerdict::satisfied;
    if (ratio >= 2.0) return GapVerdict::marginal;
    return GapVerdict::violated;
}

struct ScheduleCheck {
    int s = 0;
    double K = 0.0, K_next = 0.0;
    bool above_density = false;  // K_s > 2^{s-1} rho l1^3
    bool gap_positive = false;   // 2K_s - K_{s+1} > 0
    double gap_ratio = 0.0;      // (2K_s - K_{s+1}) / (|ln rho|^{1/2} sqrt(K_{s+1}))
    GapVerdict verdict = GapVerdict::violated;
};

/// Knees K_1..K_{3h+1} and box geometry of the doubling steps.
struct DoublingSchedule {
    double rho = 0.0;
    double eta = 0.0;
    double log_rho = 0.0;
    double l1 = 0.0;
    double base = 0.0;  // rho l1^3
    int h = 1;
    std::vector<double> K;  // K[s], s = 1..3h+1; K[0] unused

    int s_max() const { return 3 * h; }
    double knee(int s) const { return K.at(static_cast<std::size_t>(s)); }
    PiecewiseQuadratic f(int s) const { return {knee(s)}; }

    /// |Lambda_A| = |Lambda_B| at step s.
    double box_volume(int s) const { return std::ldexp(l1 * l1 * l1, s - 1); }
    double side(int s) const { return std::ldexp(l1, (s - 1) / 3); }

    /// Dimensions of Lambda_A at step s; Lambda_A u Lambda_B has those of step s+1.
    std::array<double, 3> box_dims(int s) const {
        double l = side(s);
        switch ((s - 1) % 3) {
            case 0: return {l, l, l};
            case 1: return {l, l, 2 * l};
            default: return {l, 2 * l, 2 * l};
        }
    }
    std::array<double, 3> union_dims(int s) const { return box_dims(s + 1); }

    std::vector<ScheduleCheck> checks() const {
        std::vector<ScheduleCheck> out;
        for (int s = 1; s <= s_max(); ++s) {
            ScheduleCheck c;
            c.s = s;
            c.K = knee(s);
            c.K_next = knee(s + 1);
            c.above_density = c.K > std::ldexp(base, s - 1);
            c.gap_positive = 2.0 * c.K - c.K_next > 0.0;
            c.gap_ratio = (2.0 * c.K - c.K_next) / (std::sqrt(log_rho) * std::sqrt(c.K_next));
            c.verdict = classify_gap(c.gap_ratio);
            out.push_back(c);
        }
        return out;
    }

    bool first_knee_ok() const { return std::abs(knee(1) - 2.0 * base) <= 1e-12 * base; }
    bool final_knee_ok() const { return knee(3 * h + 1) > std::ldexp(base, 3 * h); }
};

/// K_s = (2 - (1 - 2^{-(s-1)/2}) |ln rho|^{-eta}) 2^{s-1} rho l1^3.
inline DoublingSchedule example_schedule(double rho, double eta, double l1, int h) {
    if (h < 1) throw ConfigError("doubling schedule needs h >= 1");
    check_density(rho, eta);
    DoublingSchedule d;
    d.rho = rho;
    d.eta = eta;
    d.log_rho = std::abs(std::log(rho));
    d.l1 = l1;
    d.base = rho * l1 * l1 * l1;
    d.h = h;
    d.K.assign(static_cast<std::size_t>(3 * h + 2), 0.0);
    double damp = std::pow(d.log_rho, -eta);
    for (int s = 1; s <= 3 * h + 1; ++s)
        d.K[static_cast<std::size_t>(s)] = (2.0 - (1.0 - std::pow(2.0, -(s - 1) / 2.0)) * damp) * std::ldexp(d.base, s - 1);
    return d;
}

inline DoublingSchedule example_schedule(const ScaleSet& sc, int h) { return example_schedule(sc.rho, sc.eta, sc.l1, h); }

namespace detail {

/// log pmf of Bin(k, 1/2) via the recurrence p(m+1) = p(m) (k-m)/(m+1).
inline std::vector<double> log_binomial_half(std::int64_t k) {
    std::vector<double> lp(static_cast<std::size_t>(k + 1));
    lp[0] = -static_cast<double>(k) * std::log(2.0);
    for (std::int64_t m = 0; m < k; ++m)
        lp[static_cast<std::size_t>(m + 1)] =
            lp[static_cast<std::size_t>(m)] + std::log(static_cast<double>(k - m)) - std::log(static_cast<double>(m + 1));
    return lp;
}

}  // namespace detail

inline constexpr std::int64_t max_exact_k = 10000;

/// F_s(nA, nB, k) = E[f_s(nA + mA) + f_s(nB + k - mA)] / |Lambda_A|, mA ~ Bin(k, 1/2).
inline double eval_F_exact(const DoublingSchedule& d, int s, std::int64_t nA, std::int64_t nB, std::int64_t k) {
    if (nA < 0 || nB < 0 || k < 0) throw ConfigError("F_s arguments must be non-negative");
    if (k > max_exact_k) throw BudgetError(fmt::format("k={} exceeds the exact binomial budget {}", k, max_exact_k));
    auto f = d.f(s);
    auto lp = detail::log_binomial_half(k);
    double sum = 0.0;
    for (std::int64_t m = 0; m <= k; ++m) {
        double w = std::exp(lp[static_cast<std::size_t>(m)]);
        if (w == 0.0) continue;
        sum += w * (f(static_cast<double>(nA + m)) + f(static_cast<double>(nB + k - m)));
    }
    return sum / d.box_volume(s);
}

/// Monte Carlo estimate of F_s with its standard error.
struct MonteCarloF {
    double mean = 0.0;
    double stderr_ = 0.0;
};

inline MonteCarloF sample_F(const DoublingSchedule& d, int s, std::int64_t nA, std::int64_t nB, std::int64_t k,
                            std::int64_t samples, StreamRng rng) {
    auto f = d.f(s);
    // Welford: the spread is often tiny next to the mean.
    double mean = 0.0, m2 = 0.0;
    for (std::int64_t i = 0; i < samples; ++i) {
        std::int64_t m = 0;
        for (std::int64_t j = 0; j < k; j += 64) {
            auto bits = rng();
            int take = static_cast<int>(std::min<std::int64_t>(64, k - j));
            if (take < 64) bits &= (std::uint64_t{1} << take) - 1;
            m += std::popcount(bits);
        }
        double v = (f(static_cast<double>(nA + m)) + f(static_cast<double>(nB + k - m))) / d.box_volume(s);
        double delta = v - mean;
        mean += delta / static_cast<double>(i + 1);
        m2 += delta * (v - mean);
    }
    double n = static_cast<double>(samples);
    return {mean, std::sqrt(m2 / (n - 1.0) / n)};
}

struct AtypicalRow {
    int s = 0;
    std::int64_t n = 0;
    std::int64_t argmin_mA = 0;
    double min_split = 0.0;    // min over splits of f_s(mA) + f_s(mB)
    double target = 0.0;       // f_{s+1}(n) / 2  (both sides times |Lambda_A|)
    double margin = 0.0;       // min_split - target
    double half_margin = 0.0;  // 2 f_s(n/2) - f_{s+1}(n) / 2
};

struct AtypicalReport {
    int s = 0;
    double K = 0.0, K_next = 0.0;
    std::int64_t n_first = 0, n_last = 0;
    bool slope_ok = false;  // 2K_s - 1 >= K_{s+1} - 1/2
    std::vector<AtypicalRow> rows;
    std::vector<AtypicalRow> counterexamples;
    double worst_margin = std::numeric_limits<double>::infinity();

    bool ok() const { return counterexamples.empty() && slope_ok; }
};

/// Exhaustive min-split check for every n in [K_{s+1} + 2 sqrt(K_{s+1}), n_max].
inline AtypicalReport verify_atypical_knees(double K, double K_next, int s, std::int64_t n_max, bool keep_rows = true) {
    AtypicalReport rep;
    rep.s = s;
    rep.K = K;
    rep.K_next = K_next;
    rep.slope_ok = 2.0 * K - 1.0 >= K_next - 0.5;
    PiecewiseQuadratic fs{K}, fn{K_next};
    rep.n_first = static_cast<std::int64_t>(std::ceil(K_next + 2.0 * std::sqrt(K_next)));
    rep.n_last = n_max;
    for (std::int64_t n = rep.n_first; n <= n_max; ++n) {
        AtypicalRow row;
        row.s = s;
        row.n = n;
        row.min_split = std::numeric_limits<double>::infinity();
        for (std::int64_t mA = 0; 2 * mA <= n; ++mA) {
            double v = fs(static_cast<double>(mA)) + fs(static_cast<double>(n - mA));
            if (v < row.min_split) {
                row.min_split = v;
                row.argmin_mA = mA;
            }
        }
        row.target = 0.5 * fn(static_cast<double>(n));
        row.margin = row.min_split - row.target;
        row.half_margin = 2.0 * fs(0.5 * static_cast<double>(n)) - row.target;
        rep.worst_margin = std::min(rep.worst_margin, row.margin);
        if (row.margin < 0.0) rep.counterexamples.push_back(row);
        if (keep_rows) rep.rows.push_back(row);
    }
    return rep;
}

inline AtypicalReport verify_lemma_doubling_atypical(const DoublingSchedule& d, int s, std::int64_t n_max,
                                                     bool keep_rows = true) {
    if (s < 1 || s > d.s_max()) throw ConfigError(fmt::format("step s={} outside 1..{}", s, d.s_max()));
    return verify_atypical_knees(d.knee(s), d.knee(s + 1), s, n_max, keep_rows);
}

/// (n - K - 1/2)^2 - K - 1/4, which equals 4 f_s(n/2) - f_{s+1}(n) for K_{s+1} = K < n <= 2K_s.
inline double doubling_identity(double n, double K_next) { return (n - K_next - 0.5) * (n - K_next - 0.5) - K_next - 0.25; }

struct FEstimateRow {
    int s = 0;
    std::int64_t n = 0;
    double lhs = 0.0;  // F_s(0,0,n) |Lambda_A u Lambda_B|
    double rhs = 0.0;  // (1 - rho) f_{s+1}(n)
    double margin = 0.0;
};

struct FEstimateReport {
    int s = 0;
    std::int64_t n_limit = 0;  // admissible n < K_{s+1} + 2 sqrt(K_{s+1})
    std::vector<FEstimateRow> rows;
    std::vector<FEstimateRow> counterexamples;
    double worst_relative_margin = std::numeric_limits<double>::infinity();

    bool ok() const { return counterexamples.empty(); }
};

inline FEstimateReport verify_F_estimate(const DoublingSchedule& d, int s, double rho, bool keep_rows = true) {
    if (s < 1 || s > d.s_max()) throw ConfigError(fmt::format("step s={} outside 1..{}", s, d.s_max()));
    FEstimateReport rep;
    rep.s = s;
    double Kn = d.knee(s + 1);
    double limit = Kn + 2.0 * std::sqrt(Kn);
    rep.n_limit = static_cast<std::int64_t>(std::ceil(limit)) - 1;
    auto fn = d.f(s + 1);
    double vol2 = 2.0 * d.box_volume(s);
    for (std::int64_t n = 0; static_cast<double>(n) < limit; ++n) {
        FEstimateRow row;
        row.s = s;
        row.n = n;
        row.lhs = eval_F_exact(d, s, 0, 0, n) * vol2;
        row.rhs = (1.0 - rho) * fn(static_cast<double>(n));
        row.margin = row.lhs - row.rhs;
        if (row.rhs > 0.0) rep.worst_relative_margin = std::min(rep.worst_relative_margin, row.margin / row.rhs);
        if (row.margin < 0.0) rep.counterexamples.push_back(row);
        if (keep_rows) rep.rows.push_back(row);
    }
    return rep;
}

struct ChernoffReport {
    std::int64_t n_max = 0;
    std::int64_t checks = 0;
    std::int64_t violations = 0;
    double worst_log_slack = std::numeric_limits<double>::infinity();  // min of log bound - log tail
};

/// P(mA >= n/2 + zeta) <= exp(-2 zeta^2 / n) for every n <= n_max. The tail is
/// a step function of zeta, so the binding zeta at threshold j is j - n/2.
inline ChernoffReport verify_chernoff(std::int64_t n_max) {
    ChernoffReport rep;
    rep.n_max = n_max;
    for (std::int64_t n = 1; n <= n_max; ++n) {
        auto lp = detail::log_binomial_half(n);
        double log_tail = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = n; 2 * j >= n; --j) {
            double a = lp[static_cast<std::size_t>(j)];
            double hi = std::max(log_tail, a), lo = std::min(log_tail, a);
            log_tail = hi + std::log1p(std::exp(lo - hi));
            double zeta = static_cast<double>(j) - 0.5 * static_cast<double>(n);
            double log_bound = -2.0 * zeta * zeta / static_cast<double>(n);
            double slack = log_bound - log_tail;
            ++rep.checks;
            rep.worst_log_slack = std::min(rep.worst_log_slack, slack);
            if (slack < -1e-12) ++rep.violations;
        }
    }
    return rep;
}

/// Exact rational F_s. Knees and volumes are doubles, hence exact dyadic rationals.
class ExactF {
public:
    ExactF(const DoublingSchedule& d, int s) : K_(d.knee(s)), vol_(d.box_volume(s)) {}
    ExactF(double knee, double volume) : K_(knee), vol_(volume) {}

    mpq_class f(std::int64_t t) const {
        mpq_class tt(static_cast<long>(t));
        if (mpq_class(t) <= K_) return tt * (tt - 1);
        return (2 * K_ - 1) * tt - K_ * K_;
    }

    mpq_class F(std::int64_t nA, std::int64_t nB, std::int64_t k) const {
        mpq_class sum = 0;
        mpz_class c = 1;
        for (std::int64_t m = 0; m <= k; ++m) {
            if (m > 0) {
                c *= static_cast<unsigned long>(k - m + 1);
                c /= static_cast<unsigned long>(m);
            }
            sum += mpq_class(c) * (f(nA + m) + f(nB + k - m));
        }
        mpz_class two_k = 1;
        mpz_mul_2exp(two_k.get_mpz_t(), two_k.get_mpz_t(), static_cast<mp_bitcnt_t>(k));
        sum /= mpq_class(two_k) * vol_;
        return sum;
    }

private:
    mpq_class K_, vol_;
};

struct MomentReport {
    mpq_class g_mean, g_var, M_mean, M_var;
    mpq_class F_prev, F_next, F_A, F_B;
    bool telescoping = false;  // F(nA,nB,k-1) + <g> = F(nA,nB,k)
    bool M_mean_is_one = false;
    bool M_var_identity = false;  // var M = 4 (nA - nB)^2
    bool g_var_identity = false;  // var g = [F(nA+1,nB,k-1) - F(nA,nB+1,k-1)]^2 / 4

    bool all() const { return telescoping && M_mean_is_one && M_var_identity && g_var_identity; }
};

/// Exact moments of g_k and M_k under the uniform (1/2, 1/2) law of x_k.
inline MomentReport gk_Mk_moments(const ExactF& F, std::int64_t nA, std::int64_t nB, std::int64_t k) {
    if (k < 1) throw ConfigError("moments need k >= 1");
    MomentReport r;
    r.F_prev = F.F(nA, nB, k - 1);
    r.F_A = F.F(nA + 1, nB, k - 1);
    r.F_B = F.F(nA, nB + 1, k - 1);
    r.F_next = F.F(nA, nB, k);
    mpq_class gA = r.F_A - r.F_prev, gB = r.F_B - r.F_prev;
    r.g_mean = (gA + gB) / 2;
    r.g_var = (gA * gA + gB * gB) / 2 - r.g_mean * r.g_mean;
    mpq_class d(static_cast<long>(nA - nB));
    mpq_class MA = (d + 1) * (d + 1) - d * d, MB = (d - 1) * (d - 1) - d * d;
    r.M_mean = (MA + MB) / 2;
    r.M_var = (MA * MA + MB * MB) / 2 - r.M_mean * r.M_mean;
    r.telescoping = (r.F_prev + r.g_mean == r.F_next);
    r.M_mean_is_one = (r.M_mean == 1);
    r.M_var_identity = (r.M_var == 4 * d * d);
    mpq_class diff = r.F_A - r.F_B;
    r.g_var_identity = (r.g_var == diff * diff / 4);
    return r;
}

inline MomentReport gk_Mk_moments(const DoublingSchedule& d, int s, std::int64_t nA, std::int64_t nB, std::int64_t k) {
    return gk_Mk_moments(ExactF(d, s), nA, nB, k);
}

/// Inputs from the trial-factor side of the argument.
struct RandomizationInputs {
    double a = 1.0;         // scattering length
    double c0 = 0.0;        // W >= 1 - c0
    double split_C = 1.0;   // realized |<h>_W - <h>_1| <= C rho l0^2 max|h|
    double C_prime = 1.0;   // the anonymous C' of the randomizing lemmas
};

struct RandomizationStep {
    std::int64_t k = 0, nA = 0, nB = 0;
    double g_shift = 0.0;         // |<g>_W - <g>_1| bound
    double M_drift = 0.0;         // C'(k-1) <M>_W |ln rho| / l^4
    double g_var_over_gap = 0.0;  // var_W(g) / gap
    double M_var_over_gap = 0.0;  // C'^2 k^2 var_W(M) |ln rho|^2 / l^8 / gap
    double majorant_density = 0.0;    // n rho^{1/3} l^-3
    double majorant_imbalance = 0.0;  // (nA - nB)^2 l^-4 |ln rho|
    double total() const { return g_shift + M_drift + g_var_over_gap + M_var_over_gap; }
};

struct RandomizationReport {
    int s = 0;
    std::int64_t n = 0;
    double gap = 0.0;
    double F_full = 0.0;  // F(0, 0, n)
    std::vector<RandomizationStep> steps;
    double aggregate_error = 0.0;
    double realized_C_density = 0.0;  // max step error / (n rho^{1/3} l^-3 + C'(nA-nB)^2 l^-4 |ln rho|)
    double relative_error = 0.0;      // aggregate / F(0,0,n)
};

/// Walks k = 1..n, randomizing one particle at a time. `in_A[i]` says whether
/// particle i+1 sits in Lambda_A.
inline RandomizationReport randomization_step_certificate(const DoublingSchedule& d, int s, const std::vector<bool>& in_A,
                                                          double l0, const RandomizationInputs& in) {
    auto n = static_cast<std::int64_t>(in_A.size());
    double Kn = d.knee(s + 1);
    if (static_cast<double>(n) >= Kn + 2.0 * std::sqrt(Kn))
        throw ConfigError(fmt::format("n={} is in the atypical regime (>= K_{{s+1}} + 2 sqrt K_{{s+1}} = {:.4g})", n,
                                      Kn + 2.0 * std::sqrt(Kn)));
    RandomizationReport rep;
    rep.s = s;
    rep.n = n;
    double ell = d.side(s);
    auto dims = d.union_dims(s);
    double longest = std::max({dims[0], dims[1], dims[2]});
    double L = d.log_rho;
    // Gap of (4 pi a |ln rho|)^{-1} T_k on the union box.
    rep.gap = (1.0 - in.c0 * in.c0) * M_PI * M_PI / (longest * longest) / (4.0 * M_PI * in.a * L);
    ExactF exact(d, s);
    double shift_unit = in.split_C * d.rho * l0 * l0;
    std::int64_t nA = 0, nB = 0;
    for (bool a : in_A) (a ? nA : nB) += 1;
    for (std::int64_t k = 1; k <= n; ++k) {
        // particle k leaves the fixed set
        if (in_A[static_cast<std::size_t>(k - 1)])
            --nA;
        else
            --nB;
        auto mom = gk_Mk_moments(exact, nA, nB, k);
        double gA = mpq_class(mom.F_A - mom.F_prev).get_d(), gB = mpq_class(mom.F_B - mom.F_prev).get_d();
        double gmax = std::max(std::abs(gA), std::abs(gB));
        double dd = static_cast<double>(nA - nB);
        double Mmax = std::max(std::abs(2 * dd + 1), std::abs(-2 * dd + 1));
        RandomizationStep st;
        st.k = k;
        st.nA = nA;
        st.nB = nB;
        st.g_shift = shift_unit * gmax;
        double M_W = 1.0 + shift_unit * Mmax;
        st.M_drift = in.C_prime * static_cast<double>(k - 1) * M_W * L / std::pow(ell, 4);
        double gvar_W = mom.g_var.get_d() + 2.0 * shift_unit * gmax * gmax;
        st.g_var_over_gap = gvar_W / rep.gap;
        double Mvar_W = mom.M_var.get_d() + 2.0 * shift_unit * Mmax * Mmax;
        st.M_var_over_gap = in.C_prime * in.C_prime * static_cast<double>(k * k) * Mvar_W * L * L / std::pow(ell, 8) / rep.gap;
        st.majorant_density = static_cast<double>(n) * std::cbrt(d.rho) / std::pow(ell, 3);
        st.majorant_imbalance = dd * dd * L / std::pow(ell, 4);
        rep.aggregate_error += st.total();
        double maj = st.majorant_density + in.C_prime * st.majorant_imbalance;
        rep.realized_C_density = std::max(rep.realized_C_density, st.total() / maj);
        rep.steps.push_back(st);
    }
    rep.F_full = eval_F_exact(d, s, 0, 0, n);
    rep.relative_error = rep.F_full > 0 ? rep.aggregate_error / rep.F_full : 0.0;
    return rep;
}

/// cell_count * fbar(N / cell_count): Jensen lower bound for sum fbar(n_theta).
inline double jensen_floor(const PiecewiseQuadratic& fbar, std::int64_t cell_count, double N) {
    if (cell_count < 1) throw ConfigError("jensen floor needs at least one cell");
    return static_cast<double>(cell_count) * fbar(N / static_cast<double>(cell_count));
}

struct JensenWitness {
    double floor = 0.0;
    double min_sum = std::numeric_limits<double>::infinity();
    std::int64_t samples = 0;
    bool ok() const { return min_sum >= floor * (1.0 - 1e-12) - 1e-9; }
};

/// Random integer compositions of N into cell_count parts (uniform placement).
inline JensenWitness jensen_witness(const PiecewiseQuadratic& fbar, std::int64_t cell_count, std::int64_t N,
                                    std::int64_t samples, StreamRng rng) {
    JensenWitness w;
    w.floor = jensen_floor(fbar, cell_count, static_cast<double>(N));
    w.samples = samples;
    std::vector<std::int64_t> occ(static_cast<std::size_t>(cell_count));
    for (std::int64_t i = 0; i < samples; ++i) {
        std::fill(occ.begin(), occ.end(), 0);
        for (std::int64_t p = 0; p < N; ++p) ++occ[rng.below(static_cast<std::uint64_t>(cell_count))];
        double sum = 0.0;
        for (auto o : occ) sum += fbar(static_cast<double>(o));
        w.min_sum = std::min(w.min_sum, sum);
    }
    return w;
}

struct DominationReport {
    double K_last = 0.0, K_bar = 0.0;
    std::int64_t t_max = 0;
    std::int64_t first_violation = -1;
    bool ok() const { return first_violation < 0; }
};

/// f_{3h+1}(t) >= fbar(t) for integers t <= 4 K_bar, with fbar the K = rho l2^3 instance.
inline DominationReport check_final_domination(const DoublingSchedule& d, double K_bar) {
    DominationReport r;
    r.K_last = d.knee(3 * d.h + 1);
    r.K_bar = K_bar;
    r.t_max = static_cast<std::int64_t>(std::floor(4.0 * K_bar));
    PiecewiseQuadratic last{r.K_last}, bar{K_bar};
    for (std::int64_t t = 0; t <= r.t_max; ++t) {
        double ft = static_cast<double>(t);
        if (last(ft) < bar(ft) - 1e-9 * std::max(1.0, bar(ft))) {
            r.first_violation = t;
            break;
        }
    }
    return r;
}

struct JensenAssembly {
    double N = 0.0;
    std::int64_t cells = 0;
    double floor = 0.0;
    double ratio = 0.0;          // floor / (N rho l2^3)
    double deficit_over_eps = 0.0;  // (1 - ratio) / (rho^{1/3} |ln rho|^2)
};

/// Torus of side h' l2 holding N = rho L^3 particles, split into h'^3 cells.
inline JensenAssembly jensen_assembly(const ScaleSet& sc, std::int64_t h_prime) {
    JensenAssembly j;
    double L = static_cast<double>(h_prime) * sc.l2;
    j.N = sc.rho * L * L * L;
    j.cells = h_prime * h_prime * h_prime;
    PiecewiseQuadratic bar{sc.rho_l2_cubed()};
    j.floor = jensen_floor(bar, j.cells, j.N);
    j.ratio = j.floor / (j.N * sc.rho_l2_cubed());
    j.deficit_over_eps = (1.0 - j.ratio) / (std::cbrt(sc.rho) * sc.log_rho * sc.log_rho);
    return j;
}

}  // namespace dilute
