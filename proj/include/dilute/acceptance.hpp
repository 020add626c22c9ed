#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <json.hpp>

#include "dilute/cellbound.hpp"
#include "dilute/configspace.hpp"
#include "dilute/doubling.hpp"
#include "dilute/manifest.hpp"
#include "dilute/oracle.hpp"
#include "dilute/scales.hpp"
#include "dilute/twobody.hpp"

namespace dilute {

struct AcceptanceContext {
    std::uint64_t seed = 1;
    std::int64_t mc_samples = 20000;  // per W^2 integral in the W-bound check
};

struct CriterionOutcome {
    bool pass = false;
    nlohmann::json details;
    std::string csv;                 // empty: no table
    std::vector<std::string> notes;  // printed, not written
};

struct Criterion {
    int id = 0;
    std::string title;
    double limit_seconds = 0.0;
    std::function<CriterionOutcome(const AcceptanceContext&)> run;
};

struct CriterionRecord {
    int id = 0;
    std::string title;
    bool pass = false;  // numeric checks only
    double seconds = 0.0;
    double limit_seconds = 0.0;
    std::vector<std::string> notes;

    bool within_limit() const { return seconds < limit_seconds; }
};

namespace detail {

inline std::string num(double v) { return fmt::format("{:.17g}", v); }

inline CriterionOutcome scattering_analytic(const AcceptanceContext&) {
    auto sol = solve_zero_energy(PotentialSpec::square_barrier(50.0, 1.0));
    double exact = 1.0 - std::tanh(5.0) / 5.0;
    double rel = std::abs(sol.scattering_length - exact) / exact;
    CriterionOutcome o;
    o.pass = rel <= 1e-6;
    o.details = {{"a", sol.scattering_length}, {"exact", exact}, {"relative_error", rel}, {"tolerance", 1e-6}};
    return o;
}

inline CriterionOutcome neumann_bounds(const AcceptanceContext&) {
    std::vector<PotentialSpec> pots{PotentialSpec::square_barrier(1.0, 1.0), PotentialSpec::square_barrier(50.0, 1.0),
                                    PotentialSpec::gaussian(10.0, 0.3), PotentialSpec::smooth_bump(20.0, 1.0)};
    CriterionOutcome o;
    o.csv = "shape,v0,range,kappa,a,e0,lower,excess,allowed,pass\n";
    int pairs = 0, failures = 0;
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& pot : pots) {
        double a = solve_zero_energy(pot).scattering_length;
        for (double mult : {4.0, 6.0, 10.0, 20.0, 40.0}) {
            double kappa = mult * pot.support;
            double e0 = solve_neumann_mode(pot, kappa, a).eigenvalue;
            double lower = 3.0 * a / (kappa * kappa * kappa);
            double excess = e0 / lower - 1.0;
            double allowed = 8.0 * pot.support / kappa;
            bool ok = e0 >= lower && excess <= allowed;
            worst = std::max(worst, excess / allowed);
            ++pairs;
            failures += ok ? 0 : 1;
            o.csv += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", to_string(pot.shape), num(pot.amplitude),
                                 num(pot.range), num(kappa), num(a), num(e0),
                                 num(lower), num(excess), num(allowed), ok ? 1 : 0);
        }
    }
    o.pass = pairs == 20 && failures == 0;
    o.details = {{"pairs", pairs}, {"failures", failures}, {"worst_excess_over_allowed", worst}};
    return o;
}

inline CriterionOutcome temple_soundness(const AcceptanceContext& ctx) {
    CriterionOutcome o;
    o.csv = "kind,instance,applicable,bound,exact,sound\n";
    int dense_applicable = 0, dense_unsound = 0;
    StreamRng rng(ctx.seed, "acceptance", "temple-dense");
    for (int trial = 0; trial < 1000; ++trial) {
        Eigen::MatrixXd A(8, 8);
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) A(r, c) = rng.uniform(-1.0, 1.0);
        Eigen::MatrixXd H = 0.5 * (A + A.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
        Eigen::VectorXd v = es.eigenvectors().col(0);
        for (int r = 0; r < 8; ++r) v(r) += rng.uniform(-0.3, 0.3);
        v.normalize();
        Eigen::VectorXd Hv = H * v;
        double e1 = es.eigenvalues()(1) - rng.uniform(0.0, 0.2);
        auto t = temple_lower_bound({v.dot(Hv), Hv.squaredNorm(), e1});
        double exact = es.eigenvalues()(0);
        bool sound = !t.applicable || t.bound <= exact + 1e-12 * std::max(1.0, std::abs(exact));
        dense_applicable += t.applicable ? 1 : 0;
        dense_unsound += sound ? 0 : 1;
        o.csv += fmt::format("dense,{},{},{},{},{}\n", trial, t.applicable ? 1 : 0, t.applicable ? num(t.bound) : "",
                             num(exact), sound ? 1 : 0);
    }
    int grid_applicable = 0, grid_unsound = 0;
    StreamRng grng(ctx.seed, "acceptance", "temple-grid");
    EigenOptions two;
    two.nev = 2;
    for (int inst = 0; inst < 50; ++inst) {
        auto g = random_one_body(6 + static_cast<int>(grng.below(3)), grng);
        auto eig = ground_state(g, two);
        Field trial = eig.vectors[0];
        double noise = std::pow(10.0, grng.uniform(-4.0, -0.5));
        for (auto& x : trial) x += noise * grng.uniform(-1.0, 1.0);
        auto c = temple_vs_exact(g, trial, eig);
        grid_applicable += c.temple.applicable ? 1 : 0;
        grid_unsound += c.sound ? 0 : 1;
        o.csv += fmt::format("grid,{},{},{},{},{}\n", inst, c.temple.applicable ? 1 : 0,
                             c.temple.applicable ? num(c.temple.bound) : "", num(c.exact), c.sound ? 1 : 0);
    }
    o.pass = dense_unsound == 0 && grid_unsound == 0 && dense_applicable > 0 && grid_applicable > 0;
    o.details = {{"dense_instances", 1000},     {"dense_applicable", dense_applicable}, {"dense_unsound", dense_unsound},
                 {"grid_instances", 50},        {"grid_applicable", grid_applicable},   {"grid_unsound", grid_unsound}};
    return o;
}

inline const std::vector<double>& doubling_densities() {
    static const std::vector<double> r{1e-4, 1e-6, 1e-8};
    return r;
}

inline CriterionOutcome doubling_atypical(const AcceptanceContext&) {
    CriterionOutcome o;
    o.csv = "rho,s,K,K_next,n_first,n_last,worst_margin,counterexamples,slope_ok\n";
    std::int64_t total = 0, steps = 0;
    bool all = true;
    for (double rho : doubling_densities()) {
        auto d = example_schedule(build_scales(rho, 0.05), 2);
        for (int s = 1; s <= d.s_max(); ++s) {
            auto n_max = static_cast<std::int64_t>(4.0 * d.knee(s + 1));
            auto rep = verify_lemma_doubling_atypical(d, s, n_max, false);
            all = all && rep.ok();
            total += static_cast<std::int64_t>(rep.counterexamples.size());
            ++steps;
            o.csv += fmt::format("{},{},{},{},{},{},{},{},{}\n", num(rho), s, num(rep.K), num(rep.K_next), rep.n_first,
                                 rep.n_last, num(rep.worst_margin), rep.counterexamples.size(), rep.slope_ok ? 1 : 0);
        }
    }
    o.pass = all;
    o.details = {{"densities", doubling_densities()}, {"eta", 0.05}, {"h", 2}, {"steps", steps}, {"violations", total}};
    return o;
}

inline CriterionOutcome doubling_F_estimate(const AcceptanceContext&) {
    CriterionOutcome o;
    o.csv = "rho,s,n_limit,counterexamples,worst_relative_margin\n";
    std::int64_t total = 0;
    auto& cx = o.details["counterexamples"] = nlohmann::json::array();
    for (double rho : doubling_densities()) {
        auto d = example_schedule(build_scales(rho, 0.05), 2);
        for (int s = 1; s <= d.s_max(); ++s) {
            auto rep = verify_F_estimate(d, s, rho, false);
            total += static_cast<std::int64_t>(rep.counterexamples.size());
            for (const auto& c : rep.counterexamples)
                cx.push_back({{"rho", rho}, {"s", s}, {"n", c.n}, {"lhs", c.lhs}, {"rhs", c.rhs}});
            o.csv += fmt::format("{},{},{},{},{}\n", num(rho), s, rep.n_limit, rep.counterexamples.size(),
                                 num(rep.worst_relative_margin));
        }
    }
    auto ch = verify_chernoff(2000);
    // the same check with a wider cell, l1 prefactor 2, where the exact sums stay within budget
    std::int64_t wide_total = 0;
    ScalePrefactors wide;
    wide.l1 = 2.0;
    auto dw = example_schedule(build_scales(1e-4, 0.05, wide), 1);
    for (int s = 1; s <= dw.s_max(); ++s)
        wide_total += static_cast<std::int64_t>(verify_F_estimate(dw, s, 1e-4, false).counterexamples.size());
    o.pass = total == 0 && ch.violations == 0;
    o.details["F_violations"] = total;
    o.details["chernoff"] = {{"n_max", ch.n_max}, {"checks", ch.checks}, {"violations", ch.violations},
                             {"worst_log_slack", ch.worst_log_slack}};
    o.details["F_violations_with_l1_prefactor_2_rho_1e-4_h_1"] = wide_total;
    o.notes.push_back(fmt::format("F estimate: {} violations at unit prefactors; {} with l1 prefactor 2 at rho=1e-4, h=1",
                                  total, wide_total));
    return o;
}

inline CriterionOutcome moment_identities(const AcceptanceContext& ctx) {
    StreamRng rng(ctx.seed, "acceptance", "moments");
    int failures = 0;
    CriterionOutcome o;
    o.csv = "K,volume,nA,nB,k,telescoping,M_mean,M_var,g_var\n";
    for (int i = 0; i < 500; ++i) {
        double K = 2.0 + static_cast<double>(rng.below(4000)) / 16.0;
        double vol = 1.0 + static_cast<double>(rng.below(1000));
        auto nA = static_cast<std::int64_t>(rng.below(60));
        auto nB = static_cast<std::int64_t>(rng.below(60));
        auto k = static_cast<std::int64_t>(1 + rng.below(80));
        auto m = gk_Mk_moments(ExactF(K, vol), nA, nB, k);
        failures += m.all() ? 0 : 1;
        o.csv += fmt::format("{},{},{},{},{},{},{},{},{}\n", num(K), num(vol), nA, nB, k, m.telescoping ? 1 : 0,
                             m.M_mean_is_one ? 1 : 0, m.M_var_identity ? 1 : 0, m.g_var_identity ? 1 : 0);
    }
    o.pass = failures == 0;
    o.details = {{"states", 500}, {"failures", failures}, {"arithmetic", "exact rational"}};
    return o;
}

inline CriterionOutcome grid_average(const AcceptanceContext& ctx) {
    const double L = 160.0, l1 = 80.0, l0 = 16.0;
    const int origins = 10000;
    double p = std::pow((l1 - 4.0 * l0) / l1, 3);
    double sigma = std::sqrt(p * (1.0 - p) / origins);
    StreamRng prng(ctx.seed, "acceptance", "grid-probes");
    CriterionOutcome o;
    o.csv = "probe,x,y,z,mean,expected,sigma,z_score\n";
    int outside = 0;
    double worst = 0.0;
    for (int q = 0; q < 10; ++q) {
        Vec3 x{prng.uniform(0.0, L), prng.uniform(0.0, L), prng.uniform(0.0, L)};
        StreamRng rng = prng.substream(static_cast<std::uint64_t>(q));
        double hits = 0.0;
        for (int k = 0; k < origins; ++k) {
            Vec3 u{rng.uniform(-0.5 * l1, 0.5 * l1), rng.uniform(-0.5 * l1, 0.5 * l1), rng.uniform(-0.5 * l1, 0.5 * l1)};
            GridDecomposition g(L, l1, 2.0 * l0, u);
            // sum over cells of the inner indicator; only the owning cell can contribute
            hits += g.inner(x) ? 1.0 : 0.0;
        }
        double mean = hits / origins;
        double z = (mean - p) / sigma;
        worst = std::max(worst, std::abs(z));
        outside += std::abs(z) <= 3.0 ? 0 : 1;
        o.csv += fmt::format("{},{},{},{},{},{},{},{}\n", q, num(x[0]), num(x[1]), num(x[2]), num(mean), num(p),
                             num(sigma), num(z));
    }
    o.pass = outside == 0;
    o.details = {{"L", L}, {"l1", l1}, {"l0", l0}, {"origins", origins}, {"expected", p}, {"max_abs_z", worst},
                 {"probes_outside_3sigma", outside}};
    return o;
}

inline CriterionOutcome W_bounds(const AcceptanceContext& ctx) {
    const double L = 160.0, rho = 1e-4, l0 = 16.0, lm1 = 4.0;
    TauTable tab(PotentialSpec::square_barrier(50.0, 1.0), l0, lm1);
    double c0 = tab.c0();
    auto n = static_cast<std::size_t>(std::lround(rho * L * L * L));
    Box box = Box::cube({40.0, 40.0, 40.0}, 80.0);
    MonteCarloSpec mc;
    mc.samples = ctx.mc_samples;
    CriterionOutcome o;
    o.csv = "config,near,min_W,deficit,stderr,realized_c,upper_ok\n";
    std::vector<double> cs;
    double min_W = 1.0;
    bool upper = true, finite = true;
    for (int k = 0; k < 100; ++k) {
        StreamRng rng(ctx.seed, "acceptance", static_cast<std::uint64_t>(8000 + k));
        auto cfg = ParticleConfig::uniform(n, L, rng);
        auto nb = build_neighbors(cfg, l0, lm1);
        double mw = 1.0;
        for (int q = 0; q < 200; ++q) {
            // probes close to other particles reach every branch of W
            Vec3 y = cfg.x[rng.below(cfg.size())];
            for (auto& v : y) v += rng.uniform(-3.0, 3.0);
            mw = std::min(mw, eval_W(cfg, nb, tab, 0, cfg.wrap(y)));
        }
        mc.seed = ctx.seed * 1000 + static_cast<std::uint64_t>(k);
        auto r = integrate_W_squared(cfg, nb, tab, 0, box, mc);
        min_W = std::min(min_W, mw);
        upper = upper && r.upper_ok;
        finite = finite && std::isfinite(r.realized_c);
        cs.push_back(r.realized_c);
        o.csv += fmt::format("{},{},{},{},{},{},{}\n", k, r.near_count, num(mw), num(r.deficit), num(r.stderr_),
                             num(r.realized_c), r.upper_ok ? 1 : 0);
    }
    auto sorted = cs;
    std::sort(sorted.begin(), sorted.end());
    double median = 0.5 * (sorted[49] + sorted[50]);
    double lo = sorted.front() / median, hi = sorted.back() / median;
    bool stable = median > 0.0 && lo >= 0.5 && hi <= 1.5;
    bool floor_ok = min_W >= 1.0 - c0 - 1e-12;
    o.pass = floor_ok && upper && finite && stable;
    o.details = {{"configs", 100},          {"particles", n},          {"c0", c0},
                 {"min_W", min_W},          {"floor", 1.0 - c0},       {"floor_ok", floor_ok},
                 {"upper_ok", upper},       {"realized_c_median", median}, {"realized_c_min_over_median", lo},
                 {"realized_c_max_over_median", hi}, {"stable_within_50pct", stable}};
    return o;
}

inline CriterionOutcome oracle_consistency(const AcceptanceContext& ctx) {
    struct Case {
        PotentialSpec pot;
        std::vector<double> kappas;
    };
    std::vector<Case> cases{{PotentialSpec::square_barrier(50, 1), {4, 8, 16}},
                            {PotentialSpec::square_barrier(2, 1), {4, 16, 32}},
                            {PotentialSpec::gaussian(10, 0.5), {16, 32}},
                            {PotentialSpec::smooth_bump(20, 1.5), {8, 16, 32}}};
    CriterionOutcome o;
    o.csv = "shape,v0,range,kappa,oracle_e0,twobody_e0,relative_difference\n";
    double worst = 0.0;
    for (const auto& c : cases) {
        double a = solve_zero_energy(c.pot).scattering_length;
        for (double k : c.kappas) {
            double fv = radial_neumann_oracle(c.pot, k, 64).e0;
            double e0 = solve_neumann_mode(c.pot, k, a).eigenvalue;
            double rel = std::abs(fv / e0 - 1.0);
            worst = std::max(worst, rel);
            o.csv += fmt::format("{},{},{},{},{},{},{}\n", to_string(c.pot.shape), num(c.pot.amplitude),
                                 num(c.pot.range), num(k), num(fv), num(e0), num(rel));
        }
    }
    SubstitutionStudy st;
    std::string sub_error;
    try {
        st = substitution_identity_check(PotentialSpec::square_barrier(50, 1), 4.5, 10.0, {32, 64}, 20, ctx.seed);
    } catch (const ResolutionError& e) {
        sub_error = e.what();
    }
    bool radial_ok = worst <= 0.02;
    o.pass = radial_ok && sub_error.empty() && st.converging;
    o.details = {{"radial_cells", 64}, {"worst_relative_difference", worst}, {"radial_ok", radial_ok},
                 {"substitution_points", st.points}, {"substitution_residuals", st.max_residual},
                 {"substitution_ratio", st.ratio}};
    if (!sub_error.empty()) o.details["substitution_error"] = sub_error;
    return o;
}

inline CriterionOutcome two_body_leading_order(const AcceptanceContext&) {
    auto pot = PotentialSpec::gaussian(10.0, 0.5);
    double a = solve_zero_energy(pot).scattering_length;
    double L = 20.0 * a;
    auto g = make_relative_torus(64, L, pot);
    auto r = ground_state(g);
    double scale = 8.0 * std::numbers::pi * a / (L * L * L);
    double ratio = r.values[0] / scale;
    CriterionOutcome o;
    o.pass = std::abs(ratio - 1.0) <= 0.25;
    o.details = {{"potential", pot.describe()}, {"a", a},           {"L", L},
                 {"points", 64},                {"E0", r.values[0]}, {"residual", r.residuals[0]},
                 {"scale_8pi_a_over_L3", scale}, {"ratio", ratio},  {"finite_size_estimate", 1.0 + 2.837297 * a / L}};
    return o;
}

inline CriterionOutcome budget_scan(const AcceptanceContext&) {
    auto base = scan_error_budget(6, 30, 0.05);
    CriterionOutcome o;
    o.csv = "k,rho,eps";
    for (const auto& n : base.names) o.csv += "," + n;
    o.csv += "\n";
    for (const auto& r : base.rows) {
        o.csv += fmt::format("{},{},{}", r.k, num(r.rho), num(r.eps));
        for (double v : r.term_over_eps) o.csv += "," + num(v);
        o.csv += "\n";
    }
    bool shape = true;
    for (std::size_t i = 0; i < base.names.size(); ++i) shape = shape && base.eventually_below_one[i] && base.nonincreasing[i];
    struct Variant {
        std::string name;
        ScalePrefactors pref;
    };
    std::vector<Variant> variants;
    for (double f : {0.8, 1.2}) {
        for (int which = 0; which < 4; ++which) {
            ScalePrefactors p;
            double* slot[] = {&p.lm1, &p.l0, &p.l1, &p.l2};
            const char* names[] = {"lm1", "l0", "l1", "l2"};
            *slot[which] = f;
            variants.push_back({fmt::format("{}x{}", names[which], f), p});
        }
    }
    bool stable = base.crossover_k.has_value();
    auto& vj = o.details["variants"] = nlohmann::json::array();
    for (const auto& v : variants) {
        auto s = scan_error_budget(6, 30, 0.05, v.pref);
        bool same = s.crossover_k == base.crossover_k;
        stable = stable && same;
        nlohmann::json row{{"variant", v.name}, {"last_max_term_over_eps", 0.0}};
        row["crossover_k"] = s.crossover_k ? nlohmann::json(*s.crossover_k) : nlohmann::json(nullptr);
        double last = 0.0;
        for (double t : s.rows.back().term_over_eps) last = std::max(last, t);
        row["last_max_term_over_eps"] = last;
        row["matches_base"] = same;
        vj.push_back(row);
        if (!same)
            o.notes.push_back(fmt::format("variant {}: crossover {}", v.name,
                                          s.crossover_k ? fmt::format("k={}", *s.crossover_k) : "none up to k=30"));
    }
    o.pass = shape && stable;
    o.details["terms_eventually_below_one_and_nonincreasing"] = shape;
    o.details["crossover_k"] = base.crossover_k ? nlohmann::json(*base.crossover_k) : nlohmann::json(nullptr);
    o.details["crossover_rho"] =
        base.crossover_k ? nlohmann::json(std::pow(10.0, -*base.crossover_k)) : nlohmann::json(nullptr);
    o.details["stable_under_20pct"] = stable;
    return o;
}

}  // namespace detail

inline std::vector<Criterion> acceptance_criteria() {
    return {
        {1, "scattering length of the V0=50 barrier", 1.0, detail::scattering_analytic},
        {2, "Neumann eigenvalue bounds over 20 pairs", 30.0, detail::neumann_bounds},
        {3, "Temple soundness on 1000 dense and 50 grid instances", 60.0, detail::temple_soundness},
        {4, "atypical doubling split, exhaustive", 120.0, detail::doubling_atypical},
        {5, "F estimate by exact binomial sums and Chernoff tail", 120.0, detail::doubling_F_estimate},
        {6, "exact moment identities on 500 states", 10.0, detail::moment_identities},
        {7, "grid-average inner fraction", 10.0, detail::grid_average},
        {8, "W floor and W^2 deficit constants", 60.0, detail::W_bounds},
        {9, "radial oracle and substitution identity", 300.0, detail::oracle_consistency},
        {10, "periodic pair energy against 8 pi a / L^3", 600.0, detail::two_body_leading_order},
        {11, "error-budget scan and crossover stability", 5.0, detail::budget_scan},
    };
}

/// Runs every criterion, writing criterion_NN.json (and .csv), summary.json and
/// manifest.txt under `out`. Everything but the manifest is deterministic.
inline std::vector<CriterionRecord> report_all(const AcceptanceContext& ctx, const std::filesystem::path& out,
                                               const Manifest& manifest_base = {},
                                               const std::function<void(const CriterionRecord&)>& on_done = {}) {
    ensure_dir(out);
    std::vector<CriterionRecord> records;
    nlohmann::json summary;
    summary["seed"] = ctx.seed;
    summary["criteria"] = nlohmann::json::array();
    Manifest m = manifest_base;
    for (const auto& c : acceptance_criteria()) {
        CriterionRecord rec{c.id, c.title, false, 0.0, c.limit_seconds, {}};
        auto t0 = std::chrono::steady_clock::now();
        CriterionOutcome o;
        try {
            o = c.run(ctx);
        } catch (const std::exception& e) {
            o.pass = false;
            o.details = {{"error", e.what()}};
            o.notes.push_back(fmt::format("error: {}", e.what()));
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rec.pass = o.pass;
        rec.notes = o.notes;
        nlohmann::json doc{{"id", c.id}, {"title", c.title}, {"pass", o.pass}, {"details", o.details}};
        write_text(out / fmt::format("criterion_{:02d}.json", c.id), doc.dump(2) + "\n");
        if (!o.csv.empty()) write_text(out / fmt::format("criterion_{:02d}.csv", c.id), o.csv);
        summary["criteria"].push_back({{"id", c.id}, {"title", c.title}, {"pass", o.pass}});
        m.extra.emplace_back(fmt::format("runtime_criterion_{:02d}", c.id), fmt::format("{:.3f}s", rec.seconds));
        records.push_back(rec);
        if (on_done) on_done(rec);
    }
    write_text(out / "summary.json", summary.dump(2) + "\n");
    if (m.command.empty()) m.command = "report-all";
    m.seed = ctx.seed;
    write_manifest(out, m);
    return records;
}

}  // namespace dilute
