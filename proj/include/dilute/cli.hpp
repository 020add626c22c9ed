#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "dilute/acceptance.hpp"
#include "dilute/cellbound.hpp"
#include "dilute/config.hpp"
#include "dilute/doubling.hpp"
#include "dilute/manifest.hpp"
#include "dilute/oracle.hpp"
#include "dilute/scales.hpp"
#include "dilute/twobody.hpp"

namespace dilute::cli {

enum ExitCode : int { ok = 0, config_error = 2, numerical_error = 3, verification_failed = 4 };

struct Context {
    Config cfg;
    std::filesystem::path out;
    std::uint64_t seed = 1;
    std::string command;
    std::ostream* log = nullptr;

    Manifest manifest() const { return {command, cfg.hash(), seed, {}}; }
};

namespace detail {

inline std::string num(double v) { return fmt::format("{:.17g}", v); }

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

inline ScalePrefactors prefactors(const Config& c) {
    return {c.num("scales.pref.lm1"), c.num("scales.pref.l0"), c.num("scales.pref.l1"), c.num("scales.pref.l2")};
}

inline ZeroEnergyGrid zero_grid(const Config& c) {
    ZeroEnergyGrid g;
    g.inner_steps = static_cast<std::size_t>(c.unsigned_integer("twobody.inner_steps"));
    return g;
}

inline NeumannOptions neumann_options(const Config& c) {
    NeumannOptions o;
    o.points_per_kappa = c.num("neumann.points_per_kappa");
    return o;
}

inline nlohmann::json potential_json(const PotentialSpec& p) {
    return {{"shape", to_string(p.shape)}, {"v0", p.amplitude}, {"range", p.range}, {"support", p.support}};
}

inline int scattering(const Context& ctx) {
    auto pot = ctx.cfg.potential();
    auto sol = solve_zero_energy(pot, zero_grid(ctx.cfg));
    std::ostringstream csv;
    sol.write_csv(csv);
    write_text(ctx.out / "scattering_profile.csv", csv.str());
    write_json(ctx.out / "scattering.json", {{"potential", potential_json(pot)},
                                             {"scattering_length", sol.scattering_length},
                                             {"fit_residual", sol.fit_residual},
                                             {"grid_points", sol.r.size()}});
    auto m = ctx.manifest();
    m.extra.emplace_back("scattering_length", num(sol.scattering_length));
    write_manifest(ctx.out, m);
    *ctx.log << fmt::format("a = {:.12g}\n", sol.scattering_length);
    return ok;
}

inline int neumann(const Context& ctx) {
    auto pot = ctx.cfg.potential();
    double a = solve_zero_energy(pot, zero_grid(ctx.cfg)).scattering_length;
    auto opt = neumann_options(ctx.cfg);
    std::string csv = "kappa,e0,lower_3a_over_kappa3,relative_excess,c0,c1\n";
    nlohmann::json rows = nlohmann::json::array();
    for (double kappa : ctx.cfg.list("neumann.kappa")) {
        auto sol = solve_neumann_mode(pot, kappa, a, opt);
        auto b = check_profile_bounds(sol);
        double lower = 3.0 * a / (kappa * kappa * kappa);
        csv += fmt::format("{},{},{},{},{},{}\n", num(kappa), num(sol.eigenvalue), num(lower),
                           num(sol.eigenvalue / lower - 1.0), num(b.tau_max), num(b.c1));
        rows.push_back({{"kappa", kappa}, {"e0", sol.eigenvalue}, {"c0", b.tau_max}, {"c1", b.c1}});
        std::ostringstream prof;
        sol.write_csv(prof);
        write_text(ctx.out / fmt::format("neumann_profile_kappa_{}.csv", kappa), prof.str());
    }
    write_text(ctx.out / "neumann.csv", csv);
    write_json(ctx.out / "neumann.json", {{"potential", potential_json(pot)}, {"scattering_length", a}, {"modes", rows}});
    write_manifest(ctx.out, ctx.manifest());
    return ok;
}

inline int scales(const Context& ctx) {
    const auto& c = ctx.cfg;
    auto pref = prefactors(c);
    double eta = c.num("scales.eta"), R0 = c.num("scales.R0");
    std::optional<double> a;
    if (c.has("potential.shape")) a = solve_zero_energy(c.potential(), zero_grid(c)).scattering_length;
    std::string csv = "rho,lm1,l0,l1,l2,eps,h,rho_l1_cubed,hierarchy_ok";
    auto names = error_budget(build_scales(c.list("scales.rho").front(), eta, pref, R0));
    for (const auto& t : names) csv += "," + t.name;
    csv += "\n";
    nlohmann::json rows = nlohmann::json::array();
    for (double rho : c.list("scales.rho")) {
        auto s = build_scales(rho, eta, pref, R0);
        csv += fmt::format("{},{},{},{},{},{},{},{},{}", num(rho), num(s.lm1), num(s.l0), num(s.l1), num(s.l2),
                           num(s.eps), s.h, num(s.rho_l1_cubed()), s.hierarchy_ok() ? 1 : 0);
        for (const auto& t : error_budget(s)) csv += "," + num(t.value);
        csv += "\n";
        nlohmann::json row{{"rho", rho},
                           {"eps", s.eps},
                           {"lengths", {{"lm1", s.lm1}, {"l0", s.l0}, {"l1", s.l1}, {"l2", s.l2}}},
                           {"hierarchy_ok", s.hierarchy_ok()},
                           {"failing_ratios", s.failing_ratios()},
                           {"headline_vacuous", s.eps >= 1.0}};
        if (a) {
            auto hb = headline_bound(s, *a);
            row["headline"] = {{"energy_per_particle", hb.energy_per_particle}, {"ratio_to_leading", hb.ratio_to_leading},
                               {"ratio_to_lee_yang", hb.ratio_to_lee_yang}, {"vacuous", hb.vacuous}};
            row["temple_applicability_ratio"] = temple_applicability_ratio(s, *a);
        }
        rows.push_back(row);
    }
    auto scan = scan_error_budget(6, 30, eta, pref, R0);
    std::string scan_csv = "k,rho,eps";
    for (const auto& n : scan.names) scan_csv += "," + n + "_over_eps";
    scan_csv += "\n";
    for (const auto& r : scan.rows) {
        scan_csv += fmt::format("{},{},{}", r.k, num(r.rho), num(r.eps));
        for (double v : r.term_over_eps) scan_csv += "," + num(v);
        scan_csv += "\n";
    }
    write_text(ctx.out / "scales.csv", csv);
    write_text(ctx.out / "budget_scan.csv", scan_csv);
    nlohmann::json j{{"eta", eta}, {"R0", R0}, {"densities", rows}, {"previous_best_crossover_rho", previous_best_crossover()}};
    j["budget_crossover_k"] = scan.crossover_k ? nlohmann::json(*scan.crossover_k) : nlohmann::json(nullptr);
    if (a) j["scattering_length"] = *a;
    write_json(ctx.out / "scales.json", j);
    write_manifest(ctx.out, ctx.manifest());
    return ok;
}

inline int cell_certificate(const Context& ctx) {
    const auto& c = ctx.cfg;
    double l1 = c.num("cell.l1");
    auto sc = desk_scales(c.num("cell.rho"), c.num("scales.R0"), c.num("cell.lm1"), c.num("cell.l0"), l1,
                          static_cast<int>(c.integer("cell.h")), c.num("scales.eta"));
    auto pot = c.potential("cell.potential");
    TauTable tab(pot, sc.l0, sc.lm1, neumann_options(c));
    // torus of side 3 l1 with the cell in the middle; cell particles in its central half
    double L = 3.0 * l1;
    Box B = Box::cube({l1, l1, l1}, l1);
    StreamRng rng(ctx.seed, "cell-certificate", "placement");
    ParticleConfig cfg;
    cfg.L = L;
    auto n = c.integer("cell.n"), env = c.integer("cell.environment");
    if (n < 0 || env < 0) throw ConfigError("cell.n and cell.environment must be non-negative");
    for (std::int64_t k = 0; k < n; ++k)
        cfg.x.push_back({rng.uniform(1.25 * l1, 1.75 * l1), rng.uniform(1.25 * l1, 1.75 * l1), rng.uniform(1.25 * l1, 1.75 * l1)});
    while (env > 0) {
        Vec3 p{rng.uniform(0.0, L), rng.uniform(0.0, L), rng.uniform(0.0, L)};
        if (B.contains(p)) continue;
        cfg.x.push_back(p);
        --env;
    }
    SmallCellOptions opt;
    opt.mc = {c.integer("mc.samples"), ctx.seed, static_cast<int>(c.integer("mc.strata"))};
    opt.outer_samples = c.integer("mc.outer_samples");
    opt.c_lssy = c.num("cell.c_lssy");
    auto rep = small_cell_certificate(cfg, B, sc, tab, opt);
    auto j = to_json(rep);
    j["potential"] = potential_json(pot);
    j["scattering_length"] = tab.scattering_length();
    j["c0"] = tab.c0();
    write_json(ctx.out / "cell_certificate.json", j);
    std::string csv = "i,j,region,stage_one,mean,second,bound,applicable,clamped\n";
    for (const auto& p : rep.pairs)
        csv += fmt::format("{},{},{},{},{},{},{},{},{}\n", p.i, p.j, to_string(p.region), num(p.stage_one), num(p.mean),
                           num(p.second), num(p.bound), p.applicable ? 1 : 0, p.clamped ? 1 : 0);
    write_text(ctx.out / "cell_pairs.csv", csv);
    std::ostringstream pts;
    cfg.write_csv(pts);
    write_text(ctx.out / "cell_particles.csv", pts.str());
    write_manifest(ctx.out, ctx.manifest());
    *ctx.log << fmt::format("regime {} n={} coefficient {:.6g}\n", to_string(rep.regime), rep.n, rep.coefficient);
    return ok;
}

inline int doubling_verify(const Context& ctx) {
    const auto& c = ctx.cfg;
    auto pref = prefactors(c);
    double eta = c.num("scales.eta");
    int h = static_cast<int>(c.integer("doubling.h"));
    std::string atyp_csv = "rho,s,n,argmin_mA,min_split,target,margin\n";
    std::string f_csv = "rho,s,n,lhs,rhs,margin\n";
    nlohmann::json runs = nlohmann::json::array();
    std::int64_t total = 0;
    for (double rho : c.list("scales.rho")) {
        auto d = example_schedule(build_scales(rho, eta, pref, c.num("scales.R0")), h);
        nlohmann::json run{{"rho", rho}, {"knees", std::vector<double>(d.K.begin() + 1, d.K.end())}};
        auto& acx = run["atypical_counterexamples"] = nlohmann::json::array();
        auto& fcx = run["F_counterexamples"] = nlohmann::json::array();
        for (int s = 1; s <= d.s_max(); ++s) {
            auto n_max = static_cast<std::int64_t>(4.0 * d.knee(s + 1));
            auto at = verify_lemma_doubling_atypical(d, s, n_max);
            for (const auto& r : at.rows)
                atyp_csv += fmt::format("{},{},{},{},{},{},{}\n", num(rho), s, r.n, r.argmin_mA, num(r.min_split),
                                        num(r.target), num(r.margin));
            for (const auto& r : at.counterexamples) acx.push_back({{"s", s}, {"n", r.n}, {"mA", r.argmin_mA}, {"margin", r.margin}});
            if (!at.slope_ok) acx.push_back({{"s", s}, {"slope_condition", false}});
            auto fe = verify_F_estimate(d, s, rho);
            for (const auto& r : fe.rows)
                f_csv += fmt::format("{},{},{},{},{},{}\n", num(rho), s, r.n, num(r.lhs), num(r.rhs), num(r.margin));
            for (const auto& r : fe.counterexamples) fcx.push_back({{"s", s}, {"n", r.n}, {"lhs", r.lhs}, {"rhs", r.rhs}});
        }
        total += static_cast<std::int64_t>(acx.size() + fcx.size());
        runs.push_back(run);
    }
    auto ch = verify_chernoff(c.integer("doubling.chernoff_n"));
    total += ch.violations;
    write_text(ctx.out / "doubling_atypical.csv", atyp_csv);
    write_text(ctx.out / "doubling_F_estimate.csv", f_csv);
    write_json(ctx.out / "doubling.json",
               {{"eta", eta},
                {"h", h},
                {"densities", runs},
                {"chernoff", {{"n_max", ch.n_max}, {"checks", ch.checks}, {"violations", ch.violations},
                              {"worst_log_slack", ch.worst_log_slack}}},
                {"total_counterexamples", total}});
    write_manifest(ctx.out, ctx.manifest());
    *ctx.log << fmt::format("{} counterexamples\n", total);
    return total == 0 ? ok : verification_failed;
}

inline int oracle(const Context& ctx) {
    const auto& c = ctx.cfg;
    auto mode = c.str("oracle.mode");
    auto pot = c.potential();
    EigenOptions eo;
    eo.nev = static_cast<int>(c.integer("oracle.nev"));
    eo.tol = c.num("oracle.tol");
    eo.seed = ctx.seed;
    auto side_of = [&](double a) {
        double side = c.num("oracle.side");
        return side > 0.0 ? side : c.num("oracle.length_over_a") * a;
    };
    auto points = static_cast<int>(c.integer("oracle.points"));
    if (mode == "relative" || mode == "particles") {
        double a = solve_zero_energy(pot, zero_grid(c)).scattering_length;
        double L = side_of(a);
        GridHamiltonian g;
        if (mode == "relative") {
            g = make_relative_torus(points, L, pot);
        } else {
            GridInstance in;
            in.particles = static_cast<int>(c.integer("oracle.particles"));
            in.points = points;
            in.side = L;
            in.boundary = parse_boundary(c.str("oracle.boundary"));
            in.potential = pot;
            g = make_hamiltonian(in);
        }
        auto r = ground_state(g, eo);
        std::ostringstream csv;
        write_eigen_csv(csv, r);
        write_text(ctx.out / "eigenpairs.csv", csv.str());
        auto meta = eigen_metadata(g, r);
        meta["mode"] = mode;
        meta["potential"] = potential_json(pot);
        meta["scattering_length"] = a;
        meta["box_side"] = L;
        meta["scale_8pi_a_over_L3"] = 8.0 * std::numbers::pi * a / (L * L * L);
        write_json(ctx.out / "eigen_metadata.json", meta);
        *ctx.log << fmt::format("E0 = {:.12g}\n", r.values[0]);
    } else if (mode == "radial") {
        double a = solve_zero_energy(pot, zero_grid(c)).scattering_length;
        double kappa = c.num("oracle.kappa");
        auto fv = radial_neumann_oracle(pot, kappa, points);
        double e0 = solve_neumann_mode(pot, kappa, a, neumann_options(c)).eigenvalue;
        write_json(ctx.out / "radial_oracle.json", {{"potential", potential_json(pot)}, {"kappa", kappa},
                                                    {"cells", fv.cells}, {"relative_eigenvalue", fv.relative_eigenvalue},
                                                    {"oracle_e0", fv.e0}, {"twobody_e0", e0},
                                                    {"relative_difference", std::abs(fv.e0 / e0 - 1.0)}});
    } else if (mode == "substitution") {
        double kappa = c.num("oracle.kappa");
        double side = c.num("oracle.side") > 0.0 ? c.num("oracle.side") : 2.2 * kappa;
        auto st = substitution_identity_check(pot, kappa, side, {points / 2, points}, 20, ctx.seed);
        std::string csv = "points,max_residual\n";
        for (std::size_t i = 0; i < st.points.size(); ++i) csv += fmt::format("{},{}\n", st.points[i], num(st.max_residual[i]));
        write_text(ctx.out / "substitution.csv", csv);
        write_json(ctx.out / "substitution.json", {{"potential", potential_json(pot)}, {"kappa", kappa}, {"side", side},
                                                   {"points", st.points}, {"max_residual", st.max_residual},
                                                   {"ratio", st.ratio}});
    } else {
        throw ConfigError(fmt::format("oracle.mode '{}' is not one of relative, particles, radial, substitution", mode));
    }
    write_manifest(ctx.out, ctx.manifest());
    return ok;
}

inline int report(const Context& ctx) {
    AcceptanceContext ac;
    ac.seed = ctx.seed;
    if (ctx.cfg.has("mc.samples")) ac.mc_samples = ctx.cfg.integer("mc.samples");
    bool all = true;
    report_all(ac, ctx.out, ctx.manifest(), [&](const CriterionRecord& r) {
        all = all && r.pass;
        *ctx.log << fmt::format("criterion {:2d} {} ({:.2f}s) {}\n", r.id, r.pass ? "PASS" : "FAIL", r.seconds, r.title);
    });
    return all ? ok : verification_failed;
}

}  // namespace detail

/// Parses `args` (without the program name) and runs one subcommand.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dilute Bose gas lower-bound ingredients"};
    app.require_subcommand(1);
    std::string config_path, out_dir, rho;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> budget;
    app.add_option("--config", config_path, "flat dotted-key config file");
    app.add_option("--seed", seed, "overrides run.seed");
    app.add_option("--out", out_dir, "overrides run.out");
    app.add_option("--rho", rho, "overrides scales.rho (comma-separated)");
    app.add_option("--budget", budget, "overrides mc.samples");
    app.fallthrough();
    struct Sub {
        const char* name;
        const char* help;
        int (*fn)(const Context&);
    };
    const Sub subs[] = {{"scattering", "zero-energy profile and scattering length", detail::scattering},
                        {"neumann", "Neumann ball eigenvalues and profiles", detail::neumann},
                        {"scales", "length hierarchy and error budget", detail::scales},
                        {"cell-certificate", "small-cell lower-bound certificate", detail::cell_certificate},
                        {"doubling-verify", "exhaustive doubling checks", detail::doubling_verify},
                        {"oracle", "finite-difference oracle", detail::oracle},
                        {"report-all", "full acceptance suite", detail::report}};
    for (const auto& s : subs) app.add_subcommand(s.name, s.help);
    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return config_error;
    }
    try {
        Context ctx;
        if (!config_path.empty()) ctx.cfg = Config::from_file(config_path);
        if (seed) ctx.cfg.set("run.seed", std::to_string(*seed));
        if (!out_dir.empty()) ctx.cfg.set("run.out", out_dir);
        if (!rho.empty()) ctx.cfg.set("scales.rho", rho);
        if (budget) ctx.cfg.set("mc.samples", std::to_string(*budget));
        ctx.seed = ctx.cfg.unsigned_integer("run.seed");
        ctx.log = &out;
        for (const auto& s : subs) {
            if (!app.got_subcommand(s.name)) continue;
            ctx.command = s.name;
            ctx.out = ensure_dir(ctx.cfg.str("run.out"));
            return s.fn(ctx);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return config_error;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return numerical_error;
    }
    return config_error;
}

}  // namespace dilute::cli
