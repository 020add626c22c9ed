#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "dilute/configspace.hpp"
#include "dilute/errors.hpp"
#include "dilute/scales.hpp"

namespace dilute {

struct TempleInput {
    double mean = 0.0;            // <H>
    double second_moment = 0.0;   // <H^2>
    double excited_lower = 0.0;   // lower bound on the first excited level
};

struct TempleResult {
    bool applicable = false;
    double bound = 0.0;  // meaningful only when applicable
    double variance = 0.0;
    std::string reason;
};

/// <H> - (<H^2> - <H>^2) / (E1 - <H>), or an explicit inapplicability verdict.
inline TempleResult temple_lower_bound(const TempleInput& t) {
    TempleResult r;
    r.variance = std::max(0.0, t.second_moment - t.mean * t.mean);
    if (!(t.mean < t.excited_lower)) {
        r.reason = fmt::format("<H>={:.6g} is not below the excited-level bound {:.6g}", t.mean, t.excited_lower);
        return r;
    }
    r.applicable = true;
    r.bound = t.mean - r.variance / (t.excited_lower - t.mean);
    return r;
}

/// Gap of T_j on a cube of side l: the Neumann gap pi^2/l^2 scaled by (1 - c0^2).
inline double poincare_gap(double side, double c0) {
    if (!(side > 0.0)) throw ConfigError("Poincare gap needs a positive side");
    if (!(c0 >= 0.0 && c0 < 1.0)) throw ConfigError(fmt::format("c0={} outside [0, 1)", c0));
    return (1.0 - c0 * c0) * std::numbers::pi * std::numbers::pi / (side * side);
}

enum class PairRegion { core, shell, excluded };  // S0 n B~, (S-1 \ S0) n B~, neither

inline std::string to_string(PairRegion r) {
    switch (r) {
        case PairRegion::core: return "core";
        case PairRegion::shell: return "shell";
        case PairRegion::excluded: return "excluded";
    }
    return "unknown";
}

/// S-1, S0 and B~ for the pair (i, j) in box B, built from the other particles only.
struct ExclusionSets {
    Box box;
    double lm1 = 0.0, l0 = 0.0;
    std::vector<Vec3> env;
    double L = 0.0;

    ExclusionSets(const ParticleConfig& cfg, const Box& b, double lm1_, double l0_, std::size_t i, std::size_t j)
        : box(b), lm1(lm1_), l0(l0_), L(cfg.L) {
        for (std::size_t k = 0; k < cfg.size(); ++k)
            if (k != i && k != j) env.push_back(cfg.x[k]);
    }

    double nearest(const Vec3& x) const {
        ParticleConfig probe;
        probe.L = L;
        double m = std::numeric_limits<double>::infinity();
        for (const auto& p : env) m = std::min(m, probe.dist(x, p));
        return m;
    }
    bool in_box(const Vec3& x) const { return box.contains(x); }
    bool in_Sm1(const Vec3& x) const { return in_box(x) && nearest(x) > 2.0 * lm1; }
    bool in_S0(const Vec3& x) const { return in_box(x) && nearest(x) > 2.0 * l0; }
    bool in_inner(const Vec3& x) const {
        if (!in_box(x)) return false;
        for (int d = 0; d < 3; ++d)
            if (x[d] - box.lo[d] < 2.0 * l0 || box.hi[d] - x[d] < 2.0 * l0) return false;
        return true;
    }
    PairRegion classify(const Vec3& x) const {
        if (!in_inner(x)) return PairRegion::excluded;
        double m = nearest(x);
        if (m > 2.0 * l0) return PairRegion::core;
        if (m > 2.0 * lm1) return PairRegion::shell;
        return PairRegion::excluded;
    }
};

struct SoftMoments {
    PairRegion region = PairRegion::excluded;
    double t = 0.0;       // t_ij
    double kappa = 0.0;   // support radius used
    double mean = 0.0;    // <q~>_W
    double second = 0.0;  // <q~^2>_W
    double mean_stderr = 0.0, second_stderr = 0.0;
    double numerator = 0.0;    // int_B q~ |W_j|^2
    double normalizer = 0.0;   // int_B |W_j|^2
    double realized_c_mean = 0.0;    // l0 (1 - l1^3 <q~> / 4 pi a); <= 0 means the bound holds with any c >= 0
    double realized_c_second = 0.0;  // <q~^2> |B| kappa^3
};

/// <q~_ij>_W and <q~_ij^2>_W over x_j in the box, x_i fixed. q~ is supported
/// on a ball around x_i, so the numerator is sampled on that ball's cube.
inline SoftMoments soft_potential_moments(const ParticleConfig& cfg, const NeighborStructure& nb, const TauTable& tab,
                                          std::size_t i, std::size_t j, const Box& box, const MonteCarloSpec& mc) {
    SoftMoments r;
    ExclusionSets ex(cfg, box, nb.lm1(), nb.l0(), i, j);
    r.region = ex.classify(cfg.x[i]);
    r.t = nb.t(i, j);
    double vol = box.volume();
    if (r.region == PairRegion::excluded) return r;
    double kappa_raw = r.t > nb.l0() ? nb.l0() : r.t;
    r.kappa = tab.support(kappa_raw);
    double e0 = tab.e0(kappa_raw);
    Box ball_cube{{cfg.x[i][0] - r.kappa, cfg.x[i][1] - r.kappa, cfg.x[i][2] - r.kappa},
                  {cfg.x[i][0] + r.kappa, cfg.x[i][1] + r.kappa, cfg.x[i][2] + r.kappa}};
    auto near = particles_near(cfg, ball_cube, nb.l0(), j);
    auto [num, num_se] = detail::stratified_integral(ball_cube, mc, "soft-moment", [&](const Vec3& y) {
        if (cfg.dist(cfg.x[i], y) > r.kappa) return 0.0;
        double w = eval_W(cfg, nb, tab, j, cfg.wrap(y), &near);
        return e0 * w * w;
    });
    auto den = integrate_W_squared(cfg, nb, tab, j, box, mc);
    r.numerator = num;
    r.normalizer = den.estimate;
    r.mean = num / den.estimate;
    r.second = e0 * r.mean;  // q~ takes the single value e0 on its support
    double rel = std::hypot(num_se / num, den.stderr_ / den.estimate);
    r.mean_stderr = r.mean * rel;
    r.second_stderr = r.second * rel;
    if (r.mean_stderr > 0.1 * r.mean)
        throw BudgetError(fmt::format("soft-potential moment stderr {:.3g} exceeds 10% of {:.3g}; raise the sample budget",
                                      r.mean_stderr, r.mean));
    double a = tab.scattering_length();
    r.realized_c_mean = nb.l0() * (1.0 - vol * r.mean / (4.0 * std::numbers::pi * a));
    r.realized_c_second = r.second * vol * r.kappa * r.kappa * r.kappa;
    return r;
}

/// 4 pi int_0^kappa r^2 phi(r)^2 dr, the weight of one isolated ball.
inline double ball_weight(const RadialSolution& prof, int panels = 4000) {
    double k = prof.kappa, h = k / panels;
    auto g = [&](double r) {
        double p = prof.phi(r);
        return r * r * p * p;
    };
    double s = g(0.0) + g(k);
    for (int m = 1; m < panels; ++m) s += g(m * h) * (m % 2 ? 4.0 : 2.0);
    return 4.0 * std::numbers::pi * s * h / 3.0;
}

enum class CellRegime { trivial, quadratic, grouped, dense };

inline std::string to_string(CellRegime r) {
    switch (r) {
        case CellRegime::trivial: return "trivial";
        case CellRegime::quadratic: return "quadratic";
        case CellRegime::grouped: return "grouped";
        case CellRegime::dense: return "dense";
    }
    return "unknown";
}

/// Boundaries n <= 9 rho l1^3 and n <= 9 rho l1^3 / eps.
inline CellRegime classify_cell(std::int64_t n, const ScaleSet& sc) {
    if (n <= 1) return CellRegime::trivial;
    double p = 9.0 * sc.rho_l1_cubed();
    if (static_cast<double>(n) <= p) return CellRegime::quadratic;
    if (static_cast<double>(n) <= p / sc.eps) return CellRegime::grouped;
    return CellRegime::dense;
}

/// f(n): n(n-1) up to 2 rho l1^3, then (4 rho l1^3 - 1) n - (2 rho l1^3)^2.
inline double cell_profile(double n, const ScaleSet& sc) {
    double K = 2.0 * sc.rho_l1_cubed();
    return n <= K ? n * (n - 1.0) : (2.0 * K - 1.0) * n - K * K;
}

struct CellTerms {
    double n_lm1cu_over_l1cu = 0.0;
    double n_l1sq_over_l0cu = 0.0;
    double n_l0sq_over_l1cu = 0.0;
    double nsq_logrho_over_l1 = 0.0;
    double sum() const { return n_lm1cu_over_l1cu + n_l1sq_over_l0cu + n_l0sq_over_l1cu + nsq_logrho_over_l1; }
    std::string dominant() const {
        std::vector<std::pair<std::string, double>> v{{"n_lm1cu_over_l1cu", n_lm1cu_over_l1cu},
                                                      {"n_l1sq_over_l0cu", n_l1sq_over_l0cu},
                                                      {"n_l0sq_over_l1cu", n_l0sq_over_l1cu},
                                                      {"nsq_logrho_over_l1", nsq_logrho_over_l1}};
        return std::max_element(v.begin(), v.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
    }
};

/// The four error magnitudes with unit constants; `group` replaces n where a
/// group size enters (p in the grouped regime).
inline CellTerms cell_terms(double n, double group, const ScaleSet& sc) {
    CellTerms t;
    double l1c = sc.l1 * sc.l1 * sc.l1;
    t.n_lm1cu_over_l1cu = n * std::pow(sc.lm1, 3) / l1c;
    t.n_l1sq_over_l0cu = group * sc.l1 * sc.l1 / std::pow(sc.l0, 3);
    t.n_l0sq_over_l1cu = n * sc.l0 * sc.l0 / l1c;
    t.nsq_logrho_over_l1 = n * group * sc.log_rho / sc.l1;
    return t;
}

struct PairCertificate {
    std::size_t i = 0, j = 0;
    PairRegion region = PairRegion::excluded;
    double stage_one = 0.0;  // Temple bound in x_j at the actual x_i
    double mean = 0.0, second = 0.0;  // stage-two moments over x_i
    double bound = 0.0;
    bool applicable = true;
    bool clamped = false;
};

struct SmallCellOptions {
    MonteCarloSpec mc{40000, 1, 4};
    std::int64_t outer_samples = 20000;  // x_i samples in the second Temple stage
    double c_lssy = 1.0;
};

struct SmallCellReport {
    CellRegime regime = CellRegime::trivial;
    std::int64_t n = 0;
    double rho = 0.0, eps = 0.0;
    double boost = 1.0;  // (l1 / (l1 - 4 l0))^3
    double gap = 0.0;    // gap of T_j / (4(n-1)) or / (4(p-1))
    CellTerms terms;
    double target = 0.0;      // f(n) 4 pi a / l1^3
    double lower = 0.0;       // certified or formula lower bound
    double coefficient = 0.0; // lower / (4 pi a f(n) / l1^3), 1 when f(n) = 0
    double one_minus_terms = 0.0;
    double realized_C = 0.0;  // (1 - coefficient) / sum of terms
    std::int64_t group_size = 0, group_count = 0;
    std::int64_t inapplicable_pairs = 0, clamped_pairs = 0;
    std::vector<PairCertificate> pairs;
    double gap_ratio_min = 0.0;  // gap / (boost <q~>) minimum over pairs
    std::string gap_flag;        // "ok" when >= 10, "marginal" otherwise
};

namespace detail {

inline double dense_energy(double m, double l1, double a, double c_lssy, double density_factor = 2.0) {
    double l1c = l1 * l1 * l1;
    return 4.0 * std::numbers::pi * a * m * m / l1c * (1.0 - c_lssy * std::pow(density_factor * m / l1c, 1.0 / 17.0));
}

}  // namespace detail

/// Lower-bound certificate for the particles of `cfg` inside box B (side l1).
/// Environment particles outside B stay fixed.
inline SmallCellReport small_cell_certificate(const ParticleConfig& cfg, const Box& B, const ScaleSet& sc,
                                              const TauTable& tab, const SmallCellOptions& opt = {}) {
    if (!(sc.l1 > 4.0 * sc.l0)) throw ConfigError(fmt::format("cell needs l1 > 4 l0 (l1={}, l0={})", sc.l1, sc.l0));
    if (std::abs(B.min_side() - sc.l1) > 1e-9 * sc.l1 || std::abs(std::cbrt(B.volume()) - sc.l1) > 1e-9 * sc.l1)
        throw ConfigError("small-cell box must be a cube of side l1");
    SmallCellReport rep;
    rep.rho = sc.rho;
    rep.eps = sc.eps;
    std::vector<std::size_t> inside;
    for (std::size_t k = 0; k < cfg.size(); ++k)
        if (B.contains(cfg.x[k])) inside.push_back(k);
    rep.n = static_cast<std::int64_t>(inside.size());
    double n = static_cast<double>(rep.n);
    rep.regime = classify_cell(rep.n, sc);
    double a = tab.scattering_length();
    double l1c = sc.l1 * sc.l1 * sc.l1;
    double unit = 4.0 * std::numbers::pi * a / l1c;
    rep.boost = std::pow(sc.l1 / (sc.l1 - 4.0 * sc.l0), 3);
    rep.target = cell_profile(n, sc) * unit;
    double p = 9.0 * sc.rho_l1_cubed();

    switch (rep.regime) {
        case CellRegime::trivial:
            rep.terms = cell_terms(n, n, sc);
            rep.coefficient = 1.0;
            break;
        case CellRegime::grouped: {
            rep.group_size = std::max<std::int64_t>(2, static_cast<std::int64_t>(std::floor(p)));
            rep.group_count = rep.n / rep.group_size;
            double pg = static_cast<double>(rep.group_size);
            rep.terms = cell_terms(n, pg, sc);
            rep.lower = static_cast<double>(rep.group_count) * pg * (pg - 1.0) * (1.0 - rep.terms.sum()) * unit;
            break;
        }
        case CellRegime::dense: {
            double m = 9.0 * sc.rho_l1_cubed() / sc.eps;
            rep.group_size = static_cast<std::int64_t>(std::floor(m));
            rep.group_count = rep.n / std::max<std::int64_t>(1, rep.group_size);
            rep.terms = cell_terms(n, n, sc);
            rep.lower = sc.eps * static_cast<double>(rep.group_count) *
                        detail::dense_energy(static_cast<double>(rep.group_size), sc.l1, a, opt.c_lssy);
            break;
        }
        case CellRegime::quadratic: {
            rep.terms = cell_terms(n, n, sc);
            auto nb = build_neighbors(cfg, sc);
            rep.gap = poincare_gap(sc.l1, tab.c0()) / (4.0 * (n - 1.0));
            std::map<double, double> weight_cache;
            auto weight = [&](double kappa) {
                auto it = weight_cache.find(kappa);
                if (it != weight_cache.end()) return it->second;
                double w = ball_weight(tab.profile(kappa));
                weight_cache.emplace(kappa, w);
                return w;
            };
            rep.gap_ratio_min = std::numeric_limits<double>::infinity();
            std::uint64_t pair_id = 0;
            for (std::size_t ii : inside)
                for (std::size_t jj : inside) {
                    if (ii == jj) continue;
                    PairCertificate pc;
                    pc.i = ii;
                    pc.j = jj;
                    ExclusionSets ex(cfg, B, sc.lm1, sc.l0, ii, jj);
                    pc.region = ex.classify(cfg.x[ii]);
                    // |W_j|^2 mass of the box without the ball of x_i, once per pair
                    MonteCarloSpec mc = opt.mc;
                    mc.seed = mix64(opt.mc.seed ^ (pair_id++));
                    auto near_rest = particles_near(cfg, B, sc.l0, jj);
                    near_rest.erase(std::remove(near_rest.begin(), near_rest.end(), ii), near_rest.end());
                    double rest = B.volume();
                    if (!near_rest.empty())
                        rest = detail::stratified_integral(B, mc, "cell-rest", [&](const Vec3& y) {
                                   double w = eval_W(cfg, nb, tab, jj, cfg.wrap(y), &near_rest);
                                   return w * w;
                               }).first;
                    // stage one: Temple in x_j with x_i at a given position
                    auto stage_one = [&](const Vec3& xi, bool& applicable) {
                        applicable = true;
                        if (ex.classify(xi) == PairRegion::excluded) return 0.0;
                        double t = 0.5 * ex.nearest(xi);
                        double kappa_raw = std::min(t, sc.l0);
                        double kappa = tab.support(kappa_raw);
                        double e0 = tab.e0(kappa_raw);
                        double wball = weight(kappa);
                        double ball_vol = 4.0 / 3.0 * std::numbers::pi * kappa * kappa * kappa;
                        double norm = rest - ball_vol + wball;
                        double mean = rep.boost * e0 * wball / norm;
                        double second = rep.boost * rep.boost * e0 * e0 * wball / norm;
                        rep.gap_ratio_min = std::min(rep.gap_ratio_min, rep.gap / mean);
                        auto tr = temple_lower_bound({mean, second, rep.gap});
                        if (!tr.applicable) {
                            applicable = false;
                            return 0.0;
                        }
                        return std::max(0.0, tr.bound);
                    };
                    bool ok = true;
                    pc.stage_one = stage_one(cfg.x[ii], ok);
                    // stage two: average the stage-one bound over x_i with weight |W_i|^2
                    auto near_i = particles_near(cfg, B, sc.l0, ii);
                    MonteCarloSpec outer = opt.mc;
                    outer.samples = opt.outer_samples;
                    outer.seed = mc.seed;
                    bool all_ok = true;
                    auto [sums, errs] = detail::stratified_integrals<3>(B, outer, "cell-outer", [&](const Vec3& y) {
                        bool app = true;
                        double w = eval_W(cfg, nb, tab, ii, cfg.wrap(y), &near_i);
                        double b = stage_one(y, app);
                        all_ok = all_ok && app;
                        return std::array<double, 3>{b * w * w, b * b * w * w, w * w};
                    });
                    (void)errs;
                    double num1 = sums[0], num2 = sums[1], den = sums[2];
                    pc.mean = num1 / den;
                    pc.second = num2 / den;
                    auto tr = temple_lower_bound({pc.mean, pc.second, rep.gap});
                    pc.applicable = all_ok && tr.applicable;
                    pc.bound = tr.applicable ? tr.bound : 0.0;
                    if (pc.bound < 0.0) {
                        pc.bound = 0.0;
                        pc.clamped = true;
                    }
                    if (!pc.applicable) ++rep.inapplicable_pairs;
                    if (pc.clamped) ++rep.clamped_pairs;
                    rep.lower += pc.bound;
                    rep.pairs.push_back(pc);
                }
            rep.gap_flag = rep.gap_ratio_min >= 10.0 ? "ok" : "marginal";
            break;
        }
    }
    if (rep.regime != CellRegime::trivial) rep.coefficient = rep.target > 0.0 ? rep.lower / rep.target : 1.0;
    rep.one_minus_terms = 1.0 - rep.terms.sum();
    double s = rep.terms.sum();
    rep.realized_C = s > 0.0 ? (1.0 - rep.coefficient) / s : 0.0;
    return rep;
}

inline nlohmann::json to_json(const CellTerms& t) {
    return {{"n_lm1cu_over_l1cu", t.n_lm1cu_over_l1cu},
            {"n_l1sq_over_l0cu", t.n_l1sq_over_l0cu},
            {"n_l0sq_over_l1cu", t.n_l0sq_over_l1cu},
            {"nsq_logrho_over_l1", t.nsq_logrho_over_l1},
            {"dominant", t.dominant()},
            {"sum", t.sum()}};
}

inline nlohmann::json to_json(const SmallCellReport& r) {
    nlohmann::json j;
    j["regime"] = to_string(r.regime);
    j["n"] = r.n;
    j["rho"] = r.rho;
    j["eps"] = r.eps;
    j["boost_l1_over_l1_minus_4l0_cubed"] = r.boost;
    j["gap"] = r.gap;
    j["terms"] = to_json(r.terms);
    j["target_f_n_4pia_over_l1cu"] = r.target;
    j["lower"] = r.lower;
    j["coefficient"] = r.coefficient;
    j["one_minus_terms"] = r.one_minus_terms;
    j["realized_C"] = r.realized_C;
    j["group_size"] = r.group_size;
    j["group_count"] = r.group_count;
    j["inapplicable_pairs"] = r.inapplicable_pairs;
    j["clamped_pairs"] = r.clamped_pairs;
    if (r.regime == CellRegime::quadratic) {
        j["gap_over_mean_min"] = r.gap_ratio_min;
        j["gap_flag"] = r.gap_flag;
        auto& arr = j["pairs"] = nlohmann::json::array();
        for (const auto& p : r.pairs)
            arr.push_back({{"i", p.i},
                           {"j", p.j},
                           {"region", to_string(p.region)},
                           {"stage_one", p.stage_one},
                           {"mean", p.mean},
                           {"second", p.second},
                           {"bound", p.bound},
                           {"applicable", p.applicable},
                           {"clamped", p.clamped}});
    }
    return j;
}

}  // namespace dilute
