#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>
#include <fmt/format.h>

#include "dilute/errors.hpp"

namespace dilute {

struct ScalePrefactors {
    double lm1 = 1.0;
    double l0 = 1.0;
    double l1 = 1.0;
    double l2 = 1.0;
};

struct HierarchyRatio {
    std::string name;
    double value = 0.0;
    bool ok = false;
};

/// Length scales of the cell method, smallest to largest: lm1 < l0 < l1 < l2.
struct ScaleSet {
    double rho = 0.0;
    double eta = 0.0;
    double log_rho = 0.0;  // |ln rho|
    double R0 = 1.0;
    ScalePrefactors pref;
    double lm1 = 0.0, l0 = 0.0, l1 = 0.0, l2 = 0.0;
    double eps = 0.0;
    int h = 1;                 // l2 = 2^h l1
    double snap_factor = 1.0;  // l2 / (unsnapped l2)
    bool snap_clamped = false;
    double h_prime = 0.0;      // L = h' l2, once a torus is attached
    double min_ratio = 4.0;
    std::vector<HierarchyRatio> ratios;

    double rho_l1_cubed() const { return rho * l1 * l1 * l1; }
    double rho_l2_cubed() const { return rho * l2 * l2 * l2; }

    bool hierarchy_ok() const {
        for (const auto& r : ratios)
            if (!r.ok) return false;
        return true;
    }

    std::vector<std::string> failing_ratios() const {
        std::vector<std::string> out;
        for (const auto& r : ratios)
            if (!r.ok) out.push_back(fmt::format("{}={:.4g}", r.name, r.value));
        return out;
    }

    void require_hierarchy() const {
        auto bad = failing_ratios();
        if (bad.empty()) return;
        std::string msg = fmt::format("rho={:.3g} not small enough: scale hierarchy needs every ratio >= {} but", rho,
                                      min_ratio);
        for (const auto& b : bad) msg += " " + b;
        throw ConfigError(msg);
    }

    /// Checks R0 << lm1 << l0 << l1 << l2 (ratio >= min_ratio each) and l1 > 4 l0.
    void validate_hierarchy() {
        auto add = [&](const char* name, double v) { ratios.push_back({name, v, v >= min_ratio}); };
        ratios.clear();
        add("lm1_over_R0", lm1 / R0);
        add("l0_over_lm1", l0 / lm1);
        add("l1_over_l0", l1 / l0);
        add("l2_over_l1", l2 / l1);
        ratios.push_back({"l1_over_4l0", l1 / (4.0 * l0), l1 > 4.0 * l0});
    }

    ScaleSet with_torus(double L) const {
        ScaleSet s = *this;
        s.h_prime = L / l2;
        return s;
    }
};

inline void check_density(double rho, double eta) {
    if (!(rho > 0.0) || !(rho < std::exp(-1.0)))
        throw ConfigError(fmt::format("rho={} outside (0, 1/e): |log rho| must exceed 1", rho));
    if (!(eta > 0.0) || !(eta < 1.0 / 15.0)) throw ConfigError(fmt::format("eta={} outside the open interval (0, 1/15)", eta));
}

/// Scales from the optimized exponents. Always returns; the hierarchy
/// verdict is in `ratios` (see ScaleSet::require_hierarchy).
inline ScaleSet build_scales(double rho, double eta, const ScalePrefactors& pref = {}, double R0 = 1.0) {
    check_density(rho, eta);
    if (!(R0 > 0.0)) throw ConfigError("R0 must be positive");
    ScaleSet s;
    s.rho = rho;
    s.eta = eta;
    s.R0 = R0;
    s.pref = pref;
    double L = std::abs(std::log(rho));
    s.log_rho = L;
    s.lm1 = pref.lm1 * std::pow(rho, -2.0 / 9.0) * std::pow(L, 2.0 / 3.0);
    s.l0 = pref.l0 * std::pow(rho, -1.0 / 3.0) * std::pow(L, -1.0 / 3.0);
    s.l1 = pref.l1 * std::pow(rho, -1.0 / 3.0) * std::pow(L, 1.0 / 3.0 + eta);
    double l2_raw = pref.l2 * std::pow(rho, -4.0 / 9.0) * std::pow(L, -2.0 / 3.0);
    s.eps = std::cbrt(rho) * L * L * L;
    int h = static_cast<int>(std::lround(std::log2(l2_raw / s.l1)));
    s.snap_clamped = h < 1;
    s.h = std::max(h, 1);
    s.l2 = std::ldexp(s.l1, s.h);
    s.snap_factor = s.l2 / l2_raw;
    s.validate_hierarchy();
    return s;
}

inline ScaleSet build_scales_strict(double rho, double eta, const ScalePrefactors& pref = {}, double R0 = 1.0) {
    auto s = build_scales(rho, eta, pref, R0);
    s.require_hierarchy();
    return s;
}

/// Explicit lengths for desk-scale experiments where the asymptotic formulas
/// would not produce a valid hierarchy. l2 is snapped up to 2^h l1.
inline ScaleSet desk_scales(double rho, double R0, double lm1, double l0, double l1, int h = 1, double eta = 0.05) {
    if (!(rho > 0.0)) throw ConfigError("rho must be positive");
    ScaleSet s;
    s.rho = rho;
    s.eta = eta;
    s.R0 = R0;
    s.log_rho = std::abs(std::log(rho));
    s.lm1 = lm1;
    s.l0 = l0;
    s.l1 = l1;
    s.h = std::max(h, 1);
    s.l2 = std::ldexp(l1, s.h);
    s.eps = std::cbrt(rho) * std::pow(s.log_rho, 3);
    s.validate_hierarchy();
    s.require_hierarchy();
    return s;
}

inline double lee_yang_factor(double rho_a3) { return 1.0 + 128.0 / (15.0 * std::sqrt(std::numbers::pi)) * std::sqrt(rho_a3); }

struct HeadlineBound {
    double energy_per_particle = 0.0;  // 4 pi a rho (1 - C0 eps)
    double leading = 0.0;              // 4 pi a rho
    double ratio_to_leading = 0.0;
    double lee_yang = 0.0;
    double ratio_to_lee_yang = 0.0;
    bool vacuous = false;
};

inline HeadlineBound headline_bound(const ScaleSet& s, double a, double C0 = 1.0) {
    if (!(a > 0.0)) throw ConfigError("headline bound needs a positive scattering length");
    HeadlineBound b;
    b.leading = 4.0 * std::numbers::pi * a * s.rho;
    b.ratio_to_leading = 1.0 - C0 * s.eps;
    b.energy_per_particle = b.leading * b.ratio_to_leading;
    b.lee_yang = lee_yang_factor(s.rho * a * a * a);
    b.ratio_to_lee_yang = b.ratio_to_leading / b.lee_yang;
    b.vacuous = C0 * s.eps >= 1.0;
    return b;
}

/// Density below which C0 rho^{1/3}|ln rho|^3 < C rho^{1/17} for good.
inline double previous_best_crossover(double C0 = 1.0, double C_prev = 1.0) {
    // x = |ln rho|: C_prev e^{-x/17} = C0 e^{-x/3} x^3  <=>  g(x) = 0.
    auto g = [&](double x) { return x * (1.0 / 3.0 - 1.0 / 17.0) - 3.0 * std::log(x) + std::log(C_prev / C0); };
    double x_min = 3.0 / (1.0 / 3.0 - 1.0 / 17.0);
    if (g(x_min) >= 0.0) return std::exp(-1.0);
    double hi = 2.0 * x_min;
    while (g(hi) < 0.0) hi *= 2.0;
    std::uintmax_t it = 200;
    auto r = boost::math::tools::toms748_solve(g, x_min, hi, boost::math::tools::eps_tolerance<double>(50), it);
    return std::exp(-0.5 * (r.first + r.second));
}

struct BudgetTerm {
    std::string name;
    double value = 0.0;
};

/// Cell-estimate error magnitudes (constants set to 1) at n particles per cell,
/// plus the relative doubling and Jensen terms.
inline std::vector<BudgetTerm> error_budget(const ScaleSet& s, std::optional<double> n_per_cell = std::nullopt) {
    double n = n_per_cell.value_or(s.rho_l1_cubed());
    double l1c = s.l1 * s.l1 * s.l1;
    std::vector<BudgetTerm> t;
    t.push_back({"n_lm1cu_over_l1cu", n * std::pow(s.lm1, 3) / l1c});
    t.push_back({"n_l1sq_over_l0cu", n * s.l1 * s.l1 / std::pow(s.l0, 3)});
    t.push_back({"n_l0sq_over_l1cu", n * s.l0 * s.l0 / l1c});
    t.push_back({"nsq_logrho_over_l1", n * n * s.log_rho / s.l1});
    t.push_back({"doubling_rho13", n > 0 ? std::cbrt(s.rho) : 0.0});
    t.push_back({"doubling_imbalance_logrho_over_nl", n > 0 ? s.log_rho / (n * s.l1) : 0.0});
    t.push_back({"jensen_rho13_logrho2", n > 0 ? std::cbrt(s.rho) * s.log_rho * s.log_rho : 0.0});
    return t;
}

inline constexpr int cell_term_count = 4;

/// Temple applicability ratio (n^-1 l1^-2) / e0(l0) with e0 ~ 3a/l0^3, n = rho l1^3.
inline double temple_applicability_ratio(const ScaleSet& s, double a) {
    double n = s.rho_l1_cubed();
    return (1.0 / (n * s.l1 * s.l1)) / (3.0 * a / std::pow(s.l0, 3));
}

struct BudgetScanRow {
    int k = 0;
    double rho = 0.0;
    double eps = 0.0;
    std::vector<double> term_over_eps;  // the four cell terms
};

struct BudgetScan {
    std::vector<BudgetScanRow> rows;
    std::vector<std::string> names;
    std::vector<bool> eventually_below_one;
    std::vector<bool> nonincreasing;
    std::optional<int> crossover_k;  // first k from which every term/eps <= 1
};

inline BudgetScan scan_error_budget(int k_lo, int k_hi, double eta, const ScalePrefactors& pref = {}, double R0 = 1.0) {
    BudgetScan scan;
    for (int k = k_lo; k <= k_hi; ++k) {
        double rho = std::pow(10.0, -k);
        auto s = build_scales(rho, eta, pref, R0);
        auto terms = error_budget(s);
        BudgetScanRow row{k, rho, s.eps, {}};
        for (int i = 0; i < cell_term_count; ++i) row.term_over_eps.push_back(terms[i].value / s.eps);
        if (scan.names.empty())
            for (int i = 0; i < cell_term_count; ++i) scan.names.push_back(terms[i].name);
        scan.rows.push_back(row);
    }
    std::size_t m = scan.names.size();
    scan.eventually_below_one.assign(m, false);
    scan.nonincreasing.assign(m, true);
    for (std::size_t i = 0; i < m; ++i) {
        scan.eventually_below_one[i] = scan.rows.back().term_over_eps[i] <= 1.0;
        // Nonincreasing beyond the turning point (the scan maximum).
        std::size_t peak = 0;
        for (std::size_t r = 1; r < scan.rows.size(); ++r)
            if (scan.rows[r].term_over_eps[i] > scan.rows[peak].term_over_eps[i]) peak = r;
        for (std::size_t r = peak + 1; r < scan.rows.size(); ++r)
            if (scan.rows[r].term_over_eps[i] > scan.rows[r - 1].term_over_eps[i]) scan.nonincreasing[i] = false;
    }
    for (std::size_t r = scan.rows.size(); r-- > 0;) {
        bool all = true;
        for (double v : scan.rows[r].term_over_eps) all = all && v <= 1.0;
        if (!all) break;
        scan.crossover_k = scan.rows[r].k;
    }
    return scan;
}

}  // namespace dilute
