#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>
#include <fmt/format.h>

#include "dilute/errors.hpp"

namespace dilute {

enum class PotentialShape { square_barrier, gaussian, smooth_bump };

inline std::string to_string(PotentialShape s) {
    switch (s) {
        case PotentialShape::square_barrier: return "square-barrier";
        case PotentialShape::gaussian: return "gaussian";
        case PotentialShape::smooth_bump: return "smooth-bump";
    }
    return "unknown";
}

inline PotentialShape parse_shape(const std::string& s) {
    if (s == "square-barrier") return PotentialShape::square_barrier;
    if (s == "gaussian") return PotentialShape::gaussian;
    if (s == "smooth-bump") return PotentialShape::smooth_bump;
    throw ConfigError("unknown potential shape '" + s + "' (expected square-barrier, gaussian or smooth-bump)");
}

/// Repulsive, spherically symmetric, compactly supported pair potential.
///
/// `range` is the shape parameter (barrier radius, gaussian width, bump
/// radius); `support` is the radius beyond which V vanishes identically.
struct PotentialSpec {
    PotentialShape shape = PotentialShape::square_barrier;
    double amplitude = 0.0;
    double range = 1.0;
    double support = 1.0;
    double truncation_tol = 1e-12;

    static PotentialSpec square_barrier(double v0, double r0) {
        PotentialSpec p{PotentialShape::square_barrier, v0, r0, r0, 0.0};
        p.validate();
        return p;
    }

    /// V0 exp(-r^2 / (2 w^2)), cut at the smallest radius where V <= tol * V0.
    static PotentialSpec gaussian(double v0, double width, double tol = 1e-12) {
        PotentialSpec p{PotentialShape::gaussian, v0, width, width * std::sqrt(-2.0 * std::log(tol)), tol};
        p.validate();
        return p;
    }

    /// V0 exp(1 - 1/(1 - (r/b)^2)) for r < b, cut where V <= tol * V0.
    static PotentialSpec smooth_bump(double v0, double radius, double tol = 1e-12) {
        double x2 = 1.0 - 1.0 / (1.0 - std::log(tol));
        PotentialSpec p{PotentialShape::smooth_bump, v0, radius, radius * std::sqrt(x2), tol};
        p.validate();
        return p;
    }

    void validate() const {
        if (!(amplitude >= 0.0) || !std::isfinite(amplitude))
            throw ConfigError("potential amplitude must be finite and non-negative");
        if (!(range > 0.0) || !(support > 0.0) || !std::isfinite(range))
            throw ConfigError("potential range must be positive");
    }

    /// Smooth part of V on the interior of its support.
    double interior(double r) const {
        switch (shape) {
            case PotentialShape::square_barrier: return amplitude;
            case PotentialShape::gaussian: return amplitude * std::exp(-r * r / (2.0 * range * range));
            case PotentialShape::smooth_bump: {
                double x = r / range;
                return amplitude * std::exp(1.0 - 1.0 / (1.0 - x * x));
            }
        }
        return 0.0;
    }

    double operator()(double r) const { return r <= support ? interior(r) : 0.0; }
    double value_left(double r) const { return r <= support ? interior(r) : 0.0; }
    double value_right(double r) const { return r < support ? interior(r) : 0.0; }

    std::string describe() const {
        return fmt::format("shape={} V0={} range={} R0={}", to_string(shape), amplitude, range, support);
    }
};

enum class ProfileKind { zero_energy, neumann_mode };

/// u(r) = r phi(r) sampled on a two-segment grid with a node at the support
/// radius, plus the derived scalar (a or e0).
struct RadialSolution {
    ProfileKind kind = ProfileKind::zero_energy;
    PotentialSpec potential;
    std::vector<double> r, u, du;
    double scattering_length = 0.0;
    double eigenvalue = 0.0;
    double kappa = 0.0;
    double outer_radius = 0.0;
    double norm = 1.0;  // phi = u / (r * norm)
    double fit_residual = 0.0;
    double boundary_mismatch = 0.0;
    std::size_t inner_steps = 0;
    double inner_step = 0.0, outer_step = 0.0;

    double phi(double x) const {
        if (x >= outer_radius) {
            if (kind == ProfileKind::neumann_mode) return 1.0;
            return 1.0 - scattering_length / x;
        }
        if (x <= 0.0) return du.front() / norm;
        std::size_t i = locate(x);
        double h = r[i + 1] - r[i];
        double t = (x - r[i]) / h;
        double t2 = t * t, t3 = t2 * t;
        double uu = (2 * t3 - 3 * t2 + 1) * u[i] + (t3 - 2 * t2 + t) * h * du[i] +
                    (-2 * t3 + 3 * t2) * u[i + 1] + (t3 - t2) * h * du[i + 1];
        return uu / (x * norm);
    }

    /// 1 - phi, identically 0 beyond kappa for a Neumann mode.
    double tau(double x) const {
        if (kind == ProfileKind::neumann_mode && x >= kappa) return 0.0;
        return 1.0 - phi(x);
    }

    void write_csv(std::ostream& os) const {
        if (kind == ProfileKind::zero_energy)
            os << fmt::format("# kind=zero-energy {} a={:.17g}\n", potential.describe(), scattering_length);
        else
            os << fmt::format("# kind=neumann-mode {} kappa={:.17g} e0={:.17g}\n", potential.describe(), kappa,
                              eigenvalue);
        os << "r,u\n";
        for (std::size_t i = 0; i < r.size(); ++i) os << fmt::format("{:.17g},{:.17g}\n", r[i], u[i]);
    }

private:
    std::size_t locate(double x) const {
        std::size_t i;
        if (x < potential.support && potential.support < outer_radius)
            i = static_cast<std::size_t>(x / inner_step);
        else
            i = inner_steps + static_cast<std::size_t>((x - potential.support) / outer_step);
        return std::min(i, r.size() - 2);
    }
};

namespace detail {

struct RadialState {
    double u, du;
};

/// RK4 for u'' = (V/2 - e) u on [0, R0] and [R0, r_max] with one-sided
/// potential limits at the segment ends, so a jump at R0 costs no order.
inline void integrate_radial(const PotentialSpec& pot, double energy, double r_max, std::size_t n_inner,
                             std::size_t n_outer, RadialSolution& sol) {
    double r0 = std::min(pot.support, r_max);
    sol.r.assign(n_inner + n_outer + 1, 0.0);
    sol.u.assign(sol.r.size(), 0.0);
    sol.du.assign(sol.r.size(), 0.0);
    sol.inner_steps = n_inner;
    sol.inner_step = r0 / static_cast<double>(n_inner);
    sol.outer_step = n_outer > 0 ? (r_max - r0) / static_cast<double>(n_outer) : 1.0;
    sol.outer_radius = r_max;

    RadialState y{0.0, 1.0};
    sol.u[0] = 0.0;
    sol.du[0] = 1.0;
    std::size_t idx = 0;
    auto segment = [&](double a, double h, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) {
            double x = a + h * static_cast<double>(k);
            double g1 = 0.5 * pot.value_right(x) - energy;
            double gm = 0.5 * pot.value_right(x + 0.5 * h) - energy;
            double g4 = 0.5 * pot.value_left(x + h) - energy;
            double k1u = y.du, k1p = g1 * y.u;
            double k2u = y.du + 0.5 * h * k1p, k2p = gm * (y.u + 0.5 * h * k1u);
            double k3u = y.du + 0.5 * h * k2p, k3p = gm * (y.u + 0.5 * h * k2u);
            double k4u = y.du + h * k3p, k4p = g4 * (y.u + h * k3u);
            y.u += h / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u);
            y.du += h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p);
            ++idx;
            sol.r[idx] = a + h * static_cast<double>(k + 1);
            sol.u[idx] = y.u;
            sol.du[idx] = y.du;
        }
    };
    segment(0.0, sol.inner_step, n_inner);
    sol.r[n_inner] = r0;
    if (n_outer > 0) segment(r0, sol.outer_step, n_outer);
    sol.r.back() = r_max;
}

inline void check_step(const PotentialSpec& pot, double h) {
    double stiff = h * std::sqrt(0.5 * pot.amplitude);
    if (stiff > 0.5)
        throw ResolutionError(fmt::format("radial step {} too coarse for V0={} (h*sqrt(V0/2)={:.3g} > 0.5)", h,
                                          pot.amplitude, stiff));
}

}  // namespace detail

struct ZeroEnergyGrid {
    std::size_t inner_steps = 2000;
    double margin = 4.0;  // grid ends at R0 * (1 + margin)
};

/// Zero-energy scattering solution; a from an affine least-squares fit of u
/// over the outer half of the free region.
inline RadialSolution solve_zero_energy(const PotentialSpec& pot, const ZeroEnergyGrid& grid = {}) {
    pot.validate();
    if (grid.margin < 4.0) throw ConfigError("zero-energy grid must extend at least 4 R0 beyond the support");
    if (grid.inner_steps < 8) throw ConfigError("zero-energy grid needs at least 8 inner steps");
    RadialSolution sol;
    sol.kind = ProfileKind::zero_energy;
    sol.potential = pot;
    double r0 = pot.support;
    double r_max = r0 * (1.0 + grid.margin);
    std::size_t n_outer = static_cast<std::size_t>(std::ceil(grid.margin * static_cast<double>(grid.inner_steps)));
    detail::check_step(pot, r0 / static_cast<double>(grid.inner_steps));
    detail::integrate_radial(pot, 0.0, r_max, grid.inner_steps, n_outer, sol);

    double x_lo = r0 + 0.5 * (r_max - r0);
    double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
    for (std::size_t i = 0; i < sol.r.size(); ++i) {
        if (sol.r[i] < x_lo) continue;
        sx += sol.r[i];
        sy += sol.u[i];
        sxx += sol.r[i] * sol.r[i];
        sxy += sol.r[i] * sol.u[i];
        n += 1;
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    double intercept = (sy - slope * sx) / n;
    if (!(slope > 0.0) || !std::isfinite(slope)) throw ResolutionError("zero-energy solution has non-positive slope");
    double a = -intercept / slope;
    double resid = 0.0;
    for (std::size_t i = 0; i < sol.r.size(); ++i)
        if (sol.r[i] >= x_lo) resid = std::max(resid, std::abs(sol.u[i] - (slope * sol.r[i] + intercept)));
    sol.fit_residual = resid / (slope * r_max);
    if (a < -1e-6 * r0) throw ModelError(fmt::format("fitted scattering length {} is negative", a));
    sol.scattering_length = std::max(a, 0.0);
    sol.norm = slope;
    for (double v : sol.u)
        if (v < 0.0) throw ModelError("zero-energy profile has a node; potential is not repulsive");
    return sol;
}

struct NeumannOptions {
    double points_per_kappa = 1e4;
    std::size_t min_inner_steps = 1000;
    int bisection_bits = 48;
    int max_widenings = 40;
};

/// Lowest Neumann eigenpair of -u'' + V/2 u = e u on the ball of radius
/// kappa, normalized so phi(kappa) = 1.
inline RadialSolution solve_neumann_mode(const PotentialSpec& pot, double kappa, double a,
                                         const NeumannOptions& opt = {}) {
    pot.validate();
    if (!(kappa >= 4.0 * pot.support))
        throw ConfigError(fmt::format("kappa={} must be at least 4 R0 = {}", kappa, 4.0 * pot.support));
    double r0 = pot.support;
    auto total = static_cast<std::size_t>(std::ceil(opt.points_per_kappa));
    auto n_inner = std::max(opt.min_inner_steps, static_cast<std::size_t>(std::ceil(total * r0 / kappa)));
    auto n_outer = std::max<std::size_t>(1, total > n_inner ? total - n_inner : total / 2);
    detail::check_step(pot, r0 / static_cast<double>(n_inner));

    RadialSolution sol;
    sol.kind = ProfileKind::neumann_mode;
    sol.potential = pot;
    sol.kappa = kappa;
    auto mismatch = [&](double e) {
        detail::integrate_radial(pot, e, kappa, n_inner, n_outer, sol);
        return sol.du.back() - sol.u.back() / kappa;
    };

    double e0 = 0.0;
    double m0 = mismatch(0.0);
    if (pot.amplitude == 0.0 || a == 0.0 || std::abs(m0) <= 1e-15) {
        e0 = 0.0;
    } else {
        double hi = 2.0 * (3.0 * a / (kappa * kappa * kappa)) * (1.0 + 8.0 * r0 / kappa);
        double mhi = mismatch(hi);
        int widen = 0;
        while ((mhi > 0) == (m0 > 0)) {
            if (++widen > opt.max_widenings)
                throw BracketError(fmt::format("no sign change of the Neumann mismatch up to e={} (kappa={})", hi,
                                               kappa));
            hi *= 2.0;
            mhi = mismatch(hi);
        }
        auto root = boost::math::tools::bisect(mismatch, 0.0, hi,
                                               boost::math::tools::eps_tolerance<double>(opt.bisection_bits));
        e0 = 0.5 * (root.first + root.second);
    }
    sol.boundary_mismatch = mismatch(e0);
    sol.eigenvalue = e0;
    sol.scattering_length = a;
    sol.norm = sol.u.back() / kappa;
    for (std::size_t i = 1; i < sol.u.size(); ++i)
        if (!(sol.u[i] > 0.0))
            throw BracketError(fmt::format("Neumann profile has a node at r={} (kappa={}): not the ground state",
                                           sol.r[i], kappa));
    return sol;
}

inline RadialSolution solve_neumann_mode(const PotentialSpec& pot, double kappa, const NeumannOptions& opt = {}) {
    return solve_neumann_mode(pot, kappa, solve_zero_energy(pot).scattering_length, opt);
}

struct ProfileBounds {
    double phi_min = 1.0;  // lower bound constant of the Neumann profile
    double phi_max = 1.0;
    double c1 = 0.0;       // max r (1 - phi(r))
    double tau_max = 0.0;  // 1 - phi_min, the constant in W >= 1 - c0
};

inline ProfileBounds check_profile_bounds(const RadialSolution& sol, double tol = 1e-9) {
    if (sol.kind != ProfileKind::neumann_mode) throw ConfigError("profile bounds need a Neumann-mode solution");
    ProfileBounds b;
    b.phi_min = sol.du.front() / sol.norm;
    b.phi_max = b.phi_min;
    for (std::size_t i = 1; i < sol.r.size(); ++i) {
        double ph = sol.u[i] / (sol.r[i] * sol.norm);
        b.phi_min = std::min(b.phi_min, ph);
        b.phi_max = std::max(b.phi_max, ph);
        b.c1 = std::max(b.c1, sol.r[i] * (1.0 - ph));
    }
    b.tau_max = 1.0 - b.phi_min;
    if (b.phi_max > 1.0 + tol)
        throw NumericalError(fmt::format("Neumann profile exceeds 1 (max phi = {}): discretization failure", b.phi_max));
    if (!(b.phi_min > 0.0))
        throw NumericalError(fmt::format("Neumann profile not positive (min phi = {})", b.phi_min));
    return b;
}

}  // namespace dilute
