#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dilute/errors.hpp"
#include "dilute/rng.hpp"
#include "dilute/scales.hpp"
#include "dilute/twobody.hpp"

namespace dilute {

using Vec3 = std::array<double, 3>;

inline double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

struct Box {
    Vec3 lo{}, hi{};

    double volume() const { return (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]); }
    double min_side() const { return std::min({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}); }
    bool contains(const Vec3& x) const {
        for (int d = 0; d < 3; ++d)
            if (x[d] < lo[d] || x[d] >= hi[d]) return false;
        return true;
    }
    /// Euclidean distance from x to the box (0 inside).
    double distance(const Vec3& x) const {
        double s = 0.0;
        for (int d = 0; d < 3; ++d) {
            double e = std::max({lo[d] - x[d], 0.0, x[d] - hi[d]});
            s += e * e;
        }
        return std::sqrt(s);
    }
    static Box cube(const Vec3& lo, double side) { return {lo, {lo[0] + side, lo[1] + side, lo[2] + side}}; }
};

/// N positions on the torus [0, L)^3 with the minimal-image metric.
struct ParticleConfig {
    double L = 1.0;
    std::vector<Vec3> x;

    std::size_t size() const { return x.size(); }
    double density() const { return static_cast<double>(x.size()) / (L * L * L); }

    Vec3 delta(const Vec3& a, const Vec3& b) const {
        Vec3 d;
        for (int k = 0; k < 3; ++k) {
            double v = b[k] - a[k];
            d[k] = v - L * std::round(v / L);
        }
        return d;
    }
    double dist(const Vec3& a, const Vec3& b) const { return norm(delta(a, b)); }
    double dist(std::size_t i, std::size_t j) const { return dist(x[i], x[j]); }

    Vec3 wrap(Vec3 p) const {
        for (auto& c : p) {
            c -= L * std::floor(c / L);
            if (c >= L) c = 0.0;
        }
        return p;
    }

    void validate() const {
        if (!(L > 0.0)) throw ConfigError(fmt::format("torus side must be positive, got {}", L));
        if (x.empty()) throw ConfigError("configuration needs at least one particle");
        for (std::size_t i = 0; i < x.size(); ++i)
            for (double c : x[i])
                if (!(c >= 0.0 && c < L))
                    throw ConfigError(fmt::format("particle {} coordinate {} outside [0, {})", i, c, L));
    }

    static ParticleConfig uniform(std::size_t n, double L, StreamRng& rng) {
        ParticleConfig c;
        c.L = L;
        c.x.resize(n);
        for (auto& p : c.x)
            for (auto& v : p) v = rng.uniform() * L;
        return c;
    }

    void write_csv(std::ostream& os) const {
        os << fmt::format("# L={:.17g}\n", L);
        os << "x,y,z\n";
        for (const auto& p : x) os << fmt::format("{:.17g},{:.17g},{:.17g}\n", p[0], p[1], p[2]);
    }

    static ParticleConfig read_csv(std::istream& is) {
        ParticleConfig c;
        std::string line;
        bool have_L = false, have_header = false;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            if (line.rfind("# L=", 0) == 0) {
                c.L = std::stod(line.substr(4));
                have_L = true;
                continue;
            }
            if (line[0] == '#') continue;
            if (!have_header) {
                if (line != "x,y,z") throw ConfigError(fmt::format("expected header x,y,z, got '{}'", line));
                have_header = true;
                continue;
            }
            std::istringstream ls(line);
            Vec3 p;
            char comma;
            if (!(ls >> p[0] >> comma >> p[1] >> comma >> p[2]))
                throw ConfigError(fmt::format("malformed position row '{}'", line));
            c.x.push_back(p);
        }
        if (!have_L) throw ConfigError("configuration CSV lacks the '# L=' line");
        c.validate();
        return c;
    }
};

enum class NeighborMode { brute_force, cell_list };

/// t_ij = (1/2) min_{k != i,j} |x_i - x_k| with the cutoffs F_ij (t > l0) and G_ij (t > lm1).
/// t_ij does not depend on x_j.
class NeighborStructure {
public:
    NeighborStructure() = default;

    double t(std::size_t i, std::size_t j) const {
        if (n_ <= 2) return std::numeric_limits<double>::infinity();
        if (mode_ == NeighborMode::brute_force) return full_[i * n_ + j];
        return 0.5 * (nn_[i][0] == j ? nd_[i][1] : nd_[i][0]);
    }
    bool F(std::size_t i, std::size_t j) const { return t(i, j) > l0_; }
    bool G(std::size_t i, std::size_t j) const { return t(i, j) > lm1_; }

    double l0() const { return l0_; }
    double lm1() const { return lm1_; }
    std::size_t size() const { return n_; }
    NeighborMode mode() const { return mode_; }

    friend NeighborStructure build_neighbors(const ParticleConfig&, double, double, NeighborMode);

private:
    NeighborMode mode_ = NeighborMode::cell_list;
    std::size_t n_ = 0;
    double l0_ = 0.0, lm1_ = 0.0;
    std::vector<double> full_;
    std::vector<std::array<std::size_t, 2>> nn_;
    std::vector<std::array<double, 2>> nd_;
};

namespace detail {

inline void offer(std::array<std::size_t, 2>& nn, std::array<double, 2>& nd, std::size_t k, double d) {
    if (d < nd[0]) {
        nd[1] = nd[0];
        nn[1] = nn[0];
        nd[0] = d;
        nn[0] = k;
    } else if (d < nd[1]) {
        nd[1] = d;
        nn[1] = k;
    }
}

}  // namespace detail

inline NeighborStructure build_neighbors(const ParticleConfig& cfg, double l0, double lm1,
                                         NeighborMode mode = NeighborMode::cell_list) {
    if (!(l0 > lm1) || !(lm1 > 0.0))
        throw ConfigError(fmt::format("neighbor thresholds need l0 > lm1 > 0 (got {} and {})", l0, lm1));
    NeighborStructure ns;
    ns.mode_ = mode;
    ns.n_ = cfg.size();
    ns.l0_ = l0;
    ns.lm1_ = lm1;
    std::size_t n = cfg.size();
    if (n <= 2) return ns;
    constexpr double inf = std::numeric_limits<double>::infinity();

    if (mode == NeighborMode::brute_force) {
        ns.full_.assign(n * n, inf);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                double m = inf;
                for (std::size_t k = 0; k < n; ++k)
                    if (k != i && k != j) m = std::min(m, cfg.dist(i, k));
                ns.full_[i * n + j] = 0.5 * m;
            }
        return ns;
    }

    ns.nn_.assign(n, {n, n});
    ns.nd_.assign(n, {inf, inf});
    int m = std::clamp(static_cast<int>(std::cbrt(static_cast<double>(n) / 2.0)), 1, 64);
    if (m < 5) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k)
                if (k != i) detail::offer(ns.nn_[i], ns.nd_[i], k, cfg.dist(i, k));
        return ns;
    }
    double cs = cfg.L / m;
    auto cell_coord = [&](double c) { return std::min(m - 1, static_cast<int>(c / cs)); };
    auto flat = [&](int a, int b, int c) { return (static_cast<std::size_t>(a) * m + b) * m + c; };
    std::size_t cells = static_cast<std::size_t>(m) * m * m;
    std::vector<std::vector<std::size_t>> bucket(cells);
    std::vector<std::array<int, 3>> home(n);
    for (std::size_t i = 0; i < n; ++i) {
        home[i] = {cell_coord(cfg.x[i][0]), cell_coord(cfg.x[i][1]), cell_coord(cfg.x[i][2])};
        bucket[flat(home[i][0], home[i][1], home[i][2])].push_back(i);
    }
    std::vector<std::size_t> stamp(cells, n);
    auto wrap = [&](int v) { return ((v % m) + m) % m; };
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t visited = 0;
        for (int r = 0;; ++r) {
            for (int a = -r; a <= r; ++a)
                for (int b = -r; b <= r; ++b)
                    for (int c = -r; c <= r; ++c) {
                        if (std::max({std::abs(a), std::abs(b), std::abs(c)}) != r) continue;
                        auto id = flat(wrap(home[i][0] + a), wrap(home[i][1] + b), wrap(home[i][2] + c));
                        if (stamp[id] == i) continue;
                        stamp[id] = i;
                        ++visited;
                        for (std::size_t k : bucket[id])
                            if (k != i) detail::offer(ns.nn_[i], ns.nd_[i], k, cfg.dist(i, k));
                    }
            // Unvisited cells are at least r cell widths away.
            if (visited == cells || ns.nd_[i][1] <= r * cs) break;
        }
    }
    return ns;
}

inline NeighborStructure build_neighbors(const ParticleConfig& cfg, const ScaleSet& sc,
                                         NeighborMode mode = NeighborMode::cell_list) {
    return build_neighbors(cfg, sc.l0, sc.lm1, mode);
}

/// Neumann profiles tau(kappa, .) and energies e0(kappa), cached on a geometric
/// kappa ladder anchored at lm1. l0 itself is solved exactly.
class TauTable {
public:
    TauTable(const PotentialSpec& pot, double l0, double lm1, NeumannOptions opt = {}, double ratio = 1.02)
        : pot_(pot), l0_(l0), lm1_(lm1), ratio_(ratio), opt_(opt) {
        if (!(l0 > lm1) || !(lm1 > 0.0)) throw ConfigError("tau table needs l0 > lm1 > 0");
        if (!(ratio > 1.0)) throw ConfigError("kappa ladder ratio must exceed 1");
        a_ = solve_zero_energy(pot).scattering_length;
        base_ = std::make_unique<RadialSolution>(solve_neumann_mode(pot, l0, a_, opt));
        bounds_ = check_profile_bounds(*base_);
    }

    double scattering_length() const { return a_; }
    double l0() const { return l0_; }
    const RadialSolution& at_l0() const { return *base_; }
    const ProfileBounds& bounds() const { return bounds_; }
    double c0() const { return bounds_.tau_max; }

    /// Ladder rung at or below kappa, so the quantized support never exceeds kappa.
    double quantize(double kappa) const {
        if (kappa >= l0_) return l0_;
        if (kappa < lm1_) throw ConfigError(fmt::format("kappa={} below the cutoff lm1={}", kappa, lm1_));
        return lm1_ * std::pow(ratio_, static_cast<double>(rung(kappa)));
    }

    const RadialSolution& profile(double kappa) const {
        if (kappa >= l0_) return *base_;
        int k = rung(kappa);
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(k);
        if (it == cache_.end()) {
            double kq = lm1_ * std::pow(ratio_, static_cast<double>(k));
            it = cache_.emplace(k, std::make_unique<RadialSolution>(solve_neumann_mode(pot_, kq, a_, opt_))).first;
        }
        return *it->second;
    }

    double tau(double kappa, double r) const { return profile(kappa).tau(r); }
    double e0(double kappa) const { return profile(kappa).eigenvalue; }
    double support(double kappa) const { return kappa >= l0_ ? l0_ : quantize(kappa); }

    std::size_t cached_solves() const {
        std::lock_guard<std::mutex> lock(mu_);
        return cache_.size();
    }

private:
    int rung(double kappa) const {
        if (kappa < lm1_) throw ConfigError(fmt::format("kappa={} below the cutoff lm1={}", kappa, lm1_));
        // Small slack so exact rungs are not pushed down by rounding.
        return static_cast<int>(std::floor(std::log(kappa / lm1_) / std::log(ratio_) + 1e-12));
    }

    PotentialSpec pot_;
    double l0_, lm1_, ratio_;
    NeumannOptions opt_;
    double a_ = 0.0;
    std::unique_ptr<RadialSolution> base_;
    ProfileBounds bounds_;
    mutable std::mutex mu_;
    mutable std::map<int, std::unique_ptr<RadialSolution>> cache_;
};

/// W_j with x_j replaced by y; `only` restricts the sum to a candidate list.
inline double eval_W(const ParticleConfig& cfg, const NeighborStructure& nb, const TauTable& tau, std::size_t j,
                     const Vec3& y, const std::vector<std::size_t>* only = nullptr) {
    double w = 1.0;
    auto term = [&](std::size_t i) {
        if (i == j) return;
        double r = cfg.dist(cfg.x[i], y);
        if (r >= nb.l0()) return;
        double t = nb.t(i, j);
        if (t > nb.l0())
            w -= tau.tau(nb.l0(), r);
        else if (t > nb.lm1())
            w -= tau.tau(t, r);
    };
    if (only) {
        for (std::size_t i : *only) term(i);
    } else {
        for (std::size_t i = 0; i < cfg.size(); ++i) term(i);
    }
    return w;
}

/// Particles other than j within `reach` of the box.
inline std::vector<std::size_t> particles_near(const ParticleConfig& cfg, const Box& box, double reach, std::size_t j) {
    std::vector<std::size_t> out;
    Vec3 c{0.5 * (box.lo[0] + box.hi[0]), 0.5 * (box.lo[1] + box.hi[1]), 0.5 * (box.lo[2] + box.hi[2])};
    for (std::size_t i = 0; i < cfg.size(); ++i) {
        if (i == j) continue;
        // nearest periodic image to the box centre
        Vec3 p = cfg.delta(c, cfg.x[i]);
        for (int d = 0; d < 3; ++d) p[d] += c[d];
        if (box.distance(p) < reach) out.push_back(i);
    }
    return out;
}

struct MonteCarloSpec {
    std::int64_t samples = 100000;
    std::uint64_t seed = 1;
    int strata = 8;  // per axis
};

struct WSquaredEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
    double volume = 0.0;
    std::size_t near_count = 0;  // particles within l0 of the box
    double deficit = 0.0;        // volume - estimate
    double realized_c = 0.0;     // max(deficit, 0) / (near l0^2 + side^2)
    bool upper_ok = true;        // estimate <= volume + 3 stderr
    bool exact = false;          // no particle reaches the box, W == 1
};

namespace detail {

/// Stratified Monte Carlo of K box integrals sharing sample points: s^3
/// strata, equal samples each. Returns the integrals and standard errors.
template <std::size_t K, class Fn>
std::pair<std::array<double, K>, std::array<double, K>> stratified_integrals(const Box& box, const MonteCarloSpec& mc,
                                                                             std::string_view task, Fn&& fn) {
    if (!(box.volume() > 0.0)) throw ConfigError("integration box has zero volume");
    int s = std::max(1, mc.strata);
    std::int64_t strata = static_cast<std::int64_t>(s) * s * s;
    std::int64_t per = std::max<std::int64_t>(2, mc.samples / strata);
    Vec3 w{(box.hi[0] - box.lo[0]) / s, (box.hi[1] - box.lo[1]) / s, (box.hi[2] - box.lo[2]) / s};
    double vol_k = w[0] * w[1] * w[2];
    std::array<double, K> total{}, var{};
    StreamRng root(mc.seed, "configspace", task);
    for (std::int64_t k = 0; k < strata; ++k) {
        int a = static_cast<int>(k / (s * s)), b = static_cast<int>((k / s) % s), c = static_cast<int>(k % s);
        StreamRng rng = root.substream(static_cast<std::uint64_t>(k));
        std::array<double, K> mean{}, m2{};
        for (std::int64_t t = 0; t < per; ++t) {
            Vec3 y{box.lo[0] + (a + rng.uniform()) * w[0], box.lo[1] + (b + rng.uniform()) * w[1],
                   box.lo[2] + (c + rng.uniform()) * w[2]};
            std::array<double, K> v = fn(y);
            for (std::size_t q = 0; q < K; ++q) {
                double d = v[q] - mean[q];
                mean[q] += d / static_cast<double>(t + 1);
                m2[q] += d * (v[q] - mean[q]);
            }
        }
        for (std::size_t q = 0; q < K; ++q) {
            total[q] += vol_k * mean[q];
            var[q] += vol_k * vol_k * (m2[q] / static_cast<double>(per - 1)) / static_cast<double>(per);
        }
    }
    for (auto& v : var) v = std::sqrt(v);
    return {total, var};
}

template <class Fn>
std::pair<double, double> stratified_integral(const Box& box, const MonteCarloSpec& mc, std::string_view task, Fn&& fn) {
    auto [t, e] = stratified_integrals<1>(box, mc, task, [&](const Vec3& y) { return std::array<double, 1>{fn(y)}; });
    return {t[0], e[0]};
}

}  // namespace detail

inline WSquaredEstimate integrate_W_squared(const ParticleConfig& cfg, const NeighborStructure& nb, const TauTable& tau,
                                            std::size_t j, const Box& box, const MonteCarloSpec& mc) {
    WSquaredEstimate r;
    r.volume = box.volume();
    if (!(r.volume > 0.0)) throw ConfigError("integration box has zero volume");
    auto near = particles_near(cfg, box, nb.l0(), j);
    r.near_count = near.size();
    if (near.empty()) {
        r.estimate = r.volume;
        r.exact = true;
        return r;
    }
    auto [est, se] = detail::stratified_integral(box, mc, "w-squared", [&](const Vec3& y) {
        double w = eval_W(cfg, nb, tau, j, cfg.wrap(y), &near);
        return w * w;
    });
    r.estimate = est;
    r.stderr_ = se;
    r.deficit = r.volume - est;
    double side = std::cbrt(r.volume);
    double l0 = nb.l0();
    r.realized_c = std::max(0.0, r.deficit) / (static_cast<double>(r.near_count) * l0 * l0 + side * side);
    r.upper_ok = est <= r.volume + 3.0 * se;
    return r;
}

/// 4 pi int_0^kappa r^2 (1 - (1 - tau)^2) dr by composite Simpson on the profile grid.
inline double ball_deficit(const RadialSolution& prof, int panels = 20000) {
    double k = prof.kappa;
    double h = k / panels;
    auto g = [&](double r) {
        double ph = prof.phi(r);
        return r * r * (1.0 - ph * ph);
    };
    double s = g(0.0) + g(k);
    for (int i = 1; i < panels; ++i) s += g(i * h) * (i % 2 ? 4.0 : 2.0);
    return 4.0 * std::numbers::pi * s * h / 3.0;
}

/// q_ij with x_j = y: e0(l0) on the l0-ball if F_ij, else e0(t_ij) on the t_ij-ball if G_ij.
inline double eval_soft_potential(const ParticleConfig& cfg, const NeighborStructure& nb, const TauTable& tab,
                                  std::size_t i, std::size_t j, const Vec3& y) {
    if (i == j) return 0.0;
    double t = nb.t(i, j);
    if (!(t > nb.lm1())) return 0.0;
    double kappa = t > nb.l0() ? nb.l0() : t;
    double r = cfg.dist(cfg.x[i], y);
    if (r > tab.support(kappa)) return 0.0;
    return tab.e0(kappa);
}

/// Cells of side l1 with origin u; the inner indicator keeps points more than
/// `margin` from the cell boundary.
struct GridDecomposition {
    double L = 0.0;
    double side = 0.0;
    double margin = 0.0;
    Vec3 u{};
    int per_axis = 1;

    GridDecomposition(double L_, double side_, double margin_, Vec3 u_) : L(L_), side(side_), margin(margin_), u(u_) {
        double m = L / side;
        per_axis = static_cast<int>(std::lround(m));
        if (per_axis < 1 || std::abs(m - per_axis) > 1e-9 * m)
            throw ConfigError(fmt::format("torus side {} is not a multiple of the cell side {}", L, side));
        if (!(side > 2.0 * margin)) throw ConfigError("cell side must exceed twice the inner margin");
        for (double c : u)
            if (c < -0.5 * side || c >= 0.5 * side) throw ConfigError("grid origin outside [-l1/2, l1/2)^3");
    }

    std::size_t cell_count() const { return static_cast<std::size_t>(per_axis) * per_axis * per_axis; }

    /// Position inside the cell, each coordinate in [0, side).
    Vec3 local(const Vec3& x) const {
        Vec3 p;
        for (int d = 0; d < 3; ++d) {
            double v = x[d] - u[d];
            v -= L * std::floor(v / L);
            p[d] = std::fmod(v, side);
        }
        return p;
    }

    std::array<int, 3> cell_of(const Vec3& x) const {
        std::array<int, 3> c;
        for (int d = 0; d < 3; ++d) {
            double v = x[d] - u[d];
            v -= L * std::floor(v / L);
            c[d] = std::min(per_axis - 1, static_cast<int>(v / side));
        }
        return c;
    }
    std::size_t index(const Vec3& x) const {
        auto c = cell_of(x);
        return (static_cast<std::size_t>(c[0]) * per_axis + c[1]) * per_axis + c[2];
    }

    bool inner(const Vec3& x) const {
        auto p = local(x);
        for (double v : p)
            if (!(v > margin && side - v > margin)) return false;
        return true;
    }

    double inner_fraction() const {
        double f = (side - 2.0 * margin) / side;
        return f * f * f;
    }
};

inline GridDecomposition make_grid(const ScaleSet& sc, double L, Vec3 u) { return {L, sc.l1, 2.0 * sc.l0, u}; }

inline double eval_truncated_soft_potential(const GridDecomposition& grid, const ParticleConfig& cfg,
                                            const NeighborStructure& nb, const TauTable& tab, std::size_t i,
                                            std::size_t j, const Vec3& y) {
    if (!grid.inner(cfg.x[i])) return 0.0;
    return eval_soft_potential(cfg, nb, tab, i, j, y);
}

struct ExpectationSplit {
    double with_W = 0.0;     // <h>_W
    double uniform = 0.0;    // <h>_1
    double gap = 0.0;
    double stderr_ = 0.0;    // propagated from the two integrals
    double realized_C = 0.0; // gap / (rho l0^2 max|h|)
    WSquaredEstimate A, B;
};

/// <h>_W against <h>_1 for h piecewise constant on a congruent box pair.
inline ExpectationSplit expectation_split(const ParticleConfig& cfg, const NeighborStructure& nb, const TauTable& tau,
                                          std::size_t j, const Box& boxA, const Box& boxB, double hA, double hB,
                                          const MonteCarloSpec& mc, double rho = -1.0) {
    if (std::abs(boxA.volume() - boxB.volume()) > 1e-9 * boxA.volume())
        throw ConfigError("box pair must consist of congruent boxes");
    ExpectationSplit e;
    e.uniform = 0.5 * (hA + hB);
    if (hA == hB) {
        e.with_W = hA;
        return e;
    }
    MonteCarloSpec mcB = mc;
    mcB.seed = mix64(mc.seed ^ 0xb0b);
    e.A = integrate_W_squared(cfg, nb, tau, j, boxA, mc);
    e.B = integrate_W_squared(cfg, nb, tau, j, boxB, mcB);
    double IA = e.A.estimate, IB = e.B.estimate, S = IA + IB;
    e.with_W = (hA * IA + hB * IB) / S;
    e.gap = std::abs(e.with_W - e.uniform);
    // d<h>/dIA = (hA - hB) IB / S^2, d<h>/dIB = -(hA - hB) IA / S^2
    double dh = hA - hB;
    e.stderr_ = std::abs(dh) / (S * S) * std::hypot(IB * e.A.stderr_, IA * e.B.stderr_);
    double dens = rho > 0.0 ? rho : cfg.density();
    double l0 = nb.l0();
    e.realized_C = e.gap / (dens * l0 * l0 * std::max(std::abs(hA), std::abs(hB)));
    return e;
}

}  // namespace dilute
