#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <json.hpp>

#include "dilute/cellbound.hpp"
#include "dilute/errors.hpp"
#include "dilute/rng.hpp"
#include "dilute/twobody.hpp"

namespace dilute {

enum class Boundary { neumann, periodic, dirichlet };

inline std::string to_string(Boundary b) {
    switch (b) {
        case Boundary::neumann: return "neumann";
        case Boundary::periodic: return "periodic";
        case Boundary::dirichlet: return "dirichlet";
    }
    return "unknown";
}

inline Boundary parse_boundary(const std::string& s) {
    if (s == "neumann") return Boundary::neumann;
    if (s == "periodic") return Boundary::periodic;
    if (s == "dirichlet") return Boundary::dirichlet;
    throw ConfigError(fmt::format("unknown boundary condition '{}' (neumann | periodic | dirichlet)", s));
}

using Field = std::vector<double>;

inline double dot(const Field& a, const Field& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline void axpy(double alpha, const Field& x, Field& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

/// kinetic * sum_d (-D_d^2) + diag on a cell-centered tensor grid. Neumann
/// and Dirichlet use mirror / antimirror ghost cells, periodic wraps.
struct GridHamiltonian {
    std::vector<int> dims;
    std::vector<std::size_t> strides;
    double h = 1.0;
    double kinetic = 1.0;
    Boundary boundary = Boundary::neumann;
    Field potential;
    int particles = 1;  // dims are particle-major blocks of three

    std::size_t size() const { return potential.size(); }
    double cell_volume() const { return std::pow(h, static_cast<double>(dims.size())); }

    void apply(const Field& x, Field& y) const {
        const std::size_t N = size();
        y.assign(N, 0.0);
        const double c = kinetic / (h * h);
        const double ghost = boundary == Boundary::dirichlet ? -1.0 : 1.0;
        for (std::size_t i = 0; i < N; ++i) y[i] = potential[i] * x[i];
        for (std::size_t d = 0; d < dims.size(); ++d) {
            const std::size_t s = strides[d];
            const auto n = static_cast<std::size_t>(dims[d]);
            const std::size_t block = s * n;
            for (std::size_t base = 0; base < N; base += block)
                for (std::size_t off = 0; off < s; ++off) {
                    const std::size_t first = base + off;
                    for (std::size_t k = 0; k < n; ++k) {
                        std::size_t i = first + k * s;
                        double left, right;
                        if (k > 0) {
                            left = x[i - s];
                        } else if (boundary == Boundary::periodic) {
                            left = x[first + (n - 1) * s];
                        } else {
                            left = ghost * x[i];
                        }
                        if (k + 1 < n) {
                            right = x[i + s];
                        } else if (boundary == Boundary::periodic) {
                            right = x[first];
                        } else {
                            right = ghost * x[i];
                        }
                        y[i] += c * (2.0 * x[i] - left - right);
                    }
                }
        }
    }

    /// <x, H x> / <x, x> and <H x, H x> / <x, x>.
    std::pair<double, double> moments(const Field& x) const {
        Field y;
        apply(x, y);
        double nn = dot(x, x);
        return {dot(x, y) / nn, dot(y, y) / nn};
    }

    /// Coordinates of cell centre along each grid axis.
    std::vector<double> centre(std::size_t idx, double origin = 0.0) const {
        std::vector<double> c(dims.size());
        for (std::size_t d = 0; d < dims.size(); ++d)
            c[d] = origin + (static_cast<double>((idx / strides[d]) % static_cast<std::size_t>(dims[d])) + 0.5) * h;
        return c;
    }
};

namespace detail {

inline void set_strides(GridHamiltonian& g) {
    g.strides.assign(g.dims.size(), 1);
    for (std::size_t d = g.dims.size(); d-- > 1;) g.strides[d - 1] = g.strides[d] * static_cast<std::size_t>(g.dims[d]);
}

inline std::size_t grid_size(int points, std::size_t axes) {
    double n = std::pow(static_cast<double>(points), static_cast<double>(axes));
    if (n > 1e7)
        throw ConfigError(fmt::format("grid dimension {:.3g} exceeds the 1e7 limit of the sparse solver", n));
    return static_cast<std::size_t>(std::llround(n));
}

}  // namespace detail

/// n bosons in a box of the given side; pair distances use the minimal
/// image on a periodic box unless `minimal_image` is false.
struct GridInstance {
    int particles = 1;
    int points = 16;
    double side = 16.0;
    Boundary boundary = Boundary::neumann;
    PotentialSpec potential = PotentialSpec::square_barrier(0.0, 1.0);
    bool minimal_image = true;

    void validate() const {
        if (particles < 1 || particles > 3) throw ConfigError(fmt::format("particles={} outside 1..3", particles));
        if (points < 2) throw ConfigError("need at least two grid points per axis");
        if (!(side > 0.0)) throw ConfigError("box side must be positive");
        potential.validate();
    }
};

inline GridHamiltonian make_hamiltonian(const GridInstance& in) {
    in.validate();
    GridHamiltonian g;
    g.particles = in.particles;
    g.dims.assign(3 * static_cast<std::size_t>(in.particles), in.points);
    g.h = in.side / in.points;
    g.boundary = in.boundary;
    detail::set_strides(g);
    std::size_t N = detail::grid_size(in.points, g.dims.size());
    g.potential.assign(N, 0.0);
    if (in.particles < 2 || in.potential.amplitude == 0.0) return g;
    const bool wrap = in.boundary == Boundary::periodic && in.minimal_image;
    // pair potential depends on the difference of integer cell indices only
    const int P = in.points;
    auto pair_dist = [&](int di, int dj, int dk) {
        double r2 = 0.0;
        for (int dd : {di, dj, dk}) {
            int m = std::abs(dd);
            if (wrap) m = std::min(m, P - m);
            double x = m * g.h;
            r2 += x * x;
        }
        return std::sqrt(r2);
    };
    std::vector<double> table(static_cast<std::size_t>((2 * P - 1) * (2 * P - 1) * (2 * P - 1)));
    auto tix = [&](int a, int b, int c) {
        return static_cast<std::size_t>(((a + P - 1) * (2 * P - 1) + (b + P - 1)) * (2 * P - 1) + (c + P - 1));
    };
    for (int a = -(P - 1); a < P; ++a)
        for (int b = -(P - 1); b < P; ++b)
            for (int c = -(P - 1); c < P; ++c) table[tix(a, b, c)] = in.potential(pair_dist(a, b, c));
    std::vector<int> digit(g.dims.size());
    for (std::size_t idx = 0; idx < N; ++idx) {
        std::size_t rem = idx;
        for (std::size_t d = g.dims.size(); d-- > 0;) {
            digit[d] = static_cast<int>(rem % static_cast<std::size_t>(P));
            rem /= static_cast<std::size_t>(P);
        }
        double v = 0.0;
        for (int p = 0; p < in.particles; ++p)
            for (int q = p + 1; q < in.particles; ++q)
                v += table[tix(digit[3 * p] - digit[3 * q], digit[3 * p + 1] - digit[3 * q + 1],
                               digit[3 * p + 2] - digit[3 * q + 2])];
        g.potential[idx] = v;
    }
    return g;
}

/// One particle on a grid with an external potential evaluated at cell centres.
inline GridHamiltonian make_one_body(int points, double side, Boundary bc,
                                     const std::function<double(double, double, double)>& ext) {
    if (points < 2 || !(side > 0.0)) throw ConfigError("one-body grid needs points >= 2 and a positive side");
    GridHamiltonian g;
    g.dims = {points, points, points};
    g.h = side / points;
    g.boundary = bc;
    detail::set_strides(g);
    std::size_t N = detail::grid_size(points, 3);
    g.potential.resize(N);
    for (std::size_t idx = 0; idx < N; ++idx) {
        auto c = g.centre(idx);
        double v = ext ? ext(c[0], c[1], c[2]) : 0.0;
        if (!(v >= 0.0)) throw ConfigError("external potential must be non-negative");
        g.potential[idx] = v;
    }
    return g;
}

enum class RelativeLattice {
    nodes,       // r = (k - P/2) h; the lattice of differences of two cell-centred particles
    cells,       // r = (k + 1/2 - P/2) h
    even_cells,  // even sector of `cells`
};

/// Relative motion of two particles on a torus of side L: -2 Laplacian + V(|r|).
/// The even sector (even under each coordinate reflection) is the cell-centred
/// Neumann problem on [0, L/2]^3 with the scatterer at the corner.
inline GridHamiltonian make_relative_torus(int points, double L, const PotentialSpec& pot,
                                           RelativeLattice lattice = RelativeLattice::even_cells) {
    if (points < 2 || !(L > 0.0)) throw ConfigError("relative torus needs points >= 2 and L > 0");
    if (points % 2) throw ConfigError("relative torus needs an even number of points per axis");
    const bool even = lattice == RelativeLattice::even_cells;
    GridHamiltonian g;
    int m = even ? points / 2 : points;
    g.dims = {m, m, m};
    g.h = L / points;
    g.kinetic = 2.0;
    g.boundary = even ? Boundary::neumann : Boundary::periodic;
    detail::set_strides(g);
    std::size_t N = detail::grid_size(m, 3);
    g.potential.resize(N);
    double origin = even ? 0.0 : (lattice == RelativeLattice::cells ? -0.5 * L : -0.5 * L - 0.5 * g.h);
    for (std::size_t idx = 0; idx < N; ++idx) {
        auto c = g.centre(idx, origin);
        double r = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
        g.potential[idx] = pot(r);
    }
    return g;
}

/// Largest |v - P v| over particle transpositions, relative to max |v|.
inline double exchange_asymmetry(const GridHamiltonian& g, const Field& v) {
    if (g.particles < 2) return 0.0;
    double vmax = 0.0;
    for (double x : v) vmax = std::max(vmax, std::abs(x));
    double worst = 0.0;
    const std::size_t D = g.dims.size();
    std::vector<std::size_t> digit(D);
    for (int p = 0; p < g.particles; ++p)
        for (int q = p + 1; q < g.particles; ++q)
            for (std::size_t idx = 0; idx < v.size(); ++idx) {
                for (std::size_t d = 0; d < D; ++d) digit[d] = (idx / g.strides[d]) % static_cast<std::size_t>(g.dims[d]);
                std::size_t j = idx;
                for (int c = 0; c < 3; ++c) {
                    auto a = static_cast<std::size_t>(3 * p + c), b = static_cast<std::size_t>(3 * q + c);
                    j += (digit[b] - digit[a]) * g.strides[a] + (digit[a] - digit[b]) * g.strides[b];
                }
                worst = std::max(worst, std::abs(v[idx] - v[j]));
            }
    return vmax > 0.0 ? worst / vmax : 0.0;
}

/// Average of v over all particle permutations (n <= 3).
inline void symmetrize(const GridHamiltonian& g, Field& v) {
    if (g.particles < 2) return;
    std::vector<int> perm(static_cast<std::size_t>(g.particles));
    std::iota(perm.begin(), perm.end(), 0);
    Field acc(v.size(), 0.0);
    const std::size_t D = g.dims.size();
    std::vector<std::size_t> digit(D);
    int count = 0;
    do {
        for (std::size_t idx = 0; idx < v.size(); ++idx) {
            for (std::size_t d = 0; d < D; ++d) digit[d] = (idx / g.strides[d]) % static_cast<std::size_t>(g.dims[d]);
            std::size_t j = 0;
            for (int p = 0; p < g.particles; ++p)
                for (int c = 0; c < 3; ++c)
                    j += digit[static_cast<std::size_t>(3 * perm[static_cast<std::size_t>(p)] + c)] *
                         g.strides[static_cast<std::size_t>(3 * p + c)];
            acc[idx] += v[j];
        }
        ++count;
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = acc[i] / count;
}

struct EigenOptions {
    int nev = 1;
    int basis = 64;           // Krylov basis size per restart cycle
    int max_restarts = 400;
    double tol = 1e-9;        // absolute residual target
    std::uint64_t seed = 1;
    double memory_bytes = 6e8;
    std::function<void(Field&)> project;  // keeps iterates in a symmetry sector
};

struct EigenResult {
    std::vector<double> values, residuals;
    std::vector<Field> vectors;
    int matvecs = 0;
    int restarts = 0;
    bool converged = false;

    /// Eigenvalue error estimate: the residual, tightened by the gap when available.
    double error(std::size_t k) const {
        double r = residuals.at(k);
        double gap = std::numeric_limits<double>::infinity();
        if (k + 1 < values.size()) gap = values[k + 1] - values[k];
        if (k > 0) gap = std::min(gap, values[k] - values[k - 1]);
        return gap > 0.0 && std::isfinite(gap) ? std::min(r, r * r / gap) : r;
    }
};

/// Lowest eigenpairs of a symmetric operator by thick-restart Lanczos with
/// full reorthogonalization.
inline EigenResult lowest_eigenpairs(std::size_t N, const std::function<void(const Field&, Field&)>& apply,
                                     EigenOptions opt = {}) {
    if (opt.nev < 1) throw ConfigError("nev must be at least 1");
    if (N == 0) throw ConfigError("empty operator");
    int m = std::min<int>(opt.basis, static_cast<int>(opt.memory_bytes / (8.0 * static_cast<double>(N))) - 1);
    m = std::min<int>(m, static_cast<int>(N));
    int keep = std::min(m - 1, opt.nev + std::max(2, m / 4));
    if (m < opt.nev + 2 && static_cast<int>(N) > opt.nev + 1)
        throw BudgetError(fmt::format("memory budget allows only {} Lanczos vectors of length {}", m, N));

    EigenResult res;
    StreamRng rng(opt.seed, "oracle", "lanczos-start");
    auto random_unit = [&](const std::vector<Field>& against, int upto) {
        for (int attempt = 0; attempt < 8; ++attempt) {
            Field v(N);
            for (auto& x : v) x = rng.uniform(-1.0, 1.0);
            if (opt.project) opt.project(v);
            for (int pass = 0; pass < 2; ++pass)
                for (int i = 0; i < upto; ++i) axpy(-dot(against[static_cast<std::size_t>(i)], v), against[static_cast<std::size_t>(i)], v);
            double nv = std::sqrt(dot(v, v));
            if (nv > 1e-8) {
                for (auto& x : v) x /= nv;
                return v;
            }
        }
        return Field{};
    };

    std::vector<Field> V(static_cast<std::size_t>(m + 1));
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
    V[0] = random_unit(V, 0);
    int k = 0;
    Field w;
    Eigen::VectorXd theta;
    Eigen::MatrixXd S;
    double beta = 0.0;
    int dim = m;
    for (int cycle = 0; cycle <= opt.max_restarts; ++cycle) {
        dim = m;
        for (int j = k; j < m; ++j) {
            auto uj = static_cast<std::size_t>(j);
            apply(V[uj], w);
            ++res.matvecs;
            for (int pass = 0; pass < 2; ++pass)
                for (int i = 0; i <= j; ++i) {
                    double c = dot(V[static_cast<std::size_t>(i)], w);
                    axpy(-c, V[static_cast<std::size_t>(i)], w);
                    if (pass == 0) {
                        T(i, j) = c;
                        if (i != j) T(j, i) = c;
                    }
                }
            beta = std::sqrt(dot(w, w));
            if (j + 1 == m) {
                for (auto& x : w) x /= (beta > 0.0 ? beta : 1.0);
                V[static_cast<std::size_t>(m)] = w;
                break;
            }
            if (beta < 1e-12 * std::max(1.0, std::abs(T(j, j)))) {
                // invariant subspace found; continue with a fresh direction
                auto fresh = random_unit(V, j + 1);
                if (fresh.empty()) {
                    dim = j + 1;
                    beta = 0.0;
                    break;
                }
                V[uj + 1] = std::move(fresh);
                T(j + 1, j) = T(j, j + 1) = 0.0;
            } else {
                for (auto& x : w) x /= beta;
                V[uj + 1] = w;
                T(j + 1, j) = T(j, j + 1) = beta;
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T.topLeftCorner(dim, dim));
        theta = es.eigenvalues();
        S = es.eigenvectors();
        int nev = std::min(opt.nev, dim);
        bool done = true;
        for (int i = 0; i < nev; ++i) {
            double r = std::abs(beta * S(dim - 1, i));
            if (r > opt.tol) done = false;
        }
        if (done || cycle == opt.max_restarts || dim < m) {
            res.converged = done || dim < m;
            res.restarts = cycle;
            for (int i = 0; i < nev; ++i) {
                Field y(N, 0.0);
                for (int l = 0; l < dim; ++l) axpy(S(l, i), V[static_cast<std::size_t>(l)], y);
                double ny = std::sqrt(dot(y, y));
                for (auto& x : y) x /= ny;
                Field hy;
                apply(y, hy);
                ++res.matvecs;
                double th = dot(y, hy);
                axpy(-th, y, hy);
                res.values.push_back(th);
                res.residuals.push_back(std::sqrt(dot(hy, hy)));
                res.vectors.push_back(std::move(y));
            }
            if (!res.converged)
                throw ConvergenceError(fmt::format(
                    "Lanczos did not reach residual {:.3g} within {} restarts ({} matvecs); last residual {:.3g}",
                    opt.tol, opt.max_restarts, res.matvecs, res.residuals.front()));
            return res;
        }
        // thick restart: keep the lowest Ritz vectors and the residual direction
        std::vector<Field> Y(static_cast<std::size_t>(keep), Field(N, 0.0));
        for (int i = 0; i < keep; ++i)
            for (int l = 0; l < m; ++l) axpy(S(l, i), V[static_cast<std::size_t>(l)], Y[static_cast<std::size_t>(i)]);
        Field last = std::move(V[static_cast<std::size_t>(m)]);
        for (int i = 0; i < keep; ++i) V[static_cast<std::size_t>(i)] = std::move(Y[static_cast<std::size_t>(i)]);
        V[static_cast<std::size_t>(keep)] = std::move(last);
        // the coupling column of V[keep] is recomputed when it is expanded
        T.setZero();
        for (int i = 0; i < keep; ++i) T(i, i) = theta(i);
        k = keep;
    }
    throw ConvergenceError("Lanczos loop exited without a result");
}

inline EigenResult ground_state(const GridHamiltonian& g, EigenOptions opt = {}) {
    if (g.particles > 1 && !opt.project) opt.project = [&g](Field& v) { symmetrize(g, v); };
    return lowest_eigenpairs(g.size(), [&g](const Field& x, Field& y) { g.apply(x, y); }, opt);
}

inline void write_eigen_csv(std::ostream& os, const EigenResult& r) {
    os << "index,value\n";
    for (std::size_t i = 0; i < r.values.size(); ++i) os << fmt::format("{},{:.17g}\n", i, r.values[i]);
}

inline nlohmann::json eigen_metadata(const GridHamiltonian& g, const EigenResult& r) {
    nlohmann::json j;
    j["dims"] = g.dims;
    j["spacing"] = g.h;
    j["kinetic"] = g.kinetic;
    j["boundary"] = to_string(g.boundary);
    j["particles"] = g.particles;
    j["size"] = g.size();
    j["values"] = r.values;
    j["residuals"] = r.residuals;
    j["matvecs"] = r.matvecs;
    j["restarts"] = r.restarts;
    j["converged"] = r.converged;
    return j;
}

struct RadialOracle {
    int cells = 0;
    double kappa = 0.0;
    double grading = 1.0;
    double relative_eigenvalue = 0.0;  // lowest eigenvalue of -2 Laplacian + V on the ball
    double e0 = 0.0;                   // the same in units of -Laplacian + V/2
};

/// Finite-volume discretization of the s-wave Neumann problem on the ball of
/// radius kappa: faces at kappa (f / cells)^grading, r^2-weighted fluxes, zero
/// flux at kappa. Grading 2 puts a quarter of the cells inside kappa / 16.
inline RadialOracle radial_neumann_oracle(const PotentialSpec& pot, double kappa, int cells = 64, double grading = 2.0,
                                          int quad = 64) {
    if (cells < 4) throw ConfigError("radial oracle needs at least 4 cells");
    if (!(kappa > pot.support)) throw ConfigError("kappa must exceed the potential support");
    if (!(grading >= 1.0)) throw ConfigError("grading exponent must be at least 1");
    const double kin = 2.0;
    std::vector<double> face(static_cast<std::size_t>(cells + 1)), mid(static_cast<std::size_t>(cells));
    for (int f = 0; f <= cells; ++f) face[static_cast<std::size_t>(f)] = kappa * std::pow(static_cast<double>(f) / cells, grading);
    Eigen::VectorXd mass(cells), diag(cells), off(cells - 1);
    for (int c = 0; c < cells; ++c) {
        double lo = face[static_cast<std::size_t>(c)], hi = face[static_cast<std::size_t>(c + 1)];
        mid[static_cast<std::size_t>(c)] = 0.5 * (lo + hi);
        mass(c) = (hi * hi * hi - lo * lo * lo) / 3.0;
        double vint = 0.0, dq = (hi - lo) / quad;
        for (int q = 0; q < quad; ++q) {
            double r = lo + (q + 0.5) * dq;
            vint += pot.value_left(r) * r * r * dq;
        }
        diag(c) = vint;
    }
    for (int f = 1; f < cells; ++f) {
        double r = face[static_cast<std::size_t>(f)];
        double flux = kin * r * r / (mid[static_cast<std::size_t>(f)] - mid[static_cast<std::size_t>(f - 1)]);
        diag(f - 1) += flux;
        diag(f) += flux;
        off(f - 1) = -flux;
    }
    Eigen::VectorXd d(cells), e(cells - 1);
    for (int c = 0; c < cells; ++c) d(c) = diag(c) / mass(c);
    for (int c = 0; c + 1 < cells; ++c) e(c) = off(c) / std::sqrt(mass(c) * mass(c + 1));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(d, e, Eigen::EigenvaluesOnly);
    RadialOracle r;
    r.cells = cells;
    r.kappa = kappa;
    r.grading = grading;
    r.relative_eigenvalue = es.eigenvalues()(0);
    r.e0 = r.relative_eigenvalue / kin;
    return r;
}

/// Cartesian Neumann box centred on a scatterer, with W = Neumann profile.
struct SubstitutionGrid {
    GridHamiltonian h;  // -Laplacian + V/2
    Field W;
};

inline SubstitutionGrid make_substitution_grid(const PotentialSpec& pot, const RadialSolution& prof, double side,
                                               int points) {
    SubstitutionGrid s;
    s.h = make_one_body(points, side, Boundary::neumann, [&](double x, double y, double z) {
        double c = 0.5 * side;
        return 0.5 * pot(std::sqrt((x - c) * (x - c) + (y - c) * (y - c) + (z - c) * (z - c)));
    });
    s.W.resize(s.h.size());
    for (std::size_t i = 0; i < s.W.size(); ++i) {
        auto c = s.h.centre(i, -0.5 * side);
        double r = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
        s.W[i] = 1.0 - prof.tau(r);
    }
    return s;
}

struct SubstitutionTerms {
    double lhs = 0.0;      // int |grad Psi|^2 + int V/2 |Psi|^2
    double rhs = 0.0;      // int W^2 |grad Phi|^2 + int W(-Lap + V/2)W |Phi|^2
    double residual = 0.0; // |lhs - rhs| / lhs
};

/// Both sides of the ground-state substitution Psi = W Phi on the grid.
/// Edge weights for W^2 are arithmetic means, so the identity holds up to O(h^2).
inline SubstitutionTerms substitution_terms(const SubstitutionGrid& s, const Field& psi) {
    const auto& g = s.h;
    const std::size_t N = g.size();
    if (psi.size() != N) throw ConfigError("probe does not match the grid");
    Field phi(N), HW;
    for (std::size_t i = 0; i < N; ++i) {
        if (!(s.W[i] > 0.0)) throw ModelError("W must be positive on the grid");
        phi[i] = psi[i] / s.W[i];
    }
    g.apply(s.W, HW);
    double kin_l = 0.0, kin_r = 0.0, pot_l = 0.0, pot_r = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        pot_l += g.potential[i] * psi[i] * psi[i];
        pot_r += s.W[i] * HW[i] * phi[i] * phi[i];
    }
    for (std::size_t d = 0; d < 3; ++d) {
        std::size_t st = g.strides[d];
        auto n = static_cast<std::size_t>(g.dims[d]);
        for (std::size_t i = 0; i < N; ++i) {
            if ((i / st) % n + 1 == n) continue;
            std::size_t j = i + st;
            double dp = psi[j] - psi[i], df = phi[j] - phi[i];
            kin_l += dp * dp;
            kin_r += 0.5 * (s.W[i] * s.W[i] + s.W[j] * s.W[j]) * df * df;
        }
    }
    double vol = g.cell_volume(), ih2 = 1.0 / (g.h * g.h);
    SubstitutionTerms t;
    t.lhs = (kin_l * ih2 + pot_l) * vol;
    t.rhs = (kin_r * ih2 + pot_r) * vol;
    t.residual = std::abs(t.lhs - t.rhs) / std::abs(t.lhs);
    return t;
}

/// Smooth random probe: a positive constant plus a few low Fourier modes.
inline Field smooth_probe(const GridHamiltonian& g, double side, StreamRng& rng, int modes = 4) {
    struct Mode {
        double amp, kx, ky, kz, phase;
    };
    std::vector<Mode> ms;
    for (int m = 0; m < modes; ++m)
        ms.push_back({rng.uniform(-0.3, 0.3), std::numbers::pi * static_cast<double>(rng.below(3)) / side,
                      std::numbers::pi * static_cast<double>(rng.below(3)) / side,
                      std::numbers::pi * static_cast<double>(rng.below(3)) / side, rng.uniform(0.0, 2.0 * std::numbers::pi)});
    double base = rng.uniform(1.0, 2.0);
    Field f(g.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        auto c = g.centre(i);
        double v = base;
        for (const auto& m : ms) v += m.amp * std::cos(m.kx * c[0] + m.ky * c[1] + m.kz * c[2] + m.phase);
        f[i] = v;
    }
    return f;
}

struct SubstitutionStudy {
    std::vector<int> points;
    std::vector<double> max_residual;
    double ratio = 0.0;  // coarse / fine residual of the last refinement
    bool converging = false;
};

/// Max residual over random probes on successively refined grids.
inline SubstitutionStudy substitution_identity_check(const PotentialSpec& pot, double kappa, double side,
                                                     const std::vector<int>& points, int probes = 20,
                                                     std::uint64_t seed = 1) {
    if (points.size() < 2) throw ConfigError("refinement study needs at least two grids");
    if (!(2.0 * kappa < side)) throw ConfigError("the W ball must fit inside the box");
    auto prof = solve_neumann_mode(pot, kappa);
    SubstitutionStudy st;
    st.points = points;
    for (int p : points) {
        auto grid = make_substitution_grid(pot, prof, side, p);
        StreamRng rng(seed, "oracle", "substitution-probes");
        double worst = 0.0;
        for (int k = 0; k < probes; ++k) {
            auto psi = smooth_probe(grid.h, side, rng);
            worst = std::max(worst, substitution_terms(grid, psi).residual);
        }
        st.max_residual.push_back(worst);
    }
    auto n = st.max_residual.size();
    st.ratio = st.max_residual[n - 2] / st.max_residual[n - 1];
    st.converging = st.ratio >= 2.0;
    if (!st.converging)
        throw ResolutionError(fmt::format("substitution residual does not decrease under refinement (ratio {:.3g})",
                                          st.ratio));
    return st;
}

struct TempleComparison {
    TempleResult temple;
    double exact = 0.0;          // E0
    double excited_lower = 0.0;  // E1 minus ten error estimates
    double trial_energy = 0.0;
    double slack = 0.0;          // E0 - bound when applicable
    bool sound = true;           // bound <= E0 (up to the E0 error estimate)
};

/// Neumann box with a random gaussian bump, used for Temple soundness sweeps.
inline GridHamiltonian random_one_body(int points, StreamRng& rng) {
    double side = rng.uniform(2.0, 6.0);
    double cx = rng.uniform(0, side), cy = rng.uniform(0, side), cz = rng.uniform(0, side);
    double amp = rng.uniform(0.0, 20.0), w = rng.uniform(0.3, 1.5);
    return make_one_body(points, side, Boundary::neumann, [=](double x, double y, double z) {
        double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy) + (z - cz) * (z - cz);
        return amp * std::exp(-r2 / (2 * w * w));
    });
}

/// Temple bound of a trial vector against the solver's E0, E1.
inline TempleComparison temple_vs_exact(const GridHamiltonian& g, const Field& trial, const EigenResult& eig) {
    if (eig.values.size() < 2) throw ConfigError("temple_vs_exact needs the two lowest eigenpairs");
    TempleComparison c;
    c.exact = eig.values[0];
    c.excited_lower = eig.values[1] - 10.0 * eig.residuals[1];
    auto [mean, second] = g.moments(trial);
    c.trial_energy = mean;
    c.temple = temple_lower_bound({mean, second, c.excited_lower});
    if (c.temple.applicable) {
        c.slack = c.exact - c.temple.bound;
        c.sound = c.temple.bound <= c.exact + eig.error(0) + 1e-12 * std::abs(c.exact);
    }
    return c;
}

/// W-based trial on the even-sector relative torus: W = Neumann profile on
/// the ball of radius kappa around the corner scatterer, 1 elsewhere.
inline Field relative_W_trial(const GridHamiltonian& g, const RadialSolution& prof) {
    Field t(g.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        auto c = g.centre(i);
        t[i] = 1.0 - prof.tau(std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]));
    }
    return t;
}

}  // namespace dilute
