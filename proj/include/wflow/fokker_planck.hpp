#pragma once

// Conservative finite-volume solver for the forward equation
//   dp/dt = div( Sigma (grad log p + grad V) p ) = div( Sigma e^{-V} grad(p e^V) ),
// the likelihood-ratio field l = p e^V with its log-gradient, and a residual
// check of the Kolmogorov backward equation.
//
// The flux form with harmonic-mean face coefficients makes the discrete
// stationary state exactly q = e^{-V} up to rounding. Boundary faces carry
// zero flux, so mass is conserved on the truncated box.
//
// Grids support n = 1 and n = 2 with diagonal volatility fields; the particle
// integrator handles full SPD fields.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "wflow/model.hpp"

namespace wflow {

class FpError : public std::runtime_error {
  public:
    explicit FpError(const std::string& what) : std::runtime_error(what) {}
};

struct Grid {
    int dim = 1;
    int nx = 0, ny = 1;
    Box box;

    double dx() const { return box.extent(0) / (nx - 1); }
    double dy() const { return dim == 2 ? box.extent(1) / (ny - 1) : 1.0; }

    int size() const { return nx * ny; }
    int index(int i, int j = 0) const { return i * ny + j; }

    Vec node(int i, int j = 0) const {
        Vec x = Vec::zero(dim);
        x[0] = box.lo[0] + i * dx();
        if (dim == 2) x[1] = box.lo[1] + j * dy();
        return x;
    }

    static Grid make(const Box& box, int dim, int nx, int ny = 1) {
        if (nx < 64 || (dim == 2 && ny < 64))
            throw FpError("grid: need at least 64 nodes per axis");
        Grid g;
        g.dim = dim;
        g.nx = nx;
        g.ny = dim == 2 ? ny : 1;
        g.box = box;
        return g;
    }
};

struct DensityField {
    Grid grid;
    std::vector<double> values;
    double time = 0.0;

    double trapezoid_mass() const {
        double m = 0;
        for (int i = 0; i < grid.nx; ++i) {
            const double wx = (i == 0 || i == grid.nx - 1) ? 0.5 : 1.0;
            for (int j = 0; j < grid.ny; ++j) {
                const double wy =
                    (grid.dim == 2 && (j == 0 || j == grid.ny - 1)) ? 0.5 : 1.0;
                m += wx * wy * values[grid.index(i, j)];
            }
        }
        return m * grid.dx() * grid.dy();
    }

    // Trapezoidal quadrature of f(x) p(x) dx.
    template <typename F>
    double integrate(F&& f) const {
        double s = 0;
        for (int i = 0; i < grid.nx; ++i) {
            const double wx = (i == 0 || i == grid.nx - 1) ? 0.5 : 1.0;
            for (int j = 0; j < grid.ny; ++j) {
                const double wy =
                    (grid.dim == 2 && (j == 0 || j == grid.ny - 1)) ? 0.5 : 1.0;
                const int id = grid.index(i, j);
                s += wx * wy * f(grid.node(i, j), id) * values[id];
            }
        }
        return s * grid.dx() * grid.dy();
    }
};

struct LikelihoodField {
    Grid grid;
    std::vector<double> values;     // l = p e^V
    std::vector<double> log_values;
    std::vector<Vec> grad_log;      // grad log l, central differences
    double time = 0.0;
};

inline DensityField initial_density(const DiffusionProblem& problem,
                                    const Grid& grid) {
    DensityField d;
    d.grid = grid;
    d.time = 0.0;
    d.values.resize(grid.size());
    for (int i = 0; i < grid.nx; ++i)
        for (int j = 0; j < grid.ny; ++j)
            d.values[grid.index(i, j)] =
                problem.initial_law.density(grid.node(i, j));
    const double m = d.trapezoid_mass();
    if (!(m > 0)) throw FpError("initial density has nonpositive mass");
    for (auto& v : d.values) v /= m;
    return d;
}

inline double fp_stability_cap(const DiffusionProblem& problem,
                               const Grid& grid) {
    const double h = std::min(grid.dx(), grid.dim == 2 ? grid.dy() : grid.dx());
    return h * h / (2.0 * problem.sigma.ellipticity_hi * grid.dim);
}

namespace detail {

inline double harmonic_mean(double a, double b) {
    return (a > 0 && b > 0) ? 2.0 * a * b / (a + b) : 0.0;
}

struct FpWorkspace {
    std::vector<double> u;       // p e^V
    std::vector<double> expv;    // e^{V}
    std::vector<double> kx, ky;  // Sigma_11 e^{-V}, Sigma_22 e^{-V} at nodes
    bool ready = false;
};

inline void prepare_workspace(FpWorkspace& w, const DiffusionProblem& problem,
                              const Grid& grid) {
    const int sz = grid.size();
    w.u.resize(sz);
    if (w.ready && static_cast<int>(w.expv.size()) == sz) return;
    w.expv.resize(sz);
    w.kx.resize(sz);
    w.ky.resize(sz);
    for (int i = 0; i < grid.nx; ++i)
        for (int j = 0; j < grid.ny; ++j) {
            const int id = grid.index(i, j);
            const Vec x = grid.node(i, j);
            const double v = problem.potential.eval(x);
            const Mat s = problem.sigma.eval(x);
            if (!s.isDiagonal(1e-12))
                throw FpError("fp solver supports diagonal volatility fields; '" +
                              problem.sigma.name + "' has off-diagonal entries");
            w.expv[id] = std::exp(v);
            w.kx[id] = s.xx * std::exp(-v);
            w.ky[id] = (grid.dim == 2 ? s.yy : s.xx) * std::exp(-v);
        }
    w.ready = true;
}

}  // namespace detail

// One explicit conservative step. Throws on CFL violation or instability.
inline DensityField fp_step(const DensityField& density,
                            const DiffusionProblem& problem, double dt,
                            detail::FpWorkspace* ws = nullptr) {
    const Grid& g = density.grid;
    const double cap = fp_stability_cap(problem, g);
    if (dt > cap * (1.0 + 1e-12))
        throw FpError("fp_step: dt = " + std::to_string(dt) +
                      " exceeds stability cap dx^2/(2 C n) = " +
                      std::to_string(cap));

    detail::FpWorkspace local;
    detail::FpWorkspace& w = ws ? *ws : local;
    detail::prepare_workspace(w, problem, g);

    const int sz = g.size();
    for (int id = 0; id < sz; ++id) w.u[id] = density.values[id] * w.expv[id];

    DensityField out;
    out.grid = g;
    out.time = density.time + dt;
    out.values = density.values;

    const double cx = dt / (g.dx() * g.dx());
    for (int i = 0; i + 1 < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j) {
            const int a = g.index(i, j), b = g.index(i + 1, j);
            const double flux =
                detail::harmonic_mean(w.kx[a], w.kx[b]) * (w.u[b] - w.u[a]);
            out.values[a] += cx * flux;
            out.values[b] -= cx * flux;
        }
    if (g.dim == 2) {
        const double cy = dt / (g.dy() * g.dy());
        for (int i = 0; i < g.nx; ++i)
            for (int j = 0; j + 1 < g.ny; ++j) {
                const int a = g.index(i, j), b = g.index(i, j + 1);
                const double flux =
                    detail::harmonic_mean(w.ky[a], w.ky[b]) * (w.u[b] - w.u[a]);
                out.values[a] += cy * flux;
                out.values[b] -= cy * flux;
            }
    }

    for (int id = 0; id < sz; ++id) {
        const double v = out.values[id];
        if (!std::isfinite(v) || v < -1e-12)
            throw FpError("fp_step: instability at node " + std::to_string(id) +
                          " (value " + std::to_string(v) + "); dt = " +
                          std::to_string(dt) + ", CFL cap = " +
                          std::to_string(cap));
        if (v < 0) out.values[id] = 0.0;
    }
    return out;
}

// Advance to t_end, recording snapshots at the requested times (which must be
// sorted; 0 and t_end are recorded if requested). Steps are shortened to land
// exactly on snapshot times.
inline std::vector<DensityField> fp_solve(const DiffusionProblem& problem,
                                          DensityField state, double t_end,
                                          const std::vector<double>& snapshots,
                                          double dt_factor = 0.9) {
    std::vector<DensityField> out;
    const double dt_base = dt_factor * fp_stability_cap(problem, state.grid);
    detail::FpWorkspace ws;
    size_t next = 0;
    while (next < snapshots.size() && snapshots[next] <= state.time + 1e-14) {
        out.push_back(state);
        out.back().time = snapshots[next];
        ++next;
    }
    while (state.time < t_end - 1e-14) {
        double target = t_end;
        if (next < snapshots.size()) target = std::min(target, snapshots[next]);
        const double dt = std::min(dt_base, target - state.time);
        state = fp_step(state, problem, dt, &ws);
        if (next < snapshots.size() && state.time >= snapshots[next] - 1e-12) {
            state.time = snapshots[next];
            out.push_back(state);
            ++next;
        }
    }
    return out;
}

inline std::vector<double> uniform_checkpoints(double t0, double t1, int count) {
    std::vector<double> t(count);
    for (int k = 0; k < count; ++k)
        t[k] = t0 + (t1 - t0) * k / static_cast<double>(count - 1);
    return t;
}

inline LikelihoodField likelihood_ratio(const DensityField& density,
                                        const DiffusionProblem& problem) {
    const Grid& g = density.grid;
    LikelihoodField lik;
    lik.grid = g;
    lik.time = density.time;
    lik.values.resize(g.size());
    lik.log_values.resize(g.size());
    lik.grad_log.resize(g.size(), Vec::zero(g.dim));

    std::string bad;
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j) {
            const int id = g.index(i, j);
            const double p = density.values[id];
            if (!(p > 0)) {
                if (!bad.empty()) bad += ", ";
                if (bad.size() < 120) bad += std::to_string(id);
                continue;
            }
            const double v = problem.potential.eval(g.node(i, j));
            lik.values[id] = p * std::exp(v);
            lik.log_values[id] = std::log(p) + v;
        }
    if (!bad.empty())
        throw FpError("likelihood_ratio: nonpositive density at nodes [" + bad +
                      "]");

    const auto d1 = [&](int a, int b, double h) {
        return (lik.log_values[b] - lik.log_values[a]) / h;
    };
    const double hx = g.dx(), hy = g.dy();
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j) {
            const int id = g.index(i, j);
            if (i == 0)
                lik.grad_log[id][0] = d1(g.index(0, j), g.index(1, j), hx);
            else if (i == g.nx - 1)
                lik.grad_log[id][0] =
                    d1(g.index(g.nx - 2, j), g.index(g.nx - 1, j), hx);
            else
                lik.grad_log[id][0] =
                    d1(g.index(i - 1, j), g.index(i + 1, j), 2 * hx);
            if (g.dim == 2) {
                if (j == 0)
                    lik.grad_log[id][1] = d1(g.index(i, 0), g.index(i, 1), hy);
                else if (j == g.ny - 1)
                    lik.grad_log[id][1] =
                        d1(g.index(i, g.ny - 2), g.index(i, g.ny - 1), hy);
                else
                    lik.grad_log[id][1] =
                        d1(g.index(i, j - 1), g.index(i, j + 1), 2 * hy);
            }
        }
    return lik;
}

// Multilinear interpolation on the grid; positions are clamped to the box.
namespace detail {
inline void locate(const Grid& g, const Vec& x, int& i, int& j, double& fx,
                   double& fy) {
    const double sx = (x[0] - g.box.lo[0]) / g.dx();
    i = std::clamp(static_cast<int>(sx), 0, g.nx - 2);
    fx = std::clamp(sx - i, 0.0, 1.0);
    j = 0;
    fy = 0;
    if (g.dim == 2) {
        const double sy = (x[1] - g.box.lo[1]) / g.dy();
        j = std::clamp(static_cast<int>(sy), 0, g.ny - 2);
        fy = std::clamp(sy - j, 0.0, 1.0);
    }
}
}  // namespace detail

inline double interp_log_likelihood(const LikelihoodField& lik, const Vec& x) {
    int i, j;
    double fx, fy;
    detail::locate(lik.grid, x, i, j, fx, fy);
    const Grid& g = lik.grid;
    if (g.dim == 1)
        return (1 - fx) * lik.log_values[g.index(i)] +
               fx * lik.log_values[g.index(i + 1)];
    return (1 - fx) * ((1 - fy) * lik.log_values[g.index(i, j)] +
                       fy * lik.log_values[g.index(i, j + 1)]) +
           fx * ((1 - fy) * lik.log_values[g.index(i + 1, j)] +
                 fy * lik.log_values[g.index(i + 1, j + 1)]);
}

inline Vec interp_grad_log(const LikelihoodField& lik, const Vec& x) {
    int i, j;
    double fx, fy;
    detail::locate(lik.grid, x, i, j, fx, fy);
    const Grid& g = lik.grid;
    Vec out = Vec::zero(g.dim);
    for (int axis = 0; axis < g.dim; ++axis) {
        if (g.dim == 1) {
            out[axis] = (1 - fx) * lik.grad_log[g.index(i)][axis] +
                        fx * lik.grad_log[g.index(i + 1)][axis];
        } else {
            out[axis] =
                (1 - fx) * ((1 - fy) * lik.grad_log[g.index(i, j)][axis] +
                            fy * lik.grad_log[g.index(i, j + 1)][axis]) +
                fx * ((1 - fy) * lik.grad_log[g.index(i + 1, j)][axis] +
                      fy * lik.grad_log[g.index(i + 1, j + 1)][axis]);
        }
    }
    return out;
}

// Max-norm residual of the backward equation
//   -d_s l = sum_ij Sigma_ij d2_ij l + <div Sigma - Sigma grad V, grad l>
// over interior nodes and interior time slices.
inline double backward_residual(const std::vector<LikelihoodField>& path,
                                const DiffusionProblem& problem) {
    if (path.size() < 3)
        throw FpError("backward_residual: need at least 3 time slices");
    const Grid& g = path.front().grid;
    const double hx = g.dx(), hy = g.dy();
    double worst = 0;
    for (size_t k = 1; k + 1 < path.size(); ++k) {
        const auto& prev = path[k - 1];
        const auto& cur = path[k];
        const auto& nxt = path[k + 1];
        const double dt2 = nxt.time - prev.time;
        for (int i = 1; i + 1 < g.nx; ++i)
            for (int j = (g.dim == 2 ? 1 : 0);
                 j < (g.dim == 2 ? g.ny - 1 : 1); ++j) {
                const int id = g.index(i, j);
                const Vec x = g.node(i, j);
                const Mat s = problem.sigma.eval(x);
                const Vec b = drift(problem, x);

                const double lt = (nxt.values[id] - prev.values[id]) / dt2;
                double lap = s.xx *
                             (cur.values[g.index(i + 1, j)] -
                              2 * cur.values[id] +
                              cur.values[g.index(i - 1, j)]) /
                             (hx * hx);
                double adv = b[0] *
                             (cur.values[g.index(i + 1, j)] -
                              cur.values[g.index(i - 1, j)]) /
                             (2 * hx);
                if (g.dim == 2) {
                    lap += s.yy *
                           (cur.values[g.index(i, j + 1)] - 2 * cur.values[id] +
                            cur.values[g.index(i, j - 1)]) /
                           (hy * hy);
                    lap += 2 * s.xy *
                           (cur.values[g.index(i + 1, j + 1)] -
                            cur.values[g.index(i + 1, j - 1)] -
                            cur.values[g.index(i - 1, j + 1)] +
                            cur.values[g.index(i - 1, j - 1)]) /
                           (4 * hx * hy);
                    adv += b[1] *
                           (cur.values[g.index(i, j + 1)] -
                            cur.values[g.index(i, j - 1)]) /
                           (2 * hy);
                }
                worst = std::max(worst, std::abs(lt - lap - adv));
            }
    }
    return worst;
}

}  // namespace wflow
