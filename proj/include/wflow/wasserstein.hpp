#pragma once

// Riemannian ground distance d_G, the quadratic Wasserstein distance W_{2,G}
// over discrete measures (exact transportation simplex and debiased
// log-domain Sinkhorn), a 1-D quantile oracle, and the two estimators of the
// metric derivative of the density flow.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "wflow/fokker_planck.hpp"
#include "wflow/functionals.hpp"
#include "wflow/model.hpp"
#include "wflow/parallel.hpp"

namespace wflow {

class OtError : public std::runtime_error {
  public:
    explicit OtError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Discrete measures and coarsening
// ---------------------------------------------------------------------------

struct DiscreteMeasure {
    std::vector<Vec> points;
    std::vector<double> weights;

    int size() const { return static_cast<int>(points.size()); }
    double total_mass() const {
        double m = 0;
        for (double w : weights) m += w;
        return m;
    }
};

// Mass-conservative aggregation of a grid density onto <= max_support
// points. Blocks of nodes are replaced by their mass-weighted centroids, so
// the W2 error of the coarsening is governed by the within-block spread.
inline DiscreteMeasure coarsen_density(const DensityField& density,
                                       int max_support = 4000) {
    const Grid& g = density.grid;
    DiscreteMeasure out;
    auto node_mass = [&](int idx) {
        return detail::node_weight(g, idx) * density.values[idx];
    };
    if (g.dim == 1) {
        const int block = (g.nx + max_support - 1) / max_support;
        for (int i0 = 0; i0 < g.nx; i0 += block) {
            double m = 0, cx = 0;
            for (int i = i0; i < std::min(i0 + block, g.nx); ++i) {
                const double w = node_mass(i);
                m += w;
                cx += w * g.node(i, 0)[0];
            }
            if (m > 1e-15) {
                out.points.push_back(Vec(cx / m));
                out.weights.push_back(m);
            }
        }
    } else {
        int block = 1;
        while ((g.nx / block + 1) * static_cast<int64_t>(g.ny / block + 1) >
               max_support)
            ++block;
        for (int i0 = 0; i0 < g.nx; i0 += block)
            for (int j0 = 0; j0 < g.ny; j0 += block) {
                double m = 0, cx = 0, cy = 0;
                for (int i = i0; i < std::min(i0 + block, g.nx); ++i)
                    for (int j = j0; j < std::min(j0 + block, g.ny); ++j) {
                        const double w = node_mass(g.index(i, j));
                        m += w;
                        cx += w * g.node(i, j)[0];
                        cy += w * g.node(i, j)[1];
                    }
                if (m > 1e-15) {
                    Vec p = Vec::zero(2);
                    p[0] = cx / m;
                    p[1] = cy / m;
                    out.points.push_back(p);
                    out.weights.push_back(m);
                }
            }
    }
    return out;
}

inline DiscreteMeasure measure_from_particles(const std::vector<Vec>& xs) {
    DiscreteMeasure out;
    out.points = xs;
    out.weights.assign(xs.size(), 1.0 / static_cast<double>(xs.size()));
    return out;
}

// ---------------------------------------------------------------------------
// Ground metric
// ---------------------------------------------------------------------------

enum class GroundMethod { euclidean_closed_form, graph_geodesic };

struct GroundMetric {
    std::vector<Vec> points;
    std::vector<double> dist;  // row-major count x count
    GroundMethod method = GroundMethod::euclidean_closed_form;

    int count() const { return static_cast<int>(points.size()); }
    double distance(int i, int j) const {
        return dist[static_cast<size_t>(i) * count() + j];
    }
};

namespace detail {

inline void require_spd_metric(const MetricSpec& metric, const Vec& x) {
    const auto ev = sym_eigenvalues(metric.g_eval(x));
    if (!(ev[0] > 0))
        throw OtError("ground metric: G is not positive definite at (" +
                      std::to_string(x[0]) +
                      (x.n == 2 ? ", " + std::to_string(x[1]) : "") +
                      "), min eigenvalue " + std::to_string(ev[0]));
}

inline bool metric_is_constant(const MetricSpec& metric,
                               const std::vector<Vec>& probes) {
    const Mat g0 = metric.g_eval(probes.front());
    for (const auto& x : probes) {
        const Mat g = metric.g_eval(x);
        if (std::abs(g.xx - g0.xx) > 1e-12 || std::abs(g.xy - g0.xy) > 1e-12 ||
            std::abs(g.yy - g0.yy) > 1e-12)
            return false;
    }
    return true;
}

inline double edge_length(const MetricSpec& metric, const Vec& a,
                          const Vec& b) {
    const Vec mid = 0.5 * (a + b);
    return std::sqrt(std::max(0.0, metric.g_eval(mid).quad(b - a)));
}

}  // namespace detail

// Ground distance between explicit support points. Handles constant metrics
// in closed form and, in one dimension, arbitrary scalar metrics through the
// arclength coordinate z(x) = int sqrt(g). Two-dimensional non-constant
// metrics need the grid-based overload below.
inline GroundMetric ground_distance(const MetricSpec& metric,
                                    const std::vector<Vec>& points) {
    if (points.empty()) throw OtError("ground metric: no support points");
    GroundMetric out;
    out.points = points;
    const int n = out.count();
    out.dist.assign(static_cast<size_t>(n) * n, 0.0);
    for (const auto& x : points) detail::require_spd_metric(metric, x);

    if (detail::metric_is_constant(metric, points)) {
        const Mat g = metric.g_eval(points.front());
        out.method = GroundMethod::euclidean_closed_form;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double d =
                    std::sqrt(std::max(0.0, g.quad(points[i] - points[j])));
                out.dist[static_cast<size_t>(i) * n + j] = d;
                out.dist[static_cast<size_t>(j) * n + i] = d;
            }
        return out;
    }
    if (points.front().n != 1)
        throw OtError(
            "ground metric: non-constant 2-D metrics need the grid-based "
            "geodesic overload");

    // 1-D: z(x) = int_0^x sqrt(g) by fine midpoint quadrature, then
    // d(x, y) = |z(x) - z(y)|.
    out.method = GroundMethod::graph_geodesic;
    double lo = points.front()[0], hi = lo;
    for (const auto& x : points) {
        lo = std::min(lo, x[0]);
        hi = std::max(hi, x[0]);
    }
    const int steps = 1 << 16;
    const double h = (hi - lo) / steps;
    std::vector<double> z(steps + 1, 0.0);
    for (int k = 0; k < steps; ++k) {
        const Vec mid(lo + (k + 0.5) * h);
        z[k + 1] = z[k] + h * std::sqrt(std::max(0.0, metric.g_eval(mid).xx));
    }
    auto z_at = [&](double x) {
        const double s = std::clamp((x - lo) / h, 0.0, double(steps));
        const int k = std::min(static_cast<int>(s), steps - 1);
        return z[k] + (s - k) * (z[k + 1] - z[k]);
    };
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double d = std::abs(z_at(points[i][0]) - z_at(points[j][0]));
            out.dist[static_cast<size_t>(i) * n + j] = d;
            out.dist[static_cast<size_t>(j) * n + i] = d;
        }
    return out;
}

// Ground distance between support points (snapped to nearest grid nodes) for
// non-constant metrics: shortest paths on the 2-neighbor (n=1) / 8-neighbor
// (n=2) grid graph with midpoint metric edge weights, Dijkstra per support
// node.
inline GroundMetric ground_distance(const MetricSpec& metric, const Grid& grid,
                                    const std::vector<Vec>& support) {
    {
        std::vector<Vec> probes;
        for (int k = 0; k < grid.size();
             k += std::max(1, grid.size() / 32))
            probes.push_back(grid.node(k));
        if (grid.dim == 1 || detail::metric_is_constant(metric, probes))
            return ground_distance(metric, support);
    }
    const int n = grid.size();
    for (int idx = 0; idx < n; ++idx)
        detail::require_spd_metric(metric, grid.node(idx));

    struct Edge {
        int to;
        double w;
    };
    std::vector<std::vector<Edge>> adj(n);
    for (int i = 0; i < grid.nx; ++i)
        for (int j = 0; j < grid.ny; ++j)
            for (int di = -1; di <= 1; ++di)
                for (int dj = -1; dj <= 1; ++dj) {
                    if (di == 0 && dj == 0) continue;
                    const int i2 = i + di, j2 = j + dj;
                    if (i2 < 0 || i2 >= grid.nx || j2 < 0 || j2 >= grid.ny)
                        continue;
                    adj[grid.index(i, j)].push_back(
                        {grid.index(i2, j2),
                         detail::edge_length(metric, grid.node(i, j),
                                             grid.node(i2, j2))});
                }

    auto nearest_node = [&](const Vec& x) {
        const int i = std::clamp(
            static_cast<int>(std::lround((x[0] - grid.box.lo[0]) / grid.dx())),
            0, grid.nx - 1);
        const int j =
            grid.dim == 2
                ? std::clamp(static_cast<int>(std::lround(
                                 (x[1] - grid.box.lo[1]) / grid.dy())),
                             0, grid.ny - 1)
                : 0;
        return grid.index(i, j);
    };
    const int s = static_cast<int>(support.size());
    std::vector<int> node_of(s);
    for (int k = 0; k < s; ++k) node_of[k] = nearest_node(support[k]);

    GroundMetric out;
    out.points = support;
    out.method = GroundMethod::graph_geodesic;
    out.dist.assign(static_cast<size_t>(s) * s, 0.0);
    parallel_for(0, s, [&](int64_t src) {
        std::vector<double> d(n, std::numeric_limits<double>::infinity());
        using Item = std::pair<double, int>;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
        d[node_of[src]] = 0;
        pq.push({0.0, node_of[src]});
        while (!pq.empty()) {
            const auto [du, u] = pq.top();
            pq.pop();
            if (du > d[u]) continue;
            for (const auto& e : adj[u])
                if (du + e.w < d[e.to]) {
                    d[e.to] = du + e.w;
                    pq.push({d[e.to], e.to});
                }
        }
        for (int k = 0; k < s; ++k)
            out.dist[static_cast<size_t>(src) * s + k] = d[node_of[k]];
    });
    // enforce exact symmetry (Dijkstra rounding is ~1e-16 but the invariant
    // is exact)
    for (int a = 0; a < s; ++a)
        for (int b = a + 1; b < s; ++b) {
            const double d = 0.5 * (out.dist[static_cast<size_t>(a) * s + b] +
                                    out.dist[static_cast<size_t>(b) * s + a]);
            out.dist[static_cast<size_t>(a) * s + b] = d;
            out.dist[static_cast<size_t>(b) * s + a] = d;
        }
    return out;
}

// Ground distance over all grid nodes.
inline GroundMetric ground_distance(const MetricSpec& metric, const Grid& grid) {
    std::vector<Vec> nodes(grid.size());
    for (int idx = 0; idx < grid.size(); ++idx) nodes[idx] = grid.node(idx);
    if (grid.dim == 1 || detail::metric_is_constant(metric, nodes))
        return ground_distance(metric, nodes);
    return ground_distance(metric, grid, nodes);
}

// ---------------------------------------------------------------------------
// Exact optimal transport: transportation simplex (network simplex on the
// bipartite transportation polytope), north-west-corner start + u/v duals.
// ---------------------------------------------------------------------------

struct TransportPlan {
    std::vector<int> source;
    std::vector<int> target;
    std::vector<double> mass;
    double cost = 0;                // sum pi_ij d^2_ij
    double marginal_residual = 0;   // max L1 marginal defect
};

namespace detail {

struct SimplexCell {
    int i, j;
    double flow;
};

inline TransportPlan transport_simplex(const std::vector<double>& mu,
                                       const std::vector<double>& nu,
                                       const std::function<double(int, int)>& cost,
                                       int n, int m) {
    std::vector<SimplexCell> basis;
    basis.reserve(n + m - 1);
    {
        int i = 0, j = 0;
        double a = mu[0], b = nu[0];
        while (true) {
            const double f = std::min(a, b);
            basis.push_back({i, j, f});
            a -= f;
            b -= f;
            if (i == n - 1 && j == m - 1) break;
            // advance along the exhausted side; ties keep the basis a tree
            if (i < n - 1 && (a <= b || j == m - 1)) {
                ++i;
                a = mu[i];
            } else {
                ++j;
                b = nu[j];
            }
        }
    }

    std::vector<double> u(n), v(m);
    std::vector<char> u_set(n), v_set(m);
    std::vector<std::vector<int>> row_cells(n), col_cells(m);
    auto rebuild_adj = [&] {
        for (auto& r : row_cells) r.clear();
        for (auto& c : col_cells) c.clear();
        for (int k = 0; k < static_cast<int>(basis.size()); ++k) {
            row_cells[basis[k].i].push_back(k);
            col_cells[basis[k].j].push_back(k);
        }
    };

    const int max_iters = 200 * (n + m);
    double scale = 1.0;
    for (int i = 0; i < n; ++i)
        for (int jj = 0; jj < m; ++jj)
            scale = std::max(scale, std::abs(cost(i, jj)));

    for (int iter = 0; iter < max_iters; ++iter) {
        rebuild_adj();
        // duals via traversal of the basis tree
        std::fill(u_set.begin(), u_set.end(), 0);
        std::fill(v_set.begin(), v_set.end(), 0);
        u[basis[0].i] = 0;
        u_set[basis[0].i] = 1;
        std::vector<int> stack = {basis[0].i};  // encoded rows; cols as n+j
        while (!stack.empty()) {
            const int node = stack.back();
            stack.pop_back();
            if (node < n) {
                for (int k : row_cells[node])
                    if (!v_set[basis[k].j]) {
                        v[basis[k].j] = cost(node, basis[k].j) - u[node];
                        v_set[basis[k].j] = 1;
                        stack.push_back(n + basis[k].j);
                    }
            } else {
                const int col = node - n;
                for (int k : col_cells[col])
                    if (!u_set[basis[k].i]) {
                        u[basis[k].i] = cost(basis[k].i, col) - v[col];
                        u_set[basis[k].i] = 1;
                        stack.push_back(basis[k].i);
                    }
            }
        }

        // entering cell: most negative reduced cost
        int ei = -1, ej = -1;
        double best = -1e-11 * scale;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) {
                const double rc = cost(i, j) - u[i] - v[j];
                if (rc < best) {
                    best = rc;
                    ei = i;
                    ej = j;
                }
            }
        if (ei < 0) break;  // optimal

        // cycle: path from row ei to col ej inside the tree
        std::vector<int> parent_cell(n + m, -1);
        std::vector<char> seen(n + m, 0);
        std::vector<int> bfs = {ei};
        seen[ei] = 1;
        while (!bfs.empty()) {
            const int node = bfs.back();
            bfs.pop_back();
            if (node == n + ej) break;
            const auto& cells = node < n ? row_cells[node] : col_cells[node - n];
            for (int k : cells) {
                const int other = node < n ? n + basis[k].j : basis[k].i;
                if (!seen[other]) {
                    seen[other] = 1;
                    parent_cell[other] = k;
                    bfs.push_back(other);
                }
            }
        }
        if (!seen[n + ej])
            throw OtError("exact transport: basis lost connectivity");

        // walk back collecting alternating cells; odd positions give up flow
        std::vector<int> path;  // basis indices from col ej back to row ei
        int node = n + ej;
        while (node != ei) {
            const int k = parent_cell[node];
            path.push_back(k);
            node = (node >= n) ? basis[k].i : n + basis[k].j;
        }
        double theta = std::numeric_limits<double>::infinity();
        int leave = -1;
        for (size_t p = 0; p < path.size(); p += 2) {
            if (basis[path[p]].flow < theta) {
                theta = basis[path[p]].flow;
                leave = path[p];
            }
        }
        for (size_t p = 0; p < path.size(); ++p)
            basis[path[p]].flow += (p % 2 == 0) ? -theta : theta;
        basis[leave] = {ei, ej, theta};
        if (iter + 1 == max_iters)
            throw OtError("exact transport: iteration cap reached");
    }

    TransportPlan plan;
    std::vector<double> row_sum(n, 0.0), col_sum(m, 0.0);
    for (const auto& c : basis) {
        if (c.flow <= 0) continue;
        plan.source.push_back(c.i);
        plan.target.push_back(c.j);
        plan.mass.push_back(c.flow);
        plan.cost += c.flow * cost(c.i, c.j);
        row_sum[c.i] += c.flow;
        col_sum[c.j] += c.flow;
    }
    for (int i = 0; i < n; ++i)
        plan.marginal_residual =
            std::max(plan.marginal_residual, std::abs(row_sum[i] - mu[i]));
    for (int j = 0; j < m; ++j)
        plan.marginal_residual =
            std::max(plan.marginal_residual, std::abs(col_sum[j] - nu[j]));
    return plan;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sinkhorn: log-domain, epsilon scaling, debiased (Sinkhorn divergence)
// ---------------------------------------------------------------------------

namespace detail {

// One half-update: out_j = -eps * LSE_i[(f_i - C(i,j))/eps + log w_i].
inline void sinkhorn_half(const std::vector<double>& f,
                          const std::vector<double>& logw,
                          const std::function<double(int, int)>& cost, int n,
                          int m, double eps, std::vector<double>& out) {
    for (int j = 0; j < m; ++j) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i)
            mx = std::max(mx, (f[i] - cost(i, j)) / eps + logw[i]);
        double s = 0;
        for (int i = 0; i < n; ++i)
            s += std::exp((f[i] - cost(i, j)) / eps + logw[i] - mx);
        out[j] = -eps * (mx + std::log(s));
    }
}

// Dual value <f, mu> + <g, nu> after converging at the target epsilon.
inline double sinkhorn_dual(const std::vector<double>& mu,
                            const std::vector<double>& nu,
                            const std::function<double(int, int)>& cost,
                            double eps_start, double eps_target) {
    const int n = static_cast<int>(mu.size());
    const int m = static_cast<int>(nu.size());
    std::vector<double> logmu(n), lognu(m), f(n, 0.0), g(m, 0.0), tmp;
    for (int i = 0; i < n; ++i) logmu[i] = std::log(mu[i]);
    for (int j = 0; j < m; ++j) lognu[j] = std::log(nu[j]);

    auto swap_cost = [&cost](int j, int i) { return cost(i, j); };
    double eps = eps_start;
    while (true) {
        const int inner = eps > eps_target * 1.0001 ? 10 : 400;
        double change = 0;
        for (int it = 0; it < inner; ++it) {
            sinkhorn_half(f, logmu, cost, n, m, eps, g);
            tmp = f;
            sinkhorn_half(g, lognu, swap_cost, m, n, eps, f);
            change = 0;
            for (int i = 0; i < n; ++i)
                change = std::max(change, std::abs(f[i] - tmp[i]));
            if (eps <= eps_target * 1.0001 && change < 1e-9 * eps) break;
        }
        if (eps <= eps_target * 1.0001) break;
        eps = std::max(eps * 0.5, eps_target);
    }
    double value = 0;
    for (int i = 0; i < n; ++i) value += f[i] * mu[i];
    for (int j = 0; j < m; ++j) value += g[j] * nu[j];
    return value;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// W2 front end
// ---------------------------------------------------------------------------

enum class OtSolver { exact_lp, sinkhorn };

struct W2Result {
    double distance = 0;
    TransportPlan plan;  // populated by the exact solver
    OtSolver solver = OtSolver::exact_lp;
    double epsilon = 0;  // final regularization (sinkhorn)
    double runtime_seconds = 0;
};

// mu/nu are weight vectors over ground.points (zeros allowed).
inline W2Result w2_distance(const std::vector<double>& mu,
                            const std::vector<double>& nu,
                            const GroundMetric& ground, OtSolver solver) {
    const int total = ground.count();
    if (static_cast<int>(mu.size()) != total ||
        static_cast<int>(nu.size()) != total)
        throw OtError("w2_distance: weight vectors do not match the ground "
                      "metric support");
    double ma = 0, mb = 0;
    for (double w : mu) {
        if (w < 0) throw OtError("w2_distance: negative weight");
        ma += w;
    }
    for (double w : nu) {
        if (w < 0) throw OtError("w2_distance: negative weight");
        mb += w;
    }
    if (std::abs(ma - mb) > 1e-8)
        throw OtError("w2_distance: marginal masses differ by " +
                      std::to_string(std::abs(ma - mb)));

    std::vector<int> ia, ib;
    std::vector<double> wa, wb;
    for (int k = 0; k < total; ++k) {
        if (mu[k] > 0) {
            ia.push_back(k);
            wa.push_back(mu[k] / ma);
        }
        if (nu[k] > 0) {
            ib.push_back(k);
            wb.push_back(nu[k] / mb);
        }
    }
    const int n = static_cast<int>(ia.size());
    const int m = static_cast<int>(ib.size());
    if (n == 0 || m == 0) throw OtError("w2_distance: empty support");
    if (solver == OtSolver::exact_lp && std::max(n, m) > 4000)
        throw OtError("w2_distance: exact solver limited to 4000 support "
                      "points");
    if (std::max(n, m) > 20000)
        throw OtError("w2_distance: support exceeds 20000 points");
    auto cost = [&](int i, int j) {
        const double d = ground.distance(ia[i], ib[j]);
        return d * d;
    };

    W2Result out;
    out.solver = solver;
    if (solver == OtSolver::exact_lp) {
        out.plan = detail::transport_simplex(wa, wb, cost, n, m);
        for (auto& s : out.plan.source) s = ia[s];
        for (auto& t : out.plan.target) t = ib[t];
        out.distance = std::sqrt(std::max(0.0, out.plan.cost));
        return out;
    }

    // epsilon target: 1e-3 * median of the squared distances in play
    std::vector<double> sample;
    sample.reserve(static_cast<size_t>(n) * m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) sample.push_back(cost(i, j));
    std::nth_element(sample.begin(), sample.begin() + sample.size() / 2,
                     sample.end());
    const double med = sample[sample.size() / 2];
    const double cmax = *std::max_element(sample.begin(), sample.end());
    const double eps = std::max(1e-3 * med, 1e-12);
    auto cost_aa = [&](int i, int j) {
        const double d = ground.distance(ia[i], ia[j]);
        return d * d;
    };
    auto cost_bb = [&](int i, int j) {
        const double d = ground.distance(ib[i], ib[j]);
        return d * d;
    };
    const double eps0 = std::max(cmax, eps);
    const double value =
        detail::sinkhorn_dual(wa, wb, cost, eps0, eps) -
        0.5 * detail::sinkhorn_dual(wa, wa, cost_aa, eps0, eps) -
        0.5 * detail::sinkhorn_dual(wb, wb, cost_bb, eps0, eps);
    out.epsilon = eps;
    out.distance = std::sqrt(std::max(0.0, value));
    return out;
}

// Convenience: W2 between two discrete measures under a metric, building the
// ground distance over the union support (constant metrics and 1-D scalar
// metrics; 2-D non-constant metrics need grid-based ground metrics).
inline W2Result w2_between(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                           const MetricSpec& metric, OtSolver solver) {
    std::vector<Vec> pts = mu.points;
    pts.insert(pts.end(), nu.points.begin(), nu.points.end());
    const GroundMetric ground = ground_distance(metric, pts);
    std::vector<double> wa(pts.size(), 0.0), wb(pts.size(), 0.0);
    for (int k = 0; k < mu.size(); ++k) wa[k] = mu.weights[k];
    for (int k = 0; k < nu.size(); ++k) wb[mu.size() + k] = nu.weights[k];
    return w2_distance(wa, wb, ground, solver);
}

// ---------------------------------------------------------------------------
// 1-D quantile oracle
// ---------------------------------------------------------------------------

inline constexpr int kQuantileNodes = 10000;

// Monotone-coupling W2 between two sample sets (n = 1). With a constant
// scalar metric g the distance is sqrt(g) times the Euclidean one.
inline double w2_1d_quantile(std::vector<double> a, std::vector<double> b,
                             double scalar_g = 1.0) {
    if (a.size() < 2 || b.size() < 2)
        throw OtError("w2_1d_quantile: need >= 2 samples");
    for (double v : a)
        if (!std::isfinite(v)) throw OtError("w2_1d_quantile: non-finite sample");
    for (double v : b)
        if (!std::isfinite(v)) throw OtError("w2_1d_quantile: non-finite sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    auto quantile = [](const std::vector<double>& xs, double u) {
        const double pos = u * (xs.size() - 1);
        const size_t k = std::min(static_cast<size_t>(pos), xs.size() - 2);
        return xs[k] + (pos - k) * (xs[k + 1] - xs[k]);
    };
    double s = 0;
    for (int k = 0; k < kQuantileNodes; ++k) {
        const double u = (k + 0.5) / kQuantileNodes;
        const double d = quantile(a, u) - quantile(b, u);
        s += d * d;
    }
    return std::sqrt(scalar_g * s / kQuantileNodes);
}

// Same oracle for closed-form quantile functions.
inline double w2_1d_quantile(const std::function<double(double)>& qa,
                             const std::function<double(double)>& qb,
                             double scalar_g = 1.0) {
    double s = 0;
    for (int k = 0; k < kQuantileNodes; ++k) {
        const double u = (k + 0.5) / kQuantileNodes;
        const double d = qa(u) - qb(u);
        if (!std::isfinite(d))
            throw OtError("w2_1d_quantile: non-finite quantile value");
        s += d * d;
    }
    return std::sqrt(scalar_g * s / kQuantileNodes);
}

namespace detail {

// Inverse CDF of a 1-D grid density by trapezoid accumulation.
struct GridQuantile {
    std::vector<double> x, cdf;

    explicit GridQuantile(const DensityField& d) {
        const Grid& g = d.grid;
        if (g.dim != 1)
            throw OtError("grid quantile: one-dimensional densities only");
        x.resize(g.nx);
        cdf.resize(g.nx);
        for (int i = 0; i < g.nx; ++i) x[i] = g.node(i, 0)[0];
        cdf[0] = 0;
        for (int i = 1; i < g.nx; ++i)
            cdf[i] = cdf[i - 1] +
                     0.5 * (d.values[i - 1] + d.values[i]) * (x[i] - x[i - 1]);
        const double total = cdf.back();
        if (!(total > 0)) throw OtError("grid quantile: nonpositive mass");
        for (auto& c : cdf) c /= total;
    }

    double operator()(double u) const {
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        if (it == cdf.begin()) return x.front();
        if (it == cdf.end()) return x.back();
        const size_t k = it - cdf.begin();
        const double span = cdf[k] - cdf[k - 1];
        const double f = span > 0 ? (u - cdf[k - 1]) / span : 0.0;
        return x[k - 1] + f * (x[k] - x[k - 1]);
    }
};

}  // namespace detail

// W2,G between two 1-D grid densities via inverse CDFs; supports arbitrary
// scalar metrics through the arclength coordinate z(x) = int sqrt(g).
inline double w2_1d_densities(const DensityField& da, const DensityField& db,
                              const MetricSpec& metric) {
    const detail::GridQuantile qa(da), qb(db);
    const Box& box = da.grid.box;
    const int steps = 1 << 15;
    const double lo = box.lo[0], h = (box.hi[0] - lo) / steps;
    std::vector<double> z(steps + 1, 0.0);
    for (int k = 0; k < steps; ++k) {
        const Vec mid(lo + (k + 0.5) * h);
        z[k + 1] = z[k] + h * std::sqrt(std::max(0.0, metric.g_eval(mid).xx));
    }
    auto z_at = [&](double x) {
        const double s = std::clamp((x - lo) / h, 0.0, double(steps));
        const int k = std::min(static_cast<int>(s), steps - 1);
        return z[k] + (s - k) * (z[k + 1] - z[k]);
    };
    double s = 0;
    for (int k = 0; k < kQuantileNodes; ++k) {
        const double u = (k + 0.5) / kQuantileNodes;
        const double d = z_at(qa(u)) - z_at(qb(u));
        s += d * d;
    }
    return std::sqrt(s / kQuantileNodes);
}

// ---------------------------------------------------------------------------
// Metric derivative
// ---------------------------------------------------------------------------

// Formula estimator: |p'|(t) = sqrt(int <G Sigma grad log l, Sigma grad log l> p dx).
inline double metric_derivative(const DiffusionProblem& problem,
                                const LikelihoodField& lik,
                                const DensityField& density) {
    return std::sqrt(
        fisher_quadratic_form(lik, density, problem,
                              FisherWeight::sigma_g_sigma)
            .value);
}

inline double metric_derivative(const DiffusionProblem& problem,
                                const LikelihoodField& lik) {
    return std::sqrt(
        fisher_quadratic_form(lik, problem, FisherWeight::sigma_g_sigma)
            .value);
}

struct MetricDerivativeTable {
    double time = 0;
    std::vector<double> h;
    std::vector<double> ratio;  // W2,G(P_{t+h}, P_t) / h
    double extrapolated = 0;    // two-point Richardson from the smallest pair
};

// Finite-difference estimator from stored density slices. Slices must exist
// at t and at every t + h (1e-9 time tolerance).
inline MetricDerivativeTable metric_derivative_fd(
    const DiffusionProblem& problem, const std::vector<DensityField>& path,
    double t, const std::vector<double>& h_list) {
    if (h_list.size() < 2)
        throw OtError("metric_derivative_fd: need >= 2 step sizes");
    auto slice_at = [&](double time) -> const DensityField& {
        for (const auto& d : path)
            if (std::abs(d.time - time) <= 1e-9) return d;
        throw OtError("metric_derivative_fd: no stored slice at t = " +
                      std::to_string(time) + " (insufficient slices)");
    };
    const DensityField& base = slice_at(t);
    MetricDerivativeTable out;
    out.time = t;
    out.h = h_list;
    std::sort(out.h.rbegin(), out.h.rend());
    for (double h : out.h) {
        const DensityField& ahead = slice_at(t + h);
        double w;
        if (problem.dimension == 1) {
            w = w2_1d_densities(ahead, base, problem.metric);
        } else {
            const auto mu = coarsen_density(ahead);
            const auto nu = coarsen_density(base);
            w = w2_between(mu, nu, problem.metric, OtSolver::exact_lp).distance;
        }
        out.ratio.push_back(w / h);
    }
    const size_t k = out.ratio.size();
    // ratio(h) ~ L + c h: eliminate the linear term from the last two sizes
    const double r1 = out.ratio[k - 2], r2 = out.ratio[k - 1];
    const double h1 = out.h[k - 2], h2 = out.h[k - 1];
    out.extrapolated = r2 + (r2 - r1) * h2 / (h1 - h2);
    return out;
}

inline void write_metric_derivative_csv(
    const std::string& path, const std::vector<MetricDerivativeTable>& tables,
    const std::vector<double>& formula_values) {
    if (tables.size() != formula_values.size())
        throw OtError("metric derivative csv: table/formula size mismatch");
    std::ofstream os(path);
    if (!os) throw OtError("cannot open '" + path + "' for writing");
    os.precision(17);
    os << "t";
    if (!tables.empty())
        for (double h : tables.front().h) os << ",W2G_fd_h" << h;
    os << ",extrapolated,formula_value,relative_gap\n";
    for (size_t k = 0; k < tables.size(); ++k) {
        os << tables[k].time;
        for (double r : tables[k].ratio) os << "," << r;
        const double gap =
            std::abs(tables[k].extrapolated - formula_values[k]) /
            std::max(1e-300, std::abs(formula_values[k]));
        os << "," << tables[k].extrapolated << "," << formula_values[k] << ","
           << gap << "\n";
    }
}

}  // namespace wflow
