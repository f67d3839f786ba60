#pragma once

// Entropy and Fisher-information functionals:
//   H(P|Q)   = int log(p/q) p dx        (free energy: internal + potential)
//   I_W(P|Q) = int <grad log l, W grad log l> p dx,  W in {Sigma, A, Sigma G Sigma}
//   Fbar_s   = int_0^s <grad log lbar_u, Sigma grad log lbar_u>(Xbar_u) du
// Grid quadrature is the primary estimator; a Gaussian-KDE particle estimator
// serves as a cross-check.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "wflow/fokker_planck.hpp"
#include "wflow/model.hpp"
#include "wflow/parallel.hpp"
#include "wflow/sde.hpp"

namespace wflow {

class FunctionalError : public std::runtime_error {
  public:
    explicit FunctionalError(const std::string& what)
        : std::runtime_error(what) {}
};

enum class EntropyEstimator { grid_quadrature, particle_kde };

struct EntropyValue {
    double value = 0;  // +infinity sentinel when a quadrature cell blows up
    double internal_energy = 0;   // int p log p dx
    double potential_energy = 0;  // int V p dx
    EntropyEstimator estimator = EntropyEstimator::grid_quadrature;
    double stderr_ = 0;  // zero for the deterministic grid estimator

    bool finite() const { return std::isfinite(value); }
};

enum class FisherWeight { sigma, a_metric, sigma_g_sigma };

struct FisherValue {
    double value = 0;
    FisherWeight quadratic_form = FisherWeight::sigma;
    EntropyEstimator estimator = EntropyEstimator::grid_quadrature;
};

namespace detail {

// Trapezoid weight for node k on one axis (1/2 at the boundary).
inline double axis_weight(int k, int count) {
    return (k == 0 || k == count - 1) ? 0.5 : 1.0;
}

inline double node_weight(const Grid& g, int idx) {
    if (g.dim == 1) return axis_weight(idx, g.nx) * g.dx();
    const int i = idx % g.nx, j = idx / g.nx;
    return axis_weight(i, g.nx) * axis_weight(j, g.ny) * g.dx() * g.dy();
}

}  // namespace detail

// Relative entropy of a grid density against q = e^{-V}, returned together
// with its free-energy split. The split and the direct quadrature of
// p log(p/q) agree to machine precision by construction; both are computed
// and cross-checked.
inline EntropyValue relative_entropy(const DensityField& density,
                                     const DiffusionProblem& problem) {
    const Grid& g = density.grid;
    EntropyValue out;
    double direct = 0;
    for (int idx = 0; idx < g.size(); ++idx) {
        const double p = density.values[idx];
        const double w = detail::node_weight(g, idx);
        if (p < 0)
            throw FunctionalError(
                "relative_entropy: negative density at node " +
                std::to_string(idx));
        if (p == 0) continue;  // p log p -> 0
        const Vec x = g.node(idx);
        const double v = problem.potential.eval(x);
        const double cell = w * p * (std::log(p) + v);
        if (std::abs(cell) > 1e6) {
            out.value = std::numeric_limits<double>::infinity();
            return out;
        }
        out.internal_energy += w * p * std::log(p);
        out.potential_energy += w * p * v;
        direct += cell;
    }
    out.value = out.internal_energy + out.potential_energy;
    if (std::abs(direct - out.value) >
        1e-10 * std::max(1.0, std::abs(out.value)))
        throw FunctionalError(
            "relative_entropy: free-energy split disagrees with direct "
            "quadrature");
    return out;
}

// Particle estimator: Gaussian KDE with Silverman bandwidth, entropy via
// resubstitution, H = mean(log phat(X_i) + V(X_i)). Subsamples to keep the
// pairwise kernel evaluation affordable; the grid estimator stays primary.
inline EntropyValue particle_relative_entropy(const std::vector<Vec>& points,
                                              const DiffusionProblem& problem,
                                              int max_points = 6000) {
    const int n_all = static_cast<int>(points.size());
    if (n_all < 16)
        throw FunctionalError("particle_relative_entropy: too few particles");
    const int stride = std::max(1, n_all / max_points);
    std::vector<Vec> xs;
    for (int i = 0; i < n_all; i += stride) xs.push_back(points[i]);
    const int n = static_cast<int>(xs.size());
    const int dim = problem.dimension;

    Vec h = Vec::zero(dim);
    for (int a = 0; a < dim; ++a) {
        double m = 0, ss = 0;
        for (const auto& x : xs) m += x[a];
        m /= n;
        for (const auto& x : xs) ss += (x[a] - m) * (x[a] - m);
        const double sd = std::sqrt(ss / (n - 1));
        h[a] = 1.06 * sd * std::pow(static_cast<double>(n),
                                    -1.0 / (4.0 + dim));
    }

    const double log_norm =
        -0.5 * dim * std::log(2.0 * M_PI) -
        (dim == 1 ? std::log(h[0]) : std::log(h[0]) + std::log(h[1]));
    std::vector<double> terms(n);
    parallel_for(0, n, [&](int64_t i) {
        double acc = 0;
        for (int j = 0; j < n; ++j) {
            double e = 0;
            for (int a = 0; a < dim; ++a) {
                const double d = (xs[i][a] - xs[j][a]) / h[a];
                e += d * d;
            }
            acc += std::exp(-0.5 * e);
        }
        terms[i] = std::log(acc / n) + log_norm +
                   problem.potential.eval(xs[i]);
    });

    EntropyValue out;
    out.estimator = EntropyEstimator::particle_kde;
    double m = 0;
    for (double t : terms) m += t;
    out.value = m / n;
    double ss = 0;
    for (double t : terms) ss += (t - out.value) * (t - out.value);
    // Correlated resubstitution terms; the i.i.d. stderr is still the right
    // scale for a cross-check tolerance.
    out.stderr_ = std::sqrt(ss / (n - 1) / n);
    return out;
}

// Fisher quadratic form with a selectable weight matrix.
inline FisherValue fisher_quadratic_form(const LikelihoodField& lik,
                                         const DiffusionProblem& problem,
                                         FisherWeight weight) {
    FisherValue out;
    out.quadratic_form = weight;
    const Grid& g = lik.grid;
    for (int idx = 0; idx < g.size(); ++idx) {
        const Vec x = g.node(idx);
        const Vec grad = lik.grad_log[idx];
        Mat w;
        switch (weight) {
            case FisherWeight::sigma: w = problem.sigma.eval(x); break;
            case FisherWeight::a_metric: w = problem.metric.a_field.eval(x); break;
            case FisherWeight::sigma_g_sigma: {
                const Mat s = problem.sigma.eval(x);
                w = s.mul(problem.metric.g_eval(x)).mul(s);
                break;
            }
        }
        const double p = lik.values[idx] * invariant_density(problem, x);
        out.value += detail::node_weight(g, idx) * p * w.quad(grad);
    }
    if (out.value < 0 && out.value > -1e-14) out.value = 0;
    if (out.value < 0)
        throw FunctionalError("fisher_quadratic_form: negative value");
    return out;
}

// Same form but with an explicitly supplied density (must share the grid).
inline FisherValue fisher_quadratic_form(const LikelihoodField& lik,
                                         const DensityField& density,
                                         const DiffusionProblem& problem,
                                         FisherWeight weight) {
    const Grid& a = lik.grid;
    const Grid& b = density.grid;
    if (a.nx != b.nx || a.ny != b.ny || a.dim != b.dim ||
        (a.box.lo - b.box.lo).norm() > 1e-12 ||
        (a.box.hi - b.box.hi).norm() > 1e-12)
        throw FunctionalError(
            "fisher_quadratic_form: likelihood and density grids differ");
    FisherValue out;
    out.quadratic_form = weight;
    for (int idx = 0; idx < a.size(); ++idx) {
        const Vec x = a.node(idx);
        const Vec grad = lik.grad_log[idx];
        Mat w;
        switch (weight) {
            case FisherWeight::sigma: w = problem.sigma.eval(x); break;
            case FisherWeight::a_metric: w = problem.metric.a_field.eval(x); break;
            case FisherWeight::sigma_g_sigma: {
                const Mat s = problem.sigma.eval(x);
                w = s.mul(problem.metric.g_eval(x)).mul(s);
                break;
            }
        }
        out.value +=
            detail::node_weight(a, idx) * density.values[idx] * w.quad(grad);
    }
    return out;
}

// Per-particle cumulative Fisher information along a reversed-time run.
//
// ens.history holds reversed-time snapshots at s_0 < ... < s_K; lik_path[j]
// is the likelihood ratio at forward time T - s_j. Left-endpoint Riemann
// sums keep the integrand adapted to the reversed filtration.
struct CumulativeFisher {
    std::vector<double> times;                 // reversed times s_j
    std::vector<std::vector<double>> values;   // values[j][particle]
};

inline CumulativeFisher cumulative_fisher(
    const ParticleEnsemble& ens, const std::vector<LikelihoodField>& lik_path,
    const DiffusionProblem& problem, double horizon) {
    const size_t K = ens.history.size();
    if (K < 2)
        throw FunctionalError("cumulative_fisher: need >= 2 checkpoints");
    if (lik_path.size() != K)
        throw FunctionalError(
            "cumulative_fisher: checkpoint/likelihood slice count mismatch (" +
            std::to_string(K) + " vs " + std::to_string(lik_path.size()) + ")");
    for (size_t j = 0; j < K; ++j) {
        const double expect = horizon - ens.history[j].time;
        if (std::abs(lik_path[j].time - expect) > 1e-9)
            throw FunctionalError(
                "cumulative_fisher: slice " + std::to_string(j) +
                " at forward time " + std::to_string(lik_path[j].time) +
                " does not match reversed checkpoint " +
                std::to_string(ens.history[j].time));
    }
    const int N = static_cast<int>(ens.history.front().positions.size());
    CumulativeFisher out;
    out.times.resize(K);
    out.values.assign(K, std::vector<double>(N, 0.0));
    for (size_t j = 0; j < K; ++j) out.times[j] = ens.history[j].time;
    for (size_t j = 0; j + 1 < K; ++j) {
        const double ds = out.times[j + 1] - out.times[j];
        const auto& xs = ens.history[j].positions;
        parallel_for(0, N, [&](int64_t i) {
            const Vec grad = interp_grad_log(lik_path[j], xs[i]);
            const double inc =
                ds * problem.sigma.eval(xs[i]).quad(grad);
            out.values[j + 1][i] = out.values[j][i] + inc;
        });
    }
    return out;
}

struct FunctionalSample {
    double time = 0;
    double entropy = 0;
    double fisher_sigma = 0;
    double fisher_metric = 0;
    double fisher_sigma_g_sigma = 0;
    double stderr_ = 0;
};

inline void write_functionals_csv(const std::string& path,
                                  const std::vector<FunctionalSample>& rows) {
    std::ofstream os(path);
    if (!os) throw FunctionalError("cannot open '" + path + "' for writing");
    os.precision(17);
    os << "t,H,I_sigma,I_G,I_sigma_g_sigma,stderr\n";
    for (const auto& r : rows)
        os << r.time << "," << r.entropy << "," << r.fisher_sigma << ","
           << r.fisher_metric << "," << r.fisher_sigma_g_sigma << ","
           << r.stderr_ << "\n";
}

}  // namespace wflow
