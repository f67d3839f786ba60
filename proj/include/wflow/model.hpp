#pragma once

// Potentials V, volatility fields Sigma, the reference geometry A / G = A^{-1},
// the invariant density q = e^{-V}, and the admissibility checks.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "wflow/linalg.hpp"
#include "wflow/rng.hpp"

namespace wflow {

class ModelError : public std::runtime_error {
  public:
    explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

struct PotentialSpec {
    std::function<double(const Vec&)> eval;
    std::function<Vec(const Vec&)> gradient;
    std::string name;
};

struct SpdMatrixField {
    std::function<Mat(const Vec&)> eval;
    // Analytic divergence (div Sigma)_i = sum_j d_j Sigma_ij if available.
    std::function<Vec(const Vec&)> divergence_analytic;
    double ellipticity_lo = 1.0;  // c
    double ellipticity_hi = 1.0;  // C
    std::string name;

    Vec divergence(const Vec& x) const {
        if (divergence_analytic) return divergence_analytic(x);
        return divergence_fd(x);
    }

    // Central differences with relative step h = 1e-4 (1 + |x|).
    Vec divergence_fd(const Vec& x) const {
        const double h = 1e-4 * (1.0 + x.norm());
        Vec d = Vec::zero(x.n);
        for (int j = 0; j < x.n; ++j) {
            Vec xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            const Mat mp = eval(xp);
            const Mat mm = eval(xm);
            // column j of the (symmetric) matrix
            if (x.n == 1) {
                d[0] += (mp.xx - mm.xx) / (2 * h);
            } else {
                const double dxj0 = (j == 0) ? (mp.xx - mm.xx) : (mp.xy - mm.xy);
                const double dxj1 = (j == 0) ? (mp.xy - mm.xy) : (mp.yy - mm.yy);
                d[0] += dxj0 / (2 * h);
                d[1] += dxj1 / (2 * h);
            }
        }
        return d;
    }
};

struct MetricSpec {
    SpdMatrixField a_field;

    Mat g_eval(const Vec& x) const { return inverse_spd(a_field.eval(x)); }
    double bound_lo() const { return a_field.ellipticity_lo; }  // c_A
    double bound_hi() const { return a_field.ellipticity_hi; }  // C_A
};

struct GaussianComponent {
    double weight = 1.0;
    Vec mean;
    Vec variance;  // per-axis
};

// Mixture of axis-aligned Gaussians; strictly positive with finite second
// moment and finite relative entropy by construction.
struct InitialLaw {
    std::vector<GaussianComponent> components;

    double density(const Vec& x) const {
        double p = 0;
        for (const auto& c : components) {
            double e = 0, norm = 1;
            for (int i = 0; i < x.n; ++i) {
                const double d = x[i] - c.mean[i];
                e += d * d / c.variance[i];
                norm *= std::sqrt(2 * M_PI * c.variance[i]);
            }
            p += c.weight * std::exp(-0.5 * e) / norm;
        }
        return p;
    }

    Vec sample(CounterRng& rng, int dim) const {
        double u = rng.uniform();
        const GaussianComponent* pick = &components.back();
        for (const auto& c : components) {
            if (u < c.weight) {
                pick = &c;
                break;
            }
            u -= c.weight;
        }
        Vec x = Vec::zero(dim);
        for (int i = 0; i < dim; ++i)
            x[i] = pick->mean[i] + std::sqrt(pick->variance[i]) * rng.normal();
        return x;
    }

    static InitialLaw gaussian(const Vec& mean, const Vec& variance) {
        return InitialLaw{{GaussianComponent{1.0, mean, variance}}};
    }
};

struct Box {
    Vec lo, hi;

    bool contains(const Vec& x) const {
        for (int i = 0; i < x.n; ++i)
            if (x[i] < lo[i] || x[i] > hi[i]) return false;
        return true;
    }
    double extent(int axis) const { return hi[axis] - lo[axis]; }
};

struct DiffusionProblem {
    PotentialSpec potential;
    SpdMatrixField sigma;
    MetricSpec metric;
    double horizon = 1.0;
    int dimension = 1;
    InitialLaw initial_law;
    Box domain_box;
};

inline Vec drift(const DiffusionProblem& problem, const Vec& x) {
    const Vec div = problem.sigma.divergence(x);
    if (!div.finite())
        throw ModelError("drift: non-finite divergence of volatility '" +
                         problem.sigma.name + "'");
    const Vec grad_v = problem.potential.gradient(x);
    if (!grad_v.finite())
        throw ModelError("drift: non-finite gradient of potential '" +
                         problem.potential.name + "'");
    const Vec out = div - problem.sigma.eval(x).apply(grad_v);
    if (!out.finite())
        throw ModelError("drift: non-finite value from volatility '" +
                         problem.sigma.name + "'");
    return out;
}

// Unnormalized invariant density q(x) = e^{-V(x)}; the reference measure may
// be sigma-finite (V = 0 gives Lebesgue).
inline double invariant_density(const DiffusionProblem& problem, const Vec& x) {
    return std::exp(-problem.potential.eval(x));
}

// ---------------------------------------------------------------------------
// Admissibility

enum class Verdict { pass, fail, assumed };

struct ConditionResult {
    std::string condition;  // e.g. "(iii) uniform ellipticity"
    Verdict verdict = Verdict::pass;
    std::string detail;
    std::optional<Vec> witness;
};

struct AdmissibilityReport {
    std::vector<ConditionResult> conditions;
    double measured_c = 0, measured_C = 0;
    double initial_entropy = 0;

    bool all_pass() const {
        for (const auto& c : conditions)
            if (c.verdict == Verdict::fail) return false;
        return true;
    }
    const ConditionResult* first_failure() const {
        for (const auto& c : conditions)
            if (c.verdict == Verdict::fail) return &c;
        return nullptr;
    }
};

namespace detail {

// Kronecker (additive golden-ratio) sequence: low-discrepancy points in the
// box, randomized by the seed.
inline Vec quasi_point(const Box& box, int dim, int k, double shift0,
                       double shift1) {
    static constexpr double alpha0 = 0.7548776662466927;  // 1/plastic number
    static constexpr double alpha1 = 0.5698402909980532;
    Vec x = Vec::zero(dim);
    const double f0 = shift0 + k * alpha0;
    const double f1 = shift1 + k * alpha1;
    x[0] = box.lo[0] + (f0 - std::floor(f0)) * box.extent(0);
    if (dim == 2) x[1] = box.lo[1] + (f1 - std::floor(f1)) * box.extent(1);
    return x;
}

inline std::string format_point(const Vec& x) {
    std::ostringstream os;
    os << "(" << x[0];
    if (x.n == 2) os << ", " << x[1];
    os << ")";
    return os.str();
}

}  // namespace detail

// Relative entropy H(P0|Q) of the initial law by grid quadrature on the box.
inline double initial_relative_entropy(const DiffusionProblem& problem,
                                       int nodes_per_axis = 256) {
    const int n = problem.dimension;
    const Box& box = problem.domain_box;
    const int nx = nodes_per_axis;
    const int ny = (n == 2) ? nodes_per_axis : 1;
    const double hx = box.extent(0) / (nx - 1);
    const double hy = (n == 2) ? box.extent(1) / (ny - 1) : 1.0;
    double h_sum = 0;
    for (int i = 0; i < nx; ++i) {
        const double wx = (i == 0 || i == nx - 1) ? 0.5 : 1.0;
        for (int j = 0; j < ny; ++j) {
            const double wy = (n == 2 && (j == 0 || j == ny - 1)) ? 0.5 : 1.0;
            Vec x = Vec::zero(n);
            x[0] = box.lo[0] + i * hx;
            if (n == 2) x[1] = box.lo[1] + j * hy;
            const double p = problem.initial_law.density(x);
            if (p <= 0) continue;
            const double contrib =
                p * (std::log(p) + problem.potential.eval(x)) * wx * wy;
            h_sum += contrib;
        }
    }
    return h_sum * hx * hy;
}

inline AdmissibilityReport check_admissibility(const DiffusionProblem& problem,
                                               int sample_count,
                                               uint64_t rng_seed) {
    if (sample_count < 100)
        throw ModelError("check_admissibility: sample_count must be >= 100");
    AdmissibilityReport report;
    const int n = problem.dimension;
    CounterRng rng(rng_seed, 0);
    const double shift0 = rng.uniform(), shift1 = rng.uniform();

    // Probe set: low-discrepancy interior points plus box center, corners and
    // axis points (catches degeneracies at symmetric loci like the origin).
    std::vector<Vec> probes;
    for (int k = 0; k < sample_count; ++k)
        probes.push_back(detail::quasi_point(problem.domain_box, n, k, shift0,
                                             shift1));
    {
        const Box& b = problem.domain_box;
        Vec center = Vec::zero(n);
        for (int i = 0; i < n; ++i) center[i] = 0.5 * (b.lo[i] + b.hi[i]);
        probes.push_back(center);
        for (int i = 0; i < n; ++i) {
            Vec e1 = center, e2 = center;
            e1[i] = b.lo[i];
            e2[i] = b.hi[i];
            probes.push_back(e1);
            probes.push_back(e2);
        }
    }

    // (i) symmetric positive definite at probe points. Symmetry is enforced by
    // the storage format; positivity is checked via eigenvalues.
    {
        ConditionResult r{"(i) symmetric positive definite", Verdict::pass, "", {}};
        for (const auto& x : probes) {
            const double lam = sym_eigenvalues(problem.sigma.eval(x))[0];
            if (!(lam > 0)) {
                r.verdict = Verdict::fail;
                r.detail = "non-positive eigenvalue " + std::to_string(lam) +
                           " at " + detail::format_point(x);
                r.witness = x;
                break;
            }
        }
        report.conditions.push_back(r);
    }

    // (ii) smoothness: accepted for C^2 closures, cross-checked by comparing
    // the analytic divergence against central finite differences.
    {
        ConditionResult r{"(ii) smooth components", Verdict::assumed,
                          "C^2 closures accepted", {}};
        if (problem.sigma.divergence_analytic) {
            double worst = 0;
            Vec worst_x = probes[0];
            for (int k = 0; k < 50; ++k) {
                const Vec& x = probes[static_cast<size_t>(k) % probes.size()];
                const Vec da = problem.sigma.divergence_analytic(x);
                const Vec df = problem.sigma.divergence_fd(x);
                const double err = (da - df).norm() / (1.0 + da.norm());
                if (err > worst) {
                    worst = err;
                    worst_x = x;
                }
            }
            if (worst > 1e-5) {
                r.verdict = Verdict::fail;
                r.detail = "analytic divergence deviates from finite "
                           "differences by " + std::to_string(worst) + " at " +
                           detail::format_point(worst_x);
                r.witness = worst_x;
            } else {
                r.detail = "analytic divergence matches finite differences "
                           "(max relative deviation " + std::to_string(worst) +
                           ")";
            }
        }
        report.conditions.push_back(r);
    }

    // (iii) uniform ellipticity on quasi-random (x, xi) pairs.
    {
        ConditionResult r{"(iii) uniform ellipticity", Verdict::pass, "", {}};
        const double c = problem.sigma.ellipticity_lo;
        const double C = problem.sigma.ellipticity_hi;
        double min_q = std::numeric_limits<double>::infinity();
        double max_q = 0;
        for (const auto& x : probes) {
            Vec xi = Vec::zero(n);
            if (n == 1) {
                xi[0] = 1.0;
            } else {
                const double th = 2 * M_PI * rng.uniform();
                xi[0] = std::cos(th);
                xi[1] = std::sin(th);
            }
            // For n=2 also probe the eigen-extremes directly.
            const Mat s = problem.sigma.eval(x);
            const auto lam = sym_eigenvalues(s);
            const double q_lo = std::min(s.quad(xi), lam[0]);
            const double q_hi = std::max(s.quad(xi), lam[1]);
            if (q_lo < min_q) min_q = q_lo;
            if (q_hi > max_q) max_q = q_hi;
            const double tol = 1e-9 * (1.0 + C);
            if (q_lo < c - tol || q_hi > C + tol) {
                r.verdict = Verdict::fail;
                r.detail = "Rayleigh quotient outside [" + std::to_string(c) +
                           ", " + std::to_string(C) + "]: eigenvalue range [" +
                           std::to_string(q_lo) + ", " + std::to_string(q_hi) +
                           "] at " + detail::format_point(x);
                r.witness = x;
                break;
            }
        }
        report.measured_c = min_q;
        report.measured_C = max_q;
        if (r.verdict == Verdict::pass)
            r.detail = "measured eigenvalue range [" + std::to_string(min_q) +
                       ", " + std::to_string(max_q) + "]";
        report.conditions.push_back(r);
    }

    report.conditions.push_back({"(iv) strong SDE solution", Verdict::assumed,
                                 "existence statement, not testable", {}});
    report.conditions.push_back({"(v) classical FP solution", Verdict::assumed,
                                 "existence statement, not testable", {}});
    report.conditions.push_back(
        {"(vi) W2-absolutely continuous curve", Verdict::assumed,
         "exercised indirectly by the metric-derivative cross-check", {}});

    // (vii) finite initial relative entropy, by grid quadrature.
    {
        ConditionResult r{"(vii) finite initial entropy", Verdict::pass, "", {}};
        const double h = initial_relative_entropy(problem);
        report.initial_entropy = h;
        if (!std::isfinite(h)) {
            r.verdict = Verdict::fail;
            r.detail = "H(P0|Q) quadrature did not converge";
        } else {
            r.detail = "H(P0|Q) = " + std::to_string(h);
        }
        report.conditions.push_back(r);
    }

    // Integrability of e^{-|x|^2 - V} on the truncated domain.
    {
        ConditionResult r{"integrability of e^{-|x|^2-V}", Verdict::pass, "", {}};
        double total = 0;
        bool finite = true;
        for (const auto& x : probes) {
            const double v = std::exp(-x.norm2() - problem.potential.eval(x));
            if (!std::isfinite(v)) {
                finite = false;
                r.witness = x;
                break;
            }
            total += v;
        }
        double cell = problem.domain_box.extent(0);
        if (n == 2) cell *= problem.domain_box.extent(1);
        total *= cell / static_cast<double>(probes.size());
        if (!finite || !std::isfinite(total)) {
            r.verdict = Verdict::fail;
            r.detail = "integrand not finite";
        } else {
            r.detail = "integral approx " + std::to_string(total);
        }
        report.conditions.push_back(r);
    }

    return report;
}

// ---------------------------------------------------------------------------
// Registry

// Potentials: "zero", "quadratic(kappa)", "double_well(a,b)".
inline PotentialSpec make_potential(const std::string& name,
                                    const std::vector<double>& params) {
    if (name == "zero") {
        return {[](const Vec&) { return 0.0; },
                [](const Vec& x) { return Vec::zero(x.n); }, "zero"};
    }
    if (name == "quadratic") {
        const double kappa = params.empty() ? 1.0 : params[0];
        return {[kappa](const Vec& x) { return 0.5 * kappa * x.norm2(); },
                [kappa](const Vec& x) { return kappa * x; }, "quadratic"};
    }
    if (name == "double_well") {
        const double a = params.size() > 0 ? params[0] : 0.25;
        const double b = params.size() > 1 ? params[1] : 1.0;
        return {[a, b](const Vec& x) {
                    double v = 0;
                    for (int i = 0; i < x.n; ++i) {
                        const double d = x[i] * x[i] - b;
                        v += a * d * d;
                    }
                    return v;
                },
                [a, b](const Vec& x) {
                    Vec g = Vec::zero(x.n);
                    for (int i = 0; i < x.n; ++i)
                        g[i] = 4 * a * x[i] * (x[i] * x[i] - b);
                    return g;
                },
                "double_well"};
    }
    throw ModelError("unknown potential '" + name + "'");
}

// Volatilities: "identity", "scalar_sine(base,amp,freq)", "diag_trig",
// "gaussian_bump(base,amp)". All are scalar or diagonal fields; general SPD
// fields can be supplied as closures in library mode.
inline SpdMatrixField make_volatility(const std::string& name,
                                      const std::vector<double>& params,
                                      int dim) {
    if (name == "identity") {
        SpdMatrixField f;
        f.eval = [dim](const Vec&) { return Mat::identity(dim); };
        f.divergence_analytic = [dim](const Vec&) { return Vec::zero(dim); };
        f.ellipticity_lo = f.ellipticity_hi = 1.0;
        f.name = "identity";
        return f;
    }
    if (name == "scalar_sine") {
        const double base = params.size() > 0 ? params[0] : 2.0;
        const double amp = params.size() > 1 ? params[1] : 1.0;
        const double freq = params.size() > 2 ? params[2] : 1.0;
        if (base - std::abs(amp) <= 0)
            throw ModelError("scalar_sine: base must exceed |amp|");
        SpdMatrixField f;
        f.eval = [base, amp, freq, dim](const Vec& x) {
            return Mat::identity(dim).scaled(base + amp * std::sin(freq * x[0]));
        };
        f.divergence_analytic = [amp, freq, dim](const Vec& x) {
            Vec d = Vec::zero(dim);
            d[0] = amp * freq * std::cos(freq * x[0]);
            return d;
        };
        f.ellipticity_lo = base - std::abs(amp);
        f.ellipticity_hi = base + std::abs(amp);
        f.name = "scalar_sine";
        return f;
    }
    if (name == "diag_trig") {
        SpdMatrixField f;
        if (dim == 1) {
            f.eval = [](const Vec& x) { return Mat(2.0 + std::sin(x[0])); };
            f.divergence_analytic = [](const Vec& x) {
                return Vec(std::cos(x[0]));
            };
        } else {
            f.eval = [](const Vec& x) {
                return Mat::diag(2.0 + std::sin(x[0]), 2.0 + std::cos(x[1]));
            };
            f.divergence_analytic = [](const Vec& x) {
                return Vec(std::cos(x[0]), -std::sin(x[1]));
            };
        }
        f.ellipticity_lo = 1.0;
        f.ellipticity_hi = 3.0;
        f.name = "diag_trig";
        return f;
    }
    if (name == "gaussian_bump") {
        const double base = params.size() > 0 ? params[0] : 1.0;
        const double amp = params.size() > 1 ? params[1] : 1.0;
        if (base <= 0 || base + amp <= 0)
            throw ModelError("gaussian_bump: field must stay positive");
        SpdMatrixField f;
        f.eval = [base, amp, dim](const Vec& x) {
            return Mat::identity(dim).scaled(base +
                                             amp * std::exp(-0.5 * x.norm2()));
        };
        f.divergence_analytic = [amp, dim](const Vec& x) {
            const double e = std::exp(-0.5 * x.norm2());
            Vec d = Vec::zero(dim);
            for (int i = 0; i < dim; ++i) d[i] = -amp * x[i] * e;
            return d;
        };
        f.ellipticity_lo = std::min(base, base + amp);
        f.ellipticity_hi = std::max(base, base + amp);
        f.name = "gaussian_bump";
        return f;
    }
    throw ModelError("unknown volatility '" + name + "'");
}

struct RegistryEntry {
    std::string name;
    std::string kind;  // "potential" or "volatility"
    std::string params;
};

inline std::vector<RegistryEntry> model_registry() {
    return {
        {"zero", "potential", ""},
        {"quadratic", "potential", "kappa"},
        {"double_well", "potential", "a, b"},
        {"identity", "volatility", ""},
        {"scalar_sine", "volatility", "base, amp, freq"},
        {"diag_trig", "volatility", ""},
        {"gaussian_bump", "volatility", "base, amp"},
    };
}

}  // namespace wflow
