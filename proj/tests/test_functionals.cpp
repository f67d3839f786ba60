#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "wflow/functionals.hpp"
#include "wflow/stats.hpp"

using namespace wflow;

namespace {

DiffusionProblem problem_1d(const std::string& pot,
                            const std::vector<double>& pot_params, double mean,
                            double var, double half_width = 12.0) {
    DiffusionProblem p;
    p.dimension = 1;
    p.potential = make_potential(pot, pot_params);
    p.sigma = make_volatility("identity", {}, 1);
    p.metric = MetricSpec{make_volatility("identity", {}, 1)};
    p.horizon = 2.0;
    p.initial_law = InitialLaw::gaussian(Vec(mean), Vec(var));
    p.domain_box.lo = Vec(-half_width);
    p.domain_box.hi = Vec(half_width);
    return p;
}

DensityField gaussian_grid(const DiffusionProblem& p, int nodes = 2048) {
    return initial_density(p, Grid::make(p.domain_box, 1, nodes));
}

}  // namespace

TEST_CASE("entropy of N(0,1) against Lebesgue") {
    auto p = problem_1d("zero", {}, 0.0, 1.0);
    const auto h = relative_entropy(gaussian_grid(p), p);
    const double oracle = -0.5 * std::log(2.0 * M_PI * std::exp(1.0));
    CHECK(h.value == doctest::Approx(oracle).epsilon(1e-4));
    CHECK(h.estimator == EntropyEstimator::grid_quadrature);
}

TEST_CASE("entropy of N(0,1) against the Gaussian reference") {
    auto p = problem_1d("quadratic", {1.0}, 0.0, 1.0);
    const auto h = relative_entropy(gaussian_grid(p), p);
    CHECK(h.value == doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-6));
}

TEST_CASE("entropy of N(m,s) against the Gaussian reference") {
    const double m = 0.7, s = 2.5;
    auto p = problem_1d("quadratic", {1.0}, m, s);
    const auto h = relative_entropy(gaussian_grid(p), p);
    const double oracle =
        0.5 * (m * m + s - 1.0 - std::log(s)) - 0.5 * std::log(2.0 * M_PI);
    CHECK(h.value == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("free-energy split reproduces the entropy to 1e-10") {
    auto p = problem_1d("double_well", {1.0, 0.5}, 0.3, 1.5);
    const auto h = relative_entropy(gaussian_grid(p), p);
    CHECK(std::abs(h.internal_energy + h.potential_energy - h.value) <= 1e-10);
}

TEST_CASE("negative density is rejected") {
    auto p = problem_1d("zero", {}, 0.0, 1.0);
    auto d = gaussian_grid(p);
    d.values[100] = -1e-5;
    CHECK_THROWS_AS(relative_entropy(d, p), FunctionalError);
}

TEST_CASE("entropy monotonicity along a solver run") {
    auto p = problem_1d("quadratic", {1.0}, 0.5, 4.0);
    auto path = fp_solve(p, gaussian_grid(p, 512), 1.0,
                         uniform_checkpoints(0.0, 1.0, 21));
    double prev = relative_entropy(path.front(), p).value;
    for (size_t k = 1; k < path.size(); ++k) {
        const double cur = relative_entropy(path[k], p).value;
        CHECK(cur <= prev + 1e-8);
        prev = cur;
    }
}

TEST_CASE("particle KDE entropy agrees with grid quadrature") {
    auto p = problem_1d("quadratic", {1.0}, 0.0, 2.0);
    const double grid_value = relative_entropy(gaussian_grid(p), p).value;
    auto ens = sample_initial_ensemble(p, 60000, 321);
    const auto kde = particle_relative_entropy(ens.positions, p);
    CHECK(kde.estimator == EntropyEstimator::particle_kde);
    CHECK(kde.stderr_ > 0);
    CHECK(std::abs(kde.value - grid_value) <= 3 * kde.stderr_ + 5e-3);
}

TEST_CASE("Fisher form on the heat flow: all weights give 1/s") {
    const double s = 3.0;
    auto p = problem_1d("zero", {}, 0.0, s);
    const auto lik = likelihood_ratio(gaussian_grid(p), p);
    const auto i_sigma = fisher_quadratic_form(lik, p, FisherWeight::sigma);
    const auto i_a = fisher_quadratic_form(lik, p, FisherWeight::a_metric);
    const auto i_sgs =
        fisher_quadratic_form(lik, p, FisherWeight::sigma_g_sigma);
    CHECK(i_sigma.value == doctest::Approx(1.0 / s).epsilon(1e-8));
    CHECK(std::abs(i_sigma.value - i_a.value) <= 1e-12);
    CHECK(std::abs(i_sigma.value - i_sgs.value) <= 1e-12);
}

TEST_CASE("Fisher form on the OU benchmark: (s-1)^2/s") {
    const double s = 2.0;
    auto p = problem_1d("quadratic", {1.0}, 0.0, s);
    const auto lik = likelihood_ratio(gaussian_grid(p), p);
    const auto v = fisher_quadratic_form(lik, p, FisherWeight::sigma);
    CHECK(v.value == doctest::Approx((s - 1) * (s - 1) / s).epsilon(1e-8));
}

TEST_CASE("constant likelihood ratio has zero Fisher information") {
    auto p = problem_1d("quadratic", {1.0}, 0.0, 1.0);
    auto d = gaussian_grid(p);
    auto lik = likelihood_ratio(d, p);
    for (auto& v : lik.values) v = 2.0;
    for (auto& v : lik.log_values) v = std::log(2.0);
    for (auto& g : lik.grad_log) g = Vec::zero(1);
    for (auto w : {FisherWeight::sigma, FisherWeight::a_metric,
                   FisherWeight::sigma_g_sigma})
        CHECK(fisher_quadratic_form(lik, d, p, w).value == 0.0);
}

TEST_CASE("explicit-density Fisher form rejects mismatched grids") {
    auto p = problem_1d("zero", {}, 0.0, 1.0);
    const auto lik = likelihood_ratio(gaussian_grid(p, 2048), p);
    const auto other = gaussian_grid(p, 1024);
    CHECK_THROWS_WITH_AS(
        fisher_quadratic_form(lik, other, p, FisherWeight::sigma),
        doctest::Contains("grids differ"), FunctionalError);
}

TEST_CASE("cumulative Fisher is zero for a spatially constant likelihood") {
    auto p = problem_1d("zero", {}, 0.0, 1.0);
    const Grid g = Grid::make(p.domain_box, 1, 64);
    ParticleEnsemble ens;
    std::vector<LikelihoodField> path;
    for (int j = 0; j < 3; ++j) {
        const double s = 0.1 * j;
        ens.history.push_back({s, {Vec(0.3), Vec(-1.2)}});
        LikelihoodField lik;
        lik.grid = g;
        lik.time = 0.2 - s;
        lik.values.assign(g.size(), 1.0);
        lik.log_values.assign(g.size(), 0.0);
        lik.grad_log.assign(g.size(), Vec::zero(1));
        path.push_back(lik);
    }
    const auto f = cumulative_fisher(ens, path, p, 0.2);
    for (const auto& slice : f.values)
        for (double v : slice) CHECK(v == 0.0);
}

TEST_CASE("cumulative Fisher rejects misaligned checkpoints") {
    auto p = problem_1d("zero", {}, 0.0, 1.0);
    const Grid g = Grid::make(p.domain_box, 1, 64);
    ParticleEnsemble ens;
    std::vector<LikelihoodField> path;
    for (int j = 0; j < 2; ++j) {
        ens.history.push_back({0.1 * j, {Vec(0.0)}});
        LikelihoodField lik;
        lik.grid = g;
        lik.time = 0.05 * j;  // should be 0.2 - 0.1 j
        lik.values.assign(g.size(), 1.0);
        lik.log_values.assign(g.size(), 0.0);
        lik.grad_log.assign(g.size(), Vec::zero(1));
        path.push_back(lik);
    }
    CHECK_THROWS_WITH_AS(cumulative_fisher(ens, path, p, 0.2),
                         doctest::Contains("does not match"), FunctionalError);
}

namespace {

// Shared pipeline: solve the forward density flow, reverse the stored
// particle history, and accumulate Fbar along it.
double mean_terminal_cumulative_fisher(const DiffusionProblem& p, double T,
                                       int slices, int particles,
                                       double* stderr_out) {
    const Grid g = Grid::make(p.domain_box, 1, 1024);
    const auto times = uniform_checkpoints(0.0, T, slices + 1);
    auto dens_path = fp_solve(p, initial_density(p, g), T, times);
    REQUIRE(dens_path.size() == times.size());

    ParticleEnsemble fwd = sample_initial_ensemble(p, particles, 2024);
    StepConfig cfg;
    cfg.dt = 1e-3;
    simulate_forward(fwd, p, cfg, T, times);
    REQUIRE(fwd.history.size() == times.size());

    // Reversed-time view: sbar_j = T - t_{K-j}.
    ParticleEnsemble rev;
    std::vector<LikelihoodField> lik_path;
    for (size_t j = 0; j < times.size(); ++j) {
        const size_t k = times.size() - 1 - j;
        rev.history.push_back({T - fwd.history[k].time,
                               fwd.history[k].positions});
        lik_path.push_back(likelihood_ratio(dens_path[k], p));
    }
    const auto f = cumulative_fisher(rev, lik_path, p, T);
    const auto ms = mean_stderr(f.values.back());
    if (stderr_out) *stderr_out = ms.stderr_;
    return ms.mean;
}

}  // namespace

TEST_CASE("mean cumulative Fisher on the heat flow matches (1/2) log 3") {
    auto p = problem_1d("zero", {}, 0.0, 1.0);
    double se = 0;
    const double mean = mean_terminal_cumulative_fisher(p, 1.0, 64, 20000, &se);
    CHECK(std::abs(mean - 0.5 * std::log(3.0)) <= 3 * se + 8e-3);
}

TEST_CASE("mean cumulative Fisher on the OU flow matches the quadrature oracle") {
    auto p = problem_1d("quadratic", {1.0}, 0.0, 4.0);
    // Oracle: int_0^1 (s_t - 1)^2 / s_t dt with s_t = 1 + 3 e^{-2t}, by
    // Simpson's rule on a fine grid.
    auto f = [](double t) {
        const double s = 1.0 + 3.0 * std::exp(-2.0 * t);
        return (s - 1.0) * (s - 1.0) / s;
    };
    const int n = 2000;
    double oracle = f(0.0) + f(1.0);
    for (int k = 1; k < n; ++k)
        oracle += (k % 2 ? 4.0 : 2.0) * f(k / static_cast<double>(n));
    oracle /= 3.0 * n;
    // Closed form: with u = s - 1, the integral is (1/2)[u - log(1+u)] from
    // u = 3e^{-2} to 3.
    const double u0 = 3.0 * std::exp(-2.0);
    const double closed =
        0.5 * ((3.0 - u0) - (std::log(4.0) - std::log1p(u0)));
    CHECK(oracle == doctest::Approx(closed).epsilon(1e-10));

    double se = 0;
    const double mean = mean_terminal_cumulative_fisher(p, 1.0, 64, 20000, &se);
    CHECK(std::abs(mean - oracle) <= 3 * se + 2e-2);
}

TEST_CASE("functional time-series csv export") {
    auto p = problem_1d("quadratic", {1.0}, 0.0, 4.0);
    auto path = fp_solve(p, gaussian_grid(p, 512), 0.5,
                         uniform_checkpoints(0.0, 0.5, 6));
    std::vector<FunctionalSample> rows;
    for (const auto& d : path) {
        const auto lik = likelihood_ratio(d, p);
        FunctionalSample r;
        r.time = d.time;
        r.entropy = relative_entropy(d, p).value;
        r.fisher_sigma = fisher_quadratic_form(lik, p, FisherWeight::sigma).value;
        r.fisher_metric =
            fisher_quadratic_form(lik, p, FisherWeight::a_metric).value;
        r.fisher_sigma_g_sigma =
            fisher_quadratic_form(lik, p, FisherWeight::sigma_g_sigma).value;
        rows.push_back(r);
    }
    const std::string path_csv = "/tmp/wflow_test_functionals.csv";
    write_functionals_csv(path_csv, rows);
    std::ifstream is(path_csv);
    std::string header;
    std::getline(is, header);
    CHECK(header == "t,H,I_sigma,I_G,I_sigma_g_sigma,stderr");
    int lines = 0;
    std::string line;
    while (std::getline(is, line)) ++lines;
    CHECK(lines == 6);
    std::remove(path_csv.c_str());
}
