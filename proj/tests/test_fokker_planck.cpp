#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "wflow/fokker_planck.hpp"
#include "wflow/snapshot.hpp"

using namespace wflow;

namespace {

DiffusionProblem problem_1d(const std::string& pot,
                            const std::vector<double>& pot_params,
                            const std::string& vol,
                            const std::vector<double>& vol_params,
                            double var0 = 1.0, double half_width = 12.0) {
    DiffusionProblem p;
    p.dimension = 1;
    p.potential = make_potential(pot, pot_params);
    p.sigma = make_volatility(vol, vol_params, 1);
    p.metric = MetricSpec{make_volatility("identity", {}, 1)};
    p.horizon = 1.0;
    p.initial_law = InitialLaw::gaussian(Vec(0.0), Vec(var0));
    p.domain_box.lo = Vec(-half_width);
    p.domain_box.hi = Vec(half_width);
    return p;
}

double gaussian_pdf(double x, double mean, double var) {
    return std::exp(-0.5 * (x - mean) * (x - mean) / var) /
           std::sqrt(2 * M_PI * var);
}

}  // namespace

TEST_CASE("heat flow matches the closed-form kernel") {
    auto p = problem_1d("zero", {}, "identity", {});
    const Grid grid = Grid::make(p.domain_box, 1, 2048);
    auto slices = fp_solve(p, initial_density(p, grid), 0.5, {0.5});
    REQUIRE(slices.size() == 1);
    const auto& d = slices[0];
    double max_err = 0;
    for (int i = 0; i < grid.nx; ++i)
        max_err = std::max(max_err, std::abs(d.values[i] -
                                             gaussian_pdf(grid.node(i)[0], 0.0,
                                                          2.0)));
    CHECK(max_err <= 1e-4);
    CHECK(std::abs(d.trapezoid_mass() - 1.0) <= 1e-6);
}

TEST_CASE("discrete stationary state is exactly preserved") {
    auto p = problem_1d("quadratic", {1.0}, "diag_trig", {});
    const Grid grid = Grid::make(p.domain_box, 1, 512);
    DensityField d;
    d.grid = grid;
    d.time = 0;
    d.values.resize(grid.size());
    for (int i = 0; i < grid.nx; ++i)
        d.values[i] = invariant_density(p, grid.node(i));
    const double mass = d.trapezoid_mass();
    for (auto& v : d.values) v /= mass;

    const double dt = 0.9 * fp_stability_cap(p, grid);
    const auto next = fp_step(d, p, dt);
    double max_change = 0;
    for (int i = 0; i < grid.nx; ++i)
        max_change = std::max(max_change, std::abs(next.values[i] - d.values[i]));
    CHECK(max_change <= 1e-9);
}

TEST_CASE("OU variance follows the moment ODE") {
    auto p = problem_1d("quadratic", {1.0}, "identity", {}, 4.0);
    const Grid grid = Grid::make(p.domain_box, 1, 2048);
    auto slices = fp_solve(p, initial_density(p, grid), 1.0, {1.0});
    const double var =
        slices[0].integrate([](const Vec& x, int) { return x[0] * x[0]; });
    CHECK(std::abs(var - (1.0 + 3.0 * std::exp(-2.0))) <= 1e-3);
}

TEST_CASE("mass conservation per step and over a run") {
    auto p = problem_1d("quadratic", {1.0}, "scalar_sine", {2.0, 1.0, 1.0},
                        4.0);
    const Grid grid = Grid::make(p.domain_box, 1, 512);
    DensityField d = initial_density(p, grid);
    const double dt = 0.9 * fp_stability_cap(p, grid);
    double m_prev = d.trapezoid_mass();
    const double m0 = m_prev;
    detail::FpWorkspace ws;
    for (int k = 0; k < 2000; ++k) {
        d = fp_step(d, p, dt, &ws);
        const double m = d.trapezoid_mass();
        CHECK(std::abs(m - m_prev) <= 1e-9);
        m_prev = m;
    }
    CHECK(std::abs(m_prev - m0) <= 1e-6);
}

TEST_CASE("fp_step rejects dt above the stability cap") {
    auto p = problem_1d("zero", {}, "identity", {});
    const Grid grid = Grid::make(p.domain_box, 1, 128);
    auto d = initial_density(p, grid);
    CHECK_THROWS_AS(fp_step(d, p, 10.0 * fp_stability_cap(p, grid)), FpError);
}

TEST_CASE("likelihood ratio") {
    SUBCASE("V = 0: l equals p") {
        auto p = problem_1d("zero", {}, "identity", {});
        const Grid grid = Grid::make(p.domain_box, 1, 256);
        auto d = initial_density(p, grid);
        auto lik = likelihood_ratio(d, p);
        for (int i = 0; i < grid.nx; ++i)
            CHECK(lik.values[i] == doctest::Approx(d.values[i]).epsilon(1e-14));
    }
    SUBCASE("stationary ratio is constant with zero gradient") {
        auto p = problem_1d("quadratic", {1.0}, "identity", {});
        const Grid grid = Grid::make(p.domain_box, 1, 256);
        DensityField d;
        d.grid = grid;
        d.values.resize(grid.size());
        for (int i = 0; i < grid.nx; ++i)
            d.values[i] = invariant_density(p, grid.node(i));
        const double mass = d.trapezoid_mass();
        for (auto& v : d.values) v /= mass;
        auto lik = likelihood_ratio(d, p);
        for (int i = 0; i < grid.nx; ++i) {
            CHECK(lik.values[i] == doctest::Approx(1.0 / mass).epsilon(1e-10));
            CHECK(std::abs(lik.grad_log[i][0]) <= 1e-10);
        }
    }
    SUBCASE("Gaussian against the algebraic score x(1 - 1/s)") {
        auto p = problem_1d("quadratic", {1.0}, "identity", {});
        const Grid grid = Grid::make(p.domain_box, 1, 2048);
        const double s = 3.0;
        DensityField d;
        d.grid = grid;
        d.values.resize(grid.size());
        for (int i = 0; i < grid.nx; ++i)
            d.values[i] = gaussian_pdf(grid.node(i)[0], 0.0, s);
        auto lik = likelihood_ratio(d, p);
        for (int i = 1; i + 1 < grid.nx; ++i) {
            const double x = grid.node(i)[0];
            CHECK(std::abs(lik.grad_log[i][0] - x * (1.0 - 1.0 / s)) <= 1e-4);
        }
    }
    SUBCASE("zero density raises an error listing node indices") {
        auto p = problem_1d("zero", {}, "identity", {});
        const Grid grid = Grid::make(p.domain_box, 1, 128);
        auto d = initial_density(p, grid);
        d.values[7] = 0.0;
        CHECK_THROWS_WITH_AS(likelihood_ratio(d, p),
                             doctest::Contains("nodes [7]"), FpError);
    }
}

TEST_CASE("p = q * l round-trip is bit-tight") {
    auto p = problem_1d("quadratic", {1.0}, "identity", {}, 4.0);
    const Grid grid = Grid::make(p.domain_box, 1, 512);
    auto d = initial_density(p, grid);
    auto lik = likelihood_ratio(d, p);
    for (int i = 0; i < grid.nx; ++i) {
        const double rebuilt =
            lik.values[i] * invariant_density(p, grid.node(i));
        CHECK(std::abs(rebuilt - d.values[i]) <=
              1e-14 * std::max(1.0, std::abs(d.values[i])));
    }
}

TEST_CASE("backward equation residual") {
    // Slices are clustered at solver-step spacing dx^2/4 around t = 0.25 so
    // the centered time difference refines together with the grid.
    auto run_residual = [](int nodes) {
        auto p = problem_1d("zero", {}, "identity", {});
        const Grid grid = Grid::make(p.domain_box, 1, nodes);
        const double h = grid.dx() * grid.dx() / 4.0;
        std::vector<double> times;
        for (int k = 0; k < 5; ++k) times.push_back(0.25 + k * h);
        auto slices = fp_solve(p, initial_density(p, grid), times.back(), times);
        std::vector<LikelihoodField> path;
        for (const auto& s : slices) path.push_back(likelihood_ratio(s, p));
        return backward_residual(path, p);
    };
    const double r_coarse = run_residual(1024);
    const double r_fine = run_residual(2048);
    CHECK(r_coarse <= 5e-3);
    CHECK(r_fine < r_coarse);

    SUBCASE("stationary field has zero residual") {
        auto p = problem_1d("quadratic", {1.0}, "identity", {});
        const Grid grid = Grid::make(p.domain_box, 1, 128);
        DensityField d;
        d.grid = grid;
        d.values.resize(grid.size());
        for (int i = 0; i < grid.nx; ++i)
            d.values[i] = invariant_density(p, grid.node(i));
        const double mass = d.trapezoid_mass();
        for (auto& v : d.values) v /= mass;
        std::vector<LikelihoodField> path;
        for (double t : {0.0, 0.1, 0.2}) {
            auto lik = likelihood_ratio(d, p);
            lik.time = t;
            path.push_back(lik);
        }
        CHECK(backward_residual(path, p) <= 1e-12);
    }
    SUBCASE("fewer than 3 slices is an error") {
        auto p = problem_1d("zero", {}, "identity", {});
        const Grid grid = Grid::make(p.domain_box, 1, 128);
        std::vector<LikelihoodField> path(2);
        CHECK_THROWS_AS(backward_residual(path, p), FpError);
    }
}

TEST_CASE("OU backward residual decreases >= 3x per spatial halving") {
    auto run_residual = [](int nodes) {
        auto p = problem_1d("quadratic", {1.0}, "identity", {}, 4.0);
        const Grid grid = Grid::make(p.domain_box, 1, nodes);
        const double h = grid.dx() * grid.dx() / 4.0;
        std::vector<double> times;
        for (int k = 0; k < 5; ++k) times.push_back(0.5 + k * h);
        auto slices = fp_solve(p, initial_density(p, grid), times.back(), times);
        std::vector<LikelihoodField> path;
        for (const auto& s : slices) path.push_back(likelihood_ratio(s, p));
        return backward_residual(path, p);
    };
    const double r_coarse = run_residual(512);
    const double r_fine = run_residual(1024);
    CHECK(r_coarse / r_fine >= 3.0);
}

TEST_CASE("2-D heat flow with diagonal volatility") {
    DiffusionProblem p;
    p.dimension = 2;
    p.potential = make_potential("zero", {});
    p.sigma = make_volatility("identity", {}, 2);
    p.metric = MetricSpec{make_volatility("identity", {}, 2)};
    p.horizon = 0.1;
    p.initial_law = InitialLaw::gaussian(Vec(0.0, 0.0), Vec(1.0, 1.0));
    p.domain_box.lo = Vec(-8.0, -8.0);
    p.domain_box.hi = Vec(8.0, 8.0);
    const Grid grid = Grid::make(p.domain_box, 2, 128, 128);
    auto slices = fp_solve(p, initial_density(p, grid), 0.1, {0.1});
    const auto& d = slices[0];
    CHECK(std::abs(d.trapezoid_mass() - 1.0) <= 1e-6);
    double max_err = 0;
    for (int i = 0; i < grid.nx; ++i)
        for (int j = 0; j < grid.ny; ++j) {
            const Vec x = grid.node(i, j);
            const double exact = gaussian_pdf(x[0], 0, 1.2) *
                                 gaussian_pdf(x[1], 0, 1.2);
            max_err = std::max(max_err,
                               std::abs(d.values[grid.index(i, j)] - exact));
        }
    CHECK(max_err <= 5e-4);
}

TEST_CASE("fp solver rejects non-diagonal volatility fields") {
    auto p = problem_1d("zero", {}, "identity", {});
    p.dimension = 2;
    p.sigma.eval = [](const Vec&) { return Mat(2.0, 0.5, 2.0); };
    p.sigma.name = "dense";
    p.initial_law = InitialLaw::gaussian(Vec(0.0, 0.0), Vec(1.0, 1.0));
    p.domain_box.lo = Vec(-8.0, -8.0);
    p.domain_box.hi = Vec(8.0, 8.0);
    const Grid grid = Grid::make(p.domain_box, 2, 64, 64);
    auto d = initial_density(p, grid);
    CHECK_THROWS_AS(fp_step(d, p, 1e-5), FpError);
}

TEST_CASE("snapshot round-trip: binary and CSV") {
    auto p = problem_1d("zero", {}, "identity", {});
    const Grid grid = Grid::make(p.domain_box, 1, 128);
    auto d = initial_density(p, grid);
    d.time = 0.25;
    const std::string path = "/tmp/wflow_test_snapshot.bin";
    write_binary_snapshot(path, density_snapshot(d));
    const auto snap = read_binary_snapshot(path);
    CHECK(snap.count == static_cast<uint64_t>(grid.size()));
    CHECK(snap.time == 0.25);
    for (int i = 0; i < grid.size(); ++i) CHECK(snap.data[i] == d.values[i]);
    std::remove(path.c_str());

    const std::string csv = "/tmp/wflow_test_density.csv";
    write_density_csv(csv, d);
    std::ifstream is(csv);
    std::string header;
    std::getline(is, header);
    CHECK(header == "x1,value");
    std::remove(csv.c_str());
}
