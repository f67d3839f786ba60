#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wflow/verify.hpp"

using namespace wflow;

namespace {

DiffusionProblem problem_1d(const std::string& pot,
                            const std::vector<double>& pot_params,
                            const std::string& vol,
                            const std::vector<double>& vol_params,
                            double mean, double var,
                            double half_width = 12.0) {
    DiffusionProblem p;
    p.dimension = 1;
    p.potential = make_potential(pot, pot_params);
    p.sigma = make_volatility(vol, vol_params, 1);
    p.metric = MetricSpec{make_volatility("identity", {}, 1)};
    p.horizon = 2.0;
    p.initial_law = InitialLaw::gaussian(Vec(mean), Vec(var));
    p.domain_box.lo = Vec(-half_width);
    p.domain_box.hi = Vec(half_width);
    return p;
}

DiffusionProblem heat_problem() {
    return problem_1d("zero", {}, "identity", {}, 0.0, 1.0);
}

DiffusionProblem ou_problem() {
    return problem_1d("quadratic", {1.0}, "identity", {}, 0.0, 4.0);
}

CheckConfig small_cfg() {
    CheckConfig cfg;
    cfg.grid_nodes = 1024;
    cfg.checkpoints = 65;
    cfg.particles = 20000;
    cfg.seed = 21;
    return cfg;
}

}  // namespace

TEST_CASE("entropy identity holds for the heat flow") {
    const auto rep = check_entropy_identity(heat_problem(), 0.0, 1.0,
                                            small_cfg());
    CHECK(rep.name == "entropy_identity");
    CHECK(rep.pass);
    CHECK(rep.relative_residual <= 1e-3);
    // H(N(0,1)) - H(N(0,3)) against Lebesgue = (1/2) log 3
    CHECK(rep.lhs == doctest::Approx(0.5 * std::log(3.0)).epsilon(2e-3));
    CHECK(rep.detail("rhs_mc_ok") == 1.0);
    CHECK(std::abs(rep.detail("rhs_mc") - rep.lhs) <=
          3 * rep.detail("rhs_mc_stderr") + 5e-3);
    CHECK(rep.runtime_seconds > 0);
    CHECK(rep.inputs_digest.find("seed=21") != std::string::npos);
}

TEST_CASE("entropy identity holds for the quadratic-potential flow") {
    auto cfg = small_cfg();
    cfg.particles = 0;  // grid-only variant
    const auto rep = check_entropy_identity(ou_problem(), 0.0, 1.0, cfg);
    CHECK(rep.pass);
    // H(t) = (1/2)(s - 1 - log s) - (1/2) log(2 pi), s_t = 1 + 3 e^{-2t}
    auto H = [](double t) {
        const double s = 1.0 + 3.0 * std::exp(-2.0 * t);
        return 0.5 * (s - 1.0 - std::log(s)) - 0.5 * std::log(2.0 * M_PI);
    };
    CHECK(rep.lhs == doctest::Approx(H(0.0) - H(1.0)).epsilon(1e-3));
}

TEST_CASE("entropy identity is trivially zero at stationarity") {
    auto p = problem_1d("quadratic", {1.0}, "identity", {}, 0.0, 1.0);
    auto cfg = small_cfg();
    cfg.particles = 0;
    const auto rep = check_entropy_identity(p, 0.0, 1.0, cfg);
    CHECK(rep.pass);
    CHECK(std::abs(rep.lhs) <= 1e-8);
    CHECK(std::abs(rep.rhs) <= 1e-8);
}

TEST_CASE("energy identity with a constant multiple of the metric") {
    DiffusionProblem p =
        problem_1d("zero", {}, "gaussian_bump", {2.0, 0.0}, 0.0, 1.0);
    p.metric = MetricSpec{make_volatility("gaussian_bump", {2.0, 0.0}, 1)};
    const auto rep = check_energy_identity(p, 0.0, 0.5, small_cfg());
    CHECK(rep.name == "energy_identity");
    CHECK(rep.pass);
    CHECK(rep.relative_residual <= 2e-3);
    // variance grows at rate 2*Sigma = 4: dH = (1/2) log(s1/s0), s1 = 3
    CHECK(rep.lhs == doctest::Approx(0.5 * std::log(3.0)).epsilon(2e-3));
}

TEST_CASE("martingale is identically zero for a stationary flow") {
    auto p = problem_1d("quadratic", {1.0}, "identity", {}, 0.0, 1.0);
    auto cfg = small_cfg();
    cfg.particles = 2000;
    const auto rep = check_martingale(p, 1.0, cfg, 128, 16);
    CHECK(rep.pass);
    CHECK(std::abs(rep.lhs) <= 1e-6);
    CHECK(std::abs(rep.rhs) <= 1e-8);
}

TEST_CASE("energy identity with matching volatility and metric") {
    const auto rep =
        check_energy_identity(heat_problem(), 0.1, 1.0, small_cfg(), true);
    CHECK(rep.name == "energy_identity");
    CHECK(rep.pass);
    CHECK(rep.relative_residual <= 2e-3);
    CHECK(rep.detail("fd_gap_max") <= 0.05);
}

TEST_CASE("energy inequality is strict for mismatched volatility") {
    const auto problem =
        problem_1d("quadratic", {1.0}, "scalar_sine", {2.0, 1.0, 1.0}, 0.5,
                   2.0);
    auto cfg = small_cfg();
    const auto rep = check_energy_identity(problem, 0.0, 1.0, cfg);
    CHECK(rep.name == "energy_inequality");
    CHECK(rep.pass);
    CHECK(rep.detail("slack") > 0);
    CHECK(rep.detail("slack_over_error") > 5.0);
}

TEST_CASE("de Bruijn identity at interior checkpoints") {
    auto cfg = small_cfg();
    cfg.checkpoints = 65;
    const auto rep = check_debruijn(ou_problem(), 0.0, 1.0, cfg);
    CHECK(rep.pass);
    CHECK(rep.detail("max_relative_gap") <= 1e-3);
}

TEST_CASE("de Bruijn rejects too few checkpoints") {
    auto cfg = small_cfg();
    cfg.checkpoints = 3;
    CHECK_THROWS_AS(check_debruijn(ou_problem(), 0.0, 1.0, cfg), FpError);
}

TEST_CASE("compensated reversed log-likelihood is a mean-zero martingale "
          "with the entropy gap as half its terminal second moment") {
    const auto rep =
        check_martingale(heat_problem(), 1.0, small_cfg(), 512, 16);
    CHECK(rep.pass);
    CHECK(rep.detail("max_mean_z") <= 3.0);
    CHECK(rep.detail("coef_ok") == 1.0);
    CHECK(rep.detail("l2_z") <= 3.0);
    CHECK(rep.rhs == doctest::Approx(0.5 * std::log(3.0)).epsilon(2e-3));
    CHECK(rep.lhs == doctest::Approx(rep.rhs).epsilon(0.05));
}

TEST_CASE("martingale checker input validation") {
    CHECK_THROWS_AS(check_martingale(heat_problem(), 1.0, small_cfg(), 100, 16),
                    SdeError);
    DiffusionProblem p2;
    p2.dimension = 2;
    p2.potential = make_potential("zero", {});
    p2.sigma = make_volatility("identity", {}, 2);
    p2.metric = MetricSpec{make_volatility("identity", {}, 2)};
    p2.initial_law = InitialLaw::gaussian(Vec(0.0, 0.0), Vec(1.0, 1.0));
    p2.domain_box.lo = Vec(-12.0, -12.0);
    p2.domain_box.hi = Vec(12.0, 12.0);
    CHECK_THROWS_AS(check_martingale(p2, 1.0, small_cfg()), SdeError);
}

TEST_CASE("trajectorial dissipation rate converges as the quotient step "
          "shrinks") {
    const auto rep =
        check_trajectorial_rate(heat_problem(), 0.5, small_cfg());
    CHECK(rep.pass);
    CHECK(rep.relative_residual <= 0.05);
    const double g1 = rep.detail("l1_gap_delta_" + std::to_string(0.04));
    const double g3 = rep.detail("l1_gap_delta_" + std::to_string(0.01));
    CHECK(g3 <= g1 + 0.01 * rep.detail("target_abs_mean"));
    // mean quotient vs mean target rate (-E X^2 / s^2 = -1/2 at t = 1/2)
    CHECK(rep.rhs == doctest::Approx(-0.5).epsilon(0.05));
    CHECK(std::abs(rep.lhs - rep.rhs) <= 0.05);
    CHECK_THROWS_AS(
        check_trajectorial_rate(heat_problem(), 0.02, small_cfg()), SdeError);
}

TEST_CASE("reversed run recovers the initial law") {
    auto cfg = small_cfg();
    cfg.particles = 1500;
    const auto rep = check_time_reversal(ou_problem(), 1.0, cfg);
    CHECK(rep.pass);
    CHECK(rep.detail("p_value") > 0.01);
}

TEST_CASE("weak convergence order of the integrator is ~1") {
    const auto problem = problem_1d("quadratic", {1.0}, "scalar_sine",
                                    {2.0, 0.5, 1.0}, 0.3, 1.0);
    auto cfg = small_cfg();
    const auto rep = check_weak_order(problem, 0.5, cfg);
    CHECK(rep.pass);
    CHECK(rep.detail("slope") >= 0.7);
    CHECK(rep.detail("slope") <= 1.3);
}

TEST_CASE("backward residual of the grid solver drops >= 3x per refinement") {
    const auto rep = check_fp_refinement(ou_problem(), 0.5, small_cfg(), 256);
    CHECK(rep.pass);
    CHECK(rep.lhs >= 3.0);
    CHECK(rep.detail("residual_fine") < rep.detail("residual_coarse"));
}

TEST_CASE("report serialization is deterministic and round-trips verdicts") {
    auto cfg = small_cfg();
    cfg.checkpoints = 9;
    cfg.particles = 0;
    const auto rep = check_entropy_identity(heat_problem(), 0.0, 0.2, cfg);
    const std::string path = "verify_reports_test.json";
    write_reports_json(path, {rep});
    std::ifstream is(path);
    std::stringstream buf;
    buf << is.rdbuf();
    const auto j = nlohmann::json::parse(buf.str());
    CHECK(j.size() == 1);
    CHECK(j[0]["name"] == "entropy_identity");
    CHECK(j[0]["verdict"] == (rep.pass ? "pass" : "fail"));
    CHECK(!j[0].contains("runtime_seconds"));
    write_reports_json(path, {rep});
    std::ifstream is2(path);
    std::stringstream buf2;
    buf2 << is2.rdbuf();
    CHECK(buf.str() == buf2.str());
    std::remove(path.c_str());
}
