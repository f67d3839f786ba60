#pragma once

// Experiment configuration: INI-style file with [model], [solver], [checks],
// and [output] sections, strict key validation with line diagnostics, and the
// runner that executes the configured identity checks and writes reports.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "wflow/functionals.hpp"
#include "wflow/model.hpp"
#include "wflow/report.hpp"
#include "wflow/snapshot.hpp"
#include "wflow/verify.hpp"

namespace wflow {

class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ExperimentConfig {
    // [model]
    std::string potential = "zero";
    std::vector<double> potential_params;
    std::string sigma = "identity";
    std::vector<double> sigma_params;
    std::string metric = "identity";
    std::vector<double> metric_params;
    int dimension = 1;
    double horizon = 1.0;
    std::vector<double> box_lo, box_hi;          // per axis
    std::vector<double> initial_mean;            // per axis
    std::vector<double> initial_variance;        // per axis
    // [solver]
    int grid_nodes = 2048;
    int checkpoints = 129;
    int particles = 100000;
    uint64_t seed = 7;
    double dt = 1e-3;
    // [checks]
    std::vector<std::string> checks;
    std::map<std::string, std::map<std::string, double>> overrides;
    // [output]
    std::string out_dir = "out";
    bool out_json = true;
    bool out_csv = true;
    bool out_binary = false;
};

namespace detail {

inline const std::set<std::string>& known_checks() {
    static const std::set<std::string> names = {
        "entropy",       "energy",     "debruijn",     "martingale",
        "trajectorial",  "time_reversal", "weak_order", "fp_refinement"};
    return names;
}

inline const std::set<std::string>& override_keys(const std::string& check) {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"entropy", {"t0", "t1", "particles", "grid_nodes", "checkpoints"}},
        {"energy", {"t0", "t1", "grid_nodes", "checkpoints", "fd"}},
        {"debruijn", {"t0", "t1", "grid_nodes", "checkpoints"}},
        {"martingale",
         {"horizon", "particles", "grid_nodes", "fine_steps",
          "coarse_checkpoints"}},
        {"trajectorial", {"t", "particles", "grid_nodes"}},
        {"time_reversal",
         {"horizon", "particles", "grid_nodes", "reversed_steps"}},
        {"weak_order", {"horizon", "particles", "dt_fine"}},
        {"fp_refinement", {"t", "coarse_nodes"}},
    };
    return keys.at(check);
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (is >> item) {
        if (!item.empty() && item.back() == ',') item.pop_back();
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double parse_number(const std::string& where, const std::string& s) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected a number, got '" + s + "'");
    }
}

inline std::vector<double> parse_numbers(const std::string& where,
                                         const std::string& s) {
    std::vector<double> out;
    for (const auto& tok : split_list(s)) out.push_back(parse_number(where, tok));
    return out;
}

inline bool parse_flag(const std::string& where, const std::string& s) {
    if (s == "on" || s == "true" || s == "1" || s == "yes") return true;
    if (s == "off" || s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(where + ": expected on/off, got '" + s + "'");
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config '" + path + "'");
    ExperimentConfig cfg;
    std::string line, section;
    int lineno = 0;
    bool saw_checks_run = false;
    while (std::getline(is, line)) {
        ++lineno;
        const auto where = path + ":" + std::to_string(lineno);
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(where + ": malformed section header '" +
                                  line + "'");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "solver" &&
                section != "checks" && section != "output")
                throw ConfigError(where + ": unknown section [" + section +
                                  "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(where + ": expected 'key = value', got '" +
                              line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (section.empty())
            throw ConfigError(where + ": key '" + key +
                              "' appears before any section header");
        if (key.empty())
            throw ConfigError(where + ": empty key");

        if (section == "model") {
            if (key == "potential") cfg.potential = value;
            else if (key == "potential_params")
                cfg.potential_params = detail::parse_numbers(where, value);
            else if (key == "sigma") cfg.sigma = value;
            else if (key == "sigma_params")
                cfg.sigma_params = detail::parse_numbers(where, value);
            else if (key == "metric") cfg.metric = value;
            else if (key == "metric_params")
                cfg.metric_params = detail::parse_numbers(where, value);
            else if (key == "dimension")
                cfg.dimension =
                    static_cast<int>(detail::parse_number(where, value));
            else if (key == "horizon")
                cfg.horizon = detail::parse_number(where, value);
            else if (key == "box") {
                const auto v = detail::parse_numbers(where, value);
                if (v.size() != 2 && v.size() != 4)
                    throw ConfigError(where +
                                      ": box needs 'lo hi' per axis (2 or 4 "
                                      "numbers)");
                cfg.box_lo.clear();
                cfg.box_hi.clear();
                for (size_t a = 0; a < v.size(); a += 2) {
                    cfg.box_lo.push_back(v[a]);
                    cfg.box_hi.push_back(v[a + 1]);
                }
            } else if (key == "initial_mean")
                cfg.initial_mean = detail::parse_numbers(where, value);
            else if (key == "initial_variance")
                cfg.initial_variance = detail::parse_numbers(where, value);
            else
                throw ConfigError(where + ": unknown key '" + key +
                                  "' in [model]");
        } else if (section == "solver") {
            if (key == "grid_nodes")
                cfg.grid_nodes =
                    static_cast<int>(detail::parse_number(where, value));
            else if (key == "checkpoints")
                cfg.checkpoints =
                    static_cast<int>(detail::parse_number(where, value));
            else if (key == "particles")
                cfg.particles =
                    static_cast<int>(detail::parse_number(where, value));
            else if (key == "seed")
                cfg.seed = static_cast<uint64_t>(
                    detail::parse_number(where, value));
            else if (key == "dt")
                cfg.dt = detail::parse_number(where, value);
            else
                throw ConfigError(where + ": unknown key '" + key +
                                  "' in [solver]");
        } else if (section == "checks") {
            if (key == "run") {
                cfg.checks = detail::split_list(value);
                saw_checks_run = true;
                for (const auto& c : cfg.checks)
                    if (!detail::known_checks().count(c))
                        throw ConfigError(where + ": unknown check '" + c +
                                          "'");
            } else {
                const auto dot = key.find('.');
                if (dot == std::string::npos)
                    throw ConfigError(where + ": unknown key '" + key +
                                      "' in [checks] (overrides use "
                                      "'<check>.<param>')");
                const std::string check = key.substr(0, dot);
                const std::string param = key.substr(dot + 1);
                if (!detail::known_checks().count(check))
                    throw ConfigError(where + ": unknown check '" + check +
                                      "' in override '" + key + "'");
                if (!detail::override_keys(check).count(param))
                    throw ConfigError(where + ": unknown parameter '" + param +
                                      "' for check '" + check + "'");
                cfg.overrides[check][param] =
                    detail::parse_number(where, value);
            }
        } else {  // output
            if (key == "directory") cfg.out_dir = value;
            else if (key == "formats") {
                cfg.out_json = cfg.out_csv = cfg.out_binary = false;
                for (const auto& f : detail::split_list(value)) {
                    if (f == "json") cfg.out_json = true;
                    else if (f == "csv") cfg.out_csv = true;
                    else if (f == "binary") cfg.out_binary = true;
                    else
                        throw ConfigError(where + ": unknown format '" + f +
                                          "' (json, csv, binary)");
                }
            } else
                throw ConfigError(where + ": unknown key '" + key +
                                  "' in [output]");
        }
    }
    if (cfg.dimension != 1 && cfg.dimension != 2)
        throw ConfigError(path + ": dimension must be 1 or 2");
    if (!(cfg.horizon > 0))
        throw ConfigError(path + ": horizon must be positive");
    if (!saw_checks_run)
        cfg.checks = {"entropy", "energy", "debruijn", "martingale",
                      "time_reversal"};
    for (const auto& [check, params] : cfg.overrides) {
        (void)params;
        bool used = false;
        for (const auto& c : cfg.checks) used = used || c == check;
        if (!used)
            throw ConfigError(path + ": override for '" + check +
                              "' but the check is not in the run list");
    }
    return cfg;
}

inline DiffusionProblem build_problem(const ExperimentConfig& cfg) {
    DiffusionProblem p;
    p.dimension = cfg.dimension;
    p.horizon = cfg.horizon;
    p.potential = make_potential(cfg.potential, cfg.potential_params);
    p.sigma = make_volatility(cfg.sigma, cfg.sigma_params, cfg.dimension);
    p.metric =
        MetricSpec{make_volatility(cfg.metric, cfg.metric_params,
                                   cfg.dimension)};
    auto per_axis = [&](const std::vector<double>& v, double fallback,
                        const char* name) {
        Vec out = Vec::zero(cfg.dimension);
        if (v.empty())
            for (int a = 0; a < cfg.dimension; ++a) out[a] = fallback;
        else if (v.size() == 1)
            for (int a = 0; a < cfg.dimension; ++a) out[a] = v[0];
        else if (static_cast<int>(v.size()) == cfg.dimension)
            for (int a = 0; a < cfg.dimension; ++a) out[a] = v[a];
        else
            throw ConfigError(std::string(name) +
                              ": need one value or one per axis");
        return out;
    };
    const Vec lo = per_axis(cfg.box_lo, -12.0, "box");
    const Vec hi = per_axis(cfg.box_hi, 12.0, "box");
    for (int a = 0; a < cfg.dimension; ++a)
        if (!(lo[a] < hi[a]))
            throw ConfigError("box: lo must be < hi on every axis");
    p.domain_box.lo = lo;
    p.domain_box.hi = hi;
    const Vec var = per_axis(cfg.initial_variance, 1.0, "initial_variance");
    for (int a = 0; a < cfg.dimension; ++a)
        if (!(var[a] > 0))
            throw ConfigError("initial_variance: must be positive");
    p.initial_law = InitialLaw::gaussian(
        per_axis(cfg.initial_mean, 0.0, "initial_mean"), var);
    return p;
}

namespace detail {

inline double override_or(const ExperimentConfig& cfg,
                          const std::string& check, const std::string& key,
                          double fallback) {
    const auto it = cfg.overrides.find(check);
    if (it == cfg.overrides.end()) return fallback;
    const auto jt = it->second.find(key);
    return jt == it->second.end() ? fallback : jt->second;
}

}  // namespace detail

inline IdentityReport run_check(const std::string& name,
                                const DiffusionProblem& problem,
                                const ExperimentConfig& cfg) {
    if (!detail::known_checks().count(name))
        throw ConfigError("unknown check '" + name + "'");
    auto ov = [&](const std::string& key, double fallback) {
        return detail::override_or(cfg, name, key, fallback);
    };
    CheckConfig ck;
    ck.grid_nodes = static_cast<int>(ov("grid_nodes", cfg.grid_nodes));
    ck.checkpoints = static_cast<int>(ov("checkpoints", cfg.checkpoints));
    ck.particles = static_cast<int>(ov("particles", cfg.particles));
    ck.seed = cfg.seed;
    ck.dt = cfg.dt;
    const double T = cfg.horizon;
    if (name == "entropy")
        return check_entropy_identity(problem, ov("t0", 0.0), ov("t1", T), ck);
    if (name == "energy")
        return check_energy_identity(problem, ov("t0", 0.0), ov("t1", T), ck,
                                     ov("fd", 0.0) != 0.0);
    if (name == "debruijn")
        return check_debruijn(problem, ov("t0", 0.0), ov("t1", T), ck);
    if (name == "martingale")
        return check_martingale(problem, ov("horizon", T), ck,
                                static_cast<int>(ov("fine_steps", 1024)),
                                static_cast<int>(ov("coarse_checkpoints", 16)));
    if (name == "trajectorial")
        return check_trajectorial_rate(problem, ov("t", 0.5 * T), ck);
    if (name == "time_reversal")
        return check_time_reversal(problem, ov("horizon", T), ck,
                                   static_cast<int>(ov("reversed_steps", 256)));
    if (name == "weak_order")
        return check_weak_order(problem, ov("horizon", 0.5 * T), ck,
                                ov("dt_fine", 1e-3));
    // fp_refinement
    return check_fp_refinement(problem, ov("t", 0.5 * T), ck,
                               static_cast<int>(ov("coarse_nodes", 512)));
}

struct RunResult {
    std::vector<IdentityReport> reports;
    bool admissible = true;
    std::string failure;  // admissibility diagnostic when !admissible

    bool all_pass() const {
        if (!admissible) return false;
        for (const auto& r : reports)
            if (!r.pass) return false;
        return !reports.empty();
    }
};

// Executes the configured experiment: admissibility gate, grid functionals
// time series, then every requested identity check. With dry_run the config
// and model are validated and nothing is written.
inline RunResult run_experiment(const ExperimentConfig& cfg,
                                bool dry_run = false,
                                std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    const DiffusionProblem problem = build_problem(cfg);
    RunResult result;
    auto say = [&](const std::string& msg) {
        if (log) *log << msg << "\n";
    };

    const auto adm = check_admissibility(problem, 400, cfg.seed);
    if (!adm.all_pass()) {
        result.admissible = false;
        const auto* f = adm.first_failure();
        result.failure = "admissibility: " + f->condition + ": " + f->detail;
        say(result.failure);
        if (!dry_run) {
            fs::create_directories(cfg.out_dir);
            std::ofstream os(fs::path(cfg.out_dir) / "admissibility.json");
            nlohmann::ordered_json j;
            j["verdict"] = "fail";
            j["condition"] = f->condition;
            j["detail"] = f->detail;
            os << j.dump(2) << "\n";
        }
        return result;
    }

    say("model: V=" + problem.potential.name + " Sigma=" + problem.sigma.name +
        " A=" + problem.metric.a_field.name +
        " n=" + std::to_string(problem.dimension));
    say("solver: grid=" + std::to_string(cfg.grid_nodes) +
        " checkpoints=" + std::to_string(cfg.checkpoints) +
        " N=" + std::to_string(cfg.particles) +
        " seed=" + std::to_string(cfg.seed));
    {
        std::string plan = "checks:";
        for (const auto& c : cfg.checks) plan += " " + c;
        say(plan);
    }
    if (dry_run) {
        say("dry run: nothing executed, nothing written");
        return result;
    }

    fs::create_directories(cfg.out_dir);
    const fs::path out(cfg.out_dir);

    // grid time series of the functionals over [0, T]
    {
        const Grid grid = Grid::make(problem.domain_box, problem.dimension,
                                     cfg.grid_nodes, cfg.grid_nodes);
        const auto times = uniform_checkpoints(0.0, cfg.horizon,
                                               cfg.checkpoints);
        const auto densities =
            fp_solve(problem, initial_density(problem, grid), cfg.horizon,
                     times);
        std::vector<FunctionalSample> rows;
        for (const auto& d : densities) {
            const auto lik = likelihood_ratio(d, problem);
            FunctionalSample row;
            row.time = d.time;
            row.entropy = relative_entropy(d, problem).value;
            row.fisher_sigma =
                fisher_quadratic_form(lik, problem, FisherWeight::sigma).value;
            row.fisher_metric =
                fisher_quadratic_form(lik, problem, FisherWeight::a_metric)
                    .value;
            row.fisher_sigma_g_sigma =
                fisher_quadratic_form(lik, problem,
                                      FisherWeight::sigma_g_sigma)
                    .value;
            rows.push_back(row);
        }
        if (cfg.out_csv)
            write_functionals_csv((out / "functionals.csv").string(), rows);
        if (cfg.out_binary) {
            write_binary_snapshot((out / "density_initial.bin").string(),
                                  density_snapshot(densities.front()));
            write_binary_snapshot((out / "density_terminal.bin").string(),
                                  density_snapshot(densities.back()));
        }
        if (cfg.out_csv)
            write_density_csv((out / "density_terminal.csv").string(),
                              densities.back());
    }

    for (const auto& name : cfg.checks) {
        auto rep = run_check(name, problem, cfg);
        say(rep.name + ": " + (rep.pass ? "pass" : "FAIL") +
            " (relative residual " + std::to_string(rep.relative_residual) +
            ", tol " + std::to_string(rep.tolerance) + ")");
        result.reports.push_back(std::move(rep));
    }

    if (cfg.out_json)
        write_reports_json((out / "reports.json").string(), result.reports,
                           /*deterministic=*/true);
    if (cfg.out_csv)
        write_reports_csv((out / "reports.csv").string(), result.reports);
    {
        std::ofstream os(out / "summary.txt");
        for (const auto& r : result.reports)
            os << r.name << ": " << (r.pass ? "pass" : "FAIL")
               << " lhs=" << r.lhs << " rhs=" << r.rhs
               << " rel=" << r.relative_residual << " tol=" << r.tolerance
               << "\n";
        os << (result.all_pass() ? "ALL CHECKS PASSED" : "FAILURES PRESENT")
           << "\n";
    }
    return result;
}

}  // namespace wflow
