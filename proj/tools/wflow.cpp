// wflow command-line runner: configuration-driven identity checks for
// state-dependent-volatility diffusions.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wflow/config.hpp"

namespace {

int run_with_config(wflow::ExperimentConfig cfg, bool dry_run) {
    const auto result = wflow::run_experiment(cfg, dry_run, &std::cout);
    if (!result.admissible) {
        std::cerr << "error: " << result.failure << "\n";
        return 2;
    }
    if (dry_run) return 0;
    return result.all_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"wflow: numerical laboratory for entropy dissipation along "
                 "state-dependent-volatility diffusions"};
    app.require_subcommand(1);

    std::string cfg_path, check_name, out_override;
    std::vector<std::string> only_checks;
    bool dry_run = false;
    bool have_seed = false;
    uint64_t seed_override = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_flag("--dry-run", dry_run,
                      "validate the config, print the plan, write nothing");
        cmd->add_option_function<uint64_t>(
               "--seed",
               [&](uint64_t v) {
                   have_seed = true;
                   seed_override = v;
               },
               "override the master seed");
        cmd->add_option("--out", out_override,
                        "override the output directory");
    };

    auto* run = app.add_subcommand("run", "run the configured checks");
    run->add_option("config", cfg_path, "experiment config file")
        ->required();
    run->add_option("--check", only_checks,
                    "restrict to the named check(s)");
    add_common(run);

    auto* check = app.add_subcommand("check", "run a single identity check");
    check->add_option("name", check_name, "check name")->required();
    check->add_option("config", cfg_path, "experiment config file")
        ->required();
    add_common(check);

    auto* list = app.add_subcommand("list-models",
                                    "list registered potentials and "
                                    "volatilities");

    CLI11_PARSE(app, argc, argv);

    try {
        if (list->parsed()) {
            for (const auto& e : wflow::model_registry())
                std::cout << e.kind << "  " << e.name
                          << (e.params.empty() ? "" : "(" + e.params + ")")
                          << "\n";
            return 0;
        }
        wflow::ExperimentConfig cfg = wflow::parse_config(cfg_path);
        if (have_seed) cfg.seed = seed_override;
        if (!out_override.empty()) cfg.out_dir = out_override;
        if (check->parsed()) cfg.checks = {check_name};
        if (!only_checks.empty()) cfg.checks = only_checks;
        for (const auto& c : cfg.checks)
            if (!wflow::detail::known_checks().count(c))
                throw wflow::ConfigError("unknown check '" + c + "'");
        return run_with_config(std::move(cfg), dry_run);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
