// Command-line front end: configuration-driven federated simulation runs,
// scenario/strategy suites, divergence probes, config validation and the
// communication-cost calculator.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ffl/config.hpp"
#include "ffl/runner.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Path to the JSON config file")
        ->required();
    cmd->add_option("--out", args.out_dir, "Output directory (overrides config)");
    cmd->add_option("--seed", args.seed, "Global seed (overrides config)")
        ->each([&](const std::string&) { args.seed_set = true; });
    cmd->add_option("--threads", args.threads, "Worker threads (overrides config)");
}

ffl::ExperimentConfig load_with_overrides(const CommonArgs& args, bool check_geometry) {
    ffl::ExperimentConfig cfg = ffl::load_config_file(args.config_path, check_geometry);
    if (args.seed_set) cfg.global_seed = args.seed;
    if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
    if (args.threads > 0) cfg.threads = args.threads;
    return cfg;
}

int report_config_error(const ffl::ConfigError& e) {
    for (const auto& msg : e.errors) std::cerr << "config error: " << msg << "\n";
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated-learning simulation engine with factorized kernels"};
    app.require_subcommand(1);

    CommonArgs run_args, suite_args, probe_args, uv_args, validate_args, cost_args;
    CLI::App* cmd_run = app.add_subcommand("run", "Run one experiment");
    add_common(cmd_run, run_args);
    CLI::App* cmd_suite = app.add_subcommand("suite", "Run a scenario x strategy grid");
    add_common(cmd_suite, suite_args);
    CLI::App* cmd_probe =
        app.add_subcommand("probe-divergence", "Gradient-update divergence probe");
    add_common(cmd_probe, probe_args);
    CLI::App* cmd_uv =
        app.add_subcommand("probe-uv", "Factorized u/v divergence probe");
    add_common(cmd_uv, uv_args);
    CLI::App* cmd_validate =
        app.add_subcommand("validate", "Validate a config and print its normalized form");
    add_common(cmd_validate, validate_args);
    CLI::App* cmd_cost = app.add_subcommand(
        "cost", "Communication-cost formula for the configured net, clients and rounds");
    add_common(cmd_cost, cost_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_run->parsed()) {
            const auto start = std::chrono::steady_clock::now();
            ffl::ExperimentConfig cfg = load_with_overrides(run_args, true);
            ffl::RunResult res = ffl::run_experiment(cfg);
            const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - start)
                                .count();
            std::cerr << "run complete: " << cfg.rounds << " rounds, final mean test acc "
                      << res.final_mean_test_acc << ", "
                      << res.ledger.total_bytes() << " bytes transmitted, " << ms
                      << " ms\n";
            std::cout << cfg.output_dir << "/metrics.csv\n";
            return 0;
        }
        if (cmd_suite->parsed()) {
            ffl::ExperimentConfig cfg = load_with_overrides(suite_args, true);
            auto cells = ffl::run_suite(cfg);
            bool any_failed = false;
            for (const auto& c : cells) {
                if (!c.ok) {
                    any_failed = true;
                    std::cerr << "cell " << ffl::scenario_name(c.scenario) << "/"
                              << ffl::strategy_name(c.strategy) << " failed: " << c.error
                              << "\n";
                }
            }
            std::cout << cfg.output_dir << "/summary.csv\n";
            return any_failed ? 1 : 0;
        }
        if (cmd_probe->parsed()) {
            ffl::ExperimentConfig cfg = load_with_overrides(probe_args, true);
            ffl::run_divergence_probe(cfg);
            std::cout << cfg.output_dir << "/probe_divergence.csv\n";
            return 0;
        }
        if (cmd_uv->parsed()) {
            ffl::ExperimentConfig cfg = load_with_overrides(uv_args, true);
            ffl::run_uv_probe(cfg);
            std::cout << cfg.output_dir << "/probe_uv.csv\n";
            return 0;
        }
        if (cmd_validate->parsed()) {
            ffl::ExperimentConfig cfg = load_with_overrides(validate_args, true);
            std::cout << ffl::normalize_config(cfg).dump(2) << "\n";
            return 0;
        }
        if (cmd_cost->parsed()) {
            ffl::ExperimentConfig cfg = load_with_overrides(cost_args, false);
            ffl::ordered_json j;
            j["clients"] = cfg.clients;
            j["rounds"] = cfg.rounds;
            j["share_classifier"] = cfg.strategy.share_classifier;
            j["plain_params"] = ffl::param_count(cfg.net, false);
            j["factorized_params_no_mu"] = ffl::param_count(cfg.net, true);
            ffl::ordered_json per;
            for (ffl::Strategy s :
                 {ffl::Strategy::standalone, ffl::Strategy::fedavg, ffl::Strategy::fedprox,
                  ffl::Strategy::factorized_fl, ffl::Strategy::factorized_fl_beta}) {
                ffl::CostBreakdown c = ffl::steady_cost(cfg.net, s, cfg.clients, cfg.rounds,
                                                        cfg.strategy.share_classifier);
                ffl::ordered_json e;
                e["p_s2c"] = c.p_s2c;
                e["p_c2s"] = c.p_c2s;
                e["bytes"] = c.bytes;
                e["gb"] = static_cast<double>(c.bytes) / 1e9;
                per[ffl::strategy_name(s)] = e;
            }
            j["strategies"] = per;
            std::cout << j.dump(2) << "\n";
            return 0;
        }
    } catch (const ffl::ConfigError& e) {
        return report_config_error(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
