// vcon_lab: train, compare, sweep-q and inspect from a JSON experiment config.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vcon/errors.hpp"
#include "vcon/runner.hpp"

namespace {

struct CommonArgs {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
    std::optional<std::string> output_dir;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config, "Experiment config (JSON)")->required();
    cmd->add_option("--set", a.sets, "Override a config key, e.g. --set compression.sparsity=0.9");
    cmd->add_option("--seed", a.seed, "Run a single seed instead of the config's seed list");
    cmd->add_option("--mode", a.mode, "Training mode (train) or baseline mode (compare)");
    cmd->add_option("--output-dir", a.output_dir, "Override output_dir");
    cmd->add_flag("--quiet", a.quiet, "Suppress progress output");
}

vcon::ExperimentConfig resolve(const CommonArgs& a, bool mode_is_baseline) {
    std::vector<std::string> sets = a.sets;
    if (a.mode) sets.push_back(std::string(mode_is_baseline ? "baseline" : "mode") + "=\"" + *a.mode + "\"");
    if (a.seed) sets.push_back("seeds=[" + std::to_string(*a.seed) + "]");
    if (a.output_dir) sets.push_back("output_dir=\"" + *a.output_dir + "\"");
    return vcon::load_config(a.config, sets);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"VCON compression experiments"};
    app.require_subcommand(1);

    CommonArgs train_args, compare_args, sweep_args;
    auto* train = app.add_subcommand("train", "Train every seed in one mode; writes summary.json");
    add_common(train, train_args);
    auto* compare = app.add_subcommand("compare", "Baseline vs VCON on identical seeds; writes compare.json");
    add_common(compare, compare_args);
    auto* sweep = app.add_subcommand("sweep-q", "One VCON run per Q in vcon.q_epochs_list; writes sweep.csv");
    add_common(sweep, sweep_args);
    std::string ckpt;
    auto* inspect = app.add_subcommand("inspect", "Describe a checkpoint");
    inspect->add_option("checkpoint", ckpt, "Checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train->parsed()) {
            const auto cfg = resolve(train_args, false);
            vcon::RunnerOptions opts{train_args.quiet, nullptr};
            const auto s = vcon::cmd_train(cfg, opts);
            if (!train_args.quiet)
                std::cout << "test accuracy " << s.test_accuracy.mean << " +/- " << s.test_accuracy.stddev << "\n"
                          << "wrote " << (cfg.output_dir / "summary.json").string() << "\n";
        } else if (compare->parsed()) {
            const auto cfg = resolve(compare_args, true);
            vcon::RunnerOptions opts{compare_args.quiet, nullptr};
            const auto c = vcon::cmd_compare(cfg, opts);
            if (!compare_args.quiet)
                std::cout << "mean delta " << c.mean_annotation << " pp\n"
                          << "wrote " << (cfg.output_dir / "compare.json").string() << "\n";
        } else if (sweep->parsed()) {
            const auto cfg = resolve(sweep_args, false);
            vcon::RunnerOptions opts{sweep_args.quiet, nullptr};
            const auto r = vcon::cmd_sweep_q(cfg, opts);
            if (!sweep_args.quiet)
                std::cout << r.rows.size() << " rows\nwrote " << (cfg.output_dir / "sweep.csv").string() << "\n";
        } else if (inspect->parsed()) {
            std::cout << vcon::cmd_inspect(ckpt);
        }
    } catch (const vcon::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
