#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "vcon/config.hpp"
#include "vcon/training.hpp"

namespace vcon {

struct SeedResult {
    std::uint64_t seed = 0;
    double test_accuracy = 0.0;
    double best_val_accuracy = 0.0;
    std::size_t dense_params = 0;
    std::size_t compressed_params = 0;  // deployable network (VCON: branch only)
    double wall_seconds = 0.0;
    std::uint64_t steps = 0;
    std::string log_stem;  // RunLog CSVs and checkpoint, relative to output_dir

    friend bool operator==(const SeedResult&, const SeedResult&) = default;
};

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;  // sample stddev, 0 for a single entry

    friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

Aggregate aggregate(const std::vector<double>& values);

struct RunSummary {
    std::string name;
    TrainMode mode = TrainMode::dense;
    std::string compression = "none";
    std::uint64_t q_steps = 0;
    std::vector<SeedResult> runs;
    Aggregate test_accuracy;
    Aggregate best_val_accuracy;

    /// Recomputes the aggregates from `runs`.
    void recompute();

    nlohmann::json to_json() const;
    static RunSummary from_json(const nlohmann::json& j);

    friend bool operator==(const RunSummary&, const RunSummary&) = default;
};

struct SeedDelta {
    std::uint64_t seed = 0;
    double baseline = 0.0;
    double vcon = 0.0;
    double delta_pp = 0.0;
    std::string annotation;  // "(+x.xx)"

    friend bool operator==(const SeedDelta&, const SeedDelta&) = default;
};

struct CompareReport {
    RunSummary baseline;
    RunSummary vcon;
    std::vector<SeedDelta> deltas;
    double mean_delta_pp = 0.0;
    std::string mean_annotation;

    nlohmann::json to_json() const;
    static CompareReport from_json(const nlohmann::json& j);

    friend bool operator==(const CompareReport&, const CompareReport&) = default;
};

struct SweepRow {
    std::uint64_t q = 0;
    double q_epochs = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    double val_accuracy = 0.0;

    friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

struct SweepResult {
    std::vector<RunSummary> per_q;
    std::vector<SweepRow> rows;
};

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);
std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path);

RunSummary read_summary(const std::filesystem::path& path);
CompareReport read_compare(const std::filesystem::path& path);

/// "(+1.23)" / "(-0.40)" percentage-point annotation.
std::string delta_annotation(double delta_pp);

struct RunnerOptions {
    bool quiet = false;
    std::ostream* progress = nullptr;  // nullptr: std::cerr
};

Dataset make_dataset(const ExperimentConfig& cfg);

/// Parameter count of the deployable network: VCON blocks count their
/// compressed branch only.
std::size_t deployed_param_count(const Network& net);

/// One training run: init, prepare, train, finalize when converged, then
/// write `<stem>_steps.csv`, `<stem>_epochs.csv` and `<stem>.ckpt` under
/// output_dir.
SeedResult run_single(const ExperimentConfig& cfg, const Dataset& data, TrainMode mode, std::uint64_t seed,
                      std::uint64_t q_steps, const std::string& stem);

/// Runs every seed of `cfg` in `mode`, up to cfg.jobs at a time.
RunSummary run_seeds(const ExperimentConfig& cfg, const Dataset& data, TrainMode mode, std::uint64_t q_steps,
                     const std::string& subdir, const RunnerOptions& opts);

RunSummary cmd_train(const ExperimentConfig& cfg, const RunnerOptions& opts = {});
CompareReport cmd_compare(const ExperimentConfig& cfg, const RunnerOptions& opts = {});
SweepResult cmd_sweep_q(const ExperimentConfig& cfg, const RunnerOptions& opts = {});
std::string cmd_inspect(const std::filesystem::path& checkpoint);

}  // namespace vcon
