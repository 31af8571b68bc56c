#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vcon/compression.hpp"
#include "vcon/model.hpp"
#include "vcon/training.hpp"

namespace vcon {

struct DatasetConfig {
    // Either a synthetic generator or a CSV file.
    std::optional<std::filesystem::path> csv;
    SyntheticKind kind = SyntheticKind::spiral;
    std::size_t classes = 3;
    std::size_t samples_per_class = 500;
    double noise = 0.2;
    std::uint64_t seed = 0;
};

struct ExperimentConfig {
    std::string name = "experiment";

    std::vector<std::size_t> layers{2, 64, 64, 3};
    Activation activation = Activation::relu;

    DatasetConfig dataset;

    std::optional<CompressionSpec> compression;  // none when absent
    std::vector<std::size_t> compress_layers;     // empty: default selection
    bool freeze_mask = false;

    TrainMode mode = TrainMode::dense;
    TrainMode baseline = TrainMode::ste_standard;  // compare: the non-VCON side

    // Transition length: exactly one of q_steps / q_epochs.
    std::optional<std::uint64_t> q_steps;
    std::optional<double> q_epochs;
    std::vector<double> q_epochs_list;  // sweep-q
    bool freeze_original = false;
    bool eval_compressed_only = false;

    std::size_t post_shot_dense_epochs = 0;  // 0: half of epochs

    OptimizerSpec optimizer;
    std::size_t epochs = 60;
    std::size_t batch_size = 32;

    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path output_dir = "runs/experiment";
    std::size_t jobs = 1;

    /// Cross-field checks. Throws ConfigError naming the offending field.
    void validate() const;

    /// Q in optimizer steps for a training split of `train_samples` rows.
    std::uint64_t resolve_q_steps(std::size_t train_samples) const;
    static std::uint64_t q_steps_from_epochs(double q_epochs, std::size_t train_samples, std::size_t batch_size);
};

/// Builds a config from JSON, rejecting unknown keys at every level.
ExperimentConfig parse_config(const nlohmann::json& j);

/// Applies `dotted.key=value` to a JSON document. The value is parsed as
/// JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Inverse of parse_config (for echoing resolved configs).
nlohmann::json config_to_json(const ExperimentConfig& c);

CompressionSpec parse_compression(const nlohmann::json& j, const std::string& where = "compression");
nlohmann::json compression_to_json(const CompressionSpec& spec);

}  // namespace vcon
