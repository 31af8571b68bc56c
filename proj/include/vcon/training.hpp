#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "vcon/compression.hpp"
#include "vcon/model.hpp"
#include "vcon/tensor.hpp"
#include "vcon/vcon.hpp"

namespace vcon {

// ---- optimizers --------------------------------------------------------------

struct Sgd {
    double lr = 0.01;
};
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct ConstantLr {};
/// Linear warmup from warmup_start_lr to the base lr over
/// floor(warmup_ratio * total_steps) steps, then half-cosine to zero at step
/// total_steps - 1.
struct CosineLr {
    std::uint64_t total_steps = 0;  // 0: filled in by train() as epochs * steps_per_epoch
    double warmup_ratio = 0.0;
    double warmup_start_lr = 0.0;
};

struct OptimizerSpec {
    std::variant<Sgd, Adam> kind = Adam{};
    std::variant<ConstantLr, CosineLr> schedule = ConstantLr{};

    double base_lr() const noexcept;
    void validate() const;
};

double lr_at(std::uint64_t step, double base_lr, const std::variant<ConstantLr, CosineLr>& schedule);
inline double lr_at(std::uint64_t step, const OptimizerSpec& spec) { return lr_at(step, spec.base_lr(), spec.schedule); }

/// Per-parameter optimizer state (Adam moments), keyed by parameter identity.
class OptimizerState {
public:
    std::uint64_t steps() const noexcept { return steps_; }

    /// Moves the state of `from` to `to` (parameter replaced by an equivalent one).
    void rekey(const Parameter* from, const Parameter* to);
    void forget(const Parameter* p);

private:
    friend void optimizer_step(std::span<const std::pair<Parameter*, const Tensor*>>, OptimizerState&,
                               const OptimizerSpec&, double);
    struct Moments {
        Tensor m, v;
        std::uint64_t steps = 0;
    };
    std::map<const Parameter*, Moments> moments_;
    std::uint64_t steps_ = 0;
};

/// One update of every (parameter, gradient) pair at learning rate lr.
/// Frozen parameters are skipped.
void optimizer_step(std::span<const std::pair<Parameter*, const Tensor*>> params_grads, OptimizerState& state,
                    const OptimizerSpec& spec, double lr);

// ---- data --------------------------------------------------------------------

struct Split {
    Tensor x;
    std::vector<int> y;

    std::size_t size() const noexcept { return y.size(); }
};

struct Dataset {
    std::size_t classes = 0;
    Split train, val, test;

    std::size_t dim() const { return train.x.cols(); }
};

enum class SyntheticKind { blobs, spiral };

SyntheticKind parse_synthetic_kind(std::string_view name);

/// blobs: Gaussian clusters (std = noise) centred on the unit circle.
/// spiral: interleaved 2-D spiral arms with angular noise. 70/15/15 split
/// after a seeded shuffle.
Dataset make_synthetic(SyntheticKind kind, std::size_t classes, std::size_t samples_per_class, double noise,
                       std::uint64_t seed);

struct RawTable {
    Tensor features;
    std::vector<int> labels;
};

/// Parses `f0,...,fk,label` CSV without standardization.
RawTable read_csv(const std::filesystem::path& path, std::size_t classes = 0);

/// read_csv + seeded 70/15/15 split + per-column standardization using
/// train-split statistics (constant columns map to zero).
Dataset load_csv(const std::filesystem::path& path, std::uint64_t seed = 0, std::size_t classes = 0);

// ---- run log -----------------------------------------------------------------

struct StepRecord {
    std::uint64_t step = 0;
    double beta = 0.0;
    double lr = 0.0;
    double train_loss = 0.0;

    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct EpochRecord {
    std::uint64_t epoch = 0;
    double val_accuracy = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct RunLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;

    friend bool operator==(const RunLog&, const RunLog&) = default;

    /// Writes `<stem>_steps.csv` and `<stem>_epochs.csv` with
    /// round-trippable (%.17g) numbers.
    void write_csv(const std::filesystem::path& dir, const std::string& stem) const;
    static RunLog read_csv(const std::filesystem::path& dir, const std::string& stem);
};

// ---- training loop -----------------------------------------------------------

enum class TrainMode { dense, post_shot, ste_standard, vcon };

std::string_view mode_name(TrainMode m) noexcept;
TrainMode parse_mode(std::string_view name);

struct TrainOptions {
    TrainMode mode = TrainMode::dense;
    OptimizerSpec optimizer;
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;

    // post_shot: compression spec and layers applied after the dense phase.
    std::optional<CompressionSpec> compression;
    std::vector<std::size_t> layers;  // empty: default_compress_layers
    std::size_t post_shot_dense_epochs = 0;
    bool freeze_mask = false;

    // Evaluate blended blocks with their compressed branch only.
    bool eval_compressed_only = false;
};

struct TrainResult {
    RunLog log;
    double test_accuracy = 0.0;
    double best_val_accuracy = 0.0;
    std::uint64_t steps = 0;
};

std::size_t steps_per_epoch(std::size_t samples, std::size_t batch_size);

/// Fraction of rows whose argmax logit equals the label.
double accuracy(Network& net, const Split& split, ForwardOptions options = {});

/// Puts a freshly initialized dense network into the block layout `mode`
/// expects: compressed blocks for ste_standard, VconBlocks (sharing a new
/// scheduler with the given Q) for vcon, unchanged for dense/post_shot.
void prepare_network(Network& net, TrainMode mode, const std::optional<CompressionSpec>& spec,
                     std::uint64_t q_steps, const std::vector<std::size_t>& layers, WrapOptions wrap = {});

/// Trains in place. Per step: refresh derived compression state, forward,
/// loss, backward, optimizer step, scheduler tick. Validation accuracy once
/// per epoch. Throws DivergenceError on a non-finite loss.
TrainResult train(Network& net, const Dataset& data, const TrainOptions& options);

}  // namespace vcon
