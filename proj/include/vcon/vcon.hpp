#pragma once

// Vanishing contributions: a block f is replaced by
//     beta * f(x) + (1 - beta) * g(x),   g = G(f),
// with beta decaying linearly from 1 to 0 over Q optimizer steps. After the
// transition the original branches are dropped and the network is
// structurally identical to one compressed directly.

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "vcon/compression.hpp"
#include "vcon/model.hpp"

namespace vcon {

/// max(1 - t/Q, 0); Q = 0 gives 0 for every t.
double beta_at(std::uint64_t t, std::uint64_t q) noexcept;

class BetaScheduler {
public:
    explicit BetaScheduler(std::uint64_t q = 0, std::uint64_t t = 0) noexcept : q_(q), t_(t) {}

    std::uint64_t q() const noexcept { return q_; }
    std::uint64_t t() const noexcept { return t_; }
    double beta() const noexcept { return beta_at(t_, q_); }
    bool converged() const noexcept { return t_ >= q_; }

    /// One tick per optimizer step, after the parameter update.
    void step() noexcept { ++t_; }

private:
    std::uint64_t q_;
    std::uint64_t t_;
};

inline void step_scheduler(BetaScheduler& s) noexcept { s.step(); }

enum class TransitionPhase { transition, converged, finalized };

class VconBlock final : public Block {
public:
    VconBlock(DenseBlock original, CompressedBlock branch, std::shared_ptr<BetaScheduler> scheduler);

    BlockKind kind() const noexcept override { return BlockKind::vcon; }
    std::size_t in_dim() const noexcept override { return original_.in_dim(); }
    std::size_t out_dim() const noexcept override { return original_.out_dim(); }

    /// Blend at the scheduler's current beta. At beta == 0 (or with
    /// ForwardOptions::compressed_only) the original branch is not evaluated.
    ad::Var forward(ForwardContext& ctx, ad::Var x) override;

    /// Original parameters first, then the branch's.
    std::vector<Parameter*> parameters() override;
    std::size_t stored_param_count() const override;
    std::unique_ptr<Block> clone(CloneContext& ctx) const override;

    DenseBlock& original() noexcept { return original_; }
    const DenseBlock& original() const noexcept { return original_; }
    CompressedBlock& branch() noexcept { return branch_; }
    const CompressedBlock& branch() const noexcept { return branch_; }
    const std::shared_ptr<BetaScheduler>& scheduler() const noexcept { return scheduler_; }

    /// Marks the original's parameters non-trainable (ablation).
    void set_freeze_original(bool frozen) noexcept;
    bool freeze_original() const noexcept { return !original_.weight().trainable; }

    TransitionPhase phase() const noexcept;

private:
    DenseBlock original_;
    CompressedBlock branch_;
    std::shared_ptr<BetaScheduler> scheduler_;
};

/// Parallel branch per the initialization rules: pruning/binary copy the
/// block's parameters, low-rank starts from the truncated SVD. Derived state
/// is refreshed once. The original block is not modified.
VconBlock vcon_wrap(const DenseBlock& block, const CompressionSpec& spec, std::shared_ptr<BetaScheduler> scheduler);

/// Blended forward of a single block; same as VconBlock::forward.
inline ad::Var vcon_forward(VconBlock& vb, ForwardContext& ctx, ad::Var x) { return vb.forward(ctx, x); }

inline ad::Var compressed_forward(CompressedBlock& b, ForwardContext& ctx, ad::Var x) { return b.forward(ctx, x); }

// ---- network-level helpers ---------------------------------------------------

/// Indices of dense blocks a spec applies to by default. Low-rank skips
/// blocks whose rank exceeds min(n_out, n_in) or where r(n+m) >= nm.
std::vector<std::size_t> default_compress_layers(const Network& net, const CompressionSpec& spec);

/// Standard baseline: replace the given dense blocks with compressed blocks.
void compress_network(Network& net, const CompressionSpec& spec, const std::vector<std::size_t>& layers,
                      bool freeze_mask = false);

struct WrapOptions {
    bool freeze_original = false;
    bool freeze_mask = false;
};

/// Wraps the given dense blocks into VconBlocks sharing one new scheduler.
std::shared_ptr<BetaScheduler> wrap_network(Network& net, const CompressionSpec& spec, std::uint64_t q,
                                            const std::vector<std::size_t>& layers, WrapOptions options = {});

/// The scheduler shared by the network's VconBlocks, if any.
std::shared_ptr<BetaScheduler> network_scheduler(Network& net);

/// Refreshes derived compression state of every compressed block and
/// branch. Global pruning is ranked jointly across all its blocks.
void refresh_compression(Network& net);

/// Replaces every VconBlock with its compressed branch. Throws ContractError
/// naming the first block whose scheduler has not reached Q.
void finalize(Network& net);

TransitionPhase transition_phase(const Network& net);

}  // namespace vcon
