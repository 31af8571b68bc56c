#pragma once

// The compression transforms g = G(f): magnitude pruning (layer-wise, global,
// N:M, structured), scaled binary quantization and truncated-SVD low-rank
// factorization, plus the CompressedBlock that runs a block through one of
// them. Pruning and quantization train the full-precision weight through a
// straight-through estimator; low-rank trains its two factors directly.

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "vcon/model.hpp"
#include "vcon/tensor.hpp"

namespace vcon {

struct PruneUnstructuredLayer {
    double sparsity = 0.0;
};
struct PruneUnstructuredGlobal {
    double sparsity = 0.0;
};
struct PruneNM {
    std::size_t keep = 1;
    std::size_t group = 1;
};
struct PruneStructured {
    double sparsity = 0.0;
};
struct BinaryQuant {};
struct LowRank {
    std::size_t rank = 1;
};

struct CompressionSpec {
    using Variant = std::variant<PruneUnstructuredLayer, PruneUnstructuredGlobal, PruneNM, PruneStructured,
                                 BinaryQuant, LowRank>;
    Variant variant;

    /// Throws ConfigError when sparsity is outside [0, 1), rank is 0, or N > M.
    void validate() const;
    /// Throws ContractError when the spec cannot apply to an n_out x n_in weight.
    void validate_for(std::size_t n_out, std::size_t n_in) const;

    bool is_pruning() const noexcept;
    bool is_binary() const noexcept { return std::holds_alternative<BinaryQuant>(variant); }
    bool is_low_rank() const noexcept { return std::holds_alternative<LowRank>(variant); }
    bool is_global() const noexcept { return std::holds_alternative<PruneUnstructuredGlobal>(variant); }

    /// Stable tag used by configs and checkpoints: "prune_layer", "prune_global",
    /// "prune_nm", "prune_structured", "binary", "low_rank".
    std::string tag() const;
    std::string describe() const;
};

/// 0/1 tensor with the shape of the weight it governs.
struct PruneMask {
    Tensor bits;

    std::size_t kept() const;
    std::size_t zeros() const { return bits.size() - kept(); }
};

/// floor(sparsity * count), robust to representation error in sparsity.
std::size_t prune_count(double sparsity, std::size_t count);

Tensor magnitude_scores(const Tensor& w);
PruneMask prune_layerwise(const Tensor& w, double sparsity);
std::vector<PruneMask> prune_global(std::span<const Tensor* const> layers, double sparsity);
std::vector<PruneMask> prune_global(const std::vector<Tensor>& layers, double sparsity);
PruneMask prune_nm(const Tensor& w, std::size_t keep, std::size_t group);
PruneMask prune_structured(const Tensor& w, double sparsity);

/// Mask for any pruning spec applied to a single weight (global specs reduce
/// to layer-wise on one layer).
PruneMask prune_with(const CompressionSpec& spec, const Tensor& w);

struct ScaledSign {
    double alpha = 0.0;
    Tensor signs;

    Tensor effective() const;
};

/// signs = sign(W) with sign(0) = +1; alpha = ||W||_F / sqrt(count).
ScaledSign binarize_scaled(const Tensor& w);

struct SvdResult {
    Tensor u;                              // n x r, orthonormal columns
    std::vector<double> singular_values;  // non-increasing, >= 0
    Tensor v;                              // m x r, orthonormal columns

    Tensor reconstruct() const;
};

/// Top-r singular triplets by one-sided Jacobi rotations. Columns whose
/// singular value vanishes are completed to an orthonormal set.
SvdResult truncated_svd(const Tensor& w, std::size_t rank);

struct FactorPair {
    Tensor a;  // n x r
    Tensor b;  // r x m

    Tensor product() const { return matmul_value(a, b); }
};

/// Weight-parameter count of an n x m matrix under spec (biases excluded).
std::size_t param_count(const CompressionSpec& spec, std::size_t n, std::size_t m);

/// Storage in bits for the weight matrix: 64 per stored float, or one bit per
/// binary weight plus a 64-bit alpha.
std::size_t weight_bits(const CompressionSpec& spec, std::size_t n, std::size_t m);

/// r(n + m) < nm: factorization actually saves parameters.
bool low_rank_beneficial(std::size_t rank, std::size_t n, std::size_t m) noexcept;

class CompressedBlock final : public Block {
public:
    /// Pruning/binary: base weight is a copy of the dense weight. Low-rank:
    /// A = U, B = diag(sigma) V^T from the truncated SVD. Derived state is
    /// refreshed once before returning.
    static CompressedBlock from_dense(const DenseBlock& dense, const CompressionSpec& spec);

    /// Rebuilds a block from stored state (checkpoint loading). `weight` is
    /// the base weight for pruning/binary, `factors` the pair for low-rank.
    static CompressedBlock restore(const CompressionSpec& spec, Activation act, Tensor weight, FactorPair factors,
                                   Tensor bias, Tensor mask, double alpha, bool freeze_mask);

    BlockKind kind() const noexcept override { return BlockKind::compressed; }
    std::size_t in_dim() const noexcept override { return in_; }
    std::size_t out_dim() const noexcept override { return out_; }

    ad::Var forward(ForwardContext& ctx, ad::Var x) override;
    std::vector<Parameter*> parameters() override;
    std::size_t stored_param_count() const override;
    std::unique_ptr<Block> clone(CloneContext&) const override {
        return std::make_unique<CompressedBlock>(*this);
    }

    /// Recomputes mask or alpha/signs from the current full-precision weight.
    /// No-op for low-rank and for a frozen mask that was already computed.
    void refresh();

    /// Installs an externally computed mask (network-wide global pruning).
    void set_mask(PruneMask mask);

    const CompressionSpec& spec() const noexcept { return spec_; }
    Activation activation() const noexcept { return activation_; }
    bool freeze_mask() const noexcept { return freeze_mask_; }
    void set_freeze_mask(bool f) noexcept { freeze_mask_ = f; }

    Parameter& weight() noexcept { return weight_; }
    const Parameter& weight() const noexcept { return weight_; }
    Parameter& bias() noexcept { return bias_; }
    const Parameter& bias() const noexcept { return bias_; }
    Parameter& factor_a() noexcept { return a_; }
    const Parameter& factor_a() const noexcept { return a_; }
    Parameter& factor_b() noexcept { return b_; }
    const Parameter& factor_b() const noexcept { return b_; }

    const Tensor& mask() const noexcept { return mask_; }
    const ScaledSign& scaled_sign() const noexcept { return scaled_; }

    /// The weight the forward pass actually applies.
    Tensor effective_weight() const;

private:
    CompressedBlock() = default;

    CompressionSpec spec_;
    Activation activation_ = Activation::none;
    std::size_t out_ = 0, in_ = 0;
    Parameter weight_;  // pruning / binary
    Parameter a_, b_;   // low-rank
    Parameter bias_;
    Tensor mask_;
    ScaledSign scaled_;
    bool freeze_mask_ = false;
    bool mask_ready_ = false;
};

/// G(f): compress a dense block.
inline CompressedBlock apply_compression(const DenseBlock& block, const CompressionSpec& spec) {
    return CompressedBlock::from_dense(block, spec);
}

/// Low-rank compression of a dense block (A = U, B = diag(sigma) V^T).
CompressedBlock factorize_layer(const DenseBlock& block, std::size_t rank);

inline Tensor compressed_weight(const CompressedBlock& b) { return b.effective_weight(); }

inline void refresh_derived(CompressedBlock& b) { b.refresh(); }

}  // namespace vcon
