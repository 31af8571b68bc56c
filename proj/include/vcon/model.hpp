#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "vcon/autodiff.hpp"
#include "vcon/tensor.hpp"

namespace vcon {

enum class Activation : std::uint8_t { none = 0, relu = 1, gelu_approx = 2 };

std::string_view activation_name(Activation a) noexcept;
Activation parse_activation(std::string_view name);

/// A named trainable tensor. Lives outside any tape; bound to a fresh leaf
/// each forward pass.
struct Parameter {
    std::string name;
    Tensor value;
    bool trainable = true;
};

/// Options threaded through a forward pass.
struct ForwardOptions {
    // Evaluate every blended block with its compressed branch only.
    bool compressed_only = false;
};

/// Binds parameters to tape leaves for one forward/backward pass.
class ForwardContext {
public:
    explicit ForwardContext(ad::Tape& tape, ForwardOptions options = {}) : tape_(&tape), options_(options) {}

    ad::Tape& tape() noexcept { return *tape_; }
    const ForwardOptions& options() const noexcept { return options_; }

    /// Leaf for p, created on first use. Requires grad iff p.trainable.
    ad::Var bind(Parameter& p);

    /// Every parameter bound so far, in binding order.
    const std::vector<std::pair<Parameter*, ad::Var>>& bound() const noexcept { return bound_; }

private:
    ad::Tape* tape_;
    ForwardOptions options_;
    std::vector<std::pair<Parameter*, ad::Var>> bound_;
    std::map<const Parameter*, ad::Var> index_;
};

/// Maps shared state (e.g. a blend scheduler) to its copy while cloning a
/// network, so the clone shares state internally but not with the source.
class CloneContext {
public:
    template <class T>
    std::shared_ptr<T> remap(const std::shared_ptr<T>& p) {
        if (!p) return nullptr;
        auto it = map_.find(p.get());
        if (it != map_.end()) return std::static_pointer_cast<T>(it->second);
        auto copy = std::make_shared<T>(*p);
        map_.emplace(p.get(), copy);
        return copy;
    }

private:
    std::map<const void*, std::shared_ptr<void>> map_;
};

enum class BlockKind : std::uint8_t { dense = 0, compressed = 1, vcon = 2 };

/// One parameterized function f^(i) of the network.
class Block {
public:
    virtual ~Block() = default;

    virtual BlockKind kind() const noexcept = 0;
    virtual std::size_t in_dim() const noexcept = 0;
    virtual std::size_t out_dim() const noexcept = 0;

    virtual ad::Var forward(ForwardContext& ctx, ad::Var x) = 0;

    /// Ordered, named parameter set. Includes frozen parameters.
    virtual std::vector<Parameter*> parameters() = 0;

    /// Parameters a deployment of this block has to store (biases included,
    /// pruned weights excluded).
    virtual std::size_t stored_param_count() const = 0;

    virtual std::unique_ptr<Block> clone(CloneContext& ctx) const = 0;
};

/// weight[n_out x n_in], bias[n_out]; y = act(x W^T + b).
class DenseBlock final : public Block {
public:
    DenseBlock(Tensor weight, Tensor bias, Activation activation);

    BlockKind kind() const noexcept override { return BlockKind::dense; }
    std::size_t in_dim() const noexcept override { return weight_.value.shape()[1]; }
    std::size_t out_dim() const noexcept override { return weight_.value.shape()[0]; }

    ad::Var forward(ForwardContext& ctx, ad::Var x) override;
    std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
    std::size_t stored_param_count() const override { return weight_.value.size() + bias_.value.size(); }
    std::unique_ptr<Block> clone(CloneContext&) const override { return std::make_unique<DenseBlock>(*this); }

    Parameter& weight() noexcept { return weight_; }
    const Parameter& weight() const noexcept { return weight_; }
    Parameter& bias() noexcept { return bias_; }
    const Parameter& bias() const noexcept { return bias_; }
    Activation activation() const noexcept { return activation_; }

private:
    Parameter weight_;
    Parameter bias_;
    Activation activation_;
};

/// Deep copy of a block; the copy shares nothing with the source.
DenseBlock clone_block(const DenseBlock& b);

/// Shared tail of every block: y = act(x W^T + b) given an already-taped W.
ad::Var linear_forward(ad::Var x, ad::Var weight, ad::Var bias, Activation act);
ad::Var apply_activation(ad::Var x, Activation act);

class Network {
public:
    Network() = default;
    explicit Network(std::string name) : name_(std::move(name)) {}
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    /// Deep copy, shared state remapped.
    Network clone() const;

    const std::string& name() const noexcept { return name_; }
    void set_name(std::string name) { name_ = std::move(name); }

    /// Appends a block; throws DimensionError if it does not chain.
    void append(std::unique_ptr<Block> block);
    /// Swaps block i for another with the same input/output dims.
    void replace(std::size_t i, std::unique_ptr<Block> block);

    std::size_t size() const noexcept { return blocks_.size(); }
    Block& block(std::size_t i) { return *blocks_.at(i); }
    const Block& block(std::size_t i) const { return *blocks_.at(i); }

    std::size_t input_dim() const;
    std::size_t output_dim() const;

    ad::Var forward(ForwardContext& ctx, ad::Var x);

    /// Tape-free forward for evaluation.
    Tensor predict(const Tensor& x, ForwardOptions options = {});

    std::vector<Parameter*> parameters();
    std::size_t param_count() const;

private:
    std::string name_ = "mlp";
    std::vector<std::unique_ptr<Block>> blocks_;
};

/// Glorot-uniform MLP: weights ~ U(-s, s), s = sqrt(6 / (n_in + n_out)),
/// biases zero. Hidden blocks use `hidden`, the last block `output`.
Network init_params(const std::vector<std::size_t>& sizes, std::uint64_t seed,
                    Activation hidden = Activation::relu, Activation output = Activation::none);

/// Convenience: forward through the network, same as Network::forward.
inline ad::Var forward(Network& net, ForwardContext& ctx, ad::Var x) { return net.forward(ctx, x); }

}  // namespace vcon
