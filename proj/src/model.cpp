#include "vcon/model.hpp"

#include <cmath>
#include <random>

namespace vcon {

std::string_view activation_name(Activation a) noexcept {
    switch (a) {
        case Activation::none: return "none";
        case Activation::relu: return "relu";
        case Activation::gelu_approx: return "gelu_approx";
    }
    return "none";
}

Activation parse_activation(std::string_view name) {
    if (name == "none") return Activation::none;
    if (name == "relu") return Activation::relu;
    if (name == "gelu" || name == "gelu_approx") return Activation::gelu_approx;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

ad::Var ForwardContext::bind(Parameter& p) {
    if (auto it = index_.find(&p); it != index_.end()) return it->second;
    ad::Var v = tape_->leaf(p.value, p.trainable);
    index_.emplace(&p, v);
    bound_.emplace_back(&p, v);
    return v;
}

ad::Var apply_activation(ad::Var x, Activation act) {
    switch (act) {
        case Activation::relu: return ad::relu(x);
        case Activation::gelu_approx: return ad::gelu_approx(x);
        case Activation::none: break;
    }
    return x;
}

ad::Var linear_forward(ad::Var x, ad::Var weight, ad::Var bias, Activation act) {
    if (x.value().rank() != 2 || x.value().cols() != weight.value().cols())
        throw DimensionError("block expects input of width " + std::to_string(weight.value().cols()) +
                             ", got " + shape_str(x.shape()));
    return apply_activation(ad::add_bias(ad::matmul(x, ad::transpose(weight)), bias), act);
}

DenseBlock::DenseBlock(Tensor weight, Tensor bias, Activation activation)
    : weight_{"weight", std::move(weight)}, bias_{"bias", std::move(bias)}, activation_(activation) {
    if (weight_.value.rank() != 2 || bias_.value.rank() != 1 || bias_.value.size() != weight_.value.rows())
        throw DimensionError("dense block: weight " + shape_str(weight_.value.shape()) +
                             " inconsistent with bias " + shape_str(bias_.value.shape()));
}

ad::Var DenseBlock::forward(ForwardContext& ctx, ad::Var x) {
    return linear_forward(x, ctx.bind(weight_), ctx.bind(bias_), activation_);
}

DenseBlock clone_block(const DenseBlock& b) { return b; }

Network Network::clone() const {
    Network out(name_);
    CloneContext ctx;
    for (const auto& b : blocks_) out.blocks_.push_back(b->clone(ctx));
    return out;
}

void Network::append(std::unique_ptr<Block> block) {
    if (!blocks_.empty() && blocks_.back()->out_dim() != block->in_dim())
        throw DimensionError("block " + std::to_string(blocks_.size()) + " expects input width " +
                             std::to_string(block->in_dim()) + " but previous block outputs " +
                             std::to_string(blocks_.back()->out_dim()));
    blocks_.push_back(std::move(block));
}

void Network::replace(std::size_t i, std::unique_ptr<Block> block) {
    auto& slot = blocks_.at(i);
    if (slot->in_dim() != block->in_dim() || slot->out_dim() != block->out_dim())
        throw DimensionError("replacement for block " + std::to_string(i) + " changes its dimensions");
    slot = std::move(block);
}

std::size_t Network::input_dim() const {
    if (blocks_.empty()) throw ContractError("empty network");
    return blocks_.front()->in_dim();
}

std::size_t Network::output_dim() const {
    if (blocks_.empty()) throw ContractError("empty network");
    return blocks_.back()->out_dim();
}

ad::Var Network::forward(ForwardContext& ctx, ad::Var x) {
    if (x.value().rank() != 2 || x.value().cols() != input_dim())
        throw DimensionError("network expects input [batch x " + std::to_string(input_dim()) + "], got " +
                             shape_str(x.shape()));
    for (auto& b : blocks_) x = b->forward(ctx, x);
    return x;
}

Tensor Network::predict(const Tensor& x, ForwardOptions options) {
    ad::Tape tape;
    ForwardContext ctx(tape, options);
    return forward(ctx, tape.leaf(x)).value();
}

std::vector<Parameter*> Network::parameters() {
    std::vector<Parameter*> out;
    for (auto& b : blocks_)
        for (Parameter* p : b->parameters()) out.push_back(p);
    return out;
}

std::size_t Network::param_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b->stored_param_count();
    return n;
}

Network init_params(const std::vector<std::size_t>& sizes, std::uint64_t seed, Activation hidden,
                    Activation output) {
    if (sizes.size() < 2) throw ContractError("init_params needs at least input and output sizes");
    for (auto s : sizes)
        if (s == 0) throw ContractError("layer sizes must be positive");
    std::mt19937_64 rng(seed);
    Network net;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const std::size_t n_in = sizes[l], n_out = sizes[l + 1];
        const double s = std::sqrt(6.0 / static_cast<double>(n_in + n_out));
        std::uniform_real_distribution<double> dist(-s, s);
        Tensor w({n_out, n_in});
        for (double& v : w.values()) v = dist(rng);
        const bool last = l + 2 == sizes.size();
        net.append(std::make_unique<DenseBlock>(std::move(w), Tensor({n_out}), last ? output : hidden));
    }
    return net;
}

}  // namespace vcon
