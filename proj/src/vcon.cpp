#include "vcon/vcon.hpp"

#include <algorithm>

namespace vcon {

double beta_at(std::uint64_t t, std::uint64_t q) noexcept {
    if (q == 0 || t >= q) return 0.0;
    return 1.0 - static_cast<double>(t) / static_cast<double>(q);
}

VconBlock::VconBlock(DenseBlock original, CompressedBlock branch, std::shared_ptr<BetaScheduler> scheduler)
    : original_(std::move(original)), branch_(std::move(branch)), scheduler_(std::move(scheduler)) {
    if (!scheduler_) throw ContractError("VconBlock needs a scheduler");
    if (original_.in_dim() != branch_.in_dim() || original_.out_dim() != branch_.out_dim())
        throw DimensionError("VconBlock branches disagree on dimensions");
}

ad::Var VconBlock::forward(ForwardContext& ctx, ad::Var x) {
    const double beta = scheduler_->beta();
    if (beta == 0.0 || ctx.options().compressed_only) return branch_.forward(ctx, x);
    ad::Var f = original_.forward(ctx, x);
    ad::Var g = branch_.forward(ctx, x);
    return ad::blend(f, g, beta);
}

std::vector<Parameter*> VconBlock::parameters() {
    std::vector<Parameter*> out = original_.parameters();
    for (Parameter* p : branch_.parameters()) out.push_back(p);
    return out;
}

std::size_t VconBlock::stored_param_count() const {
    return original_.stored_param_count() + branch_.stored_param_count();
}

std::unique_ptr<Block> VconBlock::clone(CloneContext& ctx) const {
    return std::make_unique<VconBlock>(original_, branch_, ctx.remap(scheduler_));
}

void VconBlock::set_freeze_original(bool frozen) noexcept {
    for (Parameter* p : original_.parameters()) p->trainable = !frozen;
}

TransitionPhase VconBlock::phase() const noexcept {
    return scheduler_->converged() ? TransitionPhase::converged : TransitionPhase::transition;
}

VconBlock vcon_wrap(const DenseBlock& block, const CompressionSpec& spec, std::shared_ptr<BetaScheduler> scheduler) {
    return VconBlock(clone_block(block), CompressedBlock::from_dense(clone_block(block), spec), std::move(scheduler));
}

std::vector<std::size_t> default_compress_layers(const Network& net, const CompressionSpec& spec) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < net.size(); ++i) {
        const Block& b = net.block(i);
        if (b.kind() != BlockKind::dense) continue;
        if (const auto* lr = std::get_if<LowRank>(&spec.variant)) {
            const std::size_t n = b.out_dim(), m = b.in_dim();
            if (lr->rank > std::min(n, m) || !low_rank_beneficial(lr->rank, n, m)) continue;
        }
        out.push_back(i);
    }
    return out;
}

namespace {

const DenseBlock& dense_at(Network& net, std::size_t i) {
    if (i >= net.size()) throw ConfigError("layer index " + std::to_string(i) + " out of range");
    const auto* d = dynamic_cast<const DenseBlock*>(&net.block(i));
    if (!d) throw ContractError("block " + std::to_string(i) + " is not a dense block");
    return *d;
}

}  // namespace

void compress_network(Network& net, const CompressionSpec& spec, const std::vector<std::size_t>& layers,
                      bool freeze_mask) {
    for (std::size_t i : layers) {
        CompressedBlock cb = CompressedBlock::from_dense(dense_at(net, i), spec);
        cb.set_freeze_mask(freeze_mask);
        net.replace(i, std::make_unique<CompressedBlock>(std::move(cb)));
    }
    refresh_compression(net);
}

std::shared_ptr<BetaScheduler> wrap_network(Network& net, const CompressionSpec& spec, std::uint64_t q,
                                            const std::vector<std::size_t>& layers, WrapOptions options) {
    auto scheduler = std::make_shared<BetaScheduler>(q);
    for (std::size_t i : layers) {
        VconBlock vb = vcon_wrap(dense_at(net, i), spec, scheduler);
        vb.branch().set_freeze_mask(options.freeze_mask);
        vb.set_freeze_original(options.freeze_original);
        net.replace(i, std::make_unique<VconBlock>(std::move(vb)));
    }
    refresh_compression(net);
    return scheduler;
}

std::shared_ptr<BetaScheduler> network_scheduler(Network& net) {
    for (std::size_t i = 0; i < net.size(); ++i)
        if (auto* vb = dynamic_cast<VconBlock*>(&net.block(i))) return vb->scheduler();
    return nullptr;
}

void refresh_compression(Network& net) {
    std::vector<CompressedBlock*> global;
    for (std::size_t i = 0; i < net.size(); ++i) {
        CompressedBlock* cb = dynamic_cast<CompressedBlock*>(&net.block(i));
        if (auto* vb = dynamic_cast<VconBlock*>(&net.block(i))) cb = &vb->branch();
        if (!cb) continue;
        if (cb->spec().is_global())
            global.push_back(cb);
        else
            cb->refresh();
    }
    if (global.empty()) return;
    const double sparsity = std::get<PruneUnstructuredGlobal>(global.front()->spec().variant).sparsity;
    std::vector<const Tensor*> weights;
    for (auto* cb : global) weights.push_back(&cb->weight().value);
    auto masks = prune_global(std::span<const Tensor* const>(weights), sparsity);
    for (std::size_t i = 0; i < global.size(); ++i) global[i]->set_mask(std::move(masks[i]));
}

void finalize(Network& net) {
    for (std::size_t i = 0; i < net.size(); ++i) {
        if (const auto* vb = dynamic_cast<const VconBlock*>(&net.block(i)); vb && !vb->scheduler()->converged())
            throw ContractError("cannot finalize: block " + std::to_string(i) + " is mid-transition (t=" +
                                std::to_string(vb->scheduler()->t()) + " < Q=" +
                                std::to_string(vb->scheduler()->q()) + ")");
    }
    for (std::size_t i = 0; i < net.size(); ++i) {
        if (auto* vb = dynamic_cast<VconBlock*>(&net.block(i))) {
            auto branch = std::make_unique<CompressedBlock>(std::move(vb->branch()));
            net.replace(i, std::move(branch));
        }
    }
}

TransitionPhase transition_phase(const Network& net) {
    for (std::size_t i = 0; i < net.size(); ++i)
        if (const auto* vb = dynamic_cast<const VconBlock*>(&net.block(i))) return vb->phase();
    return TransitionPhase::finalized;
}

}  // namespace vcon
