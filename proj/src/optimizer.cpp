#include <cmath>
#include <numbers>

#include "vcon/kernels.hpp"
#include "vcon/training.hpp"

namespace vcon {

double OptimizerSpec::base_lr() const noexcept {
    return std::visit([](const auto& k) { return k.lr; }, kind);
}

void OptimizerSpec::validate() const {
    if (!(base_lr() > 0.0)) throw ConfigError("optimizer.lr must be > 0");
    if (const auto* a = std::get_if<Adam>(&kind)) {
        if (!(a->beta1 >= 0.0 && a->beta1 < 1.0) || !(a->beta2 >= 0.0 && a->beta2 < 1.0))
            throw ConfigError("adam betas must lie in [0, 1)");
        if (!(a->eps > 0.0)) throw ConfigError("adam eps must be > 0");
    }
    if (const auto* c = std::get_if<CosineLr>(&schedule)) {
        if (!(c->warmup_ratio >= 0.0 && c->warmup_ratio < 1.0))
            throw ConfigError("optimizer.warmup_ratio must lie in [0, 1)");
        if (c->warmup_start_lr < 0.0) throw ConfigError("optimizer.warmup_start_lr must be >= 0");
    }
}

double lr_at(std::uint64_t step, double base_lr, const std::variant<ConstantLr, CosineLr>& schedule) {
    const auto* cos = std::get_if<CosineLr>(&schedule);
    if (!cos) return base_lr;
    const auto warmup = static_cast<std::uint64_t>(std::floor(cos->warmup_ratio * static_cast<double>(cos->total_steps)));
    if (step < warmup)
        return cos->warmup_start_lr +
               (base_lr - cos->warmup_start_lr) * static_cast<double>(step) / static_cast<double>(warmup);
    if (cos->total_steps <= warmup + 1) return base_lr;
    const double span = static_cast<double>(cos->total_steps - 1 - warmup);
    const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void OptimizerState::rekey(const Parameter* from, const Parameter* to) {
    auto node = moments_.extract(from);
    if (node.empty()) return;
    node.key() = to;
    moments_.insert(std::move(node));
}

void OptimizerState::forget(const Parameter* p) { moments_.erase(p); }

void optimizer_step(std::span<const std::pair<Parameter*, const Tensor*>> params_grads, OptimizerState& state,
                    const OptimizerSpec& spec, double lr) {
    const auto& k = kernels::active();
    ++state.steps_;
    if (std::holds_alternative<Sgd>(spec.kind)) {
        for (const auto& [p, g] : params_grads) {
            if (!p->trainable || !g) continue;
            if (!g->same_shape(p->value))
                throw DimensionError("gradient " + shape_str(g->shape()) + " for parameter " + p->name + " " +
                                     shape_str(p->value.shape()));
            k.axpy(p->value.size(), -lr, g->data().data(), p->value.data().data());
        }
        return;
    }
    const Adam& adam = std::get<Adam>(spec.kind);
    for (const auto& [p, g] : params_grads) {
        if (!p->trainable || !g) continue;
        if (!g->same_shape(p->value))
            throw DimensionError("gradient " + shape_str(g->shape()) + " for parameter " + p->name + " " +
                                 shape_str(p->value.shape()));
        auto it = state.moments_.find(p);
        if (it == state.moments_.end())
            it = state.moments_
                     .emplace(p, OptimizerState::Moments{Tensor(p->value.shape()), Tensor(p->value.shape()), 0})
                     .first;
        // Bias correction counts this parameter's own updates.
        const double t = static_cast<double>(++it->second.steps);
        const double bc1 = 1.0 - std::pow(adam.beta1, t);
        const double bc2 = 1.0 - std::pow(adam.beta2, t);
        k.adam(p->value.size(), lr, adam.beta1, adam.beta2, adam.eps, bc1, bc2, g->data().data(),
               it->second.m.data().data(), it->second.v.data().data(), p->value.data().data());
    }
}

}  // namespace vcon
