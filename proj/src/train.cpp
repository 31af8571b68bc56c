#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "vcon/training.hpp"

namespace vcon {

std::string_view mode_name(TrainMode m) noexcept {
    switch (m) {
        case TrainMode::dense: return "dense";
        case TrainMode::post_shot: return "post_shot";
        case TrainMode::ste_standard: return "ste_standard";
        case TrainMode::vcon: return "vcon";
    }
    return "dense";
}

TrainMode parse_mode(std::string_view name) {
    for (TrainMode m : {TrainMode::dense, TrainMode::post_shot, TrainMode::ste_standard, TrainMode::vcon})
        if (name == mode_name(m)) return m;
    throw ConfigError("unknown mode '" + std::string(name) + "' (expected dense, post_shot, ste_standard or vcon)");
}

// ---- run log ---------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path, std::string_view header) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != header)
        throw ParseError(path.string() + ": expected header '" + std::string(header) + "'");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

void RunLog::write_csv(const std::filesystem::path& dir, const std::string& stem) const {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / (stem + "_steps.csv"));
        out << "step,beta,lr,train_loss\n";
        for (const auto& r : steps)
            out << r.step << ',' << fmt_double(r.beta) << ',' << fmt_double(r.lr) << ',' << fmt_double(r.train_loss)
                << '\n';
    }
    std::ofstream out(dir / (stem + "_epochs.csv"));
    out << "epoch,val_accuracy\n";
    for (const auto& r : epochs) out << r.epoch << ',' << fmt_double(r.val_accuracy) << '\n';
}

RunLog RunLog::read_csv(const std::filesystem::path& dir, const std::string& stem) {
    RunLog log;
    const auto steps_path = dir / (stem + "_steps.csv");
    for (const auto& c : read_rows(steps_path, "step,beta,lr,train_loss")) {
        if (c.size() != 4) throw ParseError(steps_path.string() + ": malformed row");
        log.steps.push_back({std::stoull(c[0]), std::stod(c[1]), std::stod(c[2]), std::stod(c[3])});
    }
    const auto epochs_path = dir / (stem + "_epochs.csv");
    for (const auto& c : read_rows(epochs_path, "epoch,val_accuracy")) {
        if (c.size() != 2) throw ParseError(epochs_path.string() + ": malformed row");
        log.epochs.push_back({std::stoull(c[0]), std::stod(c[1])});
    }
    return log;
}

// ---- training ----------------------------------------------------------------

std::size_t steps_per_epoch(std::size_t samples, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    return (samples + batch_size - 1) / batch_size;
}

double accuracy(Network& net, const Split& split, ForwardOptions options) {
    if (split.size() == 0) return 0.0;
    const Tensor logits = net.predict(split.x, options);
    const std::size_t c = logits.cols();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < split.size(); ++i) {
        const double* row = logits.data().data() + i * c;
        const auto best = static_cast<int>(std::max_element(row, row + c) - row);
        hits += best == split.y[i];
    }
    return static_cast<double>(hits) / static_cast<double>(split.size());
}

void prepare_network(Network& net, TrainMode mode, const std::optional<CompressionSpec>& spec,
                     std::uint64_t q_steps, const std::vector<std::size_t>& layers, WrapOptions wrap) {
    if (mode == TrainMode::dense || mode == TrainMode::post_shot) return;
    if (!spec) throw ConfigError(std::string(mode_name(mode)) + " mode needs a compression spec");
    const auto chosen = layers.empty() ? default_compress_layers(net, *spec) : layers;
    if (chosen.empty()) throw ConfigError("no layer is eligible for " + spec->describe());
    if (mode == TrainMode::ste_standard)
        compress_network(net, *spec, chosen, wrap.freeze_mask);
    else
        wrap_network(net, *spec, q_steps, chosen, wrap);
}

namespace {

struct LayoutCounts {
    std::size_t dense = 0, compressed = 0, vcon = 0;
};

LayoutCounts layout(const Network& net) {
    LayoutCounts c;
    for (std::size_t i = 0; i < net.size(); ++i) {
        switch (net.block(i).kind()) {
            case BlockKind::dense: ++c.dense; break;
            case BlockKind::compressed: ++c.compressed; break;
            case BlockKind::vcon: ++c.vcon; break;
        }
    }
    return c;
}

void check_layout(const Network& net, const TrainOptions& o) {
    const auto c = layout(net);
    const std::string mode(mode_name(o.mode));
    switch (o.mode) {
        case TrainMode::dense:
        case TrainMode::post_shot:
            if (c.compressed || c.vcon) throw ContractError(mode + " mode needs a purely dense network");
            if (o.mode == TrainMode::post_shot && !o.compression)
                throw ContractError("post_shot mode needs a compression spec");
            break;
        case TrainMode::ste_standard:
            if (!c.compressed || c.vcon) throw ContractError("ste_standard mode needs compressed blocks and no VCON blocks");
            break;
        case TrainMode::vcon:
            if (!c.vcon) throw ContractError("vcon mode needs VCON-wrapped blocks");
            break;
    }
}

// Dense -> compressed switch of the post-shot schedule. Optimizer moments
// follow the weight and bias into the compressed block when the parameters
// correspond one-to-one.
void post_shot_compress(Network& net, const TrainOptions& o, OptimizerState& state) {
    const auto layers = o.layers.empty() ? default_compress_layers(net, *o.compression) : o.layers;
    for (std::size_t i : layers) {
        auto* dense = dynamic_cast<DenseBlock*>(&net.block(i));
        if (!dense) throw ContractError("post_shot: block " + std::to_string(i) + " is not dense");
        auto cb = std::make_unique<CompressedBlock>(CompressedBlock::from_dense(*dense, *o.compression));
        cb->set_freeze_mask(o.freeze_mask);
        if (o.compression->is_low_rank()) {
            state.forget(&dense->weight());
        } else {
            state.rekey(&dense->weight(), &cb->weight());
        }
        state.rekey(&dense->bias(), &cb->bias());
        net.replace(i, std::move(cb));
    }
    refresh_compression(net);
}

}  // namespace

TrainResult train(Network& net, const Dataset& data, const TrainOptions& options) {
    check_layout(net, options);
    options.optimizer.validate();
    if (options.epochs == 0) throw ConfigError("epochs must be >= 1");
    if (data.train.size() == 0) throw ConfigError("training split is empty");
    if (data.dim() != net.input_dim())
        throw DimensionError("dataset has " + std::to_string(data.dim()) + " features, network expects " +
                             std::to_string(net.input_dim()));

    const std::size_t n = data.train.size();
    const std::size_t spe = steps_per_epoch(n, options.batch_size);
    OptimizerSpec opt = options.optimizer;
    if (auto* cos = std::get_if<CosineLr>(&opt.schedule); cos && cos->total_steps == 0)
        cos->total_steps = options.epochs * spe;

    auto scheduler = network_scheduler(net);
    bool compressed_phase = options.mode == TrainMode::ste_standard;
    OptimizerState state;
    TrainResult result;
    const ForwardOptions eval_opts{options.eval_compressed_only};
    const std::size_t dim = data.dim();

    std::vector<std::size_t> order(n);
    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        if (options.mode == TrainMode::post_shot && epoch == options.post_shot_dense_epochs) {
            post_shot_compress(net, options, state);
            compressed_phase = true;
        }
        // Shuffle order depends only on (seed, epoch), never on the mode.
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::seed_seq seq{static_cast<std::uint32_t>(options.seed), static_cast<std::uint32_t>(options.seed >> 32),
                          static_cast<std::uint32_t>(epoch), 0x5eedu};
        std::mt19937_64 rng(seq);
        std::shuffle(order.begin(), order.end(), rng);

        for (std::size_t start = 0; start < n; start += options.batch_size) {
            const std::size_t bs = std::min(options.batch_size, n - start);
            Tensor xb({bs, dim});
            std::vector<int> yb(bs);
            for (std::size_t i = 0; i < bs; ++i) {
                const std::size_t r = order[start + i];
                std::copy_n(data.train.x.data().data() + r * dim, dim, xb.data().data() + i * dim);
                yb[i] = data.train.y[r];
            }

            refresh_compression(net);
            const double beta = scheduler ? scheduler->beta() : (compressed_phase ? 0.0 : 1.0);
            const double lr = lr_at(step, opt);

            ad::Tape tape;
            ForwardContext ctx(tape);
            ad::Var logits = net.forward(ctx, tape.leaf(std::move(xb)));
            ad::Var loss = ad::softmax_cross_entropy(logits, yb);
            const double loss_value = loss.value().item();
            if (!std::isfinite(loss_value)) {
                char msg[160];
                std::snprintf(msg, sizeof msg, "non-finite loss at step %llu (lr=%.6g, beta=%.6g)",
                              static_cast<unsigned long long>(step), lr, beta);
                throw DivergenceError(msg);
            }
            const ad::Gradients grads = tape.backward(loss);

            std::vector<std::pair<Parameter*, const Tensor*>> updates;
            updates.reserve(ctx.bound().size());
            for (const auto& [p, v] : ctx.bound()) updates.emplace_back(p, grads.find(v));
            optimizer_step(updates, state, opt, lr);
            if (scheduler) scheduler->step();

            result.log.steps.push_back({step, beta, lr, loss_value});
            ++step;
        }

        refresh_compression(net);
        const double val = accuracy(net, data.val, eval_opts);
        result.best_val_accuracy = std::max(result.best_val_accuracy, val);
        result.log.epochs.push_back({epoch, val});
    }
    refresh_compression(net);
    result.test_accuracy = accuracy(net, data.test, eval_opts);
    result.steps = step;
    return result;
}

}  // namespace vcon
