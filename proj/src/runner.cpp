#include "vcon/runner.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "vcon/checkpoint.hpp"
#include "vcon/vcon.hpp"

namespace vcon {

using nlohmann::json;

Aggregate aggregate(const std::vector<double>& values) {
    Aggregate a;
    if (values.empty()) return a;
    a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return a;
}

std::string delta_annotation(double delta_pp) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "(%+.2f)", delta_pp);
    return buf;
}

// ---- summary JSON ------------------------------------------------------------

void RunSummary::recompute() {
    std::vector<double> test, val;
    for (const auto& r : runs) {
        test.push_back(r.test_accuracy);
        val.push_back(r.best_val_accuracy);
    }
    test_accuracy = aggregate(test);
    best_val_accuracy = aggregate(val);
}

namespace {

json aggregate_json(const Aggregate& a) { return {{"mean", a.mean}, {"stddev", a.stddev}}; }

Aggregate aggregate_from(const json& j) { return {j.at("mean").get<double>(), j.at("stddev").get<double>()}; }

template <class F>
auto parse_guard(const std::string& what, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw ParseError(what + ": " + e.what());
    }
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ParseError(path.string() + " is not valid JSON");
    return j;
}

void write_json(const std::filesystem::path& path, const json& j) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace

json RunSummary::to_json() const {
    json runs_j = json::array();
    for (const auto& r : runs)
        runs_j.push_back({{"seed", r.seed},
                          {"test_accuracy", r.test_accuracy},
                          {"best_val_accuracy", r.best_val_accuracy},
                          {"param_count", {{"dense", r.dense_params}, {"compressed", r.compressed_params}}},
                          {"wall_seconds", r.wall_seconds},
                          {"steps", r.steps},
                          {"log_stem", r.log_stem}});
    return {{"name", name},
            {"mode", std::string(mode_name(mode))},
            {"compression", compression},
            {"q_steps", q_steps},
            {"runs", runs_j},
            {"aggregate", {{"test_accuracy", aggregate_json(test_accuracy)},
                           {"best_val_accuracy", aggregate_json(best_val_accuracy)}}}};
}

RunSummary RunSummary::from_json(const json& j) {
    return parse_guard("summary", [&] {
        RunSummary s;
        s.name = j.at("name").get<std::string>();
        s.mode = parse_mode(j.at("mode").get<std::string>());
        s.compression = j.at("compression").get<std::string>();
        s.q_steps = j.at("q_steps").get<std::uint64_t>();
        for (const auto& r : j.at("runs")) {
            SeedResult x;
            x.seed = r.at("seed").get<std::uint64_t>();
            x.test_accuracy = r.at("test_accuracy").get<double>();
            x.best_val_accuracy = r.at("best_val_accuracy").get<double>();
            x.dense_params = r.at("param_count").at("dense").get<std::size_t>();
            x.compressed_params = r.at("param_count").at("compressed").get<std::size_t>();
            x.wall_seconds = r.at("wall_seconds").get<double>();
            x.steps = r.at("steps").get<std::uint64_t>();
            x.log_stem = r.at("log_stem").get<std::string>();
            s.runs.push_back(std::move(x));
        }
        s.test_accuracy = aggregate_from(j.at("aggregate").at("test_accuracy"));
        s.best_val_accuracy = aggregate_from(j.at("aggregate").at("best_val_accuracy"));
        return s;
    });
}

json CompareReport::to_json() const {
    json d = json::array();
    for (const auto& x : deltas)
        d.push_back({{"seed", x.seed},
                     {"baseline_test_accuracy", x.baseline},
                     {"vcon_test_accuracy", x.vcon},
                     {"delta_pp", x.delta_pp},
                     {"annotation", x.annotation}});
    return {{"baseline", baseline.to_json()},
            {"vcon", vcon.to_json()},
            {"deltas", d},
            {"mean_delta_pp", mean_delta_pp},
            {"mean_annotation", mean_annotation}};
}

CompareReport CompareReport::from_json(const json& j) {
    return parse_guard("compare report", [&] {
        CompareReport c;
        c.baseline = RunSummary::from_json(j.at("baseline"));
        c.vcon = RunSummary::from_json(j.at("vcon"));
        for (const auto& x : j.at("deltas"))
            c.deltas.push_back({x.at("seed").get<std::uint64_t>(), x.at("baseline_test_accuracy").get<double>(),
                                x.at("vcon_test_accuracy").get<double>(), x.at("delta_pp").get<double>(),
                                x.at("annotation").get<std::string>()});
        c.mean_delta_pp = j.at("mean_delta_pp").get<double>();
        c.mean_annotation = j.at("mean_annotation").get<std::string>();
        return c;
    });
}

RunSummary read_summary(const std::filesystem::path& path) { return RunSummary::from_json(read_json(path)); }
CompareReport read_compare(const std::filesystem::path& path) { return CompareReport::from_json(read_json(path)); }

// ---- sweep CSV ---------------------------------------------------------------

namespace {
constexpr const char* kSweepHeader = "Q,q_epochs,seed,epoch,val_accuracy";

std::string g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << kSweepHeader << '\n';
    for (const auto& r : rows)
        out << r.q << ',' << g17(r.q_epochs) << ',' << r.seed << ',' << r.epoch << ',' << g17(r.val_accuracy) << '\n';
}

std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kSweepHeader)
        throw ParseError(path.string() + ": expected header '" + kSweepHeader + "'");
    std::vector<SweepRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> c;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) c.push_back(cell);
        if (c.size() != 5) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 5 cells");
        try {
            rows.push_back({std::stoull(c[0]), std::stod(c[1]), std::stoull(c[2]), std::stoull(c[3]), std::stod(c[4])});
        } catch (const std::logic_error&) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": non-numeric cell");
        }
    }
    return rows;
}

// ---- runs --------------------------------------------------------------------

Dataset make_dataset(const ExperimentConfig& cfg) {
    Dataset data;
    if (cfg.dataset.csv) {
        data = load_csv(*cfg.dataset.csv, cfg.dataset.seed, cfg.layers.back());
    } else {
        data = make_synthetic(cfg.dataset.kind, cfg.dataset.classes, cfg.dataset.samples_per_class, cfg.dataset.noise,
                              cfg.dataset.seed);
    }
    if (data.dim() != cfg.layers.front())
        throw ConfigError("field 'model.layers': input size " + std::to_string(cfg.layers.front()) +
                          " does not match the dataset's " + std::to_string(data.dim()) + " features");
    return data;
}

std::size_t deployed_param_count(const Network& net) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < net.size(); ++i) {
        const Block& b = net.block(i);
        if (const auto* v = dynamic_cast<const VconBlock*>(&b))
            n += v->branch().stored_param_count();
        else
            n += b.stored_param_count();
    }
    return n;
}

SeedResult run_single(const ExperimentConfig& cfg, const Dataset& data, TrainMode mode, std::uint64_t seed,
                      std::uint64_t q_steps, const std::string& stem) {
    const auto t0 = std::chrono::steady_clock::now();
    Network net = init_params(cfg.layers, seed, cfg.activation);
    net.set_name(cfg.name);
    SeedResult res;
    res.seed = seed;
    res.log_stem = stem;
    res.dense_params = net.param_count();

    prepare_network(net, mode, cfg.compression, q_steps, cfg.compress_layers,
                    WrapOptions{cfg.freeze_original, cfg.freeze_mask});

    TrainOptions o;
    o.mode = mode;
    o.optimizer = cfg.optimizer;
    o.epochs = cfg.epochs;
    o.batch_size = cfg.batch_size;
    o.seed = seed;
    o.compression = cfg.compression;
    o.layers = cfg.compress_layers;
    o.post_shot_dense_epochs = cfg.post_shot_dense_epochs ? cfg.post_shot_dense_epochs : cfg.epochs / 2;
    o.freeze_mask = cfg.freeze_mask;
    o.eval_compressed_only = cfg.eval_compressed_only;

    const TrainResult tr = train(net, data, o);
    if (mode == TrainMode::vcon && transition_phase(net) == TransitionPhase::converged) finalize(net);

    res.test_accuracy = tr.test_accuracy;
    res.best_val_accuracy = tr.best_val_accuracy;
    res.steps = tr.steps;
    res.compressed_params = deployed_param_count(net);

    const std::filesystem::path stem_path = cfg.output_dir / stem;
    tr.log.write_csv(stem_path.parent_path(), stem_path.filename().string());
    save_network(net, stem_path.parent_path() / (stem_path.filename().string() + ".ckpt"));

    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

RunSummary run_seeds(const ExperimentConfig& cfg, const Dataset& data, TrainMode mode, std::uint64_t q_steps,
                     const std::string& subdir, const RunnerOptions& opts) {
    RunSummary s;
    s.name = cfg.name;
    s.mode = mode;
    s.compression = (mode == TrainMode::dense || !cfg.compression) ? "none" : cfg.compression->describe();
    s.q_steps = mode == TrainMode::vcon ? q_steps : 0;
    s.runs.resize(cfg.seeds.size());

    std::ostream& log = opts.progress ? *opts.progress : std::cerr;
    std::mutex log_mu;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;

    auto worker = [&] {
        for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
            {
                std::lock_guard lock(log_mu);
                if (failure) return;
            }
            try {
                const std::uint64_t seed = cfg.seeds[i];
                const std::string stem = subdir + "/seed_" + std::to_string(seed);
                s.runs[i] = run_single(cfg, data, mode, seed, q_steps, stem);
                if (!opts.quiet) {
                    std::lock_guard lock(log_mu);
                    char line[200];
                    std::snprintf(line, sizeof line, "[%s seed=%llu] test=%.4f best_val=%.4f params=%zu/%zu (%.1fs)\n",
                                  std::string(mode_name(mode)).c_str(), static_cast<unsigned long long>(seed),
                                  s.runs[i].test_accuracy, s.runs[i].best_val_accuracy, s.runs[i].compressed_params,
                                  s.runs[i].dense_params, s.runs[i].wall_seconds);
                    log << line << std::flush;
                }
            } catch (...) {
                std::lock_guard lock(log_mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    const std::size_t jobs = std::min(cfg.jobs, cfg.seeds.size());
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    s.recompute();
    return s;
}

namespace {

std::uint64_t resolve_q(const ExperimentConfig& cfg, const Dataset& data) {
    if (!cfg.q_steps && !cfg.q_epochs) throw ConfigError("field 'vcon': vcon runs need q_steps or q_epochs");
    return cfg.resolve_q_steps(data.train.size());
}

}  // namespace

RunSummary cmd_train(const ExperimentConfig& cfg, const RunnerOptions& opts) {
    cfg.validate();
    const Dataset data = make_dataset(cfg);
    const std::uint64_t q = cfg.mode == TrainMode::vcon ? resolve_q(cfg, data) : 0;
    RunSummary s = run_seeds(cfg, data, cfg.mode, q, std::string(mode_name(cfg.mode)), opts);
    write_json(cfg.output_dir / "summary.json", s.to_json());
    return s;
}

CompareReport cmd_compare(const ExperimentConfig& cfg, const RunnerOptions& opts) {
    cfg.validate();
    if (!cfg.compression) throw ConfigError("field 'compression': compare needs a compression spec");
    const Dataset data = make_dataset(cfg);
    const std::uint64_t q = resolve_q(cfg, data);

    CompareReport c;
    c.baseline = run_seeds(cfg, data, cfg.baseline, 0, std::string(mode_name(cfg.baseline)), opts);
    c.vcon = run_seeds(cfg, data, TrainMode::vcon, q, "vcon", opts);
    std::vector<double> deltas;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
        SeedDelta d;
        d.seed = cfg.seeds[i];
        d.baseline = c.baseline.runs[i].test_accuracy;
        d.vcon = c.vcon.runs[i].test_accuracy;
        d.delta_pp = 100.0 * (d.vcon - d.baseline);
        d.annotation = delta_annotation(d.delta_pp);
        deltas.push_back(d.delta_pp);
        c.deltas.push_back(std::move(d));
    }
    c.mean_delta_pp = aggregate(deltas).mean;
    c.mean_annotation = delta_annotation(c.mean_delta_pp);
    write_json(cfg.output_dir / "compare.json", c.to_json());
    if (!opts.quiet) {
        std::ostream& log = opts.progress ? *opts.progress : std::cerr;
        char line[200];
        std::snprintf(line, sizeof line, "%s: %.2f%%  vcon: %.2f%% %s\n", std::string(mode_name(cfg.baseline)).c_str(),
                      100.0 * c.baseline.test_accuracy.mean, 100.0 * c.vcon.test_accuracy.mean,
                      c.mean_annotation.c_str());
        log << line << std::flush;
    }
    return c;
}

SweepResult cmd_sweep_q(const ExperimentConfig& cfg, const RunnerOptions& opts) {
    cfg.validate();
    if (!cfg.compression) throw ConfigError("field 'compression': sweep-q needs a compression spec");
    if (cfg.q_epochs_list.size() < 2) throw ConfigError("field 'vcon.q_epochs_list': sweep-q needs at least 2 values");
    const Dataset data = make_dataset(cfg);

    SweepResult out;
    for (double qe : cfg.q_epochs_list) {
        const std::uint64_t q = ExperimentConfig::q_steps_from_epochs(qe, data.train.size(), cfg.batch_size);
        RunSummary s = run_seeds(cfg, data, TrainMode::vcon, q, "sweep/q_" + std::to_string(q), opts);
        for (const auto& r : s.runs) {
            const RunLog log = RunLog::read_csv((cfg.output_dir / r.log_stem).parent_path(),
                                                (cfg.output_dir / r.log_stem).filename().string());
            for (const auto& e : log.epochs) out.rows.push_back({q, qe, r.seed, e.epoch, e.val_accuracy});
        }
        out.per_q.push_back(std::move(s));
    }
    write_sweep_csv(cfg.output_dir / "sweep.csv", out.rows);
    json summaries = json::array();
    for (const auto& s : out.per_q) summaries.push_back(s.to_json());
    write_json(cfg.output_dir / "sweep_summary.json", summaries);
    return out;
}

std::string cmd_inspect(const std::filesystem::path& checkpoint) { return inspect_network(load_network(checkpoint)); }

}  // namespace vcon
