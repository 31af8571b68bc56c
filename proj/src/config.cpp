#include "vcon/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace vcon {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Typed, key-tracking view of one JSON object.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("field '" + (path_.empty() ? "<root>" : path_) + "': expected an object");
    }

    bool has(const std::string& key) {
        known_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    const json& raw(const std::string& key) {
        known_.insert(key);
        return j_.at(key);
    }

    std::string where(const std::string& key) const { return join(path_, key); }

    template <class T>
    std::optional<T> get(const std::string& key) {
        if (!has(key)) return std::nullopt;
        const json& v = j_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0)) throw ConfigError("");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ConfigError("");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError("");
            }
            return v.get<T>();
        } catch (const std::exception&) {
            throw ConfigError("field '" + where(key) + "': expected " + expected<T>() + ", got " + v.dump());
        }
    }

    template <class T>
    std::vector<T> list(const std::string& key) {
        if (!has(key)) return {};
        const json& v = j_.at(key);
        if (!v.is_array()) throw ConfigError("field '" + where(key) + "': expected a list");
        std::vector<T> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            json wrapper = json::object();
            wrapper["v"] = v[i];
            Section item(wrapper, where(key) + "[" + std::to_string(i) + "]");
            out.push_back(*item.get<T>("v"));
        }
        return out;
    }

    /// Rejects any key not queried so far.
    void finish() const {
        for (const auto& [k, _] : j_.items())
            if (!known_.count(k)) throw ConfigError("unknown config key '" + where(k) + "'");
    }

private:
    template <class T>
    static std::string expected() {
        if constexpr (std::is_same_v<T, bool>) return "true/false";
        else if constexpr (std::is_integral_v<T>) return std::is_unsigned_v<T> ? "a non-negative integer" : "an integer";
        else if constexpr (std::is_floating_point_v<T>) return "a number";
        else return "a string";
    }

    const json& j_;
    std::string path_;
    std::set<std::string> known_;
};

template <class F>
auto field(const std::string& where, F&& f) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("field '" + where + "': " + e.what());
    }
}

}  // namespace

CompressionSpec parse_compression(const json& j, const std::string& where) {
    Section s(j, where);
    const auto type = s.get<std::string>("type");
    if (!type) throw ConfigError("field '" + s.where("type") + "': required");
    CompressionSpec spec;
    auto sparsity = [&] {
        const auto v = s.get<double>("sparsity");
        if (!v) throw ConfigError("field '" + s.where("sparsity") + "': required for " + *type);
        return *v;
    };
    if (*type == "prune_layer") {
        spec.variant = PruneUnstructuredLayer{sparsity()};
    } else if (*type == "prune_global") {
        spec.variant = PruneUnstructuredGlobal{sparsity()};
    } else if (*type == "prune_structured") {
        spec.variant = PruneStructured{sparsity()};
    } else if (*type == "prune_nm") {
        const auto n = s.get<std::size_t>("n");
        const auto m = s.get<std::size_t>("m");
        if (!n || !m) throw ConfigError("field '" + where + "': prune_nm needs 'n' and 'm'");
        spec.variant = PruneNM{*n, *m};
    } else if (*type == "binary") {
        spec.variant = BinaryQuant{};
    } else if (*type == "low_rank") {
        const auto r = s.get<std::size_t>("rank");
        if (!r) throw ConfigError("field '" + s.where("rank") + "': required for low_rank");
        spec.variant = LowRank{*r};
    } else {
        throw ConfigError("field '" + s.where("type") + "': unknown compression type '" + *type +
                          "' (expected prune_layer, prune_global, prune_nm, prune_structured, binary, low_rank)");
    }
    // Keys shared with ExperimentConfig parsing.
    s.has("layers");
    s.has("freeze_mask");
    s.finish();
    try {
        spec.validate();
    } catch (const ConfigError& e) {
        throw ConfigError("field '" + where + "': " + e.what());
    }
    return spec;
}

json compression_to_json(const CompressionSpec& spec) {
    json j;
    j["type"] = spec.tag();
    if (const auto* p = std::get_if<PruneUnstructuredLayer>(&spec.variant)) j["sparsity"] = p->sparsity;
    if (const auto* p = std::get_if<PruneUnstructuredGlobal>(&spec.variant)) j["sparsity"] = p->sparsity;
    if (const auto* p = std::get_if<PruneStructured>(&spec.variant)) j["sparsity"] = p->sparsity;
    if (const auto* p = std::get_if<PruneNM>(&spec.variant)) {
        j["n"] = p->keep;
        j["m"] = p->group;
    }
    if (const auto* p = std::get_if<LowRank>(&spec.variant)) j["rank"] = p->rank;
    return j;
}

ExperimentConfig parse_config(const json& j) {
    ExperimentConfig c;
    Section root(j, "");
    if (auto v = root.get<std::string>("name")) c.name = *v;

    if (root.has("model")) {
        Section s(root.raw("model"), "model");
        if (s.has("layers")) c.layers = s.list<std::size_t>("layers");
        if (auto v = s.get<std::string>("activation")) c.activation = field("model.activation", [&] { return parse_activation(*v); });
        s.finish();
    }

    if (root.has("dataset")) {
        Section s(root.raw("dataset"), "dataset");
        if (auto v = s.get<std::string>("csv")) c.dataset.csv = *v;
        if (auto v = s.get<std::string>("kind")) c.dataset.kind = field("dataset.kind", [&] { return parse_synthetic_kind(*v); });
        if (auto v = s.get<std::size_t>("classes")) c.dataset.classes = *v;
        if (auto v = s.get<std::size_t>("samples_per_class")) c.dataset.samples_per_class = *v;
        if (auto v = s.get<double>("noise")) c.dataset.noise = *v;
        if (auto v = s.get<std::uint64_t>("seed")) c.dataset.seed = *v;
        s.finish();
    }

    if (root.has("compression")) {
        const json& cj = root.raw("compression");
        Section s(cj, "compression");
        const auto type = s.get<std::string>("type");
        if (type && *type != "none") c.compression = parse_compression(cj, "compression");
        c.compress_layers = s.list<std::size_t>("layers");
        if (auto v = s.get<bool>("freeze_mask")) c.freeze_mask = *v;
        if (!c.compression) {
            s.finish();
        }
    }

    if (auto v = root.get<std::string>("mode")) c.mode = field("mode", [&] { return parse_mode(*v); });

    if (root.has("vcon")) {
        Section s(root.raw("vcon"), "vcon");
        if (auto v = s.get<std::uint64_t>("q_steps")) c.q_steps = *v;
        if (auto v = s.get<double>("q_epochs")) c.q_epochs = *v;
        c.q_epochs_list = s.list<double>("q_epochs_list");
        if (auto v = s.get<bool>("freeze_original")) c.freeze_original = *v;
        if (auto v = s.get<bool>("eval_compressed_only")) c.eval_compressed_only = *v;
        s.finish();
    }

    if (root.has("post_shot")) {
        Section s(root.raw("post_shot"), "post_shot");
        if (auto v = s.get<std::size_t>("dense_epochs")) c.post_shot_dense_epochs = *v;
        s.finish();
    }

    if (auto v = root.get<std::string>("baseline")) c.baseline = field("baseline", [&] { return parse_mode(*v); });

    if (root.has("optimizer")) {
        Section s(root.raw("optimizer"), "optimizer");
        const std::string kind = s.get<std::string>("kind").value_or("adam");
        const auto lr = s.get<double>("lr");
        if (kind == "adam") {
            Adam a;
            if (lr) a.lr = *lr;
            if (auto v = s.get<double>("beta1")) a.beta1 = *v;
            if (auto v = s.get<double>("beta2")) a.beta2 = *v;
            if (auto v = s.get<double>("eps")) a.eps = *v;
            c.optimizer.kind = a;
        } else if (kind == "sgd") {
            Sgd g;
            if (lr) g.lr = *lr;
            c.optimizer.kind = g;
        } else {
            throw ConfigError("field 'optimizer.kind': unknown optimizer '" + kind + "' (expected adam or sgd)");
        }
        const std::string sched = s.get<std::string>("schedule").value_or("constant");
        if (sched == "cosine") {
            CosineLr cos;
            if (auto v = s.get<std::uint64_t>("total_steps")) cos.total_steps = *v;
            if (auto v = s.get<double>("warmup_ratio")) cos.warmup_ratio = *v;
            if (auto v = s.get<double>("warmup_start_lr")) cos.warmup_start_lr = *v;
            c.optimizer.schedule = cos;
        } else if (sched == "constant") {
            c.optimizer.schedule = ConstantLr{};
        } else {
            throw ConfigError("field 'optimizer.schedule': unknown schedule '" + sched + "' (expected constant or cosine)");
        }
        s.finish();
        try {
            c.optimizer.validate();
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("field 'optimizer': ") + e.what());
        }
    }

    if (root.has("training")) {
        Section s(root.raw("training"), "training");
        if (auto v = s.get<std::size_t>("epochs")) c.epochs = *v;
        if (auto v = s.get<std::size_t>("batch_size")) c.batch_size = *v;
        s.finish();
    }

    if (root.has("seeds")) c.seeds = root.list<std::uint64_t>("seeds");
    if (auto v = root.get<std::string>("output_dir")) c.output_dir = *v;
    if (auto v = root.get<std::size_t>("jobs")) c.jobs = *v;
    root.finish();

    c.validate();
    return c;
}

void ExperimentConfig::validate() const {
    if (layers.size() < 2) throw ConfigError("field 'model.layers': need at least input and output sizes");
    for (auto l : layers)
        if (l == 0) throw ConfigError("field 'model.layers': sizes must be positive");
    if (!dataset.csv) {
        if (dataset.classes < 2) throw ConfigError("field 'dataset.classes': need at least 2 classes");
        if (dataset.samples_per_class < 1) throw ConfigError("field 'dataset.samples_per_class': must be >= 1");
        if (dataset.noise < 0.0) throw ConfigError("field 'dataset.noise': must be >= 0");
        if (layers.front() != 2) throw ConfigError("field 'model.layers': synthetic datasets are 2-D, first size must be 2");
        if (layers.back() != dataset.classes)
            throw ConfigError("field 'model.layers': output size " + std::to_string(layers.back()) +
                              " does not match dataset.classes " + std::to_string(dataset.classes));
    }
    if (epochs == 0) throw ConfigError("field 'training.epochs': must be >= 1");
    if (batch_size == 0) throw ConfigError("field 'training.batch_size': must be >= 1");
    if (seeds.empty()) throw ConfigError("field 'seeds': need at least one seed");
    if (jobs == 0) throw ConfigError("field 'jobs': must be >= 1");
    if (q_steps && q_epochs) throw ConfigError("field 'vcon': set q_steps or q_epochs, not both");
    if (q_epochs && *q_epochs < 0.0) throw ConfigError("field 'vcon.q_epochs': must be >= 0");
    for (double q : q_epochs_list)
        if (q < 0.0) throw ConfigError("field 'vcon.q_epochs_list': entries must be >= 0");
    if (baseline != TrainMode::ste_standard && baseline != TrainMode::post_shot)
        throw ConfigError("field 'baseline': must be ste_standard or post_shot");
    if (mode != TrainMode::dense && !compression)
        throw ConfigError("field 'compression': mode " + std::string(mode_name(mode)) + " needs a compression spec");
    if (mode == TrainMode::vcon && !q_steps && !q_epochs)
        throw ConfigError("field 'vcon': vcon mode needs q_steps or q_epochs");
    if (post_shot_dense_epochs >= epochs && mode == TrainMode::post_shot)
        throw ConfigError("field 'post_shot.dense_epochs': must be < training.epochs");
    if (compression) {
        for (std::size_t i : compress_layers)
            if (i + 1 >= layers.size())
                throw ConfigError("field 'compression.layers': block index " + std::to_string(i) + " out of range");
        for (std::size_t i : compress_layers) {
            try {
                compression->validate_for(layers[i + 1], layers[i]);
            } catch (const ContractError& e) {
                throw ConfigError(std::string("field 'compression.rank': ") + e.what());
            }
        }
    }
}

std::uint64_t ExperimentConfig::q_steps_from_epochs(double q_epochs, std::size_t train_samples, std::size_t batch_size) {
    return static_cast<std::uint64_t>(
        std::llround(q_epochs * static_cast<double>(steps_per_epoch(train_samples, batch_size))));
}

std::uint64_t ExperimentConfig::resolve_q_steps(std::size_t train_samples) const {
    if (q_steps) return *q_steps;
    if (q_epochs) return q_steps_from_epochs(*q_epochs, train_samples, batch_size);
    return 0;
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "': expected key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override '" + assignment + "': empty key segment");
        if (!node->is_object()) throw ConfigError("override '" + assignment + "': '" + part + "' is not inside an object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j = json::parse(in, nullptr, false, true);
    if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
    for (const auto& o : overrides) apply_override(j, o);
    return parse_config(j);
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["name"] = c.name;
    j["model"] = {{"layers", c.layers}, {"activation", std::string(activation_name(c.activation))}};
    json d;
    if (c.dataset.csv) {
        d["csv"] = c.dataset.csv->string();
    } else {
        d["kind"] = c.dataset.kind == SyntheticKind::blobs ? "blobs" : "spiral";
        d["classes"] = c.dataset.classes;
        d["samples_per_class"] = c.dataset.samples_per_class;
        d["noise"] = c.dataset.noise;
    }
    d["seed"] = c.dataset.seed;
    j["dataset"] = d;
    json comp = c.compression ? compression_to_json(*c.compression) : json{{"type", "none"}};
    if (!c.compress_layers.empty()) comp["layers"] = c.compress_layers;
    comp["freeze_mask"] = c.freeze_mask;
    j["compression"] = comp;
    j["mode"] = std::string(mode_name(c.mode));
    j["baseline"] = std::string(mode_name(c.baseline));
    json v;
    if (c.q_steps) v["q_steps"] = *c.q_steps;
    if (c.q_epochs) v["q_epochs"] = *c.q_epochs;
    if (!c.q_epochs_list.empty()) v["q_epochs_list"] = c.q_epochs_list;
    v["freeze_original"] = c.freeze_original;
    v["eval_compressed_only"] = c.eval_compressed_only;
    j["vcon"] = v;
    j["post_shot"] = {{"dense_epochs", c.post_shot_dense_epochs}};
    json o;
    if (const auto* a = std::get_if<Adam>(&c.optimizer.kind)) {
        o = {{"kind", "adam"}, {"lr", a->lr}, {"beta1", a->beta1}, {"beta2", a->beta2}, {"eps", a->eps}};
    } else {
        o = {{"kind", "sgd"}, {"lr", c.optimizer.base_lr()}};
    }
    if (const auto* cos = std::get_if<CosineLr>(&c.optimizer.schedule)) {
        o["schedule"] = "cosine";
        o["total_steps"] = cos->total_steps;
        o["warmup_ratio"] = cos->warmup_ratio;
        o["warmup_start_lr"] = cos->warmup_start_lr;
    } else {
        o["schedule"] = "constant";
    }
    j["optimizer"] = o;
    j["training"] = {{"epochs", c.epochs}, {"batch_size", c.batch_size}};
    j["seeds"] = c.seeds;
    j["output_dir"] = c.output_dir.string();
    j["jobs"] = c.jobs;
    return j;
}

}  // namespace vcon
