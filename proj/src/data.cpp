#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "vcon/training.hpp"

namespace vcon {

SyntheticKind parse_synthetic_kind(std::string_view name) {
    if (name == "blobs") return SyntheticKind::blobs;
    if (name == "spiral") return SyntheticKind::spiral;
    throw ConfigError("unknown synthetic dataset '" + std::string(name) + "' (expected blobs or spiral)");
}

namespace {

Split gather(const Tensor& x, const std::vector<int>& y, std::span<const std::size_t> rows) {
    const std::size_t d = x.cols();
    // An empty split keeps a 1-row placeholder; size() reads y.
    Split s{Tensor({std::max<std::size_t>(rows.size(), 1), d}), {}};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) s.x.at(i, j) = x.at(rows[i], j);
        s.y.push_back(y[rows[i]]);
    }
    return s;
}

// Seeded shuffle then 70/15/15.
Dataset split_dataset(const Tensor& x, const std::vector<int>& y, std::size_t classes, std::uint64_t seed) {
    const std::size_t n = y.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_train = n * 70 / 100;
    const std::size_t n_val = n * 15 / 100;
    std::span<const std::size_t> all(order);
    Dataset d;
    d.classes = classes;
    d.train = gather(x, y, all.subspan(0, n_train));
    d.val = gather(x, y, all.subspan(n_train, n_val));
    d.test = gather(x, y, all.subspan(n_train + n_val));
    return d;
}

}  // namespace

Dataset make_synthetic(SyntheticKind kind, std::size_t classes, std::size_t samples_per_class, double noise,
                       std::uint64_t seed) {
    if (classes < 2) throw ConfigError("synthetic datasets need at least 2 classes");
    if (samples_per_class < 1) throw ConfigError("samples_per_class must be >= 1");
    if (noise < 0.0) throw ConfigError("noise must be >= 0");
    const std::size_t n = classes * samples_per_class;
    Tensor x({n, 2});
    std::vector<int> y(n);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < samples_per_class; ++i) {
            const std::size_t row = c * samples_per_class + i;
            y[row] = static_cast<int>(c);
            if (kind == SyntheticKind::blobs) {
                const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
                x.at(row, 0) = std::cos(angle) + noise * gauss(rng);
                x.at(row, 1) = std::sin(angle) + noise * gauss(rng);
            } else {
                const double frac = samples_per_class > 1
                                        ? static_cast<double>(i) / static_cast<double>(samples_per_class - 1)
                                        : 0.0;
                const double radius = frac;
                const double theta = 4.0 * static_cast<double>(c) + 4.0 * frac + noise * gauss(rng);
                x.at(row, 0) = radius * std::sin(theta);
                x.at(row, 1) = radius * std::cos(theta);
            }
        }
    }
    return split_dataset(x, y, classes, seed);
}

namespace {

std::vector<std::string_view> split_cells(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    for (auto& c : cells) {
        while (!c.empty() && (c.front() == ' ' || c.front() == '\t')) c.remove_prefix(1);
        while (!c.empty() && (c.back() == ' ' || c.back() == '\t' || c.back() == '\r')) c.remove_suffix(1);
    }
    return cells;
}

bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    // std::from_chars for double is not available on every libstdc++ we target.
    std::string tmp(s);
    char* end = nullptr;
    out = std::strtod(tmp.c_str(), &end);
    return end == tmp.c_str() + tmp.size() && std::isfinite(out);
}

}  // namespace

RawTable read_csv(const std::filesystem::path& path, std::size_t classes) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    std::size_t features = 0;
    bool have_header = false;
    std::vector<double> values;
    std::vector<int> labels;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_cells(line);
        if (!have_header) {
            if (cells.size() < 2 || cells.back() != "label")
                throw ParseError(path.string() + ":" + std::to_string(line_no) +
                                 ": missing header row 'f0,...,fk,label'");
            for (std::size_t j = 0; j + 1 < cells.size(); ++j)
                if (cells[j] != "f" + std::to_string(j))
                    throw ParseError(path.string() + ":" + std::to_string(line_no) + ": header column " +
                                     std::to_string(j) + " should be 'f" + std::to_string(j) + "'");
            features = cells.size() - 1;
            have_header = true;
            continue;
        }
        if (cells.size() != features + 1)
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(features + 1) + " cells, got " + std::to_string(cells.size()));
        for (std::size_t j = 0; j < features; ++j) {
            double v;
            if (!parse_double(cells[j], v))
                throw ParseError(path.string() + ":" + std::to_string(line_no) + ": non-numeric cell '" +
                                 std::string(cells[j]) + "'");
            values.push_back(v);
        }
        long long label = 0;
        const auto lab = cells.back();
        const auto [ptr, ec] = std::from_chars(lab.data(), lab.data() + lab.size(), label);
        if (ec != std::errc{} || ptr != lab.data() + lab.size())
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": label '" + std::string(lab) +
                             "' is not an integer");
        if (label < 0 || (classes > 0 && static_cast<std::size_t>(label) >= classes))
            throw IndexError(path.string() + ":" + std::to_string(line_no) + ": label " + std::to_string(label) +
                             " outside [0, " + (classes ? std::to_string(classes) : std::string("inf")) + ")");
        labels.push_back(static_cast<int>(label));
    }
    if (!have_header) throw ParseError(path.string() + ": empty file, missing header row");
    if (labels.empty()) throw ParseError(path.string() + ": no data rows");
    return RawTable{Tensor({labels.size(), features}, std::move(values)), std::move(labels)};
}

Dataset load_csv(const std::filesystem::path& path, std::uint64_t seed, std::size_t classes) {
    RawTable raw = read_csv(path, classes);
    const std::size_t k = classes ? classes : static_cast<std::size_t>(*std::max_element(raw.labels.begin(), raw.labels.end())) + 1;
    Dataset d = split_dataset(raw.features, raw.labels, k, seed);
    const std::size_t dim = raw.features.cols();
    for (std::size_t j = 0; j < dim; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < d.train.size(); ++i) mean += d.train.x.at(i, j);
        mean /= static_cast<double>(std::max<std::size_t>(d.train.size(), 1));
        double var = 0.0;
        for (std::size_t i = 0; i < d.train.size(); ++i) var += (d.train.x.at(i, j) - mean) * (d.train.x.at(i, j) - mean);
        var /= static_cast<double>(std::max<std::size_t>(d.train.size(), 1));
        const double sd = std::sqrt(var);
        for (Split* s : {&d.train, &d.val, &d.test})
            for (std::size_t i = 0; i < s->size(); ++i) {
                double& v = s->x.at(i, j);
                v = sd > 1e-12 ? (v - mean) / sd : 0.0;
            }
    }
    return d;
}

}  // namespace vcon
