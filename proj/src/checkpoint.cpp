#include "vcon/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "vcon/compression.hpp"
#include "vcon/vcon.hpp"

namespace vcon {
namespace {

constexpr char kMagic[8] = {'V', 'C', 'O', 'N', 'C', 'K', 'P', 'T'};
constexpr char kTrailer[8] = {'V', 'C', 'O', 'N', 'E', 'N', 'D', '\0'};

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void tensor(const Tensor& t) {
        for (double v : t.data()) f64(v);
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    std::size_t offset() const noexcept { return pos_; }
    bool done() const noexcept { return pos_ == in_.size(); }

    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError("corrupt checkpoint at offset " + std::to_string(pos_) + ": " + what);
    }

    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) fail("truncated (need " + std::to_string(n) + " more bytes)");
    }
    std::uint8_t u8() {
        need(1);
        return in_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    Tensor tensor(Shape shape) {
        const std::size_t n = shape_numel(shape);
        need(8 * n);
        std::vector<double> data(n);
        for (auto& v : data) v = f64();
        return Tensor(std::move(shape), std::move(data));
    }
    void expect(const char (&tag)[8], const char* what) {
        need(8);
        if (std::memcmp(in_.data() + pos_, tag, 8) != 0) fail(std::string("bad ") + what);
        pos_ += 8;
    }
    std::string string(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

std::uint8_t variant_code(const CompressionSpec& spec) { return static_cast<std::uint8_t>(spec.variant.index()); }

void write_dense(Writer& w, const DenseBlock& b) {
    w.u8(static_cast<std::uint8_t>(b.activation()));
    w.u32(static_cast<std::uint32_t>(b.out_dim()));
    w.u32(static_cast<std::uint32_t>(b.in_dim()));
    w.tensor(b.weight().value);
    w.tensor(b.bias().value);
}

void write_compressed(Writer& w, const CompressedBlock& b) {
    const auto& spec = b.spec();
    w.u8(static_cast<std::uint8_t>(b.activation()));
    w.u32(static_cast<std::uint32_t>(b.out_dim()));
    w.u32(static_cast<std::uint32_t>(b.in_dim()));
    w.u8(variant_code(spec));
    double sparsity = 0.0;
    std::uint32_t keep = 0, group = 0, rank = 0;
    if (const auto* p = std::get_if<PruneUnstructuredLayer>(&spec.variant)) sparsity = p->sparsity;
    if (const auto* p = std::get_if<PruneUnstructuredGlobal>(&spec.variant)) sparsity = p->sparsity;
    if (const auto* p = std::get_if<PruneStructured>(&spec.variant)) sparsity = p->sparsity;
    if (const auto* p = std::get_if<PruneNM>(&spec.variant)) {
        keep = static_cast<std::uint32_t>(p->keep);
        group = static_cast<std::uint32_t>(p->group);
    }
    if (const auto* p = std::get_if<LowRank>(&spec.variant)) rank = static_cast<std::uint32_t>(p->rank);
    w.f64(sparsity);
    w.u32(keep);
    w.u32(group);
    w.u32(rank);
    w.u8(b.freeze_mask() ? 1 : 0);
    if (spec.is_low_rank()) {
        w.tensor(b.factor_a().value);
        w.tensor(b.factor_b().value);
    } else {
        w.tensor(b.weight().value);
    }
    w.tensor(b.bias().value);
    if (spec.is_pruning()) {
        const std::size_t n = b.out_dim(), m = b.in_dim();
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::uint8_t> row((m + 7) / 8, 0);
            for (std::size_t j = 0; j < m; ++j)
                if (b.mask()[i * m + j] != 0.0) row[j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
            w.bytes(row.data(), row.size());
        }
    } else if (spec.is_binary()) {
        w.f64(b.scaled_sign().alpha);
    }
}

Activation read_activation(Reader& r) {
    const auto a = r.u8();
    if (a > 2) r.fail("unknown activation tag " + std::to_string(a));
    return static_cast<Activation>(a);
}

std::pair<std::size_t, std::size_t> read_dims(Reader& r) {
    const std::size_t n = r.u32();
    const std::size_t m = r.u32();
    if (n == 0 || m == 0) r.fail("zero block dimension");
    return {n, m};
}

DenseBlock read_dense(Reader& r) {
    const Activation act = read_activation(r);
    const auto [n, m] = read_dims(r);
    Tensor w = r.tensor({n, m});
    Tensor b = r.tensor({n});
    return DenseBlock(std::move(w), std::move(b), act);
}

CompressedBlock read_compressed(Reader& r) {
    const Activation act = read_activation(r);
    const auto [n, m] = read_dims(r);
    const std::size_t spec_offset = r.offset();
    const auto code = r.u8();
    const double sparsity = r.f64();
    const std::size_t keep = r.u32(), group = r.u32(), rank = r.u32();
    const bool freeze = r.u8() != 0;
    CompressionSpec spec;
    switch (code) {
        case 0: spec.variant = PruneUnstructuredLayer{sparsity}; break;
        case 1: spec.variant = PruneUnstructuredGlobal{sparsity}; break;
        case 2: spec.variant = PruneNM{keep, group}; break;
        case 3: spec.variant = PruneStructured{sparsity}; break;
        case 4: spec.variant = BinaryQuant{}; break;
        case 5: spec.variant = LowRank{rank}; break;
        default: r.fail("unknown compression variant " + std::to_string(code));
    }
    try {
        spec.validate();
        spec.validate_for(n, m);
    } catch (const std::exception& e) {
        throw ParseError("corrupt checkpoint at offset " + std::to_string(spec_offset) + ": " + e.what());
    }
    Tensor weight;
    FactorPair factors;
    if (spec.is_low_rank()) {
        factors.a = r.tensor({n, rank});
        factors.b = r.tensor({rank, m});
    } else {
        weight = r.tensor({n, m});
    }
    Tensor bias = r.tensor({n});
    Tensor mask;
    double alpha = 0.0;
    if (spec.is_pruning()) {
        mask = Tensor({n, m});
        const std::size_t row_bytes = (m + 7) / 8;
        for (std::size_t i = 0; i < n; ++i) {
            r.need(row_bytes);
            std::vector<std::uint8_t> row(row_bytes);
            for (auto& byte : row) byte = r.u8();
            for (std::size_t j = 0; j < m; ++j) mask.at(i, j) = (row[j / 8] >> (j % 8)) & 1u ? 1.0 : 0.0;
        }
    } else if (spec.is_binary()) {
        alpha = r.f64();
        if (!(alpha >= 0.0)) r.fail("negative or NaN binary scale");
    }
    return CompressedBlock::restore(spec, act, std::move(weight), std::move(factors), std::move(bias),
                                    std::move(mask), alpha, freeze);
}

}  // namespace

std::vector<std::uint8_t> serialize_network(const Network& net) {
    Writer w;
    w.bytes(kMagic, 8);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(net.name().size()));
    w.bytes(net.name().data(), net.name().size());
    w.u32(static_cast<std::uint32_t>(net.size()));
    std::shared_ptr<BetaScheduler> sched;
    for (std::size_t i = 0; i < net.size() && !sched; ++i)
        if (const auto* vb = dynamic_cast<const VconBlock*>(&net.block(i))) sched = vb->scheduler();
    w.u8(sched ? 1 : 0);
    if (sched) {
        w.u64(sched->q());
        w.u64(sched->t());
    }
    for (std::size_t i = 0; i < net.size(); ++i) {
        const Block& b = net.block(i);
        w.u8(static_cast<std::uint8_t>(b.kind()));
        switch (b.kind()) {
            case BlockKind::dense: write_dense(w, static_cast<const DenseBlock&>(b)); break;
            case BlockKind::compressed: write_compressed(w, static_cast<const CompressedBlock&>(b)); break;
            case BlockKind::vcon: {
                const auto& vb = static_cast<const VconBlock&>(b);
                write_dense(w, vb.original());
                write_compressed(w, vb.branch());
                break;
            }
        }
    }
    w.bytes(kTrailer, 8);
    return w.take();
}

Network deserialize_network(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    r.expect(kMagic, "magic (not a checkpoint file)");
    const auto version = r.u32();
    if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
    const auto name_len = r.u32();
    Network net(r.string(name_len));
    const auto count = r.u32();
    std::shared_ptr<BetaScheduler> sched;
    const auto has_sched = r.u8();
    if (has_sched > 1) r.fail("bad scheduler flag");
    if (has_sched) {
        const auto q = r.u64();
        const auto t = r.u64();
        sched = std::make_shared<BetaScheduler>(q, t);
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t at = r.offset();
        const auto kind = r.u8();
        std::unique_ptr<Block> block;
        switch (kind) {
            case 0: block = std::make_unique<DenseBlock>(read_dense(r)); break;
            case 1: block = std::make_unique<CompressedBlock>(read_compressed(r)); break;
            case 2: {
                if (!sched) r.fail("VCON block without scheduler state");
                DenseBlock original = read_dense(r);
                CompressedBlock branch = read_compressed(r);
                block = std::make_unique<VconBlock>(std::move(original), std::move(branch), sched);
                break;
            }
            default: r.fail("unknown block kind " + std::to_string(kind));
        }
        try {
            net.append(std::move(block));
        } catch (const DimensionError& e) {
            throw ParseError("corrupt checkpoint at offset " + std::to_string(at) + ": " + e.what());
        }
    }
    r.expect(kTrailer, "trailer");
    if (!r.done()) r.fail("trailing bytes after trailer");
    return net;
}

void save_network(const Network& net, const std::filesystem::path& path) {
    const auto bytes = serialize_network(net);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Network load_network(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_network(bytes);
}

namespace {

void describe_compressed(std::ostringstream& os, const CompressedBlock& b) {
    const std::size_t n = b.out_dim(), m = b.in_dim();
    os << "    variant: " << b.spec().describe() << "\n";
    if (b.spec().is_pruning()) {
        std::size_t kept = 0;
        for (double v : b.mask().data()) kept += v != 0.0;
        os << "    kept weights: " << kept << " / " << n * m << " (density " << std::setprecision(6)
           << static_cast<double>(kept) / static_cast<double>(n * m) << ", sparsity "
           << 1.0 - static_cast<double>(kept) / static_cast<double>(n * m) << ")\n";
        if (b.freeze_mask()) os << "    mask: frozen\n";
    } else if (b.spec().is_binary()) {
        os << "    alpha: " << std::setprecision(10) << b.scaled_sign().alpha << "\n"
           << "    weight bits: " << weight_bits(b.spec(), n, m) << " (dense " << 64 * n * m << ")\n";
    } else {
        const auto r = b.factor_a().value.cols();
        os << "    rank: " << r << "  factors: " << shape_str(b.factor_a().value.shape()) << " x "
           << shape_str(b.factor_b().value.shape()) << "\n";
    }
    os << "    params: " << b.stored_param_count() << " (dense " << n * m + n << ")\n";
}

}  // namespace

std::string inspect_network(const Network& net) {
    std::ostringstream os;
    os << "network: " << net.name() << "  blocks: " << net.size();
    if (net.size()) os << "  " << net.input_dim() << " -> " << net.output_dim();
    os << "\n";
    bool any_compression = false;
    std::shared_ptr<BetaScheduler> sched;
    for (std::size_t i = 0; i < net.size(); ++i) {
        const Block& b = net.block(i);
        os << "block " << i << ": " << b.out_dim() << "x" << b.in_dim() << " ";
        switch (b.kind()) {
            case BlockKind::dense: {
                const auto& d = static_cast<const DenseBlock&>(b);
                os << "dense (" << activation_name(d.activation()) << "), no compression, params "
                   << d.stored_param_count() << "\n";
                break;
            }
            case BlockKind::compressed: {
                const auto& c = static_cast<const CompressedBlock&>(b);
                any_compression = true;
                os << "compressed (" << activation_name(c.activation()) << ")\n";
                describe_compressed(os, c);
                break;
            }
            case BlockKind::vcon: {
                const auto& v = static_cast<const VconBlock&>(b);
                any_compression = true;
                sched = v.scheduler();
                os << "vcon (" << activation_name(v.original().activation()) << ")"
                   << (v.freeze_original() ? ", original frozen" : "") << "\n";
                os << "    original params: " << v.original().stored_param_count() << "\n";
                describe_compressed(os, v.branch());
                break;
            }
        }
    }
    if (!any_compression) os << "no compression\n";
    if (sched) {
        os << "scheduler: t=" << sched->t() << " Q=" << sched->q() << " beta=" << std::setprecision(10)
           << sched->beta() << " phase=" << (sched->converged() ? "converged" : "transition") << "\n";
    }
    os << "total params: " << net.param_count() << "\n";
    return os.str();
}

}  // namespace vcon
