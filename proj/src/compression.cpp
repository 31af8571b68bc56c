#include "vcon/compression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace vcon {

// ---- spec ------------------------------------------------------------------

namespace {

template <class... Fs>
struct overloaded : Fs... {
    using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

void check_sparsity(double s) {
    if (!(s >= 0.0 && s < 1.0))
        throw ConfigError("sparsity must lie in [0, 1), got " + std::to_string(s));
}

}  // namespace

void CompressionSpec::validate() const {
    std::visit(overloaded{
                   [](const PruneUnstructuredLayer& p) { check_sparsity(p.sparsity); },
                   [](const PruneUnstructuredGlobal& p) { check_sparsity(p.sparsity); },
                   [](const PruneStructured& p) { check_sparsity(p.sparsity); },
                   [](const PruneNM& p) {
                       if (p.keep < 1 || p.group < 1 || p.keep > p.group)
                           throw ConfigError("N:M pruning needs 1 <= N <= M, got " + std::to_string(p.keep) +
                                             ":" + std::to_string(p.group));
                   },
                   [](const BinaryQuant&) {},
                   [](const LowRank& p) {
                       if (p.rank < 1) throw ConfigError("low-rank rank must be >= 1");
                   },
               },
               variant);
}

void CompressionSpec::validate_for(std::size_t n_out, std::size_t n_in) const {
    if (const auto* lr = std::get_if<LowRank>(&variant); lr && lr->rank > std::min(n_out, n_in))
        throw ContractError("rank " + std::to_string(lr->rank) + " exceeds min(" + std::to_string(n_out) + ", " +
                            std::to_string(n_in) + ")");
}

bool CompressionSpec::is_pruning() const noexcept {
    return std::holds_alternative<PruneUnstructuredLayer>(variant) ||
           std::holds_alternative<PruneUnstructuredGlobal>(variant) || std::holds_alternative<PruneNM>(variant) ||
           std::holds_alternative<PruneStructured>(variant);
}

std::string CompressionSpec::tag() const {
    return std::visit(overloaded{
                          [](const PruneUnstructuredLayer&) { return std::string("prune_layer"); },
                          [](const PruneUnstructuredGlobal&) { return std::string("prune_global"); },
                          [](const PruneNM&) { return std::string("prune_nm"); },
                          [](const PruneStructured&) { return std::string("prune_structured"); },
                          [](const BinaryQuant&) { return std::string("binary"); },
                          [](const LowRank&) { return std::string("low_rank"); },
                      },
                      variant);
}

std::string CompressionSpec::describe() const {
    std::ostringstream os;
    std::visit(overloaded{
                   [&](const PruneUnstructuredLayer& p) { os << "unstructured layer-wise pruning, sparsity " << p.sparsity; },
                   [&](const PruneUnstructuredGlobal& p) { os << "unstructured global pruning, sparsity " << p.sparsity; },
                   [&](const PruneNM& p) { os << p.keep << ":" << p.group << " pruning"; },
                   [&](const PruneStructured& p) { os << "structured row pruning, sparsity " << p.sparsity; },
                   [&](const BinaryQuant&) { os << "binary quantization"; },
                   [&](const LowRank& p) { os << "low-rank, rank " << p.rank; },
               },
               variant);
    return os.str();
}

// ---- pruning ---------------------------------------------------------------

std::size_t PruneMask::kept() const {
    return static_cast<std::size_t>(std::count(bits.values().begin(), bits.values().end(), 1.0));
}

std::size_t prune_count(double sparsity, std::size_t count) {
    // 0.29 * 100 evaluates to 28.999...; nudge before flooring.
    return static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(count) + 1e-9));
}

Tensor magnitude_scores(const Tensor& w) {
    Tensor s = w;
    for (double& v : s.values()) v = std::abs(v);
    return s;
}

namespace {

// Indices of the k lowest scores; ties go to the smaller index.
std::vector<std::size_t> lowest_k(std::span<const double> scores, std::size_t k) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto cmp = [&](std::size_t a, std::size_t b) {
        return scores[a] < scores[b] || (scores[a] == scores[b] && a < b);
    };
    if (k < idx.size()) std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), cmp);
    idx.resize(k);
    return idx;
}

}  // namespace

PruneMask prune_layerwise(const Tensor& w, double sparsity) {
    check_sparsity(sparsity);
    const Tensor scores = magnitude_scores(w);
    PruneMask mask{Tensor(w.shape(), 1.0)};
    for (std::size_t i : lowest_k(scores.data(), prune_count(sparsity, w.size()))) mask.bits[i] = 0.0;
    return mask;
}

std::vector<PruneMask> prune_global(std::span<const Tensor* const> layers, double sparsity) {
    check_sparsity(sparsity);
    if (layers.empty()) throw ContractError("prune_global needs at least one layer");
    std::vector<double> scores;
    std::vector<std::size_t> offsets;
    for (const Tensor* w : layers) {
        offsets.push_back(scores.size());
        for (double v : w->data()) scores.push_back(std::abs(v));
    }
    std::vector<PruneMask> masks;
    for (const Tensor* w : layers) masks.push_back(PruneMask{Tensor(w->shape(), 1.0)});
    // The concatenation index orders ties by (layer, flat index).
    for (std::size_t g : lowest_k(scores, prune_count(sparsity, scores.size()))) {
        const std::size_t layer =
            static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), g) - offsets.begin()) - 1;
        masks[layer].bits[g - offsets[layer]] = 0.0;
    }
    return masks;
}

std::vector<PruneMask> prune_global(const std::vector<Tensor>& layers, double sparsity) {
    std::vector<const Tensor*> ptrs;
    for (const auto& t : layers) ptrs.push_back(&t);
    return prune_global(std::span<const Tensor* const>(ptrs), sparsity);
}

PruneMask prune_nm(const Tensor& w, std::size_t keep, std::size_t group) {
    if (keep < 1 || group < 1 || keep > group)
        throw ContractError("N:M pruning needs 1 <= N <= M");
    const std::size_t n = w.rows(), m = w.cols();
    PruneMask mask{Tensor(w.shape(), 1.0)};
    std::vector<double> scores;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t start = 0; start < m; start += group) {
            const std::size_t len = std::min(group, m - start);
            // Trailing partial groups keep ceil(N * len / M).
            const std::size_t kept = len == group ? keep : (keep * len + group - 1) / group;
            scores.assign(len, 0.0);
            for (std::size_t j = 0; j < len; ++j) scores[j] = std::abs(w.at(i, start + j));
            for (std::size_t j : lowest_k(scores, len - kept)) mask.bits.at(i, start + j) = 0.0;
        }
    }
    return mask;
}

PruneMask prune_structured(const Tensor& w, double sparsity) {
    check_sparsity(sparsity);
    const std::size_t n = w.rows(), m = w.cols();
    std::vector<double> norms(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += w.at(i, j) * w.at(i, j);
        norms[i] = std::sqrt(s);
    }
    PruneMask mask{Tensor(w.shape(), 1.0)};
    for (std::size_t r : lowest_k(norms, prune_count(sparsity, n)))
        for (std::size_t j = 0; j < m; ++j) mask.bits.at(r, j) = 0.0;
    return mask;
}

PruneMask prune_with(const CompressionSpec& spec, const Tensor& w) {
    return std::visit(overloaded{
                          [&](const PruneUnstructuredLayer& p) { return prune_layerwise(w, p.sparsity); },
                          [&](const PruneUnstructuredGlobal& p) { return prune_layerwise(w, p.sparsity); },
                          [&](const PruneNM& p) { return prune_nm(w, p.keep, p.group); },
                          [&](const PruneStructured& p) { return prune_structured(w, p.sparsity); },
                          [&](const auto&) -> PruneMask {
                              throw ContractError("prune_with: " + spec.describe() + " is not a pruning spec");
                          },
                      },
                      spec.variant);
}

// ---- binary ----------------------------------------------------------------

Tensor ScaledSign::effective() const {
    Tensor out = signs;
    for (double& v : out.values()) v *= alpha;
    return out;
}

ScaledSign binarize_scaled(const Tensor& w) {
    ScaledSign s{frobenius_norm(w) / std::sqrt(static_cast<double>(w.size())), w};
    for (double& v : s.signs.values()) v = v >= 0.0 ? 1.0 : -1.0;
    return s;
}

// ---- SVD -------------------------------------------------------------------

namespace {

constexpr double kJacobiTol = 1e-12;
constexpr int kJacobiMaxSweeps = 100;

// One-sided Jacobi on the columns of g (rows x cols, rows >= cols). On return
// the columns of g are mutually orthogonal and g = W V.
void hestenes(std::vector<double>& g, std::size_t rows, std::size_t cols, std::vector<double>& v) {
    v.assign(cols * cols, 0.0);
    for (std::size_t i = 0; i < cols; ++i) v[i * cols + i] = 1.0;
    for (int sweep = 0; sweep < kJacobiMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < cols; ++p) {
            for (std::size_t q = p + 1; q < cols; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < rows; ++i) {
                    const double gp = g[i * cols + p], gq = g[i * cols + q];
                    alpha += gp * gp;
                    beta += gq * gq;
                    gamma += gp * gq;
                }
                if (gamma == 0.0 || std::abs(gamma) <= kJacobiTol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < rows; ++i) {
                    const double gp = g[i * cols + p], gq = g[i * cols + q];
                    g[i * cols + p] = c * gp - s * gq;
                    g[i * cols + q] = s * gp + c * gq;
                }
                for (std::size_t i = 0; i < cols; ++i) {
                    const double vp = v[i * cols + p], vq = v[i * cols + q];
                    v[i * cols + p] = c * vp - s * vq;
                    v[i * cols + q] = s * vp + c * vq;
                }
            }
        }
        if (!rotated) return;
    }
}

// Replaces column j of u (rows x r) with a unit vector orthogonal to columns
// [0, j), by Gram-Schmidt on canonical basis vectors.
void complete_column(Tensor& u, std::size_t j) {
    const std::size_t rows = u.rows(), r = u.cols();
    for (std::size_t e = 0; e < rows; ++e) {
        std::vector<double> cand(rows, 0.0);
        cand[e] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t k = 0; k < j; ++k) {
                double d = 0.0;
                for (std::size_t i = 0; i < rows; ++i) d += u.data()[i * r + k] * cand[i];
                for (std::size_t i = 0; i < rows; ++i) cand[i] -= d * u.data()[i * r + k];
            }
        }
        double nrm = 0.0;
        for (double x : cand) nrm += x * x;
        nrm = std::sqrt(nrm);
        if (nrm > 0.5) {
            for (std::size_t i = 0; i < rows; ++i) u.data()[i * r + j] = cand[i] / nrm;
            return;
        }
    }
}

}  // namespace

Tensor SvdResult::reconstruct() const {
    Tensor us = u;
    const std::size_t n = u.rows(), r = u.cols();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < r; ++k) us.at(i, k) *= singular_values[k];
    return matmul_value(us, v.transposed());
}

SvdResult truncated_svd(const Tensor& w, std::size_t rank) {
    const std::size_t n = w.rows(), m = w.cols();
    if (rank < 1 || rank > std::min(n, m))
        throw ContractError("truncated_svd: rank " + std::to_string(rank) + " outside [1, " +
                            std::to_string(std::min(n, m)) + "]");
    // Work on the tall orientation; W^T = U' S V'^T swaps the roles of U and V.
    const bool tall = n >= m;
    const Tensor g0 = tall ? w : w.transposed();
    const std::size_t rows = g0.rows(), cols = g0.cols();
    std::vector<double> g = g0.values();
    std::vector<double> rot;
    hestenes(g, rows, cols, rot);

    std::vector<double> sigma(cols);
    for (std::size_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < rows; ++i) s += g[i * cols + j] * g[i * cols + j];
        sigma[j] = std::sqrt(s);
    }
    std::vector<std::size_t> order(cols);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

    const double smax = sigma[order[0]];
    const double tiny = smax * 1e-13 * static_cast<double>(rows);
    Tensor left({rows, rank});
    Tensor right({cols, rank});
    std::vector<double> values(rank);
    for (std::size_t k = 0; k < rank; ++k) {
        const std::size_t j = order[k];
        values[k] = sigma[j];
        for (std::size_t i = 0; i < cols; ++i) right.at(i, k) = rot[i * cols + j];
        if (sigma[j] > tiny && sigma[j] > 0.0) {
            for (std::size_t i = 0; i < rows; ++i) left.at(i, k) = g[i * cols + j] / sigma[j];
        } else {
            complete_column(left, k);
        }
    }
    if (tall) return SvdResult{std::move(left), std::move(values), std::move(right)};
    return SvdResult{std::move(right), std::move(values), std::move(left)};
}

// ---- accounting ------------------------------------------------------------

std::size_t param_count(const CompressionSpec& spec, std::size_t n, std::size_t m) {
    const std::size_t dense = n * m;
    return std::visit(overloaded{
                          [&](const PruneUnstructuredLayer& p) { return dense - prune_count(p.sparsity, dense); },
                          [&](const PruneUnstructuredGlobal& p) { return dense - prune_count(p.sparsity, dense); },
                          [&](const PruneStructured& p) { return (n - prune_count(p.sparsity, n)) * m; },
                          [&](const PruneNM& p) {
                              const std::size_t full = m / p.group, tail = m % p.group;
                              const std::size_t tail_keep = tail ? (p.keep * tail + p.group - 1) / p.group : 0;
                              return n * (full * p.keep + tail_keep);
                          },
                          [&](const BinaryQuant&) { return dense; },
                          [&](const LowRank& p) { return p.rank * (n + m); },
                      },
                      spec.variant);
}

std::size_t weight_bits(const CompressionSpec& spec, std::size_t n, std::size_t m) {
    if (spec.is_binary()) return n * m + 64;
    return 64 * param_count(spec, n, m);
}

bool low_rank_beneficial(std::size_t rank, std::size_t n, std::size_t m) noexcept {
    return rank * (n + m) < n * m;
}

// ---- CompressedBlock -------------------------------------------------------

CompressedBlock CompressedBlock::from_dense(const DenseBlock& dense, const CompressionSpec& spec) {
    spec.validate();
    spec.validate_for(dense.out_dim(), dense.in_dim());
    CompressedBlock b;
    b.spec_ = spec;
    b.activation_ = dense.activation();
    b.out_ = dense.out_dim();
    b.in_ = dense.in_dim();
    b.bias_ = dense.bias();
    if (const auto* lr = std::get_if<LowRank>(&spec.variant)) {
        SvdResult svd = truncated_svd(dense.weight().value, lr->rank);
        Tensor bmat = svd.v.transposed();
        for (std::size_t k = 0; k < lr->rank; ++k)
            for (std::size_t j = 0; j < b.in_; ++j) bmat.at(k, j) *= svd.singular_values[k];
        b.a_ = Parameter{"factor_a", std::move(svd.u)};
        b.b_ = Parameter{"factor_b", std::move(bmat)};
    } else {
        b.weight_ = dense.weight();
    }
    b.refresh();
    return b;
}

CompressedBlock CompressedBlock::restore(const CompressionSpec& spec, Activation act, Tensor weight,
                                         FactorPair factors, Tensor bias, Tensor mask, double alpha,
                                         bool freeze_mask) {
    spec.validate();
    CompressedBlock b;
    b.spec_ = spec;
    b.activation_ = act;
    b.freeze_mask_ = freeze_mask;
    b.bias_ = Parameter{"bias", std::move(bias)};
    if (spec.is_low_rank()) {
        if (factors.a.cols() != factors.b.rows() || factors.a.rows() != b.bias_.value.size())
            throw ParseError("low-rank factors " + shape_str(factors.a.shape()) + " and " +
                             shape_str(factors.b.shape()) + " do not chain");
        b.out_ = factors.a.rows();
        b.in_ = factors.b.cols();
        b.a_ = Parameter{"factor_a", std::move(factors.a)};
        b.b_ = Parameter{"factor_b", std::move(factors.b)};
        return b;
    }
    if (weight.rows() != b.bias_.value.size()) throw ParseError("weight/bias size mismatch");
    b.out_ = weight.rows();
    b.in_ = weight.cols();
    b.weight_ = Parameter{"weight", std::move(weight)};
    if (spec.is_pruning()) {
        if (!mask.same_shape(b.weight_.value)) throw ParseError("mask shape does not match weight");
        b.mask_ = std::move(mask);
        b.mask_ready_ = true;
    } else {
        b.scaled_ = binarize_scaled(b.weight_.value);
        b.scaled_.alpha = alpha;
    }
    return b;
}

void CompressedBlock::refresh() {
    if (spec_.is_low_rank()) return;
    if (spec_.is_binary()) {
        scaled_ = binarize_scaled(weight_.value);
        return;
    }
    if (freeze_mask_ && mask_ready_) return;
    mask_ = prune_with(spec_, weight_.value).bits;
    mask_ready_ = true;
}

void CompressedBlock::set_mask(PruneMask mask) {
    if (!spec_.is_pruning()) throw ContractError("set_mask on a non-pruning block");
    if (!mask.bits.same_shape(weight_.value)) throw DimensionError("mask shape does not match weight");
    if (freeze_mask_ && mask_ready_) return;
    mask_ = std::move(mask.bits);
    mask_ready_ = true;
}

std::vector<Parameter*> CompressedBlock::parameters() {
    if (spec_.is_low_rank()) return {&a_, &b_, &bias_};
    return {&weight_, &bias_};
}

std::size_t CompressedBlock::stored_param_count() const {
    const std::size_t bias = bias_.value.size();
    if (spec_.is_pruning()) {
        std::size_t kept = 0;
        for (double v : mask_.data()) kept += v != 0.0;
        return kept + bias;
    }
    return param_count(spec_, out_, in_) + bias;
}

Tensor CompressedBlock::effective_weight() const {
    if (spec_.is_low_rank()) return matmul_value(a_.value, b_.value);
    if (spec_.is_binary()) return scaled_.effective();
    Tensor w = weight_.value;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] *= mask_[i];
    return w;
}

ad::Var CompressedBlock::forward(ForwardContext& ctx, ad::Var x) {
    if (x.value().rank() != 2 || x.value().cols() != in_)
        throw DimensionError("compressed block expects input width " + std::to_string(in_) + ", got " +
                             shape_str(x.shape()));
    ad::Var bias = ctx.bind(bias_);
    if (spec_.is_low_rank()) {
        // x B^T A^T as two thin products.
        ad::Var a = ctx.bind(a_);
        ad::Var b = ctx.bind(b_);
        ad::Var h = ad::matmul(x, ad::transpose(b));
        return apply_activation(ad::add_bias(ad::matmul(h, ad::transpose(a)), bias), activation_);
    }
    ad::Var w = ctx.bind(weight_);
    ad::Var eff;
    if (spec_.is_binary()) {
        const ScaledSign& s = scaled_;
        eff = ad::ste_apply(w, [&s](const Tensor&) { return s.effective(); });
    } else {
        const Tensor& m = mask_;
        eff = ad::ste_apply(w, [&m](const Tensor& t) {
            Tensor out = t;
            for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
            return out;
        });
    }
    return linear_forward(x, eff, bias, activation_);
}

CompressedBlock factorize_layer(const DenseBlock& block, std::size_t rank) {
    return CompressedBlock::from_dense(block, CompressionSpec{LowRank{rank}});
}

}  // namespace vcon
