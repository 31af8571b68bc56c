#include "vcon/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "vcon/kernels.hpp"

namespace vcon::ad {

// ---- Var / Gradients -------------------------------------------------------

const Tensor& Var::value() const {
    if (!tape_) throw ContractError("use of an unbound Var");
    return tape_->value(*this);
}

bool Var::requires_grad() const {
    if (!tape_) throw ContractError("use of an unbound Var");
    return tape_->requires_grad(*this);
}

bool Gradients::has(Var v) const noexcept { return find(v) != nullptr; }

const Tensor* Gradients::find(Var v) const noexcept {
    if (v.id() >= grads_.size() || !grads_[v.id()]) return nullptr;
    return &*grads_[v.id()];
}

const Tensor& Gradients::at(Var v) const {
    if (const Tensor* g = find(v)) return *g;
    throw ContractError("no gradient for node " + std::to_string(v.id()));
}

std::size_t Gradients::count() const noexcept {
    return static_cast<std::size_t>(std::count_if(grads_.begin(), grads_.end(),
                                                  [](const auto& g) { return g.has_value(); }));
}

// ---- Tape ------------------------------------------------------------------

void Tape::check_owned(Var v) const {
    if (v.tape() != this || v.id() >= nodes_.size())
        throw ContractError("Var " + std::to_string(v.id()) + " does not belong to this tape");
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), requires_grad, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    bool rg = false;
    for (Var in : inputs) {
        check_owned(in);
        rg = rg || nodes_[in.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), rg, rg ? std::move(backward) : BackwardFn{}});
    return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
    check_owned(v);
    return nodes_[v.id()].value;
}

bool Tape::requires_grad(Var v) const {
    check_owned(v);
    return nodes_[v.id()].requires_grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
    check_owned(v);
    if (!pending_) throw ContractError("accumulate() called outside backward()");
    if (!nodes_[v.id()].requires_grad) return;
    if (!g.same_shape(nodes_[v.id()].value))
        throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                             shape_str(nodes_[v.id()].value.shape()));
    auto& slot = (*pending_)[v.id()];
    if (!slot) {
        slot = g;
    } else {
        kernels::active().add(g.size(), slot->data().data(), g.data().data(), slot->data().data());
    }
}

Gradients Tape::backward(Var loss) {
    check_owned(loss);
    if (nodes_[loss.id()].value.size() != 1)
        throw ContractError("backward() needs a scalar loss, got shape " +
                            shape_str(nodes_[loss.id()].value.shape()));
    Gradients out;
    out.grads_.assign(nodes_.size(), std::nullopt);
    if (!nodes_[loss.id()].requires_grad) return out;

    pending_ = &out.grads_;
    out.grads_[loss.id()] = Tensor(nodes_[loss.id()].value.shape(), 1.0);
    try {
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& node = nodes_[i];
            if (!out.grads_[i] || !node.backward) continue;
            // Copy: the rule may accumulate into other slots, never into its own.
            const Tensor g = *out.grads_[i];
            node.backward(g, *this);
        }
    } catch (...) {
        pending_ = nullptr;
        throw;
    }
    pending_ = nullptr;
    return out;
}

// ---- ops -------------------------------------------------------------------

namespace {

Tape& tape_of(Var a) {
    if (!a.tape()) throw ContractError("use of an unbound Var");
    return *a.tape();
}

void require_same_shape(const char* op, Var a, Var b) {
    if (a.tape() != b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

Tensor gemm(const Tensor& a, const Tensor& b) { return matmul_value(a, b); }

}  // namespace

Var matmul(Var a, Var b) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
        throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                             shape_str(bv.shape()));
    const Var ins[] = {a, b};
    return tape.push(gemm(av, bv), ins, [a, b](const Tensor& g, Tape& t) {
        if (a.requires_grad()) t.accumulate(a, gemm(g, b.value().transposed()));
        if (b.requires_grad()) t.accumulate(b, gemm(a.value().transposed(), g));
    });
}

Var transpose(Var a) {
    Tape& tape = tape_of(a);
    const Var ins[] = {a};
    return tape.push(a.value().transposed(), ins,
                     [a](const Tensor& g, Tape& t) { t.accumulate(a, g.transposed()); });
}

Var add(Var a, Var b) {
    require_same_shape("add", a, b);
    Tensor out(a.shape());
    kernels::active().add(out.size(), a.value().data().data(), b.value().data().data(), out.data().data());
    const Var ins[] = {a, b};
    return tape_of(a).push(std::move(out), ins, [a, b](const Tensor& g, Tape& t) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var sub(Var a, Var b) {
    require_same_shape("sub", a, b);
    Tensor out(a.shape());
    kernels::active().sub(out.size(), a.value().data().data(), b.value().data().data(), out.data().data());
    const Var ins[] = {a, b};
    return tape_of(a).push(std::move(out), ins, [a, b](const Tensor& g, Tape& t) {
        t.accumulate(a, g);
        if (b.requires_grad()) {
            Tensor neg(g.shape());
            kernels::active().scale(g.size(), -1.0, g.data().data(), neg.data().data());
            t.accumulate(b, neg);
        }
    });
}

Var mul(Var a, Var b) {
    require_same_shape("mul", a, b);
    const auto& k = kernels::active();
    Tensor out(a.shape());
    k.mul(out.size(), a.value().data().data(), b.value().data().data(), out.data().data());
    const Var ins[] = {a, b};
    return tape_of(a).push(std::move(out), ins, [a, b](const Tensor& g, Tape& t) {
        const auto& k = kernels::active();
        if (a.requires_grad()) {
            Tensor ga(g.shape());
            k.mul(g.size(), g.data().data(), b.value().data().data(), ga.data().data());
            t.accumulate(a, ga);
        }
        if (b.requires_grad()) {
            Tensor gb(g.shape());
            k.mul(g.size(), g.data().data(), a.value().data().data(), gb.data().data());
            t.accumulate(b, gb);
        }
    });
}

Var relu(Var a) {
    Tensor out(a.shape());
    kernels::active().relu(out.size(), a.value().data().data(), out.data().data());
    const Var ins[] = {a};
    return tape_of(a).push(std::move(out), ins, [a](const Tensor& g, Tape& t) {
        Tensor ga(g.shape());
        kernels::active().relu_backward(g.size(), a.value().data().data(), g.data().data(), ga.data().data());
        t.accumulate(a, ga);
    });
}

namespace {
constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

double gelu_value(double x) noexcept {
    return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x)));
}

double gelu_derivative(double x) noexcept {
    const double th = std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x));
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
}

Var gelu_approx(Var a) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = gelu_value(av[i]);
    const Var ins[] = {a};
    return tape_of(a).push(std::move(out), ins, [a](const Tensor& g, Tape& t) {
        const Tensor& av = a.value();
        Tensor ga(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * gelu_derivative(av[i]);
        t.accumulate(a, ga);
    });
}

Var scale(Var a, double c) {
    Tensor out(a.shape());
    kernels::active().scale(out.size(), c, a.value().data().data(), out.data().data());
    const Var ins[] = {a};
    return tape_of(a).push(std::move(out), ins, [a, c](const Tensor& g, Tape& t) {
        Tensor ga(g.shape());
        kernels::active().scale(g.size(), c, g.data().data(), ga.data().data());
        t.accumulate(a, ga);
    });
}

Var elementwise(Elementwise op, Var a, std::optional<Var> b, double c) {
    auto need_b = [&]() -> Var {
        if (!b) throw ContractError("binary elementwise op needs a second operand");
        return *b;
    };
    switch (op) {
        case Elementwise::add: return add(a, need_b());
        case Elementwise::sub: return sub(a, need_b());
        case Elementwise::mul: return mul(a, need_b());
        case Elementwise::relu: return relu(a);
        case Elementwise::gelu_approx: return gelu_approx(a);
        case Elementwise::scale: return scale(a, c);
    }
    throw ContractError("unknown elementwise op");
}

Var add_bias(Var x, Var bias) {
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    if (xv.rank() != 2 || bv.rank() != 1 || xv.cols() != bv.size())
        throw DimensionError("add_bias: cannot add bias " + shape_str(bv.shape()) + " to " +
                             shape_str(xv.shape()));
    const auto& k = kernels::active();
    const std::size_t n = xv.rows(), m = xv.cols();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < n; ++i)
        k.add(m, xv.data().data() + i * m, bv.data().data(), out.data().data() + i * m);
    const Var ins[] = {x, bias};
    return tape_of(x).push(std::move(out), ins, [x, bias, n, m](const Tensor& g, Tape& t) {
        t.accumulate(x, g);
        if (bias.requires_grad()) {
            Tensor gb({m});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
            t.accumulate(bias, gb);
        }
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    const Var ins[] = {a};
    return tape_of(a).push(Tensor::scalar(s), ins, [a](const Tensor& g, Tape& t) {
        t.accumulate(a, Tensor(a.shape(), g[0]));
    });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    const Tensor& lv = logits.value();
    if (lv.rank() != 2) throw DimensionError("softmax_cross_entropy: logits must be batch x classes");
    const std::size_t n = lv.rows(), c = lv.cols();
    if (labels.size() != n)
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(n) + " rows");
    Tensor probs({n, c});
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw IndexError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
        const double* row = lv.data().data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const double logz = std::log(z);
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - mx - logz);
        loss -= row[y] - mx - logz;
    }
    loss /= static_cast<double>(n);
    std::vector<int> ys(labels.begin(), labels.end());
    const Var ins[] = {logits};
    return tape_of(logits).push(Tensor::scalar(loss), ins,
                                [logits, probs = std::move(probs), ys = std::move(ys), n, c](
                                    const Tensor& g, Tape& t) {
                                    Tensor gl = probs;
                                    for (std::size_t i = 0; i < n; ++i) gl[i * c + ys[i]] -= 1.0;
                                    kernels::active().scale(gl.size(), g[0] / static_cast<double>(n),
                                                            gl.data().data(), gl.data().data());
                                    t.accumulate(logits, gl);
                                });
}

Var ste_apply(Var x, const std::function<Tensor(const Tensor&)>& transform) {
    Tensor out = transform(x.value());
    if (!out.same_shape(x.value()))
        throw DimensionError("ste_apply: transform changed shape " + shape_str(x.shape()) + " -> " +
                             shape_str(out.shape()));
    const Var ins[] = {x};
    return tape_of(x).push(std::move(out), ins, [x](const Tensor& g, Tape& t) { t.accumulate(x, g); });
}

Var blend(Var f, Var g, double beta) {
    require_same_shape("blend", f, g);
    Tensor out(f.shape());
    const auto& k = kernels::active();
    if (beta == 1.0) {
        out = f.value();
    } else if (beta == 0.0) {
        out = g.value();
    } else {
        k.scale(out.size(), beta, f.value().data().data(), out.data().data());
        k.axpy(out.size(), 1.0 - beta, g.value().data().data(), out.data().data());
    }
    const Var ins[] = {f, g};
    return tape_of(f).push(std::move(out), ins, [f, g, beta](const Tensor& go, Tape& t) {
        const auto& k = kernels::active();
        if (f.requires_grad()) {
            Tensor gf(go.shape());
            k.scale(go.size(), beta, go.data().data(), gf.data().data());
            t.accumulate(f, gf);
        }
        if (g.requires_grad()) {
            Tensor gg(go.shape());
            k.scale(go.size(), 1.0 - beta, go.data().data(), gg.data().data());
            t.accumulate(g, gg);
        }
    });
}

}  // namespace vcon::ad
