#pragma once

// Define-by-run reverse-mode differentiation over dense tensors.
//
// A Tape owns every intermediate value of one forward pass. Ops append a node
// holding the output value plus a backward rule; backward() walks the nodes in
// reverse insertion order, which is a valid reverse topological order because
// a node can only reference nodes created before it. Build a fresh Tape per
// training step.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "vcon/tensor.hpp"

namespace vcon::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its Tape lives.
class Var {
public:
    Var() = default;

    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Result of a backward pass: node id -> accumulated gradient. Only nodes
/// that require grad and are reachable from the loss have an entry.
class Gradients {
public:
    bool has(Var v) const noexcept;
    const Tensor& at(Var v) const;
    const Tensor* find(Var v) const noexcept;
    std::size_t count() const noexcept;

private:
    friend class Tape;
    std::vector<std::optional<Tensor>> grads_;
};

class Tape {
public:
    // Receives the output gradient and accumulates into input gradients via
    // Tape::accumulate.
    using BackwardFn = std::function<void(const Tensor& grad_out, Tape& tape)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = false);
    Var push(Tensor value, std::span<const Var> inputs, BackwardFn backward);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Reverse pass from a scalar loss. Throws ContractError if the loss is
    /// not a single element or does not belong to this tape.
    Gradients backward(Var loss);

    /// Adds g into the pending gradient of v (fan-out accumulates). Only
    /// meaningful inside a backward rule.
    void accumulate(Var v, const Tensor& g);

    /// Drops every node; outstanding Vars become invalid.
    void reset() noexcept { nodes_.clear(); }

private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        BackwardFn backward;
    };

    void check_owned(Var v) const;

    std::vector<Node> nodes_;
    std::vector<std::optional<Tensor>>* pending_ = nullptr;
};

// ---- ops ------------------------------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);

enum class Elementwise { add, sub, mul, relu, gelu_approx, scale };

/// Generic elementwise entry point; `c` is only read for Elementwise::scale.
/// Binary ops need `b`; unary ops ignore it.
Var elementwise(Elementwise op, Var a, std::optional<Var> b = std::nullopt, double c = 1.0);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var relu(Var a);
Var gelu_approx(Var a);
Var scale(Var a, double c);

/// x[batch x n] + bias[n] broadcast over rows.
Var add_bias(Var x, Var bias);

/// Sum of all elements, returned as a one-element tensor.
Var sum(Var a);

/// Mean negative log-softmax of the labelled class, max-subtracted.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

/// Straight-through estimator: forward is transform(x), backward passes the
/// incoming gradient through unchanged.
Var ste_apply(Var x, const std::function<Tensor(const Tensor&)>& transform);

/// beta * f + (1 - beta) * g with exact endpoints: beta == 1 yields f's
/// values and beta == 0 yields g's values bit-for-bit. Gradients are
/// beta * grad to f and (1 - beta) * grad to g.
Var blend(Var f, Var g, double beta);

double gelu_value(double x) noexcept;
double gelu_derivative(double x) noexcept;

}  // namespace vcon::ad
