#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "texgraph/tensor.hpp"

namespace texgraph {

/// A learnable tensor with its accumulated gradient.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Tensor value);

    void zero_grad() { grad.fill(0.0); }

    std::string name;
    Tensor value;
    Tensor grad;
    /// Optimizers clamp the value to at least this after every step.
    double lower_bound = -std::numeric_limits<double>::infinity();
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }
    bool requires_grad() const;

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Backward rule of one recorded op. `output` is the op's forward value and
/// `input_grads[k]` the gradient slot of input k (nullptr when that input needs
/// no gradient). Rules must add into the slots, never overwrite them: an input
/// used twice shares one slot.
using BackwardFn =
    std::function<void(const Tensor& upstream, const Tensor& output, std::span<Tensor* const> input_grads)>;

class Gradients;

/// Append-only recording of differentiable operations.
///
/// Inputs always precede their consumers, so a reverse sweep over the node
/// sequence is a valid topological order. Gradient accumulation follows that
/// fixed order, which makes backward bitwise reproducible.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives a gradient.
    Var constant(Tensor value);
    /// Leaf that receives a gradient (readable from Gradients::of).
    Var variable(Tensor value);
    /// Leaf bound to `p`; Gradients::accumulate_into_parameters adds into p.grad.
    Var parameter(Parameter& p);

    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward, std::string_view op);

    /// Reverse sweep from a single-element `loss`. Does not mutate the tape, so
    /// it may be called repeatedly.
    Gradients backward(Var loss) const;

    std::size_t size() const noexcept { return nodes_.size(); }
    std::string_view op_name(std::size_t id) const { return nodes_.at(id).op; }

private:
    friend class Var;
    friend class Gradients;

    struct Node {
        std::string_view op;
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };

    Var push(Node node);

    std::deque<Node> nodes_;
};

/// Result of one backward sweep: a gradient slot per recorded node.
class Gradients {
public:
    /// Gradient of the loss w.r.t. `v`. Zeros when no gradient reached `v`.
    Tensor of(Var v) const;

    /// Adds every parameter leaf's gradient into its Parameter::grad, in node order.
    void accumulate_into_parameters() const;

private:
    friend class Tape;
    const Tape* tape_ = nullptr;
    std::vector<Tensor> grads_;
};

}  // namespace texgraph
