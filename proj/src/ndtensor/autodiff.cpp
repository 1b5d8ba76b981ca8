#include "texgraph/autodiff.hpp"

#include "texgraph/errors.hpp"

namespace texgraph {

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape(), 0.0) {}

const Tensor& Var::value() const {
    if (!tape_) throw ContractError("use of an unbound Var");
    return tape_->nodes_[id_].value;
}

bool Var::requires_grad() const { return tape_ && tape_->nodes_[id_].requires_grad; }

Var Tape::push(Node node) {
    if (node.value.empty()) throw ContractError("recorded an empty tensor");
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::variable(Tensor value) {
    Node n;
    n.op = "variable";
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

Var Tape::parameter(Parameter& p) {
    Node n;
    n.op = "parameter";
    n.value = p.value;
    n.param = &p;
    n.requires_grad = true;
    return push(std::move(n));
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward, std::string_view op) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
        if (in.tape_ != this) throw ContractError(std::string(op) + ": input recorded on a different tape");
        n.inputs.push_back(in.id_);
        n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

Gradients Tape::backward(Var loss) const {
    if (loss.tape_ != this) throw ContractError("backward: loss belongs to a different tape");
    const Tensor& lv = nodes_[loss.id_].value;
    if (lv.size() != 1) throw ContractError("backward: loss must be a scalar, got shape " + shape_str(lv.shape()));

    Gradients g;
    g.tape_ = this;
    g.grads_.resize(nodes_.size());
    g.grads_[loss.id_] = Tensor(lv.shape(), 1.0);

    std::vector<Tensor*> slots;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
        const Node& node = nodes_[i];
        if (!node.requires_grad || !node.backward || g.grads_[i].empty()) continue;
        slots.assign(node.inputs.size(), nullptr);
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            const std::size_t in = node.inputs[k];
            if (!nodes_[in].requires_grad) continue;
            if (g.grads_[in].empty()) g.grads_[in] = Tensor(nodes_[in].value.shape(), 0.0);
            slots[k] = &g.grads_[in];
        }
        node.backward(g.grads_[i], node.value, slots);
    }
    return g;
}

Tensor Gradients::of(Var v) const {
    const Tensor& gt = grads_.at(v.id());
    if (gt.empty()) return Tensor(v.shape(), 0.0);
    return gt;
}

void Gradients::accumulate_into_parameters() const {
    for (std::size_t i = 0; i < grads_.size(); ++i) {
        Parameter* p = tape_->nodes_[i].param;
        if (!p || grads_[i].empty()) continue;
        if (p->grad.empty()) p->grad = Tensor(p->value.shape(), 0.0);
        p->grad += grads_[i];
    }
}

}  // namespace texgraph
