#include <algorithm>

#include "texgraph/errors.hpp"
#include "texgraph/trainer.hpp"

namespace texgraph::trainer {

void sgd_step(std::span<Parameter* const> params, SgdState& state, double lr, double momentum, double weight_decay) {
    if (state.buffers.empty()) {
        for (const Parameter* p : params) state.buffers.emplace_back(p->value.shape(), 0.0);
    }
    if (state.buffers.size() != params.size()) {
        throw ContractError("sgd_step: " + std::to_string(state.buffers.size()) + " momentum buffers for " +
                            std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        Tensor& buf = state.buffers[i];
        if (buf.shape() != p.value.shape() || p.grad.shape() != p.value.shape()) {
            throw ContractError("sgd_step: shape mismatch for " + p.name + ": value " + shape_str(p.value.shape()) +
                                ", grad " + shape_str(p.grad.shape()) + ", buffer " + shape_str(buf.shape()));
        }
        auto v = p.value.data();
        auto g = p.grad.data();
        auto b = buf.data();
        for (std::size_t j = 0; j < v.size(); ++j) {
            b[j] = momentum * b[j] + g[j] + weight_decay * v[j];
            v[j] = std::max(v[j] - lr * b[j], p.lower_bound);
        }
    }
}

}  // namespace texgraph::trainer
