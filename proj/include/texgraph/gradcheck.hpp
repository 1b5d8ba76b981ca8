#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "texgraph/autodiff.hpp"

namespace texgraph {

struct GradCheckReport {
    /// max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-8)
    double max_rel_error = 0.0;
    /// "<parameter name>[<flat index>]" of the worst coordinate.
    std::string worst_coordinate;
    std::size_t coordinates = 0;
};

/// Builds the scalar function on a fresh tape. Must bind parameters via Tape::parameter.
using TapeFunction = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients of `f` w.r.t. every coordinate of `params`
/// with central differences of step `h`. Parameter values and gradients are
/// restored on return. Throws OracleError if any evaluation is non-finite.
GradCheckReport check_gradients(const TapeFunction& f, std::span<Parameter* const> params, double h = 1e-6);

/// Single-input form: f(tape, x) must return a scalar. Returns the max relative error.
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h = 1e-6);

}  // namespace texgraph
