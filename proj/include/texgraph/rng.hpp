#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>

#include "texgraph/tensor.hpp"

namespace texgraph {

/// The single engine used for every seeded stream (init, shuffling, data).
using Rng = std::mt19937_64;

inline Tensor random_uniform(Shape shape, double lo, double hi, Rng& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

/// Zero-mean uniform weights with standard deviation 1/sqrt(fan_in).
inline Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    return random_uniform(std::move(shape), -bound, bound, rng);
}

}  // namespace texgraph
