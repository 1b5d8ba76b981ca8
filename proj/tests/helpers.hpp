#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <cstddef>
#include <string>

#include "texgraph/rng.hpp"
#include "texgraph/tensor.hpp"

namespace texgraph::testing {

inline void expect_near(const Tensor& got, const Tensor& want, double tol) {
    ASSERT_EQ(got.shape(), want.shape()) << shape_str(got.shape()) << " vs " << shape_str(want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) {
        ASSERT_NEAR(got[i], want[i], tol) << "at flat index " << i;
    }
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return random_uniform(std::move(shape), lo, hi, rng);
}

/// Element (r, c, ch) of an H x W x C map.
inline double px(const Tensor& m, std::size_t r, std::size_t c, std::size_t ch) {
    return m[(r * m.extent(1) + c) * m.extent(2) + ch];
}

}  // namespace texgraph::testing
