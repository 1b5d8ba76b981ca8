#pragma once

// Differentiable operations recorded on a Tape. All binary ops require exactly
// equal shapes; the only broadcast is add_bias over the trailing axis.

#include <cstddef>
#include <span>
#include <vector>

#include "texgraph/autodiff.hpp"

namespace texgraph {

enum class PadMode { zero, replicate };

struct ConvSpec {
    std::size_t stride = 1;
    std::size_t pad = 0;
    std::size_t dilation = 1;
    PadMode pad_mode = PadMode::zero;
};

/// floor((in + 2 pad - dilation (k - 1) - 1) / stride) + 1.
/// Throws DimensionError when the result would be < 1.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvSpec& spec);

Var matmul(Var a, Var b);
Var transpose(Var a);

/// x: H x W x Cin, w: k x k x Cin x Cout.
Var conv2d(Var x, Var w, const ConvSpec& spec);
/// 1x1 convolution without padding: x: H x W x Cin, w: Cin x Cout.
Var pointwise_conv(Var x, Var w);
/// Adds b (length = last extent of x) along the trailing axis.
Var add_bias(Var x, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var exp(Var x);
Var relu(Var x);
Var sigmoid(Var x);

/// Max-subtracted softmax along `axis`.
Var softmax(Var x, std::size_t axis);

enum class Reduction { sum, mean };

/// Reduces over `axes` and drops them; reducing every axis yields shape [1].
Var reduce(Var x, std::vector<std::size_t> axes, Reduction kind);
Var sum(Var x);

Var concat(std::span<const Var> xs, std::size_t axis);
Var reshape(Var x, Shape shape);

/// Nearest-neighbour resize of an H x W x C map; source index floor(dst * in / out).
Var resize_nearest(Var x, std::size_t out_h, std::size_t out_w);
/// Per-channel spatial mean of an H x W x C map, shape [C].
Var global_avg_pool(Var x);
/// Window [row, row+h) x [col, col+w) of an H x W x C map.
Var crop(Var x, std::size_t row, std::size_t col, std::size_t h, std::size_t w);

/// a: Na x D, b: Nb x D -> Na x Nb squared Euclidean distances.
Var pairwise_sq_dist(Var a, Var b);

/// x / max(||x||_2, 1e-12) over all elements.
Var l2_normalize(Var x);

}  // namespace texgraph
