#include <string>

#include "texgraph/errors.hpp"
#include "texgraph/ops.hpp"

namespace texgraph {

namespace {

constexpr std::ptrdiff_t kOutside = -1;

// taps[o * k + t] = input coordinate read by output o through kernel tap t,
// or kOutside for zero padding.
std::vector<std::ptrdiff_t> tap_table(std::size_t in, std::size_t out, std::size_t k, const ConvSpec& s) {
    std::vector<std::ptrdiff_t> taps(out * k);
    const auto n = static_cast<std::ptrdiff_t>(in);
    for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t t = 0; t < k; ++t) {
            auto pos = static_cast<std::ptrdiff_t>(o * s.stride + t * s.dilation) - static_cast<std::ptrdiff_t>(s.pad);
            if (pos < 0 || pos >= n) {
                if (s.pad_mode == PadMode::zero)
                    pos = kOutside;
                else
                    pos = pos < 0 ? 0 : n - 1;
            }
            taps[o * k + t] = pos;
        }
    }
    return taps;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvSpec& spec) {
    if (kernel < 1 || spec.stride < 1 || spec.dilation < 1) {
        throw ContractError("conv2d: kernel, stride and dilation must be >= 1");
    }
    const auto span = static_cast<std::ptrdiff_t>(in + 2 * spec.pad) -
                      static_cast<std::ptrdiff_t>(spec.dilation * (kernel - 1)) - 1;
    if (span < 0) {
        throw DimensionError("conv2d: input extent " + std::to_string(in) + " with pad " + std::to_string(spec.pad) +
                             " is smaller than the dilated kernel extent " +
                             std::to_string(spec.dilation * (kernel - 1) + 1));
    }
    return static_cast<std::size_t>(span) / spec.stride + 1;
}

Var conv2d(Var x, Var w, const ConvSpec& spec) {
    const MapShape in = map_shape(x.value());
    const Tensor& wv = w.value();
    if (wv.rank() != 4 || wv.extent(0) != wv.extent(1) || wv.extent(2) != in.c) {
        throw DimensionError("conv2d: kernel " + shape_str(wv.shape()) + " incompatible with input " +
                             shape_str(x.value().shape()));
    }
    const std::size_t k = wv.extent(0), cin = in.c, cout = wv.extent(3);
    const std::size_t oh = conv_output_extent(in.h, k, spec);
    const std::size_t ow = conv_output_extent(in.w, k, spec);
    auto rows = tap_table(in.h, oh, k, spec);
    auto cols = tap_table(in.w, ow, k, spec);

    const Tensor& xv = x.value();
    Tensor out({oh, ow, cout});
    for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
            double* acc = &out[(oy * ow + ox) * cout];
            for (std::size_t ky = 0; ky < k; ++ky) {
                const auto iy = rows[oy * k + ky];
                if (iy == kOutside) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const auto ix = cols[ox * k + kx];
                    if (ix == kOutside) continue;
                    const double* px = &xv[(static_cast<std::size_t>(iy) * in.w + static_cast<std::size_t>(ix)) * cin];
                    const double* wk = &wv[(ky * k + kx) * cin * cout];
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double v = px[ci];
                        const double* wrow = wk + ci * cout;
                        for (std::size_t co = 0; co < cout; ++co) acc[co] += v * wrow[co];
                    }
                }
            }
        }
    }

    return x.tape().record(
        std::move(out), {x, w},
        [x, w, in, k, cout, oh, ow, rows = std::move(rows), cols = std::move(cols)](
            const Tensor& g, const Tensor&, std::span<Tensor* const> gi) {
            const Tensor& xv = x.value();
            const Tensor& wv = w.value();
            const std::size_t cin = in.c;
            Tensor* gx = gi[0];
            Tensor* gw = gi[1];
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const double* go = &g[(oy * ow + ox) * cout];
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const auto iy = rows[oy * k + ky];
                        if (iy == kOutside) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const auto ix = cols[ox * k + kx];
                            if (ix == kOutside) continue;
                            const std::size_t pix =
                                (static_cast<std::size_t>(iy) * in.w + static_cast<std::size_t>(ix)) * cin;
                            const std::size_t tap = (ky * k + kx) * cin * cout;
                            for (std::size_t ci = 0; ci < cin; ++ci) {
                                const double* wrow = &wv[tap + ci * cout];
                                if (gx) {
                                    double acc = 0.0;
                                    for (std::size_t co = 0; co < cout; ++co) acc += go[co] * wrow[co];
                                    (*gx)[pix + ci] += acc;
                                }
                                if (gw) {
                                    const double v = xv[pix + ci];
                                    double* gwrow = &(*gw)[tap + ci * cout];
                                    for (std::size_t co = 0; co < cout; ++co) gwrow[co] += v * go[co];
                                }
                            }
                        }
                    }
                }
            }
        },
        "conv2d");
}

Var pointwise_conv(Var x, Var w) {
    const MapShape m = map_shape(x.value());
    const Tensor& wv = w.value();
    if (wv.rank() != 2 || wv.extent(0) != m.c) {
        throw DimensionError("pointwise_conv: weights " + shape_str(wv.shape()) + " incompatible with input " +
                             shape_str(x.value().shape()));
    }
    const Var flat = reshape(x, {m.pixels(), m.c});
    return reshape(matmul(flat, w), {m.h, m.w, wv.extent(1)});
}

}  // namespace texgraph
