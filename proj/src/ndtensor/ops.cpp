#include "texgraph/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "texgraph/errors.hpp"

namespace texgraph {

namespace {

// Splits a shape around `axis` into (outer, axis extent, inner).
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t n = 1;
    std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                             shape_str(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.n = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

template <class F, class DF>
Var unary(Var x, const char* op, F f, DF df) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return x.tape().record(
        std::move(out), {x},
        [x, df](const Tensor& g, const Tensor& y, std::span<Tensor* const> gi) {
            const Tensor& xv = x.value();
            Tensor& gx = *gi[0];
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], y[i]);
        },
        op);
}

double stable_sigmoid(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
    }
    const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* row = &out[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            const double* brow = (bv.data().data() + (p * n));
            for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
        }
    }
    return a.tape().record(
        std::move(out), {a, b},
        [a, b, m, k, n](const Tensor& g, const Tensor&, std::span<Tensor* const> gi) {
            const Tensor& av = a.value();
            const Tensor& bv = b.value();
            if (gi[0]) {
                Tensor& ga = *gi[0];
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
                        ga[i * k + p] += acc;
                    }
                }
            }
            if (gi[1]) {
                Tensor& gb = *gi[1];
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = av[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                    }
                }
            }
        },
        "matmul");
}

Var transpose(Var a) {
    const Tensor& av = a.value();
    if (av.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_str(av.shape()));
    const std::size_t r = av.extent(0), c = av.extent(1);
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
    return a.tape().record(
        std::move(out), {a},
        [r, c](const Tensor& g, const Tensor&, std::span<Tensor* const> gi) {
            Tensor& ga = *gi[0];
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
        },
        "transpose");
}

Var add_bias(Var x, Var b) {
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    if (bv.rank() != 1 || bv.extent(0) != xv.shape().back()) {
        throw DimensionError("add_bias: bias " + shape_str(bv.shape()) + " does not match trailing axis of " +
                             shape_str(xv.shape()));
    }
    const std::size_t c = bv.size();
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % c];
    return x.tape().record(
        std::move(out), {x, b},
        [c](const Tensor& g, const Tensor&, std::span<Tensor* const> gi) {
            if (gi[0]) *gi[0] += g;
            if (gi[1]) {
                Tensor& gb = *gi[1];
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
            }
        },
        "add_bias");
}

Var add(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    out += b.value();
    return a.tape().record(
        std::move(out), {a, b},
        [](const Tensor& g, const Tensor&, std::span<Tensor* const> gi) {
            if (gi[0]) *gi[0] += g;
            if (gi[1]) *gi[1] += g;
        },
        "add");
}

Var sub(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "sub");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return a.tape().record(
        std::move(out), {a, b},
        [](const Tensor& g, const Tensor&, std::span<Tensor* const> gi) {
            if (gi[0]) *gi[0] += g;
            if (gi[1]) {
                Tensor& gb = *gi[1];
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        },
        "sub");
}

Var mul(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "mul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return a.tape().record(
        std::move(out), {a, b},
        [a, b](const Tensor& g, const Tensor&, std::span<Tensor* const> gi) {
            const Tensor& av = a.value();
            const Tensor& bv = b.value();
            if (gi[0]) {
                Tensor& ga = *gi[0];
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (gi[1]) {
                Tensor& gb = *gi[1];
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
        },
        "mul");
}

Var scale(Var x, double factor) {
    return unary(x, "scale", [factor](double v) { return factor * v; },
                 [factor](double, double) { return factor; });
}

Var exp(Var x) {
    return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var relu(Var x) {
    return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
    return unary(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var softmax(Var x, std::size_t axis) {
    const Tensor& xv = x.value();
    const AxisSplit s = split_axis(xv.shape(), axis, "softmax");
    Tensor out(xv.shape());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.n * s.inner + in;
            double mx = xv[base];
            for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, xv[base + j * s.inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < s.n; ++j) {
                const double e = std::exp(xv[base + j * s.inner] - mx);
                out[base + j * s.inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
        }
    }
    return x.tape().record(
        std::move(out), {x},
        [s](const Tensor& g, const Tensor& y, std::span<Tensor* const> gi) {
            Tensor& gx = *gi[0];
            for (std::size_t o = 0; o < s.outer; ++o) {
                for (std::size_t in = 0; in < s.inner; ++in) {
                    const std::size_t base = o * s.n * s.inner + in;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < s.n; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
                    for (std::size_t j = 0; j < s.n; ++j) {
                        const std::size_t idx = base + j * s.inner;
                        gx[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            }
        },
        "softmax");
}

Var reduce(Var x, std::vector<std::size_t> axes, Reduction kind) {
    const Tensor& xv = x.value();
    const Shape& in_shape = xv.shape();
    std::vector<bool> reduced(in_shape.size(), false);
    for (auto a : axes) {
        if (a >= in_shape.size() || reduced[a]) {
            throw DimensionError("reduce: invalid or repeated axis " + std::to_string(a) + " for shape " +
                                 shape_str(in_shape));
        }
        reduced[a] = true;
    }
    Shape out_shape;
    std::size_t count = 1;
    for (std::size_t i = 0; i < in_shape.size(); ++i) {
        if (reduced[i])
            count *= in_shape[i];
        else
            out_shape.push_back(in_shape[i]);
    }
    if (out_shape.empty()) out_shape = {1};

    // Flat input index -> flat output index.
    std::vector<std::size_t> target(xv.size());
    {
        std::vector<std::size_t> idx(in_shape.size(), 0);
        for (std::size_t flat = 0; flat < xv.size(); ++flat) {
            std::size_t o = 0;
            for (std::size_t i = 0; i < in_shape.size(); ++i) {
                if (!reduced[i]) o = o * in_shape[i] + idx[i];
            }
            target[flat] = o;
            for (std::size_t i = in_shape.size(); i-- > 0;) {
                if (++idx[i] < in_shape[i]) break;
                idx[i] = 0;
            }
        }
    }
    const double factor = kind == Reduction::mean ? 1.0 / static_cast<double>(count) : 1.0;
    Tensor out(out_shape);
    for (std::size_t flat = 0; flat < xv.size(); ++flat) out[target[flat]] += xv[flat];
    if (kind == Reduction::mean) {
        for (auto& v : out.data()) v *= factor;
    }
    return x.tape().record(
        std::move(out), {x},
        [target = std::move(target), factor](const Tensor& g, const Tensor&, std::span<Tensor* const> gi) {
            Tensor& gx = *gi[0];
            for (std::size_t flat = 0; flat < target.size(); ++flat) gx[flat] += factor * g[target[flat]];
        },
        "reduce");
}

Var sum(Var x) {
    std::vector<std::size_t> all(x.value().rank());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return reduce(x, std::move(all), Reduction::sum);
}

Var concat(std::span<const Var> xs, std::size_t axis) {
    if (xs.empty()) throw ContractError("concat: no inputs");
    const Shape& first = xs[0].value().shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> widths;
    for (const auto& v : xs) {
        const Shape& s = v.value().shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
        if (!ok) throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first));
        out_shape[axis] += s[axis];
    }
    const AxisSplit os = split_axis(out_shape, axis, "concat");
    for (const auto& v : xs) widths.push_back(v.value().extent(axis) * os.inner);
    const std::size_t row = os.n * os.inner;

    Tensor out(out_shape);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const Tensor& xv = xs[k].value();
        for (std::size_t o = 0; o < os.outer; ++o)
            std::copy_n(xv.data().data() + o * widths[k], widths[k], out.data().data() + o * row + offset);
        offset += widths[k];
    }
    return xs[0].tape().record(
        std::move(out), std::vector<Var>(xs.begin(), xs.end()),
        [widths, row, outer = os.outer](const Tensor& g, const Tensor&, std::span<Tensor* const> gi) {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < gi.size(); ++k) {
                if (gi[k]) {
                    Tensor& gx = *gi[k];
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t j = 0; j < widths[k]; ++j) gx[o * widths[k] + j] += g[o * row + offset + j];
                }
                offset += widths[k];
            }
        },
        "concat");
}

Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return x.tape().record(
        std::move(out), {x},
        [](const Tensor& g, const Tensor&, std::span<Tensor* const> gi) {
            Tensor& gx = *gi[0];
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        },
        "reshape");
}

Var resize_nearest(Var x, std::size_t out_h, std::size_t out_w) {
    const MapShape in = map_shape(x.value());
    if (out_h == 0 || out_w == 0) throw DimensionError("resize_nearest: target extents must be positive");
    std::vector<std::size_t> src(out_h * out_w);
    for (std::size_t r = 0; r < out_h; ++r)
        for (std::size_t c = 0; c < out_w; ++c) src[r * out_w + c] = (r * in.h / out_h) * in.w + (c * in.w / out_w);
    const Tensor& xv = x.value();
    Tensor out({out_h, out_w, in.c});
    for (std::size_t p = 0; p < src.size(); ++p) std::copy_n(xv.data().data() + src[p] * in.c, in.c, out.data().data() + p * in.c);
    return x.tape().record(
        std::move(out), {x},
        [src = std::move(src), c = in.c](const Tensor& g, const Tensor&, std::span<Tensor* const> gi) {
            Tensor& gx = *gi[0];
            for (std::size_t p = 0; p < src.size(); ++p)
                for (std::size_t ch = 0; ch < c; ++ch) gx[src[p] * c + ch] += g[p * c + ch];
        },
        "resize_nearest");
}

Var global_avg_pool(Var x) {
    const MapShape m = map_shape(x.value());
    const Tensor& xv = x.value();
    const double inv = 1.0 / static_cast<double>(m.pixels());
    Tensor out({m.c});
    for (std::size_t p = 0; p < m.pixels(); ++p)
        for (std::size_t ch = 0; ch < m.c; ++ch) out[ch] += xv[p * m.c + ch];
    for (auto& v : out.data()) v *= inv;
    return x.tape().record(
        std::move(out), {x},
        [m, inv](const Tensor& g, const Tensor&, std::span<Tensor* const> gi) {
            Tensor& gx = *gi[0];
            for (std::size_t p = 0; p < m.pixels(); ++p)
                for (std::size_t ch = 0; ch < m.c; ++ch) gx[p * m.c + ch] += g[ch] * inv;
        },
        "global_avg_pool");
}

Var crop(Var x, std::size_t row, std::size_t col, std::size_t h, std::size_t w) {
    const MapShape m = map_shape(x.value());
    if (h == 0 || w == 0 || row + h > m.h || col + w > m.w) {
        throw DimensionError("crop: window " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                             std::to_string(row) + "," + std::to_string(col) + ") exceeds map " +
                             shape_str(x.value().shape()));
    }
    const Tensor& xv = x.value();
    Tensor out({h, w, m.c});
    for (std::size_t r = 0; r < h; ++r)
        std::copy_n((xv.data().data() + (((row + r) * m.w + col) * m.c)), w * m.c, (out.data().data() + (r * w * m.c)));
    return x.tape().record(
        std::move(out), {x},
        [m, row, col, h, w](const Tensor& g, const Tensor&, std::span<Tensor* const> gi) {
            Tensor& gx = *gi[0];
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t j = 0; j < w * m.c; ++j) gx[((row + r) * m.w + col) * m.c + j] += g[r * w * m.c + j];
        },
        "crop");
}

Var pairwise_sq_dist(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(1)) {
        throw DimensionError("pairwise_sq_dist: feature dimensions differ: " + shape_str(av.shape()) + " vs " +
                             shape_str(bv.shape()));
    }
    const std::size_t na = av.extent(0), nb = bv.extent(0), d = av.extent(1);
    Tensor out({na, nb});
    for (std::size_t i = 0; i < na; ++i)
        for (std::size_t j = 0; j < nb; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = av[i * d + k] - bv[j * d + k];
                acc += diff * diff;
            }
            out[i * nb + j] = acc;
        }
    return a.tape().record(
        std::move(out), {a, b},
        [a, b, na, nb, d](const Tensor& g, const Tensor&, std::span<Tensor* const> gi) {
            const Tensor& av = a.value();
            const Tensor& bv = b.value();
            for (std::size_t i = 0; i < na; ++i)
                for (std::size_t j = 0; j < nb; ++j) {
                    const double gij = 2.0 * g[i * nb + j];
                    for (std::size_t k = 0; k < d; ++k) {
                        const double diff = av[i * d + k] - bv[j * d + k];
                        if (gi[0]) (*gi[0])[i * d + k] += gij * diff;
                        if (gi[1]) (*gi[1])[j * d + k] -= gij * diff;
                    }
                }
        },
        "pairwise_sq_dist");
}

Var l2_normalize(Var x) {
    constexpr double floor_norm = 1e-12;
    const Tensor& xv = x.value();
    double sq = 0.0;
    for (auto v : xv.data()) sq += v * v;
    const double norm = std::max(std::sqrt(sq), floor_norm);
    const bool clamped = std::sqrt(sq) < floor_norm;
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] / norm;
    return x.tape().record(
        std::move(out), {x},
        [norm, clamped](const Tensor& g, const Tensor& y, std::span<Tensor* const> gi) {
            Tensor& gx = *gi[0];
            double dot = 0.0;
            if (!clamped) {
                for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
            }
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += (g[i] - dot * y[i]) / norm;
        },
        "l2_normalize");
}

}  // namespace texgraph
