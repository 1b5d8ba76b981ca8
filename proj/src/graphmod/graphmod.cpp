#include "texgraph/graphmod.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "texgraph/errors.hpp"
#include "texgraph/ops.hpp"

namespace texgraph::graphmod {

std::size_t attention_width(std::size_t channels) { return (channels + 1) / 2; }

std::vector<Parameter*> ContextGraphParams::parameters() { return {&query, &key, &value, &output}; }

ContextGraphParams init_context_graph(std::size_t channels, Rng& rng, const std::string& prefix) {
    const std::size_t ca = attention_width(channels);
    ContextGraphParams p;
    p.query = Parameter(prefix + ".query", fan_in_uniform({channels, ca}, channels, rng));
    p.key = Parameter(prefix + ".key", fan_in_uniform({channels, ca}, channels, rng));
    p.value = Parameter(prefix + ".value", fan_in_uniform({channels, ca}, channels, rng));
    p.output = Parameter(prefix + ".output", fan_in_uniform({ca, channels}, ca, rng));
    return p;
}

ContextGraphResult context_aware_graph_detailed(Var F, ContextGraphParams& params, const ContextGraphConfig& cfg) {
    const MapShape m = map_shape(F.value());
    const std::size_t ca = attention_width(m.c);
    const Shape proj_in{m.c, ca};
    for (const Parameter* p : {&params.query, &params.key, &params.value}) {
        if (p->value.shape() != proj_in) {
            throw DimensionError("context_aware_graph: " + p->name + " is " + shape_str(p->value.shape()) +
                                 ", expected " + shape_str(proj_in) + " for input " + shape_str(F.value().shape()));
        }
    }
    if (params.output.value.shape() != Shape{ca, m.c}) {
        throw DimensionError("context_aware_graph: output projection " + shape_str(params.output.value.shape()) +
                             " does not map back to " + std::to_string(m.c) + " channels");
    }

    Tape& tape = F.tape();
    const Var nodes = reshape(F, {m.pixels(), m.c});
    Var logits;
    if (cfg.affinity == Affinity::embedded_gaussian) {
        const Var theta = matmul(nodes, tape.parameter(params.query));
        const Var phi = matmul(nodes, tape.parameter(params.key));
        logits = matmul(theta, transpose(phi));
    } else {
        logits = matmul(nodes, transpose(nodes));
    }
    // Row-wise softmax of exp-affinities is exactly the normalized Gaussian kernel.
    const Var attention = softmax(logits, 1);
    const Var messages = matmul(attention, matmul(nodes, tape.parameter(params.value)));
    Var out = reshape(matmul(messages, tape.parameter(params.output)), {m.h, m.w, m.c});
    if (cfg.residual) out = add(out, F);
    return {out, attention};
}

Var context_aware_graph(Var F, ContextGraphParams& params, const ContextGraphConfig& cfg) {
    return context_aware_graph_detailed(F, params, cfg).output;
}

void MultiStageGraphConfig::validate() const {
    if (kernel < 3 || kernel % 2 == 0) throw ConfigError("multi-stage graph: context kernel must be odd and >= 3");
    if (dilation < 1) throw ConfigError("multi-stage graph: dilation must be >= 1");
    if (neighbors < 1) throw ConfigError("multi-stage graph: neighbour count must be >= 1");
    if (source_stage == target_stage) throw ConfigError("multi-stage graph: source and target stage must differ");
}

Tensor BipartiteAdjacency::dense() const {
    Tensor d({source.pixels(), target.pixels()}, 0.0);
    for (std::size_t s = 0; s < source.pixels(); ++s)
        for (auto t : neighbors(s)) d[s * target.pixels() + t] = 1.0;
    return d;
}

Tensor dilated_context(const Tensor& F, std::size_t dilation, std::size_t kernel) {
    const MapShape m = map_shape(F);
    if (kernel < 3 || kernel % 2 == 0) {
        throw ContractError("dilated_context: kernel must be odd and >= 3, got " + std::to_string(kernel));
    }
    if (dilation < 1) throw ContractError("dilated_context: dilation must be >= 1");
    const auto r = static_cast<std::ptrdiff_t>(kernel / 2);
    const auto d = static_cast<std::ptrdiff_t>(dilation);
    const auto clamp = [](std::ptrdiff_t v, std::size_t n) {
        return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
    };
    const double inv = 1.0 / static_cast<double>(kernel * kernel - 1);

    Tensor out(F.shape(), 0.0);
    for (std::size_t u = 0; u < m.h; ++u) {
        for (std::size_t v = 0; v < m.w; ++v) {
            double* acc = &out[(u * m.w + v) * m.c];
            for (std::ptrdiff_t i = -r; i <= r; ++i) {
                for (std::ptrdiff_t j = -r; j <= r; ++j) {
                    if (i == 0 && j == 0) continue;
                    const std::size_t su = clamp(static_cast<std::ptrdiff_t>(u) + i * d, m.h);
                    const std::size_t sv = clamp(static_cast<std::ptrdiff_t>(v) + j * d, m.w);
                    const double* src = &F[(su * m.w + sv) * m.c];
                    for (std::size_t c = 0; c < m.c; ++c) acc[c] += src[c];
                }
            }
            for (std::size_t c = 0; c < m.c; ++c) acc[c] *= inv;
        }
    }
    return out;
}

BipartiteAdjacency topn_neighbors(const Tensor& Fc0, const Tensor& Fc1, std::size_t n) {
    const MapShape a = map_shape(Fc0);
    const MapShape b = map_shape(Fc1);
    if (a.c != b.c) {
        throw DimensionError("topn_neighbors: channel counts differ: " + shape_str(Fc0.shape()) + " vs " +
                             shape_str(Fc1.shape()));
    }
    if (n < 1 || n > b.pixels()) {
        throw ContractError("topn_neighbors: n = " + std::to_string(n) + " outside [1, " +
                            std::to_string(b.pixels()) + "]");
    }

    BipartiteAdjacency adj;
    adj.source = {a.h, a.w, 0};
    adj.target = {b.h, b.w, 0};
    adj.n = n;
    adj.targets.resize(a.pixels() * n);

    std::vector<double> dist(b.pixels());
    std::vector<std::uint32_t> order(b.pixels());
    for (std::size_t s = 0; s < a.pixels(); ++s) {
        const double* x = &Fc0[s * a.c];
        for (std::size_t t = 0; t < b.pixels(); ++t) {
            const double* y = &Fc1[t * b.c];
            double acc = 0.0;
            for (std::size_t c = 0; c < a.c; ++c) {
                const double diff = x[c] - y[c];
                acc += diff * diff;
            }
            dist[t] = acc;
        }
        std::iota(order.begin(), order.end(), std::uint32_t{0});
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                          [&](std::uint32_t l, std::uint32_t r) { return dist[l] < dist[r] || (dist[l] == dist[r] && l < r); });
        std::copy_n(order.begin(), n, adj.targets.begin() + static_cast<std::ptrdiff_t>(s * n));
    }
    return adj;
}

Var gather_mean(Var F1, const BipartiteAdjacency& adj) {
    const MapShape m = map_shape(F1.value());
    if (m.h != adj.target.h || m.w != adj.target.w) {
        throw ContractError("bipartite_propagate: adjacency targets a " + std::to_string(adj.target.h) + "x" +
                            std::to_string(adj.target.w) + " map, features are " + shape_str(F1.value().shape()));
    }
    const std::size_t src = adj.source.pixels();
    const double inv = 1.0 / static_cast<double>(adj.n);
    const Tensor& fv = F1.value();
    Tensor out({adj.source.h, adj.source.w, m.c}, 0.0);
    for (std::size_t s = 0; s < src; ++s) {
        double* acc = &out[s * m.c];
        for (auto t : adj.neighbors(s))
            for (std::size_t c = 0; c < m.c; ++c) acc[c] += fv[t * m.c + c];
        for (std::size_t c = 0; c < m.c; ++c) acc[c] *= inv;
    }
    return F1.tape().record(
        std::move(out), {F1},
        [targets = adj.targets, n = adj.n, src, c = m.c, inv](const Tensor& g, const Tensor&,
                                                               std::span<Tensor* const> gi) {
            Tensor& gf = *gi[0];
            for (std::size_t s = 0; s < src; ++s)
                for (std::size_t k = 0; k < n; ++k) {
                    const std::size_t t = targets[s * n + k];
                    for (std::size_t ch = 0; ch < c; ++ch) gf[t * c + ch] += inv * g[s * c + ch];
                }
        },
        "gather_mean");
}

Var bipartite_propagate(Var F1, const BipartiteAdjacency& adj, Var proj) {
    return pointwise_conv(gather_mean(F1, adj), proj);
}

MultiStageGraphResult multi_stage_graph(Var F0, Var F1, Parameter& proj, const MultiStageGraphConfig& cfg) {
    cfg.validate();
    const MapShape m0 = map_shape(F0.value());
    const MapShape m1 = map_shape(F1.value());
    if (proj.value.shape() != Shape{m1.c, m0.c}) {
        throw DimensionError("multi_stage_graph: projection " + shape_str(proj.value.shape()) + " does not map " +
                             std::to_string(m1.c) + " to " + std::to_string(m0.c) + " channels");
    }
    // Projection and neighbour mean commute, so project once at target resolution.
    const Var projected = pointwise_conv(F1, F0.tape().parameter(proj));
    const Tensor ctx0 = dilated_context(F0.value(), cfg.dilation, cfg.kernel);
    const Tensor ctx1 = dilated_context(projected.value(), cfg.dilation, cfg.kernel);
    MultiStageGraphResult r;
    r.adjacency = topn_neighbors(ctx0, ctx1, cfg.neighbors);
    r.output = gather_mean(projected, r.adjacency);
    return r;
}

std::vector<Parameter*> FusionParams::parameters() { return {&weight, &bias}; }

FusionParams init_fusion(std::size_t in_channels, std::size_t out_channels, Rng& rng, const std::string& prefix) {
    FusionParams p;
    p.weight = Parameter(prefix + ".weight", fan_in_uniform({in_channels, out_channels}, in_channels, rng));
    p.bias = Parameter(prefix + ".bias", Tensor({out_channels}, 0.0));
    return p;
}

FusionResult fuse(Var ghat, Var ghat_prime, Var f_last, FusionParams& params) {
    const MapShape a = map_shape(ghat.value());
    const MapShape b = map_shape(ghat_prime.value());
    const MapShape q = map_shape(f_last.value());
    const Shape expected{a.c + b.c, q.c};
    if (params.weight.value.shape() != expected || params.bias.value.shape() != Shape{q.c}) {
        throw DimensionError("fuse: weights " + shape_str(params.weight.value.shape()) + " / bias " +
                             shape_str(params.bias.value.shape()) + " do not match inputs " +
                             shape_str(ghat.value().shape()) + ", " + shape_str(ghat_prime.value().shape()) +
                             " -> " + shape_str(f_last.value().shape()));
    }
    Tape& tape = f_last.tape();
    const Var parts[] = {resize_nearest(ghat, q.h, q.w), resize_nearest(ghat_prime, q.h, q.w)};
    const Var logits = add_bias(pointwise_conv(concat(parts, 2), tape.parameter(params.weight)),
                                tape.parameter(params.bias));
    const Var gate = sigmoid(logits);
    return {add(mul(f_last, gate), f_last), gate};
}

}  // namespace texgraph::graphmod
