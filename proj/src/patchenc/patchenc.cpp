#include "texgraph/patchenc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "texgraph/errors.hpp"
#include "texgraph/ops.hpp"

namespace texgraph::patchenc {

void PatchConfig::validate() const {
    if (sizes.empty()) throw ConfigError("patch encoding: at least one window size is required");
    if (sizes.size() != weights.size()) {
        throw ConfigError("patch encoding: " + std::to_string(weights.size()) + " scale weights for " +
                          std::to_string(sizes.size()) + " window sizes");
    }
    for (auto d : sizes) {
        if (d < 1) throw ConfigError("patch encoding: window sizes must be >= 1");
    }
    if (stride < 1) throw ConfigError("patch encoding: stride must be >= 1");
    if (embed_dim < 1) throw ConfigError("patch encoding: embedding width must be >= 1");
}

void PatchConfig::validate_for(std::size_t h, std::size_t w) const {
    validate();
    for (auto d : sizes) {
        if (d > h || d > w) {
            throw ConfigError("patch encoding: window " + std::to_string(d) + " does not fit a " + std::to_string(h) +
                              "x" + std::to_string(w) + " map (need d <= H and d <= W)");
        }
    }
}

Codebook init_codebook(std::size_t k, std::size_t dim, Rng& rng, const std::string& prefix) {
    if (k < 1 || dim < 1) throw ConfigError("codebook: K and D must be >= 1");
    Codebook cb;
    cb.centers = Parameter(prefix + ".centers", random_uniform({k, dim}, -1.0, 1.0, rng));
    cb.smoothing = Parameter(prefix + ".smoothing", Tensor({k}, 1.0));
    cb.smoothing.lower_bound = kMinSmoothing;
    return cb;
}

std::size_t patch_count(std::size_t h, std::size_t w, std::size_t d, std::size_t s) {
    if (s < 1) throw ContractError("extract_patches: stride must be >= 1");
    if (d < 1 || d > h || d > w) {
        throw ContractError("extract_patches: window " + std::to_string(d) + " violates d <= H, d <= W for a " +
                            std::to_string(h) + "x" + std::to_string(w) + " map");
    }
    return ((h - d) / s + 1) * ((w - d) / s + 1);
}

std::vector<PatchPlacement> patch_placements(std::size_t h, std::size_t w, std::size_t d, std::size_t s) {
    std::vector<PatchPlacement> out;
    out.reserve(patch_count(h, w, d, s));
    for (std::size_t r = 0; r + d <= h; r += s)
        for (std::size_t c = 0; c + d <= w; c += s) out.push_back({r, c});
    return out;
}

std::vector<Tensor> extract_patches(const Tensor& Q, std::size_t d, std::size_t s) {
    const MapShape m = map_shape(Q);
    std::vector<Tensor> out;
    for (const auto& p : patch_placements(m.h, m.w, d, s)) {
        Tensor patch({d, d, m.c});
        for (std::size_t r = 0; r < d; ++r)
            std::copy_n(&Q[((p.row + r) * m.w + p.col) * m.c], d * m.c, &patch[r * d * m.c]);
        out.push_back(std::move(patch));
    }
    return out;
}

std::vector<Var> extract_patches(Var Q, std::size_t d, std::size_t s) {
    const MapShape m = map_shape(Q.value());
    std::vector<Var> out;
    for (const auto& p : patch_placements(m.h, m.w, d, s)) out.push_back(crop(Q, p.row, p.col, d, d));
    return out;
}

namespace {

struct EncodeShapes {
    std::size_t m, k, d;
};

EncodeShapes check_encode_shapes(const Tensor& X, const Tensor& centers, const Tensor& smoothing) {
    if (X.rank() != 2 || centers.rank() != 2 || smoothing.rank() != 1 || X.extent(1) != centers.extent(1) ||
        smoothing.extent(0) != centers.extent(0)) {
        throw ContractError("encode: descriptors " + shape_str(X.shape()) + " incompatible with codebook " +
                            shape_str(centers.shape()) + " / smoothing " + shape_str(smoothing.shape()));
    }
    return {X.extent(0), centers.extent(0), X.extent(1)};
}

// Fills dist (M x K) and assignments (M x K).
void assign(const Tensor& X, const Tensor& C, const Tensor& S, const EncodeShapes& sh, std::vector<double>& dist,
            std::vector<double>& a) {
    dist.assign(sh.m * sh.k, 0.0);
    a.assign(sh.m * sh.k, 0.0);
    for (std::size_t i = 0; i < sh.m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < sh.k; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < sh.d; ++j) {
                const double diff = X[i * sh.d + j] - C[k * sh.d + j];
                acc += diff * diff;
            }
            dist[i * sh.k + k] = acc;
            a[i * sh.k + k] = -S[k] * acc;
            mx = std::max(mx, a[i * sh.k + k]);
        }
        double total = 0.0;
        for (std::size_t k = 0; k < sh.k; ++k) {
            a[i * sh.k + k] = std::exp(a[i * sh.k + k] - mx);
            total += a[i * sh.k + k];
        }
        for (std::size_t k = 0; k < sh.k; ++k) a[i * sh.k + k] /= total;
    }
}

}  // namespace

Tensor soft_assignments(const Tensor& X, const Tensor& centers, const Tensor& smoothing) {
    const EncodeShapes sh = check_encode_shapes(X, centers, smoothing);
    std::vector<double> dist, a;
    assign(X, centers, smoothing, sh, dist, a);
    return Tensor({sh.m, sh.k}, std::move(a));
}

Var soft_residual_encode(Var X, Var centers, Var smoothing, std::span<const double> weights) {
    const EncodeShapes sh = check_encode_shapes(X.value(), centers.value(), smoothing.value());
    if (weights.size() != sh.m) {
        throw ContractError("encode: " + std::to_string(weights.size()) + " descriptor weights for " +
                            std::to_string(sh.m) + " descriptors");
    }
    std::vector<double> dist, a;
    assign(X.value(), centers.value(), smoothing.value(), sh, dist, a);

    const Tensor& xv = X.value();
    const Tensor& cv = centers.value();
    Tensor out({sh.k, sh.d}, 0.0);
    for (std::size_t i = 0; i < sh.m; ++i) {
        if (weights[i] == 0.0) continue;
        for (std::size_t k = 0; k < sh.k; ++k) {
            const double coef = weights[i] * a[i * sh.k + k];
            for (std::size_t j = 0; j < sh.d; ++j) out[k * sh.d + j] += coef * (xv[i * sh.d + j] - cv[k * sh.d + j]);
        }
    }

    return X.tape().record(
        std::move(out), {X, centers, smoothing},
        [X, centers, smoothing, sh, dist = std::move(dist), a = std::move(a),
         w = std::vector<double>(weights.begin(), weights.end())](const Tensor& g, const Tensor&,
                                                                   std::span<Tensor* const> gi) {
            const Tensor& xv = X.value();
            const Tensor& cv = centers.value();
            const Tensor& sv = smoothing.value();
            Tensor* gx = gi[0];
            Tensor* gc = gi[1];
            Tensor* gs = gi[2];
            std::vector<double> ga(sh.k), t(sh.k), resid(sh.d);
            for (std::size_t i = 0; i < sh.m; ++i) {
                if (w[i] == 0.0) continue;
                const double* xi = &xv[i * sh.d];
                // dL/da_ik and the residual path.
                double mean = 0.0;
                for (std::size_t k = 0; k < sh.k; ++k) {
                    const double* ck = &cv[k * sh.d];
                    const double* gk = &g[k * sh.d];
                    const double aik = a[i * sh.k + k];
                    double dot = 0.0;
                    for (std::size_t j = 0; j < sh.d; ++j) dot += gk[j] * (xi[j] - ck[j]);
                    ga[k] = w[i] * dot;
                    mean += aik * ga[k];
                    const double coef = w[i] * aik;
                    for (std::size_t j = 0; j < sh.d; ++j) {
                        if (gx) (*gx)[i * sh.d + j] += coef * gk[j];
                        if (gc) (*gc)[k * sh.d + j] -= coef * gk[j];
                    }
                }
                // Softmax over k, then logits = -s_k * dist_ik.
                for (std::size_t k = 0; k < sh.k; ++k) {
                    t[k] = a[i * sh.k + k] * (ga[k] - mean);
                    if (gs) (*gs)[k] -= t[k] * dist[i * sh.k + k];
                    const double ddist = -sv[k] * t[k];
                    for (std::size_t j = 0; j < sh.d; ++j) {
                        const double grad = 2.0 * ddist * (xi[j] - cv[k * sh.d + j]);
                        if (gx) (*gx)[i * sh.d + j] += grad;
                        if (gc) (*gc)[k * sh.d + j] -= grad;
                    }
                }
            }
        },
        "soft_residual_encode");
}

Var encode_patch(Var patch, Var centers, Var smoothing) {
    const MapShape m = map_shape(patch.value());
    if (m.c != centers.value().extent(1)) {
        throw ContractError("encode_patch: patch has " + std::to_string(m.c) + " channels, codebook dimension is " +
                            std::to_string(centers.value().extent(1)));
    }
    const std::vector<double> ones(m.pixels(), 1.0);
    return soft_residual_encode(reshape(patch, {m.pixels(), m.c}), centers, smoothing, ones);
}

Var encode_patch(Var patch, Codebook& cb) {
    Tape& t = patch.tape();
    return encode_patch(patch, t.parameter(cb.centers), t.parameter(cb.smoothing));
}

std::vector<double> coverage_weights(std::size_t h, std::size_t w, const PatchConfig& cfg) {
    cfg.validate_for(h, w);
    std::vector<double> out(h * w, 0.0);
    for (std::size_t j = 0; j < cfg.sizes.size(); ++j) {
        const std::size_t d = cfg.sizes[j];
        // Windows covering a coordinate, per axis.
        const auto axis_counts = [&](std::size_t n) {
            std::vector<std::size_t> cnt(n, 0);
            for (std::size_t start = 0; start + d <= n; start += cfg.stride)
                for (std::size_t p = start; p < start + d; ++p) ++cnt[p];
            return cnt;
        };
        const auto rows = axis_counts(h);
        const auto cols = axis_counts(w);
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c) out[r * w + c] += cfg.weights[j] * static_cast<double>(rows[r] * cols[c]);
    }
    return out;
}

Var aggregate_multiscale(Var Q, const PatchConfig& cfg, Codebook& cb, Parameter& proj) {
    const MapShape m = map_shape(Q.value());
    cfg.validate_for(m.h, m.w);
    if (proj.value.shape() != Shape{m.c, cfg.embed_dim} || cb.dim() != cfg.embed_dim) {
        throw DimensionError("aggregate_multiscale: projection " + shape_str(proj.value.shape()) + " / codebook " +
                             shape_str(cb.centers.value.shape()) + " incompatible with input " +
                             shape_str(Q.value().shape()) + " and embedding width " + std::to_string(cfg.embed_dim));
    }
    Tape& tape = Q.tape();
    const Var projected = pointwise_conv(Q, tape.parameter(proj));
    const Var descriptors = reshape(projected, {m.pixels(), cfg.embed_dim});
    // Assignments depend only on the descriptor, so summing encodings over every
    // window equals weighting each pixel by how many windows contain it.
    const auto weights = coverage_weights(m.h, m.w, cfg);
    Var u = soft_residual_encode(descriptors, tape.parameter(cb.centers), tape.parameter(cb.smoothing), weights);
    if (cfg.l2_normalize) u = l2_normalize(u);
    return u;
}

Var fuse_global(Var Q, Var U) {
    const Var parts[] = {global_avg_pool(Q), reshape(U, {U.value().size()})};
    return concat(parts, 0);
}

PatchEncoderParams init_patch_encoder(std::size_t channels, std::size_t embed_dim, std::size_t k, Rng& rng) {
    PatchEncoderParams p;
    p.proj = Parameter("patch.proj", fan_in_uniform({channels, embed_dim}, channels, rng));
    p.codebook = init_codebook(k, embed_dim, rng);
    return p;
}

}  // namespace texgraph::patchenc
