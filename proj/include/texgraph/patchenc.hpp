#pragma once

// Multi-scale patch encoding with a learnable residual codebook.
//
// A patch of size d x d x D is read as d^2 descriptors in R^D. Each descriptor
// is softly assigned to the K codewords with weights softmax_k(-s_k ||x - c_k||^2)
// and contributes its residuals x - c_k; the patch encoding H (K x D) is the
// assignment-weighted residual sum. Scale encodings are summed over all window
// placements and combined with fixed per-scale weights.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "texgraph/autodiff.hpp"
#include "texgraph/rng.hpp"

namespace texgraph::patchenc {

struct PatchConfig {
    std::vector<std::size_t> sizes{3, 5, 7};
    std::size_t stride = 1;
    std::vector<double> weights{0.35, 0.45, 0.2};
    /// Channels of the 1x1 projection applied before encoding.
    std::size_t embed_dim = 8;
    bool l2_normalize = true;

    void validate() const;
    /// Also checks every window fits an h x w map.
    void validate_for(std::size_t h, std::size_t w) const;
};

struct Codebook {
    Parameter centers;    // K x D
    Parameter smoothing;  // K, kept >= 1e-4 by the optimizer

    std::size_t size() const { return centers.value.extent(0); }
    std::size_t dim() const { return centers.value.extent(1); }
    std::vector<Parameter*> parameters() { return {&centers, &smoothing}; }
};

inline constexpr double kMinSmoothing = 1e-4;

/// Centers uniform in [-1, 1]^D, smoothing factors 1.
Codebook init_codebook(std::size_t k, std::size_t dim, Rng& rng, const std::string& prefix = "codebook");

struct PatchPlacement {
    std::size_t row = 0;
    std::size_t col = 0;
    friend bool operator==(const PatchPlacement&, const PatchPlacement&) = default;
};

/// floor((h - d) / s + 1) * floor((w - d) / s + 1); ContractError unless d <= h, d <= w.
std::size_t patch_count(std::size_t h, std::size_t w, std::size_t d, std::size_t s);
/// Top-left corners in row-major window order.
std::vector<PatchPlacement> patch_placements(std::size_t h, std::size_t w, std::size_t d, std::size_t s);

std::vector<Tensor> extract_patches(const Tensor& Q, std::size_t d, std::size_t s);
/// Differentiable crops routing gradients back to Q.
std::vector<Var> extract_patches(Var Q, std::size_t d, std::size_t s);

/// Assignment matrix (M x K) for descriptors X (M x D).
Tensor soft_assignments(const Tensor& X, const Tensor& centers, const Tensor& smoothing);

/// sum_i weight_i * sum_k a_ik (x_i - c_k), laid out K x D. Differentiable
/// w.r.t. descriptors, centers and smoothing factors.
Var soft_residual_encode(Var X, Var centers, Var smoothing, std::span<const double> weights);

/// Soft histogram of one d x d x D patch.
Var encode_patch(Var patch, Var centers, Var smoothing);
Var encode_patch(Var patch, Codebook& cb);

/// Per-pixel multiplicity sum_j w_j * (#windows of size d_j covering the pixel).
std::vector<double> coverage_weights(std::size_t h, std::size_t w, const PatchConfig& cfg);

/// U = sum_j w_j sum_i encode(P_i) over all windows of every scale, computed on
/// the 1x1-projected map (`proj`: C x D). L2-normalized when configured.
Var aggregate_multiscale(Var Q, const PatchConfig& cfg, Codebook& cb, Parameter& proj);

/// concat(global_avg_pool(Q), flatten(U)).
Var fuse_global(Var Q, Var U);

struct PatchEncoderParams {
    Parameter proj;  // C x D
    Codebook codebook;

    std::vector<Parameter*> parameters() { return {&proj, &codebook.centers, &codebook.smoothing}; }
};

PatchEncoderParams init_patch_encoder(std::size_t channels, std::size_t embed_dim, std::size_t k, Rng& rng);

}  // namespace texgraph::patchenc
