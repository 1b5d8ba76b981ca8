#pragma once

// Graph-enhanced primitive correlation.
//
//  * context-aware graph: every position of one feature map is a node of a
//    fully connected graph; messages are softmax-normalized Gaussian
//    affinities (non-local style), followed by an output projection and an
//    optional residual.
//  * multi-stage-aware graph: a bipartite graph from every pixel of a source
//    stage to its n nearest pixels of a target stage, measured on
//    parameter-free dilated context features; messages are the mean of the
//    neighbours' (projected) features.
//  * fusion: sigmoid gate over both graph outputs applied to the last stage.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "texgraph/autodiff.hpp"
#include "texgraph/rng.hpp"

namespace texgraph::graphmod {

// ---------------------------------------------------------------------------
// Context-aware graph

enum class Affinity {
    embedded_gaussian,  // exp(theta(x_i) . phi(x_j)) with learned 1x1 projections
    gaussian,           // exp(x_i . x_j)
};

struct ContextGraphConfig {
    Affinity affinity = Affinity::embedded_gaussian;
    bool residual = true;
};

struct ContextGraphParams {
    Parameter query;   // C x C_attn
    Parameter key;     // C x C_attn
    Parameter value;   // C x C_attn
    Parameter output;  // C_attn x C

    std::vector<Parameter*> parameters();
};

/// C_attn = ceil(C / 2).
std::size_t attention_width(std::size_t channels);

ContextGraphParams init_context_graph(std::size_t channels, Rng& rng, const std::string& prefix = "cag");

struct ContextGraphResult {
    Var output;     // same shape as the input map
    Var attention;  // N x N, row i = incoming weights of node i
};

ContextGraphResult context_aware_graph_detailed(Var F, ContextGraphParams& params, const ContextGraphConfig& cfg = {});
Var context_aware_graph(Var F, ContextGraphParams& params, const ContextGraphConfig& cfg = {});

// ---------------------------------------------------------------------------
// Multi-stage-aware graph

struct MultiStageGraphConfig {
    /// 0-based stage indices; the source stage sets the output resolution.
    std::size_t source_stage = 2;
    std::size_t target_stage = 3;
    std::size_t dilation = 2;
    std::size_t kernel = 3;
    std::size_t neighbors = 4;

    void validate() const;
};

/// Sparse 0/1 adjacency: each source pixel lists exactly n target pixels
/// (row-major flat indices), nearest first.
struct BipartiteAdjacency {
    MapShape source;  // c unused
    MapShape target;  // c unused
    std::size_t n = 0;
    std::vector<std::uint32_t> targets;  // source.pixels() * n

    std::span<const std::uint32_t> neighbors(std::size_t source_pixel) const {
        return std::span<const std::uint32_t>(targets).subspan(source_pixel * n, n);
    }
    /// Dense (source pixels) x (target pixels) 0/1 matrix.
    Tensor dense() const;
};

/// Mean over the k^2 - 1 dilated neighbours of each pixel (centre excluded),
/// replicate padding. k odd and >= 3.
Tensor dilated_context(const Tensor& F, std::size_t dilation, std::size_t kernel);

/// For every pixel of Fc0, the n pixels of Fc1 with the smallest squared
/// distance. Ties go to the smaller row-major target index.
BipartiteAdjacency topn_neighbors(const Tensor& Fc0, const Tensor& Fc1, std::size_t n);

/// Mean of each source pixel's neighbour features: output adj.source.h x adj.source.w x C.
Var gather_mean(Var F1, const BipartiteAdjacency& adj);

/// Neighbour mean followed by a 1x1 projection `proj` (C1 x C0).
Var bipartite_propagate(Var F1, const BipartiteAdjacency& adj, Var proj);

struct MultiStageGraphResult {
    Var output;  // source resolution, source channel count
    BipartiteAdjacency adjacency;
};

/// Projects F1 into F0's channel space, builds context features of both and
/// their top-n adjacency (treated as fixed structure), then propagates.
MultiStageGraphResult multi_stage_graph(Var F0, Var F1, Parameter& proj, const MultiStageGraphConfig& cfg);

// ---------------------------------------------------------------------------
// Fusion

struct FusionParams {
    Parameter weight;  // (C_ghat + C_ghat') x C_last
    Parameter bias;    // C_last

    std::vector<Parameter*> parameters();
};

FusionParams init_fusion(std::size_t in_channels, std::size_t out_channels, Rng& rng, const std::string& prefix = "fusion");

struct FusionResult {
    Var q;     // F_last * V + F_last
    Var gate;  // V in (0, 1)
};

/// Resizes both graph outputs to F_last's extent (nearest), concatenates
/// channels, applies the 1x1 convolution and a sigmoid to get the gate V.
FusionResult fuse(Var ghat, Var ghat_prime, Var f_last, FusionParams& params);

}  // namespace texgraph::graphmod
