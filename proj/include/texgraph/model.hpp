#pragma once

// Full classifier: backbone -> context-aware graph and multi-stage graph ->
// gated fusion -> multi-scale patch encoding -> linear head.
//
// Disabled modules are bypassed:
//   no CAG:  Ghat  = the CAG input stage map
//   no MAG:  Ghat' = the MAG source stage map
//   neither: fusion is skipped and Q = F_last
//   no PE:   Z = global_avg_pool(Q)

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "texgraph/autodiff.hpp"
#include "texgraph/backbone.hpp"
#include "texgraph/graphmod.hpp"
#include "texgraph/patchenc.hpp"
#include "texgraph/rng.hpp"

namespace texgraph::model {

struct ModelConfig {
    backbone::BackboneConfig backbone{3, {8, 16, 32}, 1, 3};
    graphmod::ContextGraphConfig cag;
    std::size_t cag_stage = 2;
    graphmod::MultiStageGraphConfig mag{1, 2, 2, 3, 4};
    patchenc::PatchConfig patch;
    std::size_t codebook_size = 16;
    std::size_t classes = 4;
    std::size_t input_size = 64;
    bool enable_cag = true;
    bool enable_mag = true;
    bool enable_pe = true;

    void validate() const;
    /// Length of the pooled feature Z fed to the classifier.
    std::size_t feature_dim() const;

    /// Sets one key from its text form. Returns false for unknown keys; throws
    /// ConfigError for malformed values.
    bool set(std::string_view key, std::string_view value);
    /// Canonical (key, value) pairs in fixed order.
    std::vector<std::pair<std::string, std::string>> entries() const;
    std::string to_text() const;
    /// Parses to_text output. Unknown keys are a ConfigError naming the nearest key.
    static ModelConfig from_text(std::string_view text, std::string_view origin = "model config");
};

/// Incremental module sets: fe = backbone only, cag = +CAG, mag = +CAG+MAG, full = +PE.
enum class Ablation { fe, cag, mag, full };

Ablation parse_ablation(std::string_view name);
std::string_view ablation_name(Ablation a);
void apply_ablation(ModelConfig& cfg, Ablation a);

struct ModelParams {
    backbone::BackboneParams backbone;
    std::optional<graphmod::ContextGraphParams> cag;
    std::optional<Parameter> mag_proj;  // C_target x C_source
    std::optional<graphmod::FusionParams> fusion;
    std::optional<patchenc::PatchEncoderParams> patch;
    Parameter classifier_weight;  // feature_dim x classes
    Parameter classifier_bias;    // classes

    /// Fixed order: backbone, cag, mag, fusion, patch, classifier.
    std::vector<Parameter*> parameters();
};

ModelParams init_model(const ModelConfig& cfg, Rng& rng);
ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Intermediate values captured for inspection. Fields of disabled modules stay empty.
struct ForwardTrace {
    Tensor attention;                      // N x N over the CAG stage
    graphmod::BipartiteAdjacency adjacency;
    Tensor assignments;                    // pixels of Q x K
    Tensor q;
    Tensor z;
};

/// Logits of shape [classes] for one H x W x 3 image.
Var model_forward(Var image, const ModelConfig& cfg, ModelParams& params, ForwardTrace* trace = nullptr);

/// Convenience: evaluates on a fresh tape.
Tensor logits(const Tensor& image, const ModelConfig& cfg, ModelParams& params, ForwardTrace* trace = nullptr);

/// -log softmax(logits)[label] via log-sum-exp. ContractError if label is out of range.
Var cross_entropy(Var logits, std::size_t label);

}  // namespace texgraph::model
