#pragma once

// Small multi-stage CNN feature extractor. Each stage starts with a 3x3
// stride-2 convolution (halving H and W, rounding up) followed by
// `blocks - 1` stride-1 3x3 convolutions; every convolution is followed by a
// bias and relu. No normalization layers.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "texgraph/autodiff.hpp"
#include "texgraph/rng.hpp"

namespace texgraph::backbone {

struct BackboneConfig {
    std::size_t stages = 4;
    std::vector<std::size_t> channels{8, 16, 32, 64};
    std::size_t blocks = 1;
    std::size_t in_channels = 3;

    /// Throws ConfigError on an inconsistent configuration.
    void validate() const;
    /// Smallest accepted input extent, 2^stages.
    std::size_t min_input_extent() const;
};

struct ConvLayer {
    Parameter weight;  // 3 x 3 x Cin x Cout
    Parameter bias;    // Cout
};

struct BackboneParams {
    std::vector<ConvLayer> layers;  // stage-major, `blocks` per stage

    std::vector<Parameter*> parameters();
};

/// Feature maps of every stage, shallow to deep.
struct StageOutputs {
    std::vector<Var> maps;
};

/// Weights uniform in [-sqrt(3/fan_in), sqrt(3/fan_in)] (std 1/sqrt(fan_in)), biases zero.
BackboneParams init_params(const BackboneConfig& cfg, Rng& rng);
BackboneParams init_params(const BackboneConfig& cfg, std::uint64_t seed);

/// Spatial extents of each stage for an input of h x w.
std::vector<MapShape> stage_shapes(const BackboneConfig& cfg, std::size_t h, std::size_t w);

StageOutputs forward(Var image, const BackboneConfig& cfg, BackboneParams& params);

}  // namespace texgraph::backbone
