#include "texgraph/backbone.hpp"

#include <string>

#include "texgraph/errors.hpp"
#include "texgraph/ops.hpp"

namespace texgraph::backbone {

namespace {

constexpr std::size_t kKernel = 3;

ConvSpec layer_spec(std::size_t block) {
    ConvSpec s;
    s.stride = block == 0 ? 2 : 1;
    s.pad = 1;
    return s;
}

}  // namespace

void BackboneConfig::validate() const {
    if (stages < 1) throw ConfigError("backbone: need at least one stage");
    if (channels.size() != stages) {
        throw ConfigError("backbone: " + std::to_string(channels.size()) + " channel counts given for " +
                          std::to_string(stages) + " stages");
    }
    for (auto c : channels) {
        if (c < 1) throw ConfigError("backbone: channel counts must be positive");
    }
    if (blocks < 1) throw ConfigError("backbone: blocks per stage must be >= 1");
    if (in_channels < 1) throw ConfigError("backbone: input channels must be >= 1");
}

std::size_t BackboneConfig::min_input_extent() const { return std::size_t{1} << stages; }

std::vector<Parameter*> BackboneParams::parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

BackboneParams init_params(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    BackboneParams p;
    std::size_t cin = cfg.in_channels;
    for (std::size_t s = 0; s < cfg.stages; ++s) {
        const std::size_t cout = cfg.channels[s];
        for (std::size_t b = 0; b < cfg.blocks; ++b) {
            const std::size_t fan_in = kKernel * kKernel * cin;
            const std::string prefix = "backbone.stage" + std::to_string(s) + ".conv" + std::to_string(b);
            p.layers.push_back({Parameter(prefix + ".weight", fan_in_uniform({kKernel, kKernel, cin, cout}, fan_in, rng)),
                                Parameter(prefix + ".bias", Tensor({cout}, 0.0))});
            cin = cout;
        }
    }
    return p;
}

BackboneParams init_params(const BackboneConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    return init_params(cfg, rng);
}

std::vector<MapShape> stage_shapes(const BackboneConfig& cfg, std::size_t h, std::size_t w) {
    cfg.validate();
    std::vector<MapShape> out;
    for (std::size_t s = 0; s < cfg.stages; ++s) {
        for (std::size_t b = 0; b < cfg.blocks; ++b) {
            const ConvSpec spec = layer_spec(b);
            h = conv_output_extent(h, kKernel, spec);
            w = conv_output_extent(w, kKernel, spec);
        }
        out.push_back({h, w, cfg.channels[s]});
    }
    return out;
}

StageOutputs forward(Var image, const BackboneConfig& cfg, BackboneParams& params) {
    cfg.validate();
    const MapShape in = map_shape(image.value());
    const std::size_t min_extent = cfg.min_input_extent();
    if (in.h < min_extent || in.w < min_extent) {
        throw DimensionError("backbone: input " + shape_str(image.value().shape()) + " too small; minimum is " +
                             std::to_string(min_extent) + "x" + std::to_string(min_extent) + " for " +
                             std::to_string(cfg.stages) + " stages");
    }
    if (in.c != cfg.in_channels) {
        throw DimensionError("backbone: expected " + std::to_string(cfg.in_channels) + " input channels, got " +
                             shape_str(image.value().shape()));
    }
    if (params.layers.size() != cfg.stages * cfg.blocks) {
        throw ContractError("backbone: parameter set does not match the configuration");
    }

    Tape& tape = image.tape();
    StageOutputs out;
    Var x = image;
    std::size_t layer = 0;
    for (std::size_t s = 0; s < cfg.stages; ++s) {
        for (std::size_t b = 0; b < cfg.blocks; ++b, ++layer) {
            ConvLayer& l = params.layers[layer];
            x = relu(add_bias(conv2d(x, tape.parameter(l.weight), layer_spec(b)), tape.parameter(l.bias)));
        }
        out.maps.push_back(x);
    }
    return out;
}

}  // namespace texgraph::backbone
