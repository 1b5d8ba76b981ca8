#include "texgraph/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "texgraph/errors.hpp"
#include "texgraph/ops.hpp"
#include "texgraph/text.hpp"

namespace texgraph::model {

namespace {

std::string_view affinity_name(graphmod::Affinity a) {
    return a == graphmod::Affinity::gaussian ? "gaussian" : "embedded_gaussian";
}

graphmod::Affinity parse_affinity(std::string_view s) {
    if (s == "embedded_gaussian") return graphmod::Affinity::embedded_gaussian;
    if (s == "gaussian") return graphmod::Affinity::gaussian;
    throw ConfigError("cag.affinity: expected embedded_gaussian or gaussian, got '" + std::string(s) + "'");
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

void ModelConfig::validate() const {
    backbone.validate();
    mag.validate();
    patch.validate();
    const std::size_t stages = backbone.stages;
    if (enable_cag && cag_stage >= stages) {
        throw ConfigError("cag.stage " + std::to_string(cag_stage) + " does not exist (backbone has " +
                          std::to_string(stages) + " stages)");
    }
    if (enable_mag && (mag.source_stage >= stages || mag.target_stage >= stages)) {
        throw ConfigError("mag stages " + std::to_string(mag.source_stage) + "->" + std::to_string(mag.target_stage) +
                          " do not exist (backbone has " + std::to_string(stages) + " stages)");
    }
    if ((enable_cag || enable_mag) && (cag_stage >= stages || mag.source_stage >= stages)) {
        throw ConfigError("fusion inputs reference a missing stage");
    }
    if (classes < 2) throw ConfigError("classes must be >= 2");
    if (codebook_size < 1) throw ConfigError("codebook.size must be >= 1");
    if (input_size < backbone.min_input_extent()) {
        throw ConfigError("input_size " + std::to_string(input_size) + " is below the backbone minimum " +
                          std::to_string(backbone.min_input_extent()));
    }
    if (enable_pe) {
        const auto shapes = backbone::stage_shapes(backbone, input_size, input_size);
        patch.validate_for(shapes.back().h, shapes.back().w);
    }
}

std::size_t ModelConfig::feature_dim() const {
    const std::size_t c = backbone.channels.back();
    return enable_pe ? c + codebook_size * patch.embed_dim : c;
}

bool ModelConfig::set(std::string_view key, std::string_view value) {
    const std::string k(key);
    if (key == "backbone.stages") {
        backbone.stages = text::parse_size(value, k);
    } else if (key == "backbone.channels") {
        backbone.channels = text::parse_size_list(value, k);
    } else if (key == "backbone.blocks") {
        backbone.blocks = text::parse_size(value, k);
    } else if (key == "cag.stage") {
        cag_stage = text::parse_size(value, k);
    } else if (key == "cag.affinity") {
        cag.affinity = parse_affinity(text::trim(value));
    } else if (key == "cag.residual") {
        cag.residual = text::parse_bool(value, k);
    } else if (key == "mag.source") {
        mag.source_stage = text::parse_size(value, k);
    } else if (key == "mag.target") {
        mag.target_stage = text::parse_size(value, k);
    } else if (key == "mag.dilation") {
        mag.dilation = text::parse_size(value, k);
    } else if (key == "mag.kernel") {
        mag.kernel = text::parse_size(value, k);
    } else if (key == "mag.neighbors") {
        mag.neighbors = text::parse_size(value, k);
    } else if (key == "patch.sizes") {
        patch.sizes = text::parse_size_list(value, k);
    } else if (key == "patch.stride") {
        patch.stride = text::parse_size(value, k);
    } else if (key == "patch.weights") {
        patch.weights = text::parse_double_list(value, k);
    } else if (key == "patch.embed_dim") {
        patch.embed_dim = text::parse_size(value, k);
    } else if (key == "patch.l2_normalize") {
        patch.l2_normalize = text::parse_bool(value, k);
    } else if (key == "codebook.size") {
        codebook_size = text::parse_size(value, k);
    } else if (key == "classes") {
        classes = text::parse_size(value, k);
    } else if (key == "input_size") {
        input_size = text::parse_size(value, k);
    } else if (key == "enable.cag") {
        enable_cag = text::parse_bool(value, k);
    } else if (key == "enable.mag") {
        enable_mag = text::parse_bool(value, k);
    } else if (key == "enable.pe") {
        enable_pe = text::parse_bool(value, k);
    } else {
        return false;
    }
    return true;
}

std::vector<std::pair<std::string, std::string>> ModelConfig::entries() const {
    return {
        {"backbone.stages", std::to_string(backbone.stages)},
        {"backbone.channels", text::join_sizes(backbone.channels)},
        {"backbone.blocks", std::to_string(backbone.blocks)},
        {"cag.stage", std::to_string(cag_stage)},
        {"cag.affinity", std::string(affinity_name(cag.affinity))},
        {"cag.residual", bool_text(cag.residual)},
        {"mag.source", std::to_string(mag.source_stage)},
        {"mag.target", std::to_string(mag.target_stage)},
        {"mag.dilation", std::to_string(mag.dilation)},
        {"mag.kernel", std::to_string(mag.kernel)},
        {"mag.neighbors", std::to_string(mag.neighbors)},
        {"patch.sizes", text::join_sizes(patch.sizes)},
        {"patch.stride", std::to_string(patch.stride)},
        {"patch.weights", text::join_doubles(patch.weights)},
        {"patch.embed_dim", std::to_string(patch.embed_dim)},
        {"patch.l2_normalize", bool_text(patch.l2_normalize)},
        {"codebook.size", std::to_string(codebook_size)},
        {"classes", std::to_string(classes)},
        {"input_size", std::to_string(input_size)},
        {"enable.cag", bool_text(enable_cag)},
        {"enable.mag", bool_text(enable_mag)},
        {"enable.pe", bool_text(enable_pe)},
    };
}

std::string ModelConfig::to_text() const {
    std::string out;
    for (const auto& [k, v] : entries()) out += k + "=" + v + "\n";
    return out;
}

ModelConfig ModelConfig::from_text(std::string_view content, std::string_view origin) {
    ModelConfig cfg;
    const auto known = cfg.entries();
    for (const auto& [k, v] : text::parse_key_values(content, origin)) {
        if (cfg.set(k, v)) continue;
        std::vector<std::string> names;
        for (const auto& e : known) names.push_back(e.first);
        const std::string nearest = text::nearest(k, names);
        throw ConfigError(std::string(origin) + ": unknown key '" + k + "' (nearest known key: " + nearest + ")");
    }
    cfg.validate();
    return cfg;
}

Ablation parse_ablation(std::string_view name) {
    if (name == "fe") return Ablation::fe;
    if (name == "cag") return Ablation::cag;
    if (name == "mag") return Ablation::mag;
    if (name == "full") return Ablation::full;
    throw ConfigError("--ablate: expected fe, cag, mag or full, got '" + std::string(name) + "'");
}

std::string_view ablation_name(Ablation a) {
    switch (a) {
        case Ablation::fe: return "fe";
        case Ablation::cag: return "cag";
        case Ablation::mag: return "mag";
        case Ablation::full: return "full";
    }
    return "?";
}

void apply_ablation(ModelConfig& cfg, Ablation a) {
    cfg.enable_cag = a != Ablation::fe;
    cfg.enable_mag = a == Ablation::mag || a == Ablation::full;
    cfg.enable_pe = a == Ablation::full;
}

std::vector<Parameter*> ModelParams::parameters() {
    std::vector<Parameter*> out = backbone.parameters();
    const auto append = [&out](std::vector<Parameter*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
    if (cag) append(cag->parameters());
    if (mag_proj) out.push_back(&*mag_proj);
    if (fusion) append(fusion->parameters());
    if (patch) append(patch->parameters());
    out.push_back(&classifier_weight);
    out.push_back(&classifier_bias);
    return out;
}

ModelParams init_model(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const auto& ch = cfg.backbone.channels;
    ModelParams p;
    p.backbone = backbone::init_params(cfg.backbone, rng);
    if (cfg.enable_cag) p.cag = graphmod::init_context_graph(ch[cfg.cag_stage], rng);
    if (cfg.enable_mag) {
        const std::size_t cs = ch[cfg.mag.source_stage];
        const std::size_t ct = ch[cfg.mag.target_stage];
        p.mag_proj = Parameter("mag.proj", fan_in_uniform({ct, cs}, ct, rng));
    }
    if (cfg.enable_cag || cfg.enable_mag) {
        p.fusion = graphmod::init_fusion(ch[cfg.cag_stage] + ch[cfg.mag.source_stage], ch.back(), rng);
    }
    if (cfg.enable_pe) p.patch = patchenc::init_patch_encoder(ch.back(), cfg.patch.embed_dim, cfg.codebook_size, rng);
    const std::size_t f = cfg.feature_dim();
    p.classifier_weight = Parameter("classifier.weight", fan_in_uniform({f, cfg.classes}, f, rng));
    p.classifier_bias = Parameter("classifier.bias", Tensor({cfg.classes}, 0.0));
    return p;
}

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    return init_model(cfg, rng);
}

Var model_forward(Var image, const ModelConfig& cfg, ModelParams& params, ForwardTrace* trace) {
    const MapShape im = map_shape(image.value());
    if (im.c != cfg.backbone.in_channels) {
        throw DimensionError("model: expected " + std::to_string(cfg.backbone.in_channels) + " input channels, got " +
                             shape_str(image.value().shape()));
    }
    const auto stages = backbone::forward(image, cfg.backbone, params.backbone);
    const Var f_last = stages.maps.back();
    Tape& tape = image.tape();

    Var q = f_last;
    if (cfg.enable_cag || cfg.enable_mag) {
        Var ghat = stages.maps.at(cfg.cag_stage);
        if (cfg.enable_cag) {
            const auto r = graphmod::context_aware_graph_detailed(ghat, *params.cag, cfg.cag);
            ghat = r.output;
            if (trace) trace->attention = r.attention.value();
        }
        Var ghat_prime = stages.maps.at(cfg.mag.source_stage);
        if (cfg.enable_mag) {
            auto r = graphmod::multi_stage_graph(ghat_prime, stages.maps.at(cfg.mag.target_stage), *params.mag_proj,
                                                 cfg.mag);
            ghat_prime = r.output;
            if (trace) trace->adjacency = std::move(r.adjacency);
        }
        q = graphmod::fuse(ghat, ghat_prime, f_last, *params.fusion).q;
    }

    Var z;
    if (cfg.enable_pe) {
        auto& pe = *params.patch;
        const Var u = patchenc::aggregate_multiscale(q, cfg.patch, pe.codebook, pe.proj);
        z = patchenc::fuse_global(q, u);
        if (trace) {
            const MapShape m = map_shape(q.value());
            const Tensor proj = matmul(tape.constant(q.value().reshaped({m.pixels(), m.c})), tape.constant(pe.proj.value)).value();
            trace->assignments = patchenc::soft_assignments(proj, pe.codebook.centers.value, pe.codebook.smoothing.value);
        }
    } else {
        z = global_avg_pool(q);
    }
    if (trace) {
        trace->q = q.value();
        trace->z = z.value();
    }

    const Var row = reshape(z, {1, z.value().size()});
    const Var out = add_bias(matmul(row, tape.parameter(params.classifier_weight)), tape.parameter(params.classifier_bias));
    return reshape(out, {cfg.classes});
}

Tensor logits(const Tensor& image, const ModelConfig& cfg, ModelParams& params, ForwardTrace* trace) {
    Tape tape;
    return model_forward(tape.constant(image), cfg, params, trace).value();
}

Var cross_entropy(Var logits, std::size_t label) {
    const Tensor& x = logits.value();
    if (x.rank() != 1) throw DimensionError("cross_entropy: logits must be a vector, got " + shape_str(x.shape()));
    if (label >= x.size()) {
        throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                            std::to_string(x.size()) + " classes");
    }
    const double m = *std::max_element(x.data().begin(), x.data().end());
    double s = 0.0;
    for (double v : x.data()) s += std::exp(v - m);
    const double lse = m + std::log(s);
    Tensor probs(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) probs[i] = std::exp(x[i] - lse);
    return logits.tape().record(
        Tensor::scalar(lse - x[label]), {logits},
        [label, probs = std::move(probs)](const Tensor& up, const Tensor&, std::span<Tensor* const> g) {
            if (!g[0]) return;
            Tensor& gx = *g[0];
            const double u = up[0];
            for (std::size_t i = 0; i < probs.size(); ++i) gx[i] += u * (probs[i] - (i == label ? 1.0 : 0.0));
        },
        "cross_entropy");
}

}  // namespace texgraph::model
