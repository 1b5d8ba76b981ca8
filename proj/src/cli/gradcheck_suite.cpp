#include <chrono>
#include <cstdio>
#include <memory>
#include <ostream>

#include "texgraph/cli.hpp"
#include "texgraph/errors.hpp"
#include "texgraph/ops.hpp"
#include "texgraph/text.hpp"

namespace texgraph::cli {

namespace {

using OpFn = std::function<Var(Tape&, std::span<const Var>)>;

struct Input {
    std::string name;
    Shape shape;
    double lo = -1.0;
    double hi = 1.0;
};

/// Random inputs bound as parameters, scalar readout sum(op(...) * R) with a
/// fixed random R, worst error over `seeds` draws.
GradCheckReport check_op(const std::vector<Input>& inputs, const OpFn& op, std::size_t seeds = 3) {
    GradCheckReport worst;
    for (std::size_t s = 0; s < seeds; ++s) {
        Rng rng(1000 + s);
        std::vector<Parameter> params;
        params.reserve(inputs.size());
        for (const auto& in : inputs) params.emplace_back(in.name, random_uniform(in.shape, in.lo, in.hi, rng));
        std::vector<Parameter*> ptrs;
        for (auto& p : params) ptrs.push_back(&p);
        auto readout = std::make_shared<Tensor>();
        const TapeFunction f = [&params, &op, &rng, readout](Tape& t) {
            std::vector<Var> vars;
            for (auto& p : params) vars.push_back(t.parameter(p));
            const Var y = op(t, vars);
            if (readout->empty()) *readout = random_uniform(y.shape(), -1.0, 1.0, rng);
            return sum(mul(y, t.constant(*readout)));
        };
        const GradCheckReport r = check_gradients(f, ptrs);
        worst.coordinates += r.coordinates;
        if (r.max_rel_error >= worst.max_rel_error) {
            worst.max_rel_error = r.max_rel_error;
            worst.worst_coordinate = r.worst_coordinate;
        }
    }
    return worst;
}

GradCase op_case(std::string name, std::vector<Input> inputs, OpFn op) {
    return {std::move(name), kOpTolerance,
            [inputs = std::move(inputs), op = std::move(op)] { return check_op(inputs, op); }};
}

ConvSpec conv_spec(std::size_t stride, std::size_t pad, std::size_t dilation, PadMode mode) {
    ConvSpec s;
    s.stride = stride;
    s.pad = pad;
    s.dilation = dilation;
    s.pad_mode = mode;
    return s;
}

graphmod::BipartiteAdjacency fixed_adjacency(std::size_t sh, std::size_t sw, std::size_t th, std::size_t tw,
                                             std::size_t n) {
    Rng rng(77);
    return graphmod::topn_neighbors(random_uniform({sh, sw, 2}, -1.0, 1.0, rng),
                                    random_uniform({th, tw, 2}, -1.0, 1.0, rng), n);
}

/// Model used by the end-to-end check: 16x16 input, two stages, K = 4, D_e = 4.
model::ModelConfig gradcheck_model_config() {
    model::ModelConfig cfg;
    cfg.backbone = {2, {4, 8}, 1, 3};
    cfg.cag_stage = 1;
    cfg.mag = {0, 1, 2, 3, 4};
    cfg.patch.sizes = {2, 3, 4};
    cfg.patch.weights = {0.35, 0.45, 0.2};
    cfg.patch.embed_dim = 4;
    cfg.codebook_size = 4;
    cfg.classes = 4;
    cfg.input_size = 16;
    return cfg;
}

GradCheckReport check_model() {
    const model::ModelConfig cfg = gradcheck_model_config();
    auto params = model::init_model(cfg, 3);
    // Inputs wider than [0, 1] keep the attention and gate paths away from
    // gradients so small that central differences only see rounding noise.
    Rng rng(5);
    const Tensor image = random_uniform({16, 16, 3}, -4.0, 4.0, rng);
    const auto plist = params.parameters();
    return check_gradients(
        [&](Tape& t) { return model::cross_entropy(model::model_forward(t.constant(image), cfg, params), 1); }, plist);
}

}  // namespace

std::vector<GradCase> gradcheck_cases() {
    using graphmod::Affinity;
    std::vector<GradCase> cases;
    const auto add_case = [&](std::string name, std::vector<Input> in, OpFn op) {
        cases.push_back(op_case(std::move(name), std::move(in), std::move(op)));
    };

    add_case("matmul", {{"a", {3, 4}}, {"b", {4, 5}}}, [](Tape&, auto v) { return matmul(v[0], v[1]); });
    add_case("transpose", {{"a", {3, 4}}}, [](Tape&, auto v) { return transpose(v[0]); });
    add_case("conv2d", {{"x", {6, 6, 2}}, {"w", {3, 3, 2, 3}}},
             [](Tape&, auto v) { return conv2d(v[0], v[1], conv_spec(1, 1, 1, PadMode::zero)); });
    add_case("conv2d_stride2", {{"x", {7, 7, 2}}, {"w", {3, 3, 2, 2}}},
             [](Tape&, auto v) { return conv2d(v[0], v[1], conv_spec(2, 1, 1, PadMode::zero)); });
    add_case("conv2d_dilated", {{"x", {7, 7, 2}}, {"w", {3, 3, 2, 2}}},
             [](Tape&, auto v) { return conv2d(v[0], v[1], conv_spec(1, 2, 2, PadMode::zero)); });
    add_case("conv2d_replicate", {{"x", {5, 5, 2}}, {"w", {3, 3, 2, 2}}},
             [](Tape&, auto v) { return conv2d(v[0], v[1], conv_spec(1, 2, 1, PadMode::replicate)); });
    add_case("pointwise_conv", {{"x", {4, 4, 3}}, {"w", {3, 2}}}, [](Tape&, auto v) { return pointwise_conv(v[0], v[1]); });
    add_case("add_bias", {{"x", {4, 4, 3}}, {"b", {3}}}, [](Tape&, auto v) { return add_bias(v[0], v[1]); });
    add_case("add", {{"a", {3, 4}}, {"b", {3, 4}}}, [](Tape&, auto v) { return add(v[0], v[1]); });
    add_case("sub", {{"a", {3, 4}}, {"b", {3, 4}}}, [](Tape&, auto v) { return sub(v[0], v[1]); });
    add_case("mul", {{"a", {3, 4}}, {"b", {3, 4}}}, [](Tape&, auto v) { return mul(v[0], v[1]); });
    add_case("mul_shared", {{"a", {3, 4}}}, [](Tape&, auto v) { return mul(v[0], v[0]); });
    add_case("scale", {{"a", {3, 4}}}, [](Tape&, auto v) { return scale(v[0], -2.5); });
    add_case("exp", {{"a", {3, 4}}}, [](Tape&, auto v) { return exp(v[0]); });
    add_case("relu", {{"a", {4, 5}}}, [](Tape&, auto v) { return relu(v[0]); });
    add_case("sigmoid", {{"a", {3, 4}}}, [](Tape&, auto v) { return sigmoid(v[0]); });
    add_case("softmax", {{"a", {4, 5}}}, [](Tape&, auto v) { return softmax(v[0], 1); });
    add_case("softmax_axis0", {{"a", {4, 5}}}, [](Tape&, auto v) { return softmax(v[0], 0); });
    add_case("reduce_sum", {{"a", {3, 4, 2}}}, [](Tape&, auto v) { return reduce(v[0], {0, 2}, Reduction::sum); });
    add_case("reduce_mean", {{"a", {3, 4, 2}}}, [](Tape&, auto v) { return reduce(v[0], {1}, Reduction::mean); });
    add_case("concat", {{"a", {3, 3, 2}}, {"b", {3, 3, 1}}}, [](Tape&, auto v) { return concat(v, 2); });
    add_case("concat_axis0", {{"a", {2, 3}}, {"b", {4, 3}}}, [](Tape&, auto v) { return concat(v, 0); });
    add_case("reshape", {{"a", {3, 4}}}, [](Tape&, auto v) { return reshape(v[0], {2, 6}); });
    add_case("resize_nearest", {{"x", {3, 3, 2}}}, [](Tape&, auto v) { return resize_nearest(v[0], 5, 4); });
    add_case("resize_nearest_down", {{"x", {6, 6, 2}}}, [](Tape&, auto v) { return resize_nearest(v[0], 3, 3); });
    add_case("global_avg_pool", {{"x", {4, 3, 2}}}, [](Tape&, auto v) { return global_avg_pool(v[0]); });
    add_case("crop", {{"x", {5, 5, 2}}}, [](Tape&, auto v) { return crop(v[0], 1, 2, 3, 2); });
    add_case("pairwise_sq_dist", {{"a", {5, 3}}, {"b", {4, 3}}}, [](Tape&, auto v) { return pairwise_sq_dist(v[0], v[1]); });
    add_case("l2_normalize", {{"a", {3, 4}}}, [](Tape&, auto v) { return l2_normalize(v[0]); });
    add_case("cross_entropy", {{"logits", {4}}}, [](Tape&, auto v) { return model::cross_entropy(v[0], 2); });

    const auto adj = std::make_shared<graphmod::BipartiteAdjacency>(fixed_adjacency(4, 4, 3, 3, 3));
    add_case("gather_mean", {{"F1", {3, 3, 2}}}, [adj](Tape&, auto v) { return graphmod::gather_mean(v[0], *adj); });
    add_case("bipartite_propagate", {{"F1", {3, 3, 3}}, {"proj", {3, 2}}},
             [adj](Tape&, auto v) { return graphmod::bipartite_propagate(v[0], *adj, v[1]); });
    add_case("soft_residual_encode", {{"X", {6, 3}}, {"centers", {4, 3}}, {"smoothing", {4}, 0.5, 1.5}},
             [](Tape&, auto v) {
                 static const std::vector<double> w{0.5, 1.0, 2.0, 1.5, 0.25, 1.0};
                 return patchenc::soft_residual_encode(v[0], v[1], v[2], w);
             });
    add_case("encode_patch", {{"patch", {3, 3, 3}}, {"centers", {4, 3}}, {"smoothing", {4}, 0.5, 1.5}},
             [](Tape&, auto v) { return patchenc::encode_patch(v[0], v[1], v[2]); });
    add_case("fuse_global", {{"Q", {3, 3, 2}}, {"U", {3, 2}}}, [](Tape&, auto v) { return patchenc::fuse_global(v[0], v[1]); });

    for (const auto& [name, aff, residual] : {std::tuple{"context_graph", Affinity::embedded_gaussian, true},
                                             std::tuple{"context_graph_gaussian", Affinity::gaussian, true},
                                             std::tuple{"context_graph_no_residual", Affinity::embedded_gaussian, false}}) {
        const graphmod::ContextGraphConfig cfg{aff, residual};
        cases.push_back({name, kOpTolerance, [cfg] {
                             Rng rng(11);
                             Parameter F("F", random_uniform({4, 4, 4}, -1.0, 1.0, rng));
                             auto p = graphmod::init_context_graph(4, rng);
                             const Tensor r = random_uniform({4, 4, 4}, -1.0, 1.0, rng);
                             std::vector<Parameter*> ps{&F};
                             for (auto* q : p.parameters()) ps.push_back(q);
                             return check_gradients(
                                 [&](Tape& t) {
                                     return sum(mul(graphmod::context_aware_graph(t.parameter(F), p, cfg), t.constant(r)));
                                 },
                                 ps);
                         }});
    }
    cases.push_back({"multi_stage_graph", kOpTolerance, [] {
                         Rng rng(12);
                         Parameter F0("F0", random_uniform({6, 6, 3}, -1.0, 1.0, rng));
                         Parameter F1("F1", random_uniform({3, 3, 4}, -1.0, 1.0, rng));
                         Parameter proj("proj", random_uniform({4, 3}, -1.0, 1.0, rng));
                         const Tensor r = random_uniform({6, 6, 3}, -1.0, 1.0, rng);
                         const graphmod::MultiStageGraphConfig cfg{0, 1, 2, 3, 3};
                         Parameter* ps[] = {&F0, &F1, &proj};
                         return check_gradients(
                             [&](Tape& t) {
                                 const auto res =
                                     graphmod::multi_stage_graph(t.parameter(F0), t.parameter(F1), proj, cfg);
                                 return sum(mul(res.output, t.constant(r)));
                             },
                             ps);
                     }});
    cases.push_back({"fuse", kOpTolerance, [] {
                         Rng rng(13);
                         Parameter a("ghat", random_uniform({2, 2, 3}, -1.0, 1.0, rng));
                         Parameter b("ghat_prime", random_uniform({4, 4, 2}, -1.0, 1.0, rng));
                         Parameter f("f_last", random_uniform({4, 4, 3}, -1.0, 1.0, rng));
                         auto p = graphmod::init_fusion(5, 3, rng);
                         p.bias.value = random_uniform({3}, -1.0, 1.0, rng);
                         const Tensor r = random_uniform({4, 4, 3}, -1.0, 1.0, rng);
                         Parameter* ps[] = {&a, &b, &f, &p.weight, &p.bias};
                         return check_gradients(
                             [&](Tape& t) {
                                 return sum(mul(graphmod::fuse(t.parameter(a), t.parameter(b), t.parameter(f), p).q,
                                                t.constant(r)));
                             },
                             ps);
                     }});
    cases.push_back({"aggregate_multiscale", kOpTolerance, [] {
                         Rng rng(14);
                         patchenc::PatchConfig cfg;
                         cfg.sizes = {2, 3};
                         cfg.weights = {0.6, 0.4};
                         cfg.embed_dim = 2;
                         Parameter Q("Q", random_uniform({5, 5, 3}, -1.0, 1.0, rng));
                         auto pe = patchenc::init_patch_encoder(3, 2, 3, rng);
                         const Tensor r = random_uniform({3, 2}, -1.0, 1.0, rng);
                         Parameter* ps[] = {&Q, &pe.proj, &pe.codebook.centers, &pe.codebook.smoothing};
                         return check_gradients(
                             [&](Tape& t) {
                                 const Var u = patchenc::aggregate_multiscale(t.parameter(Q), cfg, pe.codebook, pe.proj);
                                 return sum(mul(u, t.constant(r)));
                             },
                             ps);
                     }});
    cases.push_back({"backbone", kOpTolerance, [] {
                         Rng rng(15);
                         const backbone::BackboneConfig cfg{2, {3, 4}, 2, 3};
                         Parameter image("image", random_uniform({8, 8, 3}, -1.0, 1.0, rng));
                         auto p = backbone::init_params(cfg, rng);
                         for (auto& l : p.layers) l.bias.value = random_uniform(l.bias.value.shape(), -0.1, 0.1, rng);
                         const Tensor r0 = random_uniform({4, 4, 3}, -1.0, 1.0, rng);
                         const Tensor r1 = random_uniform({2, 2, 4}, -1.0, 1.0, rng);
                         std::vector<Parameter*> ps{&image};
                         for (auto* q : p.parameters()) ps.push_back(q);
                         return check_gradients(
                             [&](Tape& t) {
                                 const auto out = backbone::forward(t.parameter(image), cfg, p);
                                 return add(sum(mul(out.maps[0], t.constant(r0))), sum(mul(out.maps[1], t.constant(r1))));
                             },
                             ps);
                     }});
    cases.push_back({"model", kModelTolerance, check_model});
    return cases;
}

int run_gradcheck(const std::vector<GradCase>& cases, std::string_view only, std::ostream& out, std::ostream& err) {
    std::vector<const GradCase*> selected;
    for (const auto& c : cases) {
        if (only.empty() || c.name == only) selected.push_back(&c);
    }
    if (selected.empty()) {
        std::vector<std::string> names;
        for (const auto& c : cases) names.push_back(c.name);
        err << "gradcheck: unknown op '" << only << "' (nearest: " << text::nearest(only, names) << ")\n";
        return kExitUsage;
    }
    char line[256];
    std::snprintf(line, sizeof line, "%-28s %8s %14s %10s  %s\n", "op", "coords", "max_rel_error", "tolerance", "status");
    out << line;
    bool ok = true;
    for (const GradCase* c : selected) {
        GradCheckReport r;
        std::string failure;
        try {
            r = c->run();
        } catch (const OracleError& e) {
            failure = std::string(e.what()) + " at " + e.coordinate();
        }
        const bool pass = failure.empty() && r.max_rel_error <= c->tolerance;
        std::snprintf(line, sizeof line, "%-28s %8zu %14.3e %10.0e  %s\n", c->name.c_str(), r.coordinates,
                      r.max_rel_error, c->tolerance, pass ? "ok" : "FAIL");
        out << line;
        if (!pass) {
            ok = false;
            if (failure.empty()) {
                err << "gradcheck: " << c->name << " max relative error " << text::format_double(r.max_rel_error)
                    << " at " << r.worst_coordinate << " exceeds " << text::format_double(c->tolerance) << "\n";
            } else {
                err << "gradcheck: " << c->name << ": " << failure << "\n";
            }
        }
        out.flush();
    }
    return ok ? kExitOk : kExitRuntime;
}

}  // namespace texgraph::cli
