#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "texgraph/errors.hpp"
#include "texgraph/gradcheck.hpp"
#include "texgraph/graphmod.hpp"
#include "texgraph/ops.hpp"

using namespace texgraph;
using namespace texgraph::graphmod;
using texgraph::testing::expect_near;
using texgraph::testing::max_abs_diff;
using texgraph::testing::px;
using texgraph::testing::rand_tensor;

namespace {

// Row-vector times matrix for a single node: x (C) * W (C x D).
std::vector<double> project(const double* x, const Tensor& w) {
    const std::size_t c = w.extent(0), d = w.extent(1);
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += x[i] * w[i * d + j];
    return out;
}

struct AttentionOracle {
    Tensor attention;
    Tensor output;
};

AttentionOracle attention_oracle(const Tensor& F, const ContextGraphParams& p, const ContextGraphConfig& cfg) {
    const std::size_t n = F.extent(0) * F.extent(1), c = F.extent(2);
    std::vector<std::vector<double>> q(n), k(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = &F[i * c];
        if (cfg.affinity == Affinity::embedded_gaussian) {
            q[i] = project(x, p.query.value);
            k[i] = project(x, p.key.value);
        } else {
            q[i].assign(x, x + c);
            k[i].assign(x, x + c);
        }
        v[i] = project(x, p.value.value);
    }
    AttentionOracle o{Tensor({n, n}), Tensor(F.shape())};
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> a(n);
        double mx = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
            a[j] = std::inner_product(q[i].begin(), q[i].end(), k[j].begin(), 0.0);
            mx = std::max(mx, a[j]);
        }
        double z = 0.0;
        for (auto& e : a) z += (e = std::exp(e - mx));
        std::vector<double> msg(v[0].size(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            o.attention[i * n + j] = a[j] / z;
            for (std::size_t d = 0; d < msg.size(); ++d) msg[d] += a[j] / z * v[j][d];
        }
        const auto y = project(msg.data(), p.output.value);
        for (std::size_t ch = 0; ch < c; ++ch) o.output[i * c + ch] = y[ch] + (cfg.residual ? F[i * c + ch] : 0.0);
    }
    return o;
}

Tensor permute_pixels(const Tensor& F, const std::vector<std::size_t>& perm) {
    const std::size_t c = F.extent(2);
    Tensor out(F.shape());
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] = F[perm[i] * c + ch];
    return out;
}

}  // namespace

TEST(ContextGraph, SingleNodeHasUnitAttention) {
    Rng rng(1);
    auto p = init_context_graph(4, rng);
    const Tensor F = rand_tensor({1, 1, 4}, rng);
    Tape t;
    const auto r = context_aware_graph_detailed(t.constant(F), p);
    EXPECT_EQ(r.attention.value(), Tensor({1, 1}, 1.0));
    expect_near(r.output.value(), attention_oracle(F, p, {}).output, 1e-14);
}

TEST(ContextGraph, IdenticalNodesShareWeightsAndOutputs) {
    Rng rng(2);
    auto p = init_context_graph(3, rng);
    const Tensor cell = rand_tensor({3}, rng);
    Tensor F({1, 2, 3});
    for (std::size_t i = 0; i < 6; ++i) F[i] = cell[i % 3];
    Tape t;
    const auto r = context_aware_graph_detailed(t.constant(F), p);
    for (double a : r.attention.value().data()) EXPECT_DOUBLE_EQ(a, 0.5);
    for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_DOUBLE_EQ(r.output.value()[ch], r.output.value()[3 + ch]);
}

TEST(ContextGraph, MatchesDoubleLoopOracle) {
    for (const Affinity aff : {Affinity::embedded_gaussian, Affinity::gaussian}) {
        for (const bool residual : {true, false}) {
            Rng rng(3);
            auto p = init_context_graph(8, rng);
            const Tensor F = rand_tensor({4, 4, 8}, rng);
            const ContextGraphConfig cfg{aff, residual};
            Tape t;
            const auto r = context_aware_graph_detailed(t.constant(F), p, cfg);
            const auto o = attention_oracle(F, p, cfg);
            expect_near(r.attention.value(), o.attention, 1e-10);
            expect_near(r.output.value(), o.output, 1e-10);
            EXPECT_EQ(r.output.shape(), F.shape());
        }
    }
}

TEST(ContextGraph, AttentionRowStochastic) {
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t h = 1 + rng() % 5, w = 1 + rng() % 5, c = 1 + rng() % 6;
        auto p = init_context_graph(c, rng);
        Tape t;
        const Tensor a = context_aware_graph_detailed(t.constant(rand_tensor({h, w, c}, rng, -3, 3)), p).attention.value();
        const std::size_t n = h * w;
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < n; ++j) row += a[i * n + j];
            EXPECT_NEAR(row, 1.0, 1e-12);
        }
    }
}

TEST(ContextGraph, PermutationEquivariant) {
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t h = 1 + rng() % 4, w = 2 + rng() % 4, c = 2 + rng() % 5;
        auto p = init_context_graph(c, rng);
        const Tensor F = rand_tensor({h, w, c}, rng);
        std::vector<std::size_t> perm(h * w);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        Tape t;
        const Tensor out = context_aware_graph(t.constant(F), p).value();
        const Tensor out_perm = context_aware_graph(t.constant(permute_pixels(F, perm)), p).value();
        EXPECT_LE(max_abs_diff(out_perm, permute_pixels(out, perm)), 1e-9);
    }
}

TEST(ContextGraph, WrongChannelsRejected) {
    Rng rng(6);
    auto p = init_context_graph(4, rng);
    Tape t;
    EXPECT_THROW(context_aware_graph(t.constant(Tensor({2, 2, 5})), p), DimensionError);
}

TEST(DilatedContext, ConstantMapPreserved) {
    Rng rng(7);
    for (std::size_t d = 1; d <= 3; ++d)
        for (std::size_t k : {3, 5}) {
            Tensor F({5, 6, 2});
            for (std::size_t i = 0; i < F.size(); ++i) F[i] = (i % 2) ? -1.75 : 3.25;
            EXPECT_LE(max_abs_diff(dilated_context(F, d, k), F), 1e-12);
        }
}

TEST(DilatedContext, ImpulseResponse) {
    Tensor F({5, 5, 1});
    F[2 * 5 + 2] = 8.0;
    const Tensor y = dilated_context(F, 1, 3);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 5; ++c) {
            const bool neighbour = (r >= 1 && r <= 3 && c >= 1 && c <= 3) && !(r == 2 && c == 2);
            EXPECT_DOUBLE_EQ(px(y, r, c, 0), neighbour ? 1.0 : 0.0) << r << "," << c;
        }
}

TEST(DilatedContext, NeighbourhoodLoopOracle) {
    Rng rng(8);
    const Tensor F = rand_tensor({6, 6, 2}, rng);
    const Tensor y = dilated_context(F, 2, 3);
    const auto clampi = [](int v) { return std::clamp(v, 0, 5); };
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c)
            for (std::size_t ch = 0; ch < 2; ++ch) {
                double acc = 0.0;
                for (int i : {-1, 0, 1})
                    for (int j : {-1, 0, 1}) {
                        if (i == 0 && j == 0) continue;
                        acc += px(F, clampi(r + 2 * i), clampi(c + 2 * j), ch);
                    }
                EXPECT_NEAR(px(y, r, c, ch), acc / 8.0, 1e-12);
            }
}

TEST(DilatedContext, BadKernelRejected) {
    EXPECT_THROW(dilated_context(Tensor({3, 3, 1}), 1, 4), ContractError);
    EXPECT_THROW(dilated_context(Tensor({3, 3, 1}), 1, 1), ContractError);
}

TEST(TopN, SelfIsNearest) {
    Rng rng(9);
    const Tensor F = rand_tensor({3, 4, 2}, rng);
    const auto adj = topn_neighbors(F, F, 1);
    for (std::size_t s = 0; s < 12; ++s) EXPECT_EQ(adj.neighbors(s)[0], s);
}

TEST(TopN, TwoPixelExample) {
    const Tensor a({2, 1, 1}, std::vector<double>{0, 10});
    const Tensor b({2, 1, 1}, std::vector<double>{1, 9});
    const auto adj = topn_neighbors(a, b, 1);
    EXPECT_EQ(adj.neighbors(0)[0], 0u);
    EXPECT_EQ(adj.neighbors(1)[0], 1u);
}

TEST(TopN, TiesGoToSmallerIndex) {
    const Tensor a({1, 1, 1}, std::vector<double>{0});
    const Tensor b({1, 4, 1}, std::vector<double>{2, -1, 1, -2});
    const auto adj = topn_neighbors(a, b, 3);
    EXPECT_EQ(std::vector<std::uint32_t>(adj.targets.begin(), adj.targets.end()), (std::vector<std::uint32_t>{1, 2, 0}));
}

TEST(TopN, MatchesFullSortOverRandomInstances) {
    Rng rng(10);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t h0 = 1 + rng() % 8, w0 = 1 + rng() % 8, h1 = 1 + rng() % 8, w1 = 1 + rng() % 8;
        const std::size_t c = 1 + rng() % 3;
        const std::size_t n = 1 + rng() % std::min<std::size_t>(4, h1 * w1);
        // Coarse integer features make ties common.
        Tensor a({h0, w0, c}), b({h1, w1, c});
        for (auto& v : a.data()) v = static_cast<double>(rng() % 4);
        for (auto& v : b.data()) v = static_cast<double>(rng() % 4);
        const auto adj = topn_neighbors(a, b, n);
        ASSERT_EQ(adj.targets.size(), h0 * w0 * n);
        const Tensor dense = adj.dense();
        for (std::size_t s = 0; s < h0 * w0; ++s) {
            std::vector<std::pair<double, std::uint32_t>> all;
            for (std::uint32_t t = 0; t < h1 * w1; ++t) {
                double d = 0.0;
                for (std::size_t ch = 0; ch < c; ++ch) d += std::pow(a[s * c + ch] - b[t * c + ch], 2);
                all.emplace_back(d, t);
            }
            std::sort(all.begin(), all.end());
            for (std::size_t k = 0; k < n; ++k) EXPECT_EQ(adj.neighbors(s)[k], all[k].second) << "rep " << rep;
            double row = 0.0;
            for (std::size_t t = 0; t < h1 * w1; ++t) row += dense[s * h1 * w1 + t];
            EXPECT_EQ(row, static_cast<double>(n));
        }
    }
}

TEST(TopN, OutOfRangeN) {
    const Tensor a({2, 2, 1}), b({2, 2, 1});
    EXPECT_THROW(topn_neighbors(a, b, 0), ContractError);
    EXPECT_THROW(topn_neighbors(a, b, 5), ContractError);
    EXPECT_THROW(topn_neighbors(a, Tensor({2, 2, 2}), 1), DimensionError);
}

TEST(Bipartite, ConstantFeaturesGiveProjectedConstant) {
    Rng rng(11);
    Tensor F1({3, 3, 2});
    for (std::size_t i = 0; i < F1.size(); ++i) F1[i] = (i % 2) ? 0.5 : -2.0;
    const Tensor proj = rand_tensor({2, 3}, rng);
    const auto adj = topn_neighbors(rand_tensor({2, 4, 1}, rng), rand_tensor({3, 3, 1}, rng), 4);
    Tape t;
    const Tensor y = bipartite_propagate(t.constant(F1), adj, t.constant(proj)).value();
    ASSERT_EQ(y.shape(), (Shape{2, 4, 3}));
    const double cell[2] = {-2.0, 0.5};
    const auto want = project(cell, proj);
    for (std::size_t s = 0; s < 8; ++s)
        for (std::size_t o = 0; o < 3; ++o) EXPECT_NEAR(y[s * 3 + o], want[o], 1e-14);
}

TEST(Bipartite, SingleNeighbourIdentityIsGather) {
    Rng rng(12);
    const Tensor F1 = rand_tensor({3, 2, 2}, rng);
    const auto adj = topn_neighbors(rand_tensor({4, 4, 1}, rng), rand_tensor({3, 2, 1}, rng), 1);
    Tape t;
    const Tensor y = bipartite_propagate(t.constant(F1), adj, t.constant(Tensor({2, 2}, std::vector<double>{1, 0, 0, 1}))).value();
    for (std::size_t s = 0; s < 16; ++s)
        for (std::size_t ch = 0; ch < 2; ++ch) EXPECT_EQ(y[s * 2 + ch], F1[adj.neighbors(s)[0] * 2 + ch]);
}

TEST(Bipartite, IndexLoopOracle) {
    Rng rng(13);
    const Tensor F1 = rand_tensor({4, 3, 3}, rng);
    const Tensor proj = rand_tensor({3, 2}, rng);
    const auto adj = topn_neighbors(rand_tensor({3, 3, 2}, rng), rand_tensor({4, 3, 2}, rng), 3);
    Tape t;
    const Tensor y = bipartite_propagate(t.constant(F1), adj, t.constant(proj)).value();
    for (std::size_t s = 0; s < 9; ++s) {
        std::vector<double> mean(3, 0.0);
        for (auto tgt : adj.neighbors(s))
            for (std::size_t ch = 0; ch < 3; ++ch) mean[ch] += F1[tgt * 3 + ch] / 3.0;
        const auto want = project(mean.data(), proj);
        for (std::size_t o = 0; o < 2; ++o) EXPECT_NEAR(y[s * 2 + o], want[o], 1e-12);
    }
    EXPECT_THROW(gather_mean(t.constant(Tensor({3, 3, 3})), adj), ContractError);
}

TEST(Bipartite, GatherMeanGradient) {
    Rng rng(14);
    const auto adj = topn_neighbors(rand_tensor({3, 3, 2}, rng), rand_tensor({2, 3, 2}, rng), 2);
    const Tensor r = rand_tensor({3, 3, 2}, rng);
    const double err = grad_check([&](Tape& t, Var x) { return sum(mul(gather_mean(x, adj), t.constant(r))); },
                                  rand_tensor({2, 3, 2}, rng));
    EXPECT_LE(err, 1e-4);
}

TEST(MultiStage, OutputAtSourceResolution) {
    Rng rng(15);
    Parameter proj("mag.proj", rand_tensor({6, 4}, rng));
    MultiStageGraphConfig cfg{0, 1, 2, 3, 4};
    Tape t;
    const auto r = multi_stage_graph(t.constant(rand_tensor({6, 6, 4}, rng)), t.constant(rand_tensor({3, 3, 6}, rng)), proj, cfg);
    EXPECT_EQ(r.output.shape(), (Shape{6, 6, 4}));
    EXPECT_EQ(r.adjacency.targets.size(), 36u * 4u);
    for (auto tgt : r.adjacency.targets) EXPECT_LT(tgt, 9u);
}

TEST(MultiStage, ConfigValidation) {
    EXPECT_THROW((MultiStageGraphConfig{0, 1, 2, 4, 4}).validate(), ConfigError);
    EXPECT_THROW((MultiStageGraphConfig{0, 1, 2, 3, 0}).validate(), ConfigError);
    EXPECT_THROW((MultiStageGraphConfig{1, 1, 2, 3, 1}).validate(), ConfigError);
}

TEST(Fuse, ClosedAndOpenGate) {
    Rng rng(16);
    auto p = init_fusion(5, 3, rng);
    const Tensor g = rand_tensor({2, 2, 2}, rng), gp = rand_tensor({4, 4, 3}, rng), f = rand_tensor({3, 3, 3}, rng);
    Tape t;
    p.bias.value.fill(-60.0);
    expect_near(fuse(t.constant(g), t.constant(gp), t.constant(f), p).q.value(), f, 1e-20);
    p.bias.value.fill(60.0);
    Tensor twice = f;
    for (auto& v : twice.data()) v *= 2.0;
    expect_near(fuse(t.constant(g), t.constant(gp), t.constant(f), p).q.value(), twice, 1e-20);
}

TEST(Fuse, GateStrictlyInsideUnitInterval) {
    Rng rng(17);
    for (int rep = 0; rep < 10; ++rep) {
        auto p = init_fusion(4, 2, rng);
        Tape t;
        const auto r = fuse(t.constant(rand_tensor({3, 3, 2}, rng, -3, 3)), t.constant(rand_tensor({2, 2, 2}, rng, -3, 3)),
                            t.constant(rand_tensor({2, 2, 2}, rng)), p);
        for (double v : r.gate.value().data()) {
            EXPECT_GT(v, 0.0);
            EXPECT_LT(v, 1.0);
        }
    }
}

TEST(Fuse, ChannelMismatchRejected) {
    Rng rng(18);
    auto p = init_fusion(4, 2, rng);
    Tape t;
    EXPECT_THROW(fuse(t.constant(Tensor({2, 2, 3})), t.constant(Tensor({2, 2, 2})), t.constant(Tensor({2, 2, 2})), p),
                 DimensionError);
}

TEST(Fuse, GradCheckWholePath) {
    Rng rng(19);
    auto p = init_fusion(5, 3, rng);
    Parameter g("g", rand_tensor({2, 2, 2}, rng)), gp("gp", rand_tensor({3, 3, 3}, rng)), f("f", rand_tensor({3, 3, 3}, rng));
    const Tensor r = rand_tensor({3, 3, 3}, rng);
    std::vector<Parameter*> plist{&g, &gp, &f, &p.weight, &p.bias};
    const auto report = check_gradients(
        [&](Tape& t) { return sum(mul(fuse(t.parameter(g), t.parameter(gp), t.parameter(f), p).q, t.constant(r))); }, plist);
    EXPECT_LE(report.max_rel_error, 1e-4) << report.worst_coordinate;
}

TEST(ContextGraph, GradCheck) {
    Rng rng(20);
    auto p = init_context_graph(4, rng);
    Parameter F("F", rand_tensor({3, 2, 4}, rng));
    const Tensor r = rand_tensor({3, 2, 4}, rng);
    auto plist = p.parameters();
    plist.push_back(&F);
    const auto report = check_gradients(
        [&](Tape& t) { return sum(mul(context_aware_graph(t.parameter(F), p), t.constant(r))); }, plist);
    EXPECT_LE(report.max_rel_error, 1e-4) << report.worst_coordinate;
}
