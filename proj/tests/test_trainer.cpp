#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "helpers.hpp"
#include "texgraph/cli.hpp"
#include "texgraph/errors.hpp"
#include "texgraph/ops.hpp"
#include "texgraph/trainer.hpp"

using namespace texgraph;
using namespace texgraph::trainer;
using model::ModelConfig;
using texgraph::testing::rand_tensor;

namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(std::size_t classes = 2) {
    ModelConfig c;
    c.backbone = {2, {4, 8}, 1, 3};
    c.cag_stage = 1;
    c.mag = {0, 1, 2, 3, 2};
    c.patch.sizes = {2, 3};
    c.patch.weights = {0.5, 0.5};
    c.patch.embed_dim = 4;
    c.codebook_size = 4;
    c.classes = classes;
    c.input_size = 16;
    return c;
}

std::vector<texdata::Item> tiny_items(std::size_t per_class, std::uint64_t seed = 3) {
    texdata::SyntheticSpec spec;
    spec.classes = {"checkerboard", "stripes"};
    spec.per_class = per_class;
    spec.size = 16;
    spec.period = 4.0;
    spec.seed = seed;
    return texdata::generate(spec).items;
}

TrainConfig quick_train(std::size_t epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 3;
    c.lr = 0.01;
    return c;
}

std::vector<Tensor> snapshot(model::ModelParams& p) {
    std::vector<Tensor> out;
    for (auto* q : p.parameters()) out.push_back(q->value);
    return out;
}

fs::path temp_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("texgraph_trainer_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

double ce(const Tensor& logits, std::size_t label) {
    Tape t;
    return model::cross_entropy(t.constant(logits), label).value()[0];
}

}  // namespace

TEST(CrossEntropy, UniformFourClasses) { EXPECT_NEAR(ce(Tensor({4}, 0.3), 2), std::log(4.0), 1e-12); }

TEST(CrossEntropy, StableAtLargeMargin) {
    const double l = ce(Tensor({2}, std::vector<double>{1000, 0}), 0);
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_NEAR(l, 0.0, 1e-12);
    EXPECT_NEAR(ce(Tensor({2}, std::vector<double>{1000, 0}), 1), 1000.0, 1e-9);
}

TEST(CrossEntropy, NaiveOracleAtShiftedInputs) {
    Rng rng(1);
    for (int rep = 0; rep < 20; ++rep) {
        const Tensor x = rand_tensor({5}, rng, -3, 3);
        const std::size_t label = rng() % 5;
        double z = 0.0;
        for (double v : x.data()) z += std::exp(v);
        const double want = -std::log(std::exp(x[label]) / z);
        Tensor shifted = x;
        for (auto& v : shifted.data()) v += 40.0;
        EXPECT_NEAR(ce(x, label), want, 1e-12);
        EXPECT_NEAR(ce(shifted, label), want, 1e-12);
        EXPECT_GT(ce(x, label), 0.0);
    }
}

TEST(CrossEntropy, LabelOutOfRange) {
    Tape t;
    EXPECT_THROW(model::cross_entropy(t.constant(Tensor({3})), 3), ContractError);
}

TEST(CrossEntropy, GradientIsProbsMinusOneHot) {
    Rng rng(2);
    const double err = grad_check([](Tape&, Var x) { return model::cross_entropy(x, 2); }, rand_tensor({4}, rng));
    EXPECT_LE(err, 1e-7);
}

TEST(Sgd, PlainStep) {
    Parameter p("p", Tensor::scalar(1.0));
    p.grad = Tensor::scalar(2.0);
    SgdState s;
    Parameter* ptr = &p;
    sgd_step({&ptr, 1}, s, 0.1, 0.0, 0.0);
    EXPECT_EQ(p.value[0], 1.0 - 0.1 * 2.0);
    EXPECT_NEAR(p.value[0], 0.8, 1e-15);
}

TEST(Sgd, MomentumRecurrence) {
    Parameter p("p", Tensor::scalar(0.0));
    p.grad = Tensor::scalar(1.0);
    SgdState s;
    Parameter* ptr = &p;
    sgd_step({&ptr, 1}, s, 0.1, 0.9, 0.0);
    EXPECT_EQ(p.value[0], -0.1);
    sgd_step({&ptr, 1}, s, 0.1, 0.9, 0.0);
    EXPECT_EQ(p.value[0], -0.1 - 0.1 * 1.9);
    EXPECT_NEAR(p.value[0], -0.29, 1e-15);
}

TEST(Sgd, FixedPointAndLinearity) {
    Rng rng(3);
    Parameter p("p", rand_tensor({5}, rng));
    const Tensor before = p.value;
    p.grad = Tensor({5}, 0.0);
    SgdState s;
    Parameter* ptr = &p;
    sgd_step({&ptr, 1}, s, 0.3, 0.0, 0.0);
    EXPECT_EQ(p.value, before);

    p.grad = rand_tensor({5}, rng);
    SgdState s2;
    sgd_step({&ptr, 1}, s2, 0.3, 0.0, 0.0);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(p.value[i], before[i] - 0.3 * p.grad[i]);
}

TEST(Sgd, CoupledWeightDecayAndFloor) {
    Parameter p("p", Tensor::scalar(1.0));
    p.grad = Tensor::scalar(0.0);
    SgdState s;
    Parameter* ptr = &p;
    sgd_step({&ptr, 1}, s, 0.1, 0.0, 0.1);
    EXPECT_NEAR(p.value[0], 0.99, 1e-15);

    Parameter q("s", Tensor::scalar(0.01));
    q.lower_bound = 1e-4;
    q.grad = Tensor::scalar(5.0);
    SgdState s2;
    Parameter* qp = &q;
    sgd_step({&qp, 1}, s2, 0.1, 0.0, 0.0);
    EXPECT_EQ(q.value[0], 1e-4);
}

TEST(Sgd, StateMismatchRejected) {
    Parameter p("p", Tensor({2}, 1.0));
    p.grad = Tensor({2}, 1.0);
    SgdState s;
    s.buffers.push_back(Tensor({3}, 0.0));
    Parameter* ptr = &p;
    EXPECT_THROW(sgd_step({&ptr, 1}, s, 0.1, 0.9, 0.0), ContractError);
}

TEST(Model, FeatureExtractorPassthrough) {
    ModelConfig cfg = tiny_config(3);
    model::apply_ablation(cfg, model::Ablation::fe);
    auto params = model::init_model(cfg, 4);
    EXPECT_FALSE(params.cag.has_value());
    EXPECT_FALSE(params.mag_proj.has_value());
    EXPECT_FALSE(params.fusion.has_value());
    EXPECT_FALSE(params.patch.has_value());
    EXPECT_EQ(cfg.feature_dim(), 8u);

    Rng rng(5);
    const Tensor img = rand_tensor({16, 16, 3}, rng, 0, 1);
    Tape t;
    const Tensor gap = global_avg_pool(backbone::forward(t.constant(img), cfg.backbone, params.backbone).maps.back()).value();
    const Tensor& W = params.classifier_weight.value;
    const Tensor& b = params.classifier_bias.value;
    const Tensor got = model::logits(img, cfg, params);
    for (std::size_t k = 0; k < 3; ++k) {
        double want = b[k];
        for (std::size_t i = 0; i < 8; ++i) want += gap[i] * W[i * 3 + k];
        EXPECT_NEAR(got[k], want, 1e-14);
    }
}

TEST(Model, ZeroClassifierGivesBias) {
    const ModelConfig cfg = tiny_config(2);
    auto params = model::init_model(cfg, 6);
    params.classifier_weight.value.fill(0.0);
    params.classifier_bias.value = Tensor({2}, std::vector<double>{0.25, -1.5});
    Rng rng(7);
    EXPECT_EQ(model::logits(rand_tensor({16, 16, 3}, rng, 0, 1), cfg, params), params.classifier_bias.value);
}

TEST(Model, AblationParameterSets) {
    for (auto a : {model::Ablation::fe, model::Ablation::cag, model::Ablation::mag, model::Ablation::full}) {
        ModelConfig cfg = tiny_config();
        model::apply_ablation(cfg, a);
        auto params = model::init_model(cfg, 1);
        EXPECT_EQ(params.cag.has_value(), cfg.enable_cag);
        EXPECT_EQ(params.mag_proj.has_value(), cfg.enable_mag);
        EXPECT_EQ(params.patch.has_value(), cfg.enable_pe);
        EXPECT_EQ(params.classifier_weight.value.extent(0), cfg.feature_dim());
        Rng rng(2);
        const Tensor l = model::logits(rand_tensor({16, 16, 3}, rng, 0, 1), cfg, params);
        EXPECT_EQ(l.shape(), (Shape{2}));
        EXPECT_TRUE(l.all_finite());
        EXPECT_EQ(model::parse_ablation(model::ablation_name(a)), a);
    }
    EXPECT_THROW(model::parse_ablation("pe"), ConfigError);
}

TEST(Model, EndToEndGradCheck) {
    for (const auto& c : cli::gradcheck_cases()) {
        if (c.name != "model") continue;
        const auto r = c.run();
        EXPECT_LE(r.max_rel_error, 1e-4) << r.worst_coordinate;
        EXPECT_GT(r.coordinates, 100u);
        return;
    }
    FAIL() << "no model case in the gradient suite";
}

TEST(Model, ConfigTextRoundTrip) {
    ModelConfig cfg = tiny_config(5);
    cfg.cag.affinity = graphmod::Affinity::gaussian;
    cfg.cag.residual = false;
    cfg.patch.l2_normalize = false;
    cfg.enable_mag = false;
    const ModelConfig back = ModelConfig::from_text(cfg.to_text());
    EXPECT_EQ(back.to_text(), cfg.to_text());
    EXPECT_EQ(back.classes, 5u);
    EXPECT_EQ(back.cag.affinity, graphmod::Affinity::gaussian);
    try {
        ModelConfig::from_text("patch.size=3\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("patch.sizes"), std::string::npos) << e.what();
    }
}

TEST(Model, ValidationRejectsBadStages) {
    ModelConfig cfg = tiny_config();
    cfg.cag_stage = 2;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.classes = 1;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, ZeroEpochsChangesNothing) {
    const ModelConfig cfg = tiny_config();
    auto params = model::init_model(cfg, 1);
    const auto before = snapshot(params);
    auto tc = quick_train(0);
    auto state = init_train_state(tc);
    EXPECT_TRUE(train(cfg, params, tc, state, tiny_items(2), {}).empty());
    EXPECT_EQ(snapshot(params), before);
}

TEST(Train, EmptyDatasetAndBadLabels) {
    const ModelConfig cfg = tiny_config();
    auto params = model::init_model(cfg, 1);
    auto tc = quick_train(1);
    auto state = init_train_state(tc);
    EXPECT_THROW(train(cfg, params, tc, state, {}, {}), ContractError);
    auto items = tiny_items(2);
    items[0].label = 7;
    EXPECT_THROW(train(cfg, params, tc, state, items, {}), ContractError);
    EXPECT_THROW(evaluate(cfg, params, {}), ContractError);
}

TEST(Train, OneExampleStepDescends) {
    const ModelConfig cfg = tiny_config();
    auto params = model::init_model(cfg, 7);
    const auto items = tiny_items(2);
    const std::vector<texdata::Item> one{items[0]};
    const double before = ce(model::logits(one[0].image, cfg, params), one[0].label);
    TrainConfig tc = quick_train(1);
    tc.lr = 1e-3;
    auto state = init_train_state(tc);
    train(cfg, params, tc, state, one, {});
    const double after = ce(model::logits(one[0].image, cfg, params), one[0].label);
    EXPECT_LT(after, before);
}

TEST(Train, SameSeedBitwiseIdentical) {
    const ModelConfig cfg = tiny_config();
    const auto items = tiny_items(3);
    const auto val = tiny_items(2, 99);
    auto run = [&](std::size_t threads) {
        auto params = model::init_model(cfg, 11);
        TrainConfig tc = quick_train(3);
        tc.threads = threads;
        auto state = init_train_state(tc);
        const auto hist = train(cfg, params, tc, state, items, val);
        return std::make_pair(history_csv(hist), snapshot(params));
    };
    const auto a = run(1), b = run(1), c = run(3);
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
    EXPECT_EQ(a.first, c.first);
    EXPECT_EQ(a.second, c.second);
    EXPECT_EQ(std::count(a.first.begin(), a.first.end(), '\n'), 4);
}

TEST(Train, PlateauDropsLearningRate) {
    const ModelConfig cfg = tiny_config();
    auto params = model::init_model(cfg, 2);
    TrainConfig tc = quick_train(5);
    tc.lr = 1e-12;
    tc.patience = 2;
    auto state = init_train_state(tc);
    const auto hist = train(cfg, params, tc, state, tiny_items(2), {});
    ASSERT_EQ(hist.size(), 5u);
    // epoch 1 improves on infinity; epochs 2 and 3 are stale, so the drop applies from epoch 4.
    EXPECT_EQ(hist[0].lr, 1e-12);
    EXPECT_EQ(hist[2].lr, 1e-12);
    EXPECT_EQ(hist[3].lr, 1e-13);
    EXPECT_EQ(hist[4].lr, 1e-13);
    EXPECT_TRUE(std::isnan(hist[0].val_acc));
    EXPECT_NE(history_csv(hist).find(",,"), std::string::npos);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
    const ModelConfig cfg = tiny_config();
    const auto items = tiny_items(3);
    const fs::path dir = temp_dir("resume");

    auto straight = model::init_model(cfg, 5);
    TrainConfig tc = quick_train(2);
    auto s1 = init_train_state(tc);
    const auto h_full = train(cfg, straight, tc, s1, items, {});

    auto split_run = model::init_model(cfg, 5);
    TrainConfig first = quick_train(1);
    auto s2 = init_train_state(first);
    auto h_a = train(cfg, split_run, first, s2, items, {});
    save_checkpoint(dir / "ck.bin", cfg, split_run, s2);

    auto fresh = model::init_model(cfg, 99);
    TrainState s3;
    restore(read_checkpoint(dir / "ck.bin"), fresh, &s3);
    const auto h_b = train(cfg, fresh, tc, s3, items, {});
    h_a.insert(h_a.end(), h_b.begin(), h_b.end());
    EXPECT_EQ(history_csv(h_a), history_csv(h_full));
    EXPECT_EQ(snapshot(fresh), snapshot(straight));
}

TEST(Evaluate, MatchesPerExampleLoop) {
    const ModelConfig cfg = tiny_config();
    auto params = model::init_model(cfg, 8);
    const auto items = tiny_items(4);
    const EvalResult r = evaluate(cfg, params, items, 2);
    std::size_t correct = 0;
    double loss = 0.0;
    std::vector<std::size_t> row_sums(2, 0);
    for (std::size_t i = 0; i < items.size(); ++i) {
        const Tensor l = model::logits(items[i].image, cfg, params);
        const std::size_t pred = l[1] > l[0] ? 1 : 0;
        EXPECT_EQ(r.predictions[i], pred);
        correct += pred == items[i].label;
        loss += ce(l, items[i].label);
        ++row_sums[items[i].label];
    }
    EXPECT_EQ(r.accuracy, static_cast<double>(correct) / static_cast<double>(items.size()));
    EXPECT_NEAR(r.mean_loss, loss / static_cast<double>(items.size()), 1e-15);
    for (std::size_t c = 0; c < 2; ++c)
        EXPECT_EQ(std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0}), row_sums[c]);
    EXPECT_EQ(r.accuracy, static_cast<double>(r.confusion[0][0] + r.confusion[1][1]) / static_cast<double>(items.size()));
}

TEST(Evaluate, AlwaysClassZeroOnBalancedSet) {
    const ModelConfig cfg = tiny_config();
    auto params = model::init_model(cfg, 8);
    params.classifier_weight.value.fill(0.0);
    params.classifier_bias.value = Tensor({2}, std::vector<double>{1.0, 0.0});
    const EvalResult r = evaluate(cfg, params, tiny_items(5));
    EXPECT_EQ(r.accuracy, 0.5);
    EXPECT_EQ(r.confusion[0][0], 5u);
    EXPECT_EQ(r.confusion[1][0], 5u);
    const std::string csv = confusion_csv(r, {"a", "b"});
    EXPECT_EQ(csv, "true\\predicted,a,b\na,5,0\nb,5,0\n");
}

TEST(Checkpoint, RoundTripBitwise) {
    const ModelConfig cfg = tiny_config();
    auto params = model::init_model(cfg, 12);
    TrainConfig tc = quick_train(1);
    auto state = init_train_state(tc);
    train(cfg, params, tc, state, tiny_items(2), {});
    const fs::path path = temp_dir("roundtrip") / "ck.bin";
    save_checkpoint(path, cfg, params, state);

    const CheckpointData data = read_checkpoint(path);
    EXPECT_EQ(data.config.to_text(), cfg.to_text());
    EXPECT_EQ(data.epoch, 1u);
    EXPECT_EQ(data.lr, state.lr);
    const auto plist = params.parameters();
    ASSERT_EQ(data.params.size(), plist.size());
    ASSERT_EQ(data.momentum.size(), plist.size());
    for (std::size_t i = 0; i < plist.size(); ++i) {
        EXPECT_EQ(data.params[i].first, plist[i]->name);
        EXPECT_EQ(data.params[i].second, plist[i]->value);
        EXPECT_EQ(data.momentum[i].second, state.sgd.buffers[i]);
    }

    auto loaded = load_model(path);
    Rng rng(13);
    for (int i = 0; i < 20; ++i) {
        const Tensor img = rand_tensor({16, 16, 3}, rng, 0, 1);
        EXPECT_EQ(model::logits(img, loaded.config, loaded.params), model::logits(img, cfg, params));
    }
    TrainState restored;
    restore(data, loaded.params, &restored);
    EXPECT_EQ(restored.rng, state.rng);
    EXPECT_EQ(restored.stale, state.stale);
    EXPECT_EQ(restored.best, state.best);
}

TEST(Checkpoint, TruncatedFileIsChecksumError) {
    const ModelConfig cfg = tiny_config();
    auto params = model::init_model(cfg, 12);
    auto state = init_train_state(quick_train(1));
    const fs::path path = temp_dir("truncated") / "ck.bin";
    save_checkpoint(path, cfg, params, state);
    fs::resize_file(path, fs::file_size(path) - 9);
    try {
        read_checkpoint(path);
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::checksum) << e.what();
    }
}

TEST(Checkpoint, FlippedByteIsChecksumError) {
    const ModelConfig cfg = tiny_config();
    auto params = model::init_model(cfg, 12);
    auto state = init_train_state(quick_train(1));
    const fs::path path = temp_dir("flipped") / "ck.bin";
    save_checkpoint(path, cfg, params, state);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(static_cast<std::streamoff>(fs::file_size(path) / 2));
        f.put('\x5a');
    }
    try {
        read_checkpoint(path);
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::checksum) << e.what();
    }
}

TEST(Checkpoint, VersionErrorNamesBothVersions) {
    const ModelConfig cfg = tiny_config();
    auto params = model::init_model(cfg, 12);
    auto state = init_train_state(quick_train(1));
    const fs::path path = temp_dir("version") / "ck.bin";
    save_checkpoint(path, cfg, params, state);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        f.put('\x07');
    }
    try {
        read_checkpoint(path);
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::version);
        const std::string msg = e.what();
        EXPECT_NE(msg.find("version 7"), std::string::npos) << msg;
        EXPECT_NE(msg.find("version 1"), std::string::npos) << msg;
    }
}

TEST(Checkpoint, MissingFileAndWrongMagic) {
    const fs::path dir = temp_dir("magic");
    try {
        read_checkpoint(dir / "nope.bin");
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::io);
        EXPECT_NE(std::string(e.what()).find("nope.bin"), std::string::npos);
    }
    std::ofstream(dir / "junk.bin") << "definitely not a checkpoint file, just text";
    try {
        read_checkpoint(dir / "junk.bin");
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::format);
    }
}

TEST(Checkpoint, MismatchedRestoreLeavesStateUntouched) {
    const ModelConfig cfg = tiny_config();
    auto params = model::init_model(cfg, 12);
    auto state = init_train_state(quick_train(1));
    const fs::path path = temp_dir("mismatch") / "ck.bin";
    save_checkpoint(path, cfg, params, state);
    CheckpointData data = read_checkpoint(path);
    data.params.back().second = Tensor({7}, 1.0);

    auto target = model::init_model(cfg, 44);
    const auto before = snapshot(target);
    TrainState ts = init_train_state(quick_train(1));
    ts.epoch = 3;
    try {
        restore(data, target, &ts);
        FAIL();
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.kind(), CheckpointError::Kind::config_mismatch);
    }
    EXPECT_EQ(snapshot(target), before);
    EXPECT_EQ(ts.epoch, 3u);
}
