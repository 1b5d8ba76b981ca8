#include "texgraph/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <thread>

#include "texgraph/errors.hpp"
#include "texgraph/ops.hpp"
#include "texgraph/text.hpp"

namespace texgraph::trainer {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(lr_drop >= 1.0)) throw ConfigError("train.lr_drop must be >= 1");
    if (patience < 1) throw ConfigError("train.patience must be >= 1");
    if (!(min_delta >= 0.0)) throw ConfigError("train.min_delta must be >= 0");
    if (threads < 1) throw ConfigError("threads must be >= 1");
}

bool TrainConfig::set(std::string_view key, std::string_view value) {
    const std::string k(key);
    if (key == "train.lr") {
        lr = text::parse_double(value, k);
    } else if (key == "train.momentum") {
        momentum = text::parse_double(value, k);
    } else if (key == "train.weight_decay") {
        weight_decay = text::parse_double(value, k);
    } else if (key == "train.batch_size") {
        batch_size = text::parse_size(value, k);
    } else if (key == "train.epochs") {
        epochs = text::parse_size(value, k);
    } else if (key == "train.lr_drop") {
        lr_drop = text::parse_double(value, k);
    } else if (key == "train.patience") {
        patience = text::parse_size(value, k);
    } else if (key == "train.min_delta") {
        min_delta = text::parse_double(value, k);
    } else if (key == "seed") {
        seed = text::parse_u64(value, k);
    } else if (key == "threads") {
        threads = text::parse_size(value, k);
    } else {
        return false;
    }
    return true;
}

std::vector<std::pair<std::string, std::string>> TrainConfig::entries() const {
    return {
        {"train.lr", text::format_double(lr)},
        {"train.momentum", text::format_double(momentum)},
        {"train.weight_decay", text::format_double(weight_decay)},
        {"train.batch_size", std::to_string(batch_size)},
        {"train.epochs", std::to_string(epochs)},
        {"train.lr_drop", text::format_double(lr_drop)},
        {"train.patience", std::to_string(patience)},
        {"train.min_delta", text::format_double(min_delta)},
        {"seed", std::to_string(seed)},
        {"threads", std::to_string(threads)},
    };
}

TrainState init_train_state(const TrainConfig& cfg) {
    TrainState s;
    s.lr = cfg.lr;
    // Separate from the init stream, which is seeded with the bare seed.
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x5eedu};
    s.rng.seed(seq);
    return s;
}

namespace {

struct SampleResult {
    std::unique_ptr<Tape> tape;
    std::optional<Gradients> grads;
    double loss = 0.0;
    std::size_t prediction = 0;
};

std::size_t argmax(const Tensor& t) {
    const auto d = t.data();
    return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

void check_labels(const std::vector<texdata::Item>& items, std::size_t classes, std::string_view what) {
    for (const auto& it : items) {
        if (it.label >= classes) {
            throw ContractError(std::string(what) + ": item '" + it.id + "' has label " + std::to_string(it.label) +
                                " but the model has " + std::to_string(classes) + " classes");
        }
    }
}

/// Runs `work(i)` for i in [0, n) on up to `threads` workers; worker t takes i = t, t + T, ...
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& work) {
    const std::size_t t = std::min(threads, n);
    if (t <= 1) {
        for (std::size_t i = 0; i < n; ++i) work(i);
        return;
    }
    std::vector<std::exception_ptr> errors(t);
    std::vector<std::thread> pool;
    pool.reserve(t);
    for (std::size_t w = 0; w < t; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += t) work(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace

std::vector<EpochRecord> train(const model::ModelConfig& mcfg, model::ModelParams& params, const TrainConfig& cfg,
                               TrainState& state, const std::vector<texdata::Item>& train_set,
                               const std::vector<texdata::Item>& val_set, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_set.empty()) throw ContractError("train: empty training set");
    check_labels(train_set, mcfg.classes, "train");
    check_labels(val_set, mcfg.classes, "train");

    const auto plist = params.parameters();
    std::vector<std::size_t> order(train_set.size());
    std::vector<EpochRecord> history;

    while (state.epoch < cfg.epochs) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), state.rng);

        EpochRecord rec;
        rec.epoch = state.epoch + 1;
        rec.lr = state.lr;
        double loss_sum = 0.0;
        std::size_t correct = 0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - start);
            const double inv = 1.0 / static_cast<double>(n);
            std::vector<SampleResult> results(n);
            parallel_for(n, cfg.threads, [&](std::size_t i) {
                const auto& item = train_set[order[start + i]];
                SampleResult& r = results[i];
                r.tape = std::make_unique<Tape>();
                const Var logits = model::model_forward(r.tape->constant(item.image), mcfg, params);
                const Var loss = model::cross_entropy(logits, item.label);
                r.loss = loss.value()[0];
                r.prediction = argmax(logits.value());
                r.grads = r.tape->backward(scale(loss, inv));
            });
            for (auto* p : plist) p->zero_grad();
            for (std::size_t i = 0; i < n; ++i) {
                results[i].grads->accumulate_into_parameters();
                loss_sum += results[i].loss;
                if (results[i].prediction == train_set[order[start + i]].label) ++correct;
            }
            sgd_step(plist, state.sgd, state.lr, cfg.momentum, cfg.weight_decay);
        }

        rec.train_loss = loss_sum / static_cast<double>(train_set.size());
        rec.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
        double monitored = rec.train_loss;
        if (!val_set.empty()) {
            const EvalResult ev = evaluate(mcfg, params, val_set, cfg.threads);
            rec.val_loss = ev.mean_loss;
            rec.val_acc = ev.accuracy;
            monitored = 1.0 - ev.accuracy;
        }
        if (monitored < state.best - cfg.min_delta) {
            state.best = monitored;
            state.stale = 0;
        } else if (++state.stale >= cfg.patience) {
            state.lr /= cfg.lr_drop;
            state.stale = 0;
        }
        ++state.epoch;
        history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return history;
}

EvalResult evaluate(const model::ModelConfig& mcfg, model::ModelParams& params, const std::vector<texdata::Item>& items,
                    std::size_t threads) {
    if (items.empty()) throw ContractError("evaluate: empty dataset");
    check_labels(items, mcfg.classes, "evaluate");
    std::vector<double> losses(items.size());
    EvalResult r;
    r.predictions.resize(items.size());
    parallel_for(items.size(), std::max<std::size_t>(threads, 1), [&](std::size_t i) {
        Tape tape;
        const Var logits = model::model_forward(tape.constant(items[i].image), mcfg, params);
        losses[i] = model::cross_entropy(logits, items[i].label).value()[0];
        r.predictions[i] = argmax(logits.value());
    });
    r.confusion.assign(mcfg.classes, std::vector<std::size_t>(mcfg.classes, 0));
    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        ++r.confusion[items[i].label][r.predictions[i]];
        if (r.predictions[i] == items[i].label) ++correct;
        loss_sum += losses[i];
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(items.size());
    r.mean_loss = loss_sum / static_cast<double>(items.size());
    return r;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
    const auto num = [](double v) { return std::isnan(v) ? std::string() : text::format_double(v); };
    for (const auto& r : history) {
        out += std::to_string(r.epoch) + "," + num(r.train_loss) + "," + num(r.train_acc) + "," + num(r.val_loss) +
               "," + num(r.val_acc) + "," + num(r.lr) + "\n";
    }
    return out;
}

std::string confusion_csv(const EvalResult& r, const std::vector<std::string>& class_names) {
    std::string out = "true\\predicted";
    for (const auto& n : class_names) out += "," + n;
    out += "\n";
    for (std::size_t i = 0; i < r.confusion.size(); ++i) {
        out += i < class_names.size() ? class_names[i] : std::to_string(i);
        for (auto c : r.confusion[i]) out += "," + std::to_string(c);
        out += "\n";
    }
    return out;
}

}  // namespace texgraph::trainer
