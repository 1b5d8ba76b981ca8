#pragma once

// SGD with momentum, the training / evaluation loops and checkpoints.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "texgraph/model.hpp"
#include "texgraph/texdata.hpp"

namespace texgraph::trainer {

struct TrainConfig {
    double lr = 0.004;
    double momentum = 0.9;
    double weight_decay = 0.001;
    std::size_t batch_size = 8;
    std::size_t epochs = 50;
    /// The learning rate is divided by this when the monitored error plateaus.
    double lr_drop = 10.0;
    std::size_t patience = 5;
    /// Minimum absolute improvement that resets the plateau counter.
    double min_delta = 1e-4;
    std::uint64_t seed = 7;
    /// Worker threads for per-sample forward/backward. Gradients are always
    /// applied in sample order, so results do not depend on this.
    std::size_t threads = 1;

    void validate() const;
    bool set(std::string_view key, std::string_view value);
    std::vector<std::pair<std::string, std::string>> entries() const;
};

// ---------------------------------------------------------------------------
// Optimizer

/// One momentum buffer per parameter, in parameter order. Empty until the first step.
struct SgdState {
    std::vector<Tensor> buffers;
};

/// buffer = momentum * buffer + grad + weight_decay * value
/// value  = max(value - lr * buffer, lower_bound)
/// ContractError if the state's buffers do not match the parameters.
void sgd_step(std::span<Parameter* const> params, SgdState& state, double lr, double momentum, double weight_decay);

// ---------------------------------------------------------------------------
// Training

struct TrainState {
    SgdState sgd;
    std::size_t epoch = 0;  // completed epochs
    double lr = 0.0;
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    Rng rng;  // shuffling stream
};

TrainState init_train_state(const TrainConfig& cfg);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    /// NaN when there is no validation split.
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double val_acc = std::numeric_limits<double>::quiet_NaN();
    double lr = 0.0;  // rate used during the epoch
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs epochs state.epoch+1 .. cfg.epochs. The plateau monitor is the
/// validation error (1 - accuracy), or the training loss without a validation set.
/// ContractError for an empty training set or out-of-range labels.
std::vector<EpochRecord> train(const model::ModelConfig& mcfg, model::ModelParams& params, const TrainConfig& cfg,
                               TrainState& state, const std::vector<texdata::Item>& train_set,
                               const std::vector<texdata::Item>& val_set, const EpochCallback& on_epoch = {});

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    /// confusion[true][predicted]
    std::vector<std::vector<std::size_t>> confusion;
    std::vector<std::size_t> predictions;
};

/// Prediction = first arg-max of the logits.
EvalResult evaluate(const model::ModelConfig& mcfg, model::ModelParams& params, const std::vector<texdata::Item>& items,
                    std::size_t threads = 1);

std::string history_csv(const std::vector<EpochRecord>& history);
std::string confusion_csv(const EvalResult& r, const std::vector<std::string>& class_names);

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (little-endian):
//   "TEXGRAPH" u32 version
//   u32 len, model config text
//   u32 len, training state text (epoch, lr, best, stale, rng)
//   u32 count, parameter records
//   u32 count, momentum records
//   u32 crc32 of every preceding byte
// Record: u32 name length, name, u32 rank, u64 extents, f64 values.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    model::ModelConfig config;
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, Tensor>> momentum;
    std::size_t epoch = 0;
    double lr = 0.0;
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    std::string rng_state;
};

/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const model::ModelConfig& cfg, model::ModelParams& params,
                     const TrainState& state);

/// Parses and verifies the whole file. Throws CheckpointError (io, format,
/// version, checksum) without touching any caller state.
CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Copies values into `params` / `state` after checking every name and shape
/// (CheckpointError::config_mismatch otherwise). Nothing is modified on failure.
void restore(const CheckpointData& data, model::ModelParams& params, TrainState* state = nullptr);

struct LoadedModel {
    model::ModelConfig config;
    model::ModelParams params;
};

LoadedModel load_model(const std::filesystem::path& path);

}  // namespace texgraph::trainer
