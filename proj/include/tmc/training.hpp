#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tmc/models.hpp"
#include "tmc/nn.hpp"
#include "tmc/tensor.hpp"

namespace tmc {

// Scalar form of the training loss, y in {0,1}, probability clamped to
// [1e-7, 1-1e-7].
double bce_loss(double y, double y_hat);

struct AdamConfig {
    double lr0 = 0.001;
    double decay_rate = 0.94;
    std::int64_t decay_interval = 1;  // optimizer steps per lr decay
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig cfg;
    std::int64_t step = 0;  // completed steps
    std::vector<std::vector<double>> m, v;

    explicit AdamState(AdamConfig c = {}) : cfg(c) {}
    // lr used by the next step (staircase decay).
    double lr() const;
};

// One bias-corrected Adam update over the trainable entries. Gradients are
// read from each entry's tensor and must be finite.
void adam_step(std::vector<StateEntry>& params, AdamState& state);

// Materialized window dataset: float rows, one label per window.
struct WindowDataset {
    std::int64_t channels = 0;
    std::int64_t samples = 0;
    std::vector<std::vector<float>> windows;  // each channels*samples long
    std::vector<double> labels;

    std::size_t size() const { return windows.size(); }
    void append(std::vector<float> window, double label);
    void append_all(const WindowDataset& other);
    // Gather rows into tensors: X [n, channels, samples], labels vector.
    std::pair<Tensor, std::vector<double>> gather(const std::vector<std::size_t>& idx) const;
};

struct TrainOptions {
    std::int64_t epochs = 50;
    std::int64_t batch_size = 128;
    std::uint64_t seed = 0;
    double lr0 = 0.001;
    double decay_rate = 0.94;
    std::int64_t decay_interval = 0;  // 0: ceil(train_size / 128)
    bool keep_best = true;            // restore the best-validation-loss epoch
};

struct EpochRecord {
    std::int64_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::int64_t best_epoch = -1;
    double best_val_loss = 0.0;
};

TrainResult train(Model& model, const WindowDataset& train_data,
                  const WindowDataset& val_data, const TrainOptions& opts);

// Eval-mode scores for every row, computed in batches.
std::vector<double> predict(Model& model, const WindowDataset& data,
                            std::int64_t batch_size = 128);

std::string history_to_text(const std::vector<EpochRecord>& history);

struct CvResult {
    std::vector<double> fold_metric;  // best-epoch validation accuracy per fold
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation
};

// Trains one model per fold (fold = validation, rest = train) using
// fold-derived seeds; model instances come from the factory.
CvResult cross_validate(const std::function<std::unique_ptr<Model>(std::uint64_t seed)>& factory,
                        const std::vector<WindowDataset>& folds, const TrainOptions& opts);

std::pair<double, double> mean_sample_sd(const std::vector<double>& v);

// Versioned named-tensor container, little-endian doubles.
std::string checkpoint_to_bytes(const std::vector<StateEntry>& entries);
void checkpoint_from_bytes(const std::string& bytes, std::vector<StateEntry>& entries);
void save_checkpoint(const std::vector<StateEntry>& entries, const std::string& path);
void load_checkpoint(const std::string& path, std::vector<StateEntry>& entries);

}  // namespace tmc
