#pragma once

#include "kanvis/data.hpp"
#include "kanvis/model.hpp"
#include "kanvis/nn.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace kanvis {

struct TrainConfig {
  int epochs = 15;
  std::size_t batch_size = 128;  ///< 0 trains full-batch
  std::uint64_t seed = 0;
  AdamConfig adam;
  double lambda_smooth = 0.0;
  double lambda_l1 = 0.0;
  bool l1_splines_only = false;
  double deactivation_p = 0.0;
  double data_fraction = 1.0;  ///< balanced training subset
  double noise = 0.0;          ///< label noise on the training split only
  int eval_every = 1;          ///< epochs between evaluations; the last epoch is always evaluated
  bool wall_clock = true;      ///< false records wall_ms as 0

  /// Throws ConfigError naming the offending "train.*" field.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Inputs with either class labels or regression targets.
struct Samples {
  Tensor inputs;            // [n, ...]
  std::vector<int> labels;  // classification
  Tensor targets;           // regression, [n, outputs]
  std::size_t class_count = 0;

  bool regression() const noexcept { return labels.empty() && !targets.empty(); }
  std::size_t size() const noexcept { return inputs.rank() == 0 ? 0 : inputs.dim(0); }
  Samples rows(std::span<const std::size_t> indices) const;

  static Samples from(const LabeledDataset& ds);
  static Samples from(const RegressionData& d);
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;  ///< NaN for regression
};

struct EpochRecord {
  int epoch = 0;
  std::string split;  ///< "train" or "test"
  double loss = 0.0;
  double accuracy = 0.0;
  double wall_ms = 0.0;
};

struct StepLog {
  std::size_t step = 0;
  int epoch = 0;
  double data_loss = 0.0;
  double smooth = 0.0;
  double l1 = 0.0;
  double total = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> records;
  std::vector<StepLog> steps;
};

/// Called after each step's loss and gradients are computed and before the
/// optimizer update.
using StepObserver = std::function<void(const StepLog&, Model&)>;

/// Inference-mode loss and accuracy; never consumes randomness.
EvalResult evaluate(Model& model, const Samples& data, std::size_t batch_size = 256);

/// Initializes `model` from cfg.seed and trains it with Adam on the data loss
/// plus smoothness and L1 penalties. Epoch 0 is evaluated before any update.
/// Throws DivergenceError when the loss becomes non-finite.
TrainResult train(Model& model, const Samples& train_set, const Samples& test_set, const TrainConfig& cfg,
                  const StepObserver& observer = {});

/// Applies cfg.data_fraction (balanced subset) and cfg.noise to a training
/// split, with streams derived from cfg.seed.
LabeledDataset prepare_training_split(const LabeledDataset& train, const TrainConfig& cfg);

}  // namespace kanvis
