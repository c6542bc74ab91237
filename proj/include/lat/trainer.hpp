#pragma once

// Adam training of a translator pair on the composite objective, with
// deterministic batching, a memory bank of negatives per modality and
// bit-exact checkpoint/resume.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lat/checkpoint.hpp"
#include "lat/data.hpp"
#include "lat/losses.hpp"
#include "lat/memory_bank.hpp"
#include "lat/parameters.hpp"
#include "lat/translation.hpp"

namespace lat {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Bias-corrected Adam over a fixed parameter list. Parameters without a
/// gradient are updated as if the gradient were zero.
class Adam {
 public:
  Adam(ParameterList<float> params, AdamConfig config);

  void step();
  void zero_grad();
  /// Rescales all gradients so their global L2 norm is at most `max_norm`;
  /// returns the norm before clipping.
  double clip_grad_norm(double max_norm);

  std::uint64_t steps() const { return step_; }
  const ParameterList<float>& parameters() const { return params_; }
  const std::vector<std::vector<float>>& first_moments() const { return m_; }
  const std::vector<std::vector<float>>& second_moments() const { return v_; }
  void restore(std::vector<std::vector<float>> m, std::vector<std::vector<float>> v,
               std::uint64_t step);

 private:
  ParameterList<float> params_;
  AdamConfig config_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  std::uint64_t step_ = 0;
};

struct TrainConfig {
  ModelConfig model;  // token counts are taken from the data set
  LossWeights weights;
  AdamConfig adam;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t bank_capacity = 256;
  double clip_norm = 5.0;
  std::size_t holdout = 128;

  void validate() const;

  /// Flat key=value form stored in checkpoints and manifests.
  std::vector<std::pair<std::string, std::string>> to_key_values() const;
  /// Inverse of to_key_values; unknown keys are ignored, malformed values
  /// raise ConfigError.
  static TrainConfig from_key_values(const std::vector<std::pair<std::string, std::string>>& kv);
};

/// One history row; loss terms are means over the epoch's batches. `inter`
/// and `intra` sum the global and token levels.
struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double total = 0.0;
  double inter = 0.0;
  double intra = 0.0;
  double global = 0.0;
  double token = 0.0;
};

std::string history_csv(std::span<const EpochStats> history);

class Trainer {
 public:
  /// Fresh run. The set's token counts and dimension override the model
  /// config's.
  Trainer(TrainConfig config, const EmbeddingPairSet& set);
  /// Continues the run stored in `checkpoint` on the same data set.
  Trainer(const Checkpoint& checkpoint, const EmbeddingPairSet& set);

  /// Runs one epoch; throws NumericError naming the offending loss term on
  /// a non-finite value.
  EpochStats run_epoch();
  /// Runs until config().epochs epochs are done. `on_epoch` sees each row.
  void run(const std::function<void(const EpochStats&)>& on_epoch = {});

  const TrainConfig& config() const { return config_; }
  /// Changes the epoch target of run(), e.g. to extend a resumed run.
  void set_epochs(std::size_t epochs) { config_.epochs = epochs; }
  const TranslatorPair<float>& model() const { return model_; }
  TranslatorPair<float>& model() { return model_; }
  const Adam& optimizer() const { return optimizer_; }
  const std::vector<EpochStats>& history() const { return history_; }
  std::size_t epochs_done() const { return epochs_done_; }
  const Split& split() const { return split_; }
  const MemoryBank& visual_bank() const { return visual_bank_; }
  const MemoryBank& text_bank() const { return text_bank_; }

  /// Recorded into the checkpoint's metric.* keys.
  void set_metric(const std::string& name, double value) { metrics_[name] = value; }

  Checkpoint checkpoint() const;

 private:
  double train_batch(std::span<const std::size_t> items, EpochStats& sums);

  TrainConfig config_;
  const EmbeddingPairSet& set_;
  Split split_;
  TranslatorPair<float> model_;
  Adam optimizer_;
  MemoryBank visual_bank_;
  MemoryBank text_bank_;
  std::size_t epochs_done_ = 0;
  std::vector<EpochStats> history_;
  std::map<std::string, double> metrics_;
};

/// Adapts a model config to a data set's token layout and dimension.
ModelConfig fit_to_data(ModelConfig model, const EmbeddingPairSet& set);

/// Rebuilds the trained translator pair stored in a checkpoint. Throws
/// DimensionError when `set` does not match the checkpoint's layout.
TranslatorPair<float> load_model(const Checkpoint& checkpoint, const EmbeddingPairSet* set = nullptr);

/// Cycle-consistency error over the listed items: the cycle MSE of the
/// global views averaged with that of the pooled detail views.
double mean_cycle_mse(const TranslatorPair<float>& model, const EmbeddingPairSet& set,
                      std::span<const std::size_t> items);

}  // namespace lat
