#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "charadial/model/model.hpp"

namespace charadial::train {

using model::Model;
using model::ModelConfig;
using model::Task;
using numerics::Tensor;

/// Non-finite loss during training.
class TrainingDiverged : public numerics::NumericError {
 public:
  using numerics::NumericError::NumericError;
};

struct TrainConfig {
  Task task = Task::dialgen;
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  std::size_t coverage_window = 1000;
  /// Steps between intermediate checkpoints (0: none).
  std::size_t checkpoint_every = 0;
  /// Global gradient-norm clip (0: off).
  double clip_norm = 0.0;
  /// Stop after this many optimizer steps (0: no limit).
  std::size_t max_steps = 0;

  Json to_json() const;
  static TrainConfig from_json(const Json& j);
  void validate() const;
};

struct CoverageReport {
  std::size_t window = 0;
  std::size_t end_step = 0;
  /// story id -> fraction of that story's characters selected at least once.
  std::vector<std::pair<std::string, double>> per_story;
  double mean = 0.0;
  Json to_json() const;
};

template <typename T>
struct DialGenLoss {
  Tensor<T> loss;
  std::vector<model::DecoderStepTrace> traces;
  std::size_t bank_size = 0;
};

/// Teacher-forced summed NLL over gold tokens, separators and the end token.
template <typename T>
DialGenLoss<T> dialgen_loss(const Model<T>& model, const corpus::DialGenExample& example,
                            const std::vector<std::size_t>* forced = nullptr);

/// Sum over specified turns of the candidate cross-entropy.
template <typename T>
Tensor<T> dialspk_loss(const Model<T>& model, const corpus::DialSpkExample& example);

struct TrainOutcome {
  std::vector<Json> log;  // one record per step plus epoch summaries
  std::vector<CoverageReport> coverage;
  std::size_t steps = 0;
  std::size_t best_epoch = 0;
  double best_validation = 0.0;
};

template <typename T>
struct TrainedModel {
  Model<T> model;
  TrainOutcome outcome;
};

/// Optional on-disk outputs. With a run directory the loop writes
/// metrics.jsonl, coverage.jsonl, checkpoints/ and model.ckpt.
struct RunOutputs {
  std::optional<std::filesystem::path> run_dir;
  std::function<void(const Json&)> on_record;
};

/// Trains a fresh model built from `model_config` (seeded by config.seed).
/// With a non-empty validation set the parameters of the best epoch are kept
/// (highest DAC for DialSpk, lowest mean loss for DialGen).
template <typename T, typename Example>
TrainedModel<T> train_task(const ModelConfig& model_config, const std::vector<Example>& train_set,
                           const std::vector<Example>& validation_set, const TrainConfig& config,
                           const RunOutputs& outputs = {});

/// Same loop with the character machinery removed.
template <typename T, typename Example>
TrainedModel<T> train_baseline(ModelConfig model_config, const std::vector<Example>& train_set,
                               const std::vector<Example>& validation_set, const TrainConfig& config,
                               const RunOutputs& outputs = {});

/// Mean per-example loss without recording gradients.
template <typename T>
double mean_loss(const Model<T>& model, const std::vector<corpus::DialGenExample>& examples);
template <typename T>
double mean_loss(const Model<T>& model, const std::vector<corpus::DialSpkExample>& examples);

/// Share of specified turns predicted correctly.
template <typename T>
double speaker_accuracy(const Model<T>& model, const std::vector<corpus::DialSpkExample>& examples);

}  // namespace charadial::train
