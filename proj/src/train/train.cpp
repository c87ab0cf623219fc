#include "charadial/train/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "charadial/numerics/adam.hpp"

namespace charadial::train {

using namespace numerics;

Json TrainConfig::to_json() const {
  return Json{{"task", model::task_name(task)},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"learning_rate", learning_rate},
              {"seed", seed},
              {"coverage_window", coverage_window},
              {"checkpoint_every", checkpoint_every},
              {"clip_norm", clip_norm},
              {"max_steps", max_steps}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("train", "expected a JSON object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "task") {
        c.task = model::parse_task(value.get<std::string>());
      } else if (key == "epochs") {
        c.epochs = value.get<std::size_t>();
      } else if (key == "batch_size") {
        c.batch_size = value.get<std::size_t>();
      } else if (key == "learning_rate") {
        c.learning_rate = value.get<double>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "coverage_window") {
        c.coverage_window = value.get<std::size_t>();
      } else if (key == "checkpoint_every") {
        c.checkpoint_every = value.get<std::size_t>();
      } else if (key == "clip_norm") {
        c.clip_norm = value.get<double>();
      } else if (key == "max_steps") {
        c.max_steps = value.get<std::size_t>();
      } else {
        throw ConfigError(key, "unknown training setting");
      }
    } catch (const Json::exception& e) {
      throw ConfigError(key, e.what());
    }
  }
  return c;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs", "must be positive");
  if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate", "must be finite and nonnegative");
  }
  if (coverage_window == 0) throw ConfigError("coverage_window", "must be positive");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm", "must be nonnegative");
}

Json CoverageReport::to_json() const {
  Json stories = Json::object();
  for (const auto& [id, fraction] : per_story) stories[id] = fraction;
  return Json{{"window", window}, {"end_step", end_step}, {"mean", mean}, {"stories", stories}};
}

template <typename T>
DialGenLoss<T> dialgen_loss(const Model<T>& model, const corpus::DialGenExample& example,
                            const std::vector<std::size_t>* forced) {
  if (example.gold_output.empty()) throw DataError("example " + example.id + " has an empty gold output");
  auto [memory, bank] = model.encode_example(example);
  const auto inputs = model::decoder_inputs(example.gold_output);
  const auto targets = model::decoder_targets(example.gold_output);
  auto decoded = model.decode(memory, bank ? &*bank : nullptr, inputs, forced);
  DialGenLoss<T> out;
  out.loss = cross_entropy_rows(decoded.logits, std::span<const std::size_t>(targets));
  out.traces = std::move(decoded.traces);
  out.bank_size = bank ? bank->size() : 0;
  return out;
}

template <typename T>
Tensor<T> dialspk_loss(const Model<T>& model, const corpus::DialSpkExample& example) {
  if (example.gold.empty()) throw DataError("example " + example.id + " has no specified turn");
  auto logits = model.speaker_logits(example);
  return cross_entropy_rows(logits, std::span<const std::size_t>(example.gold));
}

template <typename T>
double mean_loss(const Model<T>& model, const std::vector<corpus::DialGenExample>& examples) {
  NoGradGuard no_grad;
  double total = 0;
  for (const auto& ex : examples) total += static_cast<double>(dialgen_loss(model, ex).loss.item());
  return examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
}

template <typename T>
double mean_loss(const Model<T>& model, const std::vector<corpus::DialSpkExample>& examples) {
  NoGradGuard no_grad;
  double total = 0;
  for (const auto& ex : examples) total += static_cast<double>(dialspk_loss(model, ex).item());
  return examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
}

template <typename T>
double speaker_accuracy(const Model<T>& model, const std::vector<corpus::DialSpkExample>& examples) {
  std::size_t correct = 0, total = 0;
  for (const auto& ex : examples) {
    const auto pred = model.predict_speakers(ex);
    for (std::size_t m = 0; m < pred.size(); ++m) correct += pred[m] == ex.gold[m];
    total += pred.size();
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

namespace {

template <typename T>
struct StepResult {
  double loss = 0;
  std::vector<model::DecoderStepTrace> traces;
  std::size_t bank_size = 0;
};

template <typename T>
StepResult<T> forward_backward(const Model<T>& model, const corpus::DialGenExample& ex, T weight) {
  auto l = dialgen_loss(model, ex);
  StepResult<T> r{static_cast<double>(l.loss.item()), std::move(l.traces), l.bank_size};
  if (std::isfinite(r.loss)) backward(scale(l.loss, weight));
  return r;
}

template <typename T>
StepResult<T> forward_backward(const Model<T>& model, const corpus::DialSpkExample& ex, T weight) {
  auto l = dialspk_loss(model, ex);
  StepResult<T> r{static_cast<double>(l.item()), {}, 0};
  if (std::isfinite(r.loss)) backward(scale(l, weight));
  return r;
}

template <typename T>
double validation_score(const Model<T>& model, const std::vector<corpus::DialGenExample>& valid) {
  return -mean_loss(model, valid);
}

template <typename T>
double validation_score(const Model<T>& model, const std::vector<corpus::DialSpkExample>& valid) {
  return speaker_accuracy(model, valid);
}

constexpr model::Task task_of(const corpus::DialGenExample*) { return model::Task::dialgen; }
constexpr model::Task task_of(const corpus::DialSpkExample*) { return model::Task::dialspk; }

template <typename T>
void clip_gradients(ParameterStore<T>& params, double max_norm) {
  double sq = 0;
  for (auto& [name, t] : params)
    if (t.has_grad())
      for (T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const T factor = static_cast<T>(max_norm / norm);
  for (auto& [name, t] : params)
    if (t.has_grad())
      for (T& g : t.mutable_grad()) g *= factor;
}

template <typename T>
std::vector<std::vector<T>> snapshot(const ParameterStore<T>& params) {
  std::vector<std::vector<T>> out;
  for (const auto& [name, t] : params) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

template <typename T>
void restore(ParameterStore<T>& params, const std::vector<std::vector<T>>& values) {
  std::size_t i = 0;
  for (auto& [name, t] : params) {
    std::copy(values[i].begin(), values[i].end(), t.mutable_data().begin());
    ++i;
  }
}

Json checkpoint_header(const ModelConfig& mc, const TrainConfig& tc, const std::string& tag,
                       std::size_t step) {
  Json h = model::model_header(mc);
  h["train"] = tc.to_json();
  h["tag"] = tag;
  h["step"] = step;
  return h;
}

}  // namespace

template <typename T, typename Example>
TrainedModel<T> train_task(const ModelConfig& model_config, const std::vector<Example>& train_set,
                           const std::vector<Example>& validation_set, const TrainConfig& config,
                           const RunOutputs& outputs) {
  config.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  const Task task = task_of(static_cast<const Example*>(nullptr));
  if (config.task != task || model_config.task != task) {
    throw ConfigError("task", "training configuration, model configuration and dataset disagree on the task");
  }

  TrainedModel<T> run{Model<T>(model_config, config.seed), {}};
  Model<T>& model = run.model;
  auto& params = model.parameters();
  AdamState<T> adam;
  adam.learning_rate = config.learning_rate;
  const bool track_coverage = task == Task::dialgen && model_config.variant == model::Variant::full;

  if (outputs.run_dir) std::filesystem::create_directories(*outputs.run_dir / "checkpoints");
  auto emit = [&](Json record) {
    if (outputs.on_record) outputs.on_record(record);
    run.outcome.log.push_back(std::move(record));
  };

  // story id -> (selected character slots, bank size) within the current window
  std::map<std::string, std::pair<std::set<std::size_t>, std::size_t>> window;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::optional<std::vector<std::vector<T>>> best;
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t step = 0;
  bool stop = false;

  for (std::size_t epoch = 1; epoch <= config.epochs && !stop; ++epoch) {
    std::seed_seq shuffle_seed{config.seed, static_cast<std::uint64_t>(epoch)};
    std::mt19937_64 shuffle_rng(shuffle_seed);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size() && !stop; start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const T weight = T{1} / static_cast<T>(end - start);
      params.zero_grad();
      model.set_training(true, config.seed * 1000003ULL + step);
      double batch_loss = 0;
      for (std::size_t b = start; b < end; ++b) {
        const Example& ex = train_set[order[b]];
        StepResult<T> r;
        try {
          r = forward_backward(model, ex, weight);
        } catch (const NumericError& e) {
          throw TrainingDiverged("step " + std::to_string(step + 1) + ", example " + ex.id + ": " + e.what());
        }
        if (!std::isfinite(r.loss)) {
          std::string ids;
          for (std::size_t k = start; k < end; ++k) ids += (ids.empty() ? "" : ",") + train_set[order[k]].id;
          throw TrainingDiverged("non-finite loss at step " + std::to_string(step + 1) + " (example " + ex.id +
                                 "; batch " + ids + ")");
        }
        batch_loss += r.loss;
        if (track_coverage) {
          auto& slot = window[ex.story_id];
          slot.second = r.bank_size;
          for (const auto& t : r.traces) slot.first.insert(t.selected);
        }
      }
      model.set_training(false);
      if (config.clip_norm > 0) clip_gradients(params, config.clip_norm);
      adam_step(params, adam);
      ++step;
      batch_loss /= static_cast<double>(end - start);
      epoch_loss += batch_loss * static_cast<double>(end - start);

      Json record{{"step", step}, {"epoch", epoch}, {"loss", batch_loss}, {"lr", config.learning_rate}};
      if (track_coverage && step % config.coverage_window == 0) {
        CoverageReport report;
        report.window = step / config.coverage_window;
        report.end_step = step;
        for (const auto& [id, sel] : window) {
          const double frac = sel.second ? static_cast<double>(sel.first.size()) / static_cast<double>(sel.second) : 0.0;
          report.per_story.emplace_back(id, frac);
          report.mean += frac;
        }
        if (!report.per_story.empty()) report.mean /= static_cast<double>(report.per_story.size());
        record["coverage"] = report.mean;
        run.outcome.coverage.push_back(std::move(report));
        window.clear();
      }
      emit(std::move(record));

      if (outputs.run_dir && config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
        char name[32];
        std::snprintf(name, sizeof name, "step-%08zu.ckpt", step);
        save_checkpoint(*outputs.run_dir / "checkpoints" / name,
                        checkpoint_header(model_config, config, "intermediate", step), params, &adam);
      }
      if (config.max_steps > 0 && step >= config.max_steps) stop = true;
    }

    Json summary{{"epoch", epoch}, {"train_loss", epoch_loss / static_cast<double>(order.size())}};
    if (!validation_set.empty()) {
      const double score = validation_score(model, validation_set);
      summary[task == Task::dialspk ? "validation_dac" : "validation_loss"] =
          task == Task::dialspk ? score : -score;
      if (score > best_score) {
        best_score = score;
        best = snapshot(params);
        run.outcome.best_epoch = epoch;
      }
    }
    emit(std::move(summary));
  }

  if (best) restore(params, *best);
  run.outcome.steps = step;
  run.outcome.best_validation = task == Task::dialspk ? best_score : -best_score;
  if (validation_set.empty()) run.outcome.best_validation = 0.0;

  if (outputs.run_dir) {
    const auto& dir = *outputs.run_dir;
    Json header = checkpoint_header(model_config, config, "final", step);
    header["best_epoch"] = run.outcome.best_epoch;
    save_checkpoint(dir / "model.ckpt", header, params, &adam);
    atomic_write(dir / "metrics.jsonl", to_jsonl(run.outcome.log));
    std::vector<Json> cov;
    for (const auto& r : run.outcome.coverage) cov.push_back(r.to_json());
    atomic_write(dir / "coverage.jsonl", to_jsonl(cov));
  }
  return run;
}

template <typename T, typename Example>
TrainedModel<T> train_baseline(ModelConfig model_config, const std::vector<Example>& train_set,
                               const std::vector<Example>& validation_set, const TrainConfig& config,
                               const RunOutputs& outputs) {
  model_config.variant = model::Variant::baseline;
  return train_task<T, Example>(model_config, train_set, validation_set, config, outputs);
}

#define CHARADIAL_INSTANTIATE(T)                                                                     \
  template DialGenLoss<T> dialgen_loss(const Model<T>&, const corpus::DialGenExample&,              \
                                       const std::vector<std::size_t>*);                             \
  template Tensor<T> dialspk_loss(const Model<T>&, const corpus::DialSpkExample&);                  \
  template double mean_loss(const Model<T>&, const std::vector<corpus::DialGenExample>&);           \
  template double mean_loss(const Model<T>&, const std::vector<corpus::DialSpkExample>&);           \
  template double speaker_accuracy(const Model<T>&, const std::vector<corpus::DialSpkExample>&);    \
  template TrainedModel<T> train_task<T, corpus::DialGenExample>(                                   \
      const ModelConfig&, const std::vector<corpus::DialGenExample>&,                                \
      const std::vector<corpus::DialGenExample>&, const TrainConfig&, const RunOutputs&);            \
  template TrainedModel<T> train_task<T, corpus::DialSpkExample>(                                   \
      const ModelConfig&, const std::vector<corpus::DialSpkExample>&,                                \
      const std::vector<corpus::DialSpkExample>&, const TrainConfig&, const RunOutputs&);            \
  template TrainedModel<T> train_baseline<T, corpus::DialGenExample>(                               \
      ModelConfig, const std::vector<corpus::DialGenExample>&,                                       \
      const std::vector<corpus::DialGenExample>&, const TrainConfig&, const RunOutputs&);            \
  template TrainedModel<T> train_baseline<T, corpus::DialSpkExample>(                               \
      ModelConfig, const std::vector<corpus::DialSpkExample>&,                                       \
      const std::vector<corpus::DialSpkExample>&, const TrainConfig&, const RunOutputs&);

CHARADIAL_INSTANTIATE(float)
CHARADIAL_INSTANTIATE(double)

#undef CHARADIAL_INSTANTIATE

}  // namespace charadial::train
