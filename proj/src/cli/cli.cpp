#include "charadial/cli/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <thread>
#include <unistd.h>

#include "CLI11.hpp"
#include "charadial/corpus/annotate.hpp"
#include "charadial/corpus/datasets.hpp"
#include "charadial/corpus/generator.hpp"
#include "charadial/corpus/stats.hpp"
#include "charadial/eval/coherence.hpp"
#include "charadial/eval/metrics.hpp"
#include "charadial/train/train.hpp"

namespace charadial::cli {

namespace fs = std::filesystem;
using corpus::Story;
using corpus::Vocabulary;

namespace {

constexpr const char* kVersion = "0.1.0";

// Bad flag values or missing inputs detected after parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void require_exists(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw UsageError(what + " " + path.string() + " does not exist");
}

/// Collects outputs in a hidden sibling directory and moves them into the
/// destination only when the command succeeds.
class Staging {
 public:
  explicit Staging(fs::path out) : out_(std::move(out)) {
    const auto parent = out_.has_parent_path() ? out_.parent_path() : fs::path(".");
    std::error_code ec;
    fs::create_directories(parent, ec);
    dir_ = parent / ("." + out_.filename().string() + ".staging-" + std::to_string(::getpid()));
    fs::remove_all(dir_, ec);
    if (!fs::create_directories(dir_, ec) || ec) {
      throw DataError("cannot create output directory next to " + out_.string() + ": " + ec.message());
    }
  }
  ~Staging() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;

  const fs::path& dir() const { return dir_; }
  fs::path operator/(const std::string& name) const { return dir_ / name; }

  void commit() {
    fs::create_directories(out_);
    for (const auto& entry : fs::recursive_directory_iterator(dir_)) {
      const auto rel = fs::relative(entry.path(), dir_);
      if (entry.is_directory()) {
        fs::create_directories(out_ / rel);
      } else {
        fs::rename(entry.path(), out_ / rel);
      }
    }
  }

 private:
  fs::path out_;
  fs::path dir_;
};

struct Manifest {
  std::string command;
  Json config = Json::object();
  Json inputs = Json::array();
  Json outputs = Json::array();
  std::uint64_t seed = 0;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const Staging& stage) {
    Json j{{"command", command},
           {"config", config},
           {"inputs", inputs},
           {"outputs", outputs},
           {"seed", seed},
           {"tool_version", kVersion},
           {"precision", numerics::precision_name(numerics::precision_from_env())},
           {"wall_clock_seconds",
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
    atomic_write(stage / "manifest.json", j.dump(2) + "\n");
  }
};

void write_json(const Staging& stage, Manifest& m, const std::string& name, const Json& j) {
  atomic_write(stage / name, j.dump(2) + "\n");
  m.outputs.push_back(name);
}

void write_jsonl(const Staging& stage, Manifest& m, const std::string& name, const std::vector<Json>& records) {
  atomic_write(stage / name, to_jsonl(records));
  m.outputs.push_back(name);
}

/// Order-stable parallel map over [0, n).
template <typename R>
std::vector<R> parallel_map(std::size_t n, std::size_t workers, const std::function<R(std::size_t)>& fn) {
  std::vector<std::optional<R>> slots(n);
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, n));
  std::vector<std::exception_ptr> errors(workers);
  auto body = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < n; i += workers) slots[i].emplace(fn(i));
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    body(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// Corpus directories: stories.jsonl, lexicon.json, vocab.json.

struct CorpusDir {
  std::vector<Story> stories;
  corpus::CharacterLexicon lexicon;
  Vocabulary vocab;
};

CorpusDir load_corpus(const fs::path& dir) {
  require_exists(dir, "corpus directory");
  for (const char* f : {"stories.jsonl", "lexicon.json", "vocab.json"}) {
    if (!fs::exists(dir / f)) throw DataError("corpus directory " + dir.string() + " lacks " + f);
  }
  CorpusDir c;
  c.lexicon = corpus::CharacterLexicon::from_json(read_json(dir / "lexicon.json"));
  c.vocab = Vocabulary::from_json(read_json(dir / "vocab.json"));
  std::size_t line = 0;
  for (const auto& j : read_jsonl(dir / "stories.jsonl")) {
    ++line;
    try {
      c.stories.push_back(corpus::story_from_json(j));
    } catch (const Json::exception& e) {
      throw DataError((dir / "stories.jsonl").string() + ":" + std::to_string(line) + ": " + e.what());
    }
    for (auto t : c.stories.back().tokens) {
      if (t < 0 || static_cast<std::size_t>(t) >= c.vocab.size()) {
        throw DataError("story " + c.stories.back().id + " uses token id " + std::to_string(t) +
                        " outside the vocabulary");
      }
    }
  }
  return c;
}

void save_corpus(const Staging& stage, Manifest& m, const CorpusDir& c) {
  std::vector<Json> lines;
  lines.reserve(c.stories.size());
  for (const auto& s : c.stories) lines.push_back(corpus::to_json(s));
  write_jsonl(stage, m, "stories.jsonl", lines);
  write_json(stage, m, "lexicon.json", c.lexicon.to_json());
  write_json(stage, m, "vocab.json", c.vocab.to_json());
}

// ---------------------------------------------------------------------------

struct GenCorpusArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_corpus(const GenCorpusArgs& a) {
  Manifest m{"gen-corpus"};
  corpus::GeneratorConfig config;
  if (!a.config.empty()) {
    require_exists(a.config, "config file");
    config = corpus::GeneratorConfig::from_json(read_json(a.config));
    m.inputs.push_back(a.config);
  }
  if (a.seed) config.seed = *a.seed;
  config.validate();
  Staging stage(a.out);
  auto generated = corpus::generate_synthetic_corpus(config);
  CorpusDir c{std::move(generated.stories), std::move(generated.lexicon), std::move(generated.vocab)};
  save_corpus(stage, m, c);
  write_json(stage, m, "generator.json", config.to_json());
  m.config = config.to_json();
  m.seed = config.seed;
  std::cout << corpus::compute_stats(c.stories, c.vocab).table();
  m.write(stage);
  stage.commit();
  std::cerr << "wrote " << c.stories.size() << " stories to " << a.out << "\n";
  return kOk;
}

struct AnnotateArgs {
  std::string corpus, texts, lexicon, out;
  std::size_t workers = 1;
};

int cmd_annotate(const AnnotateArgs& a) {
  Manifest m{"annotate"};
  CorpusDir c;
  if (!a.corpus.empty()) {
    c = load_corpus(a.corpus);
    m.inputs.push_back(a.corpus);
  } else {
    require_exists(a.texts, "text file");
    require_exists(a.lexicon, "lexicon file");
    c.lexicon = corpus::CharacterLexicon::from_json(read_json(a.lexicon));
    std::vector<std::vector<std::string>> docs;
    for (const auto& e : c.lexicon.entries()) docs.push_back(corpus::tokenize(e.name));
    std::ifstream in(a.texts);
    std::string line;
    std::vector<std::vector<std::string>> stories;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      stories.push_back(corpus::tokenize(line));
    }
    if (stories.empty()) throw DataError(a.texts + " contains no stories");
    docs.insert(docs.end(), stories.begin(), stories.end());
    c.vocab = Vocabulary::build(docs);
    for (std::size_t i = 0; i < stories.size(); ++i) {
      Story s;
      s.id = "text-" + std::to_string(i);
      s.tokens = c.vocab.encode(stories[i]);
      c.stories.push_back(std::move(s));
    }
    m.inputs = {a.texts, a.lexicon};
  }
  Staging stage(a.out);
  const auto& lexicon = c.lexicon;
  const auto& vocab = c.vocab;
  const auto& raw = c.stories;
  c.stories = parallel_map<Story>(raw.size(), a.workers, [&](std::size_t i) {
    return corpus::annotate_story(raw[i], lexicon, vocab);
  });
  save_corpus(stage, m, c);
  const auto acc = corpus::attribution_accuracy(c.stories);
  std::size_t turns = 0;
  for (const auto& s : c.stories) turns += s.dialogue_turns.size();
  std::cout << "stories " << c.stories.size() << ", dialogue turns " << turns << "\n";
  if (acc.attributed > 0) {
    std::cout << "attribution agreement with gold: " << acc.correct << "/" << acc.attributed << " ("
              << 100.0 * acc.accuracy() << "%), unknown " << acc.unknown << "\n";
  }
  m.config = Json{{"workers", a.workers}};
  m.write(stage);
  stage.commit();
  return kOk;
}

struct StatsArgs {
  std::string corpus;
  bool json = false;
};

int cmd_stats(const StatsArgs& a) {
  auto c = load_corpus(a.corpus);
  auto stats = corpus::compute_stats(c.stories, c.vocab);
  if (a.json) {
    std::cout << stats.to_json().dump(2) << "\n";
  } else {
    std::cout << stats.table();
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// Dataset directories: {train,valid,test}.jsonl, vocab.json, splits.json.

struct BuildArgs {
  std::string task, corpus, out, labels = "prefer-gold";
  std::uint64_t seed = 1;
  double ratio = -1;
  double train_probe_ratio = 1.0;
  double train_ratio = 0.9, valid_ratio = 0.05, test_ratio = 0.05;
};

int cmd_build(const BuildArgs& a) {
  const auto task = model::parse_task(a.task);
  if (a.train_ratio < 0 || a.valid_ratio < 0 || a.test_ratio < 0 ||
      std::fabs(a.train_ratio + a.valid_ratio + a.test_ratio - 1.0) > 1e-9) {
    throw UsageError("split ratios must be nonnegative and sum to 1");
  }
  if (!(a.train_probe_ratio > 0.0 && a.train_probe_ratio <= 1.0)) throw UsageError("--train-probe-ratio must lie in (0, 1]");
  if (a.ratio != -1 && !(a.ratio > 0.0 && a.ratio <= 1.0)) throw UsageError("--ratio must lie in (0, 1]");
  Manifest m{"build"};
  auto c = load_corpus(a.corpus);
  m.inputs.push_back(a.corpus);
  m.seed = a.seed;

  std::vector<corpus::SkipRecord> skipped;
  std::vector<Json> examples;
  std::vector<Json> train_examples;  // same stories, probed densely; empty for dialgen
  std::vector<std::string> story_ids;
  Json options;
  if (task == model::Task::dialgen) {
    corpus::DialGenOptions o;
    o.seed = a.seed;
    if (a.ratio >= 0) o.mask_ratio = a.ratio;
    options = {{"task", "dialgen"}, {"mask_ratio", o.mask_ratio}};
    for (auto& ex : corpus::build_dialgen_dataset(c.stories, o, &skipped)) {
      story_ids.push_back(ex.story_id);
      examples.push_back(corpus::to_json(ex));
    }
  } else {
    corpus::DialSpkOptions o;
    o.seed = a.seed;
    if (a.ratio >= 0) o.probe_ratio = a.ratio;
    if (a.labels == "gold") o.labels = corpus::SpeakerLabels::gold;
    else if (a.labels == "attributed") o.labels = corpus::SpeakerLabels::attributed;
    else if (a.labels == "prefer-gold") o.labels = corpus::SpeakerLabels::prefer_gold;
    else throw UsageError("--labels must be gold, attributed or prefer-gold");
    options = {{"task", "dialspk"},
               {"probe_ratio", o.probe_ratio},
               {"train_probe_ratio", a.train_probe_ratio},
               {"labels", a.labels}};
    for (auto& ex : corpus::build_dialspk_dataset(c.stories, o, &skipped)) {
      story_ids.push_back(ex.story_id);
      examples.push_back(corpus::to_json(ex));
    }
    // Sparse probes in training let the model memorise; every turn is probed there instead.
    auto dense = o;
    dense.probe_ratio = a.train_probe_ratio;
    for (auto& ex : corpus::build_dialspk_dataset(c.stories, dense, nullptr)) train_examples.push_back(corpus::to_json(ex));
  }
  for (const auto& s : skipped) std::cerr << "skipped " << s.story_id << ": " << s.reason << "\n";
  if (examples.empty()) throw DataError("every story was skipped; no examples built");

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq split_seed{a.seed, std::uint64_t{0x5b117}};
  std::mt19937_64 rng(split_seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = examples.size();
  const auto n_train = static_cast<std::size_t>(std::floor(a.train_ratio * static_cast<double>(n) + 1e-9));
  const auto n_valid = std::min(n - n_train,
                                static_cast<std::size_t>(std::floor(a.valid_ratio * static_cast<double>(n) + 1e-9)));
  std::vector<Json> parts[3];
  Json split_ids{{"train", Json::array()}, {"valid", Json::array()}, {"test", Json::array()}};
  const char* names[3] = {"train", "valid", "test"};
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t which = r < n_train ? 0 : r < n_train + n_valid ? 1 : 2;
    parts[which].push_back(which == 0 && !train_examples.empty() ? train_examples[order[r]] : examples[order[r]]);
    split_ids[names[which]].push_back(story_ids[order[r]]);
  }

  Staging stage(a.out);
  for (std::size_t p = 0; p < 3; ++p) write_jsonl(stage, m, std::string(names[p]) + ".jsonl", parts[p]);
  write_json(stage, m, "vocab.json", c.vocab.to_json());
  write_json(stage, m, "splits.json", split_ids);
  std::vector<Json> skip_lines;
  for (const auto& s : skipped) skip_lines.push_back({{"story_id", s.story_id}, {"reason", s.reason}});
  write_jsonl(stage, m, "skipped.jsonl", skip_lines);
  options["seed"] = a.seed;
  options["split"] = {a.train_ratio, a.valid_ratio, a.test_ratio};
  write_json(stage, m, "build.json", options);
  m.config = options;
  m.write(stage);
  stage.commit();
  std::cout << a.task << ": " << n << " examples (train " << parts[0].size() << ", valid " << parts[1].size()
            << ", test " << parts[2].size() << "), skipped " << skipped.size() << " stories\n";
  return kOk;
}

template <typename Example>
std::vector<Example> load_examples(const fs::path& path) {
  std::vector<Example> out;
  if (!fs::exists(path)) throw DataError("missing dataset file " + path.string());
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    try {
      if constexpr (std::is_same_v<Example, corpus::DialGenExample>) {
        out.push_back(corpus::dialgen_from_json(j));
      } else {
        out.push_back(corpus::dialspk_from_json(j));
      }
    } catch (const Json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

std::string dataset_task(const fs::path& dir) {
  require_exists(dir, "dataset directory");
  if (!fs::exists(dir / "build.json")) throw DataError(dir.string() + " is not a dataset directory (no build.json)");
  return read_json(dir / "build.json").at("task").get<std::string>();
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string task, data, config, out, splits;
  bool baseline = false;
  std::optional<std::uint64_t> seed;
};

template <typename T, typename Example>
void train_model(const TrainArgs& a, const Json& config_file, Manifest& m, Staging& stage) {
  const fs::path dir(a.data);
  const auto vocab = Vocabulary::from_json(read_json(dir / "vocab.json"));
  auto train_set = load_examples<Example>(dir / "train.jsonl");
  auto valid_set = load_examples<Example>(dir / "valid.jsonl");
  if (train_set.empty()) throw DataError("training split is empty");

  model::ModelConfig mc = config_file.contains("model") ? model::ModelConfig::from_json(config_file["model"])
                                                        : model::ModelConfig{};
  mc.task = model::parse_task(a.task);
  mc.vocab_size = vocab.size();
  if (a.baseline) mc.variant = model::Variant::baseline;
  mc.validate();
  train::TrainConfig tc = config_file.contains("train") ? train::TrainConfig::from_json(config_file["train"])
                                                        : train::TrainConfig{};
  tc.task = mc.task;
  if (a.seed) tc.seed = *a.seed;
  tc.validate();
  m.config = {{"model", mc.to_json()}, {"train", tc.to_json()}};
  m.seed = tc.seed;

  train::RunOutputs outputs;
  outputs.run_dir = stage.dir();
  outputs.on_record = [](const Json& r) {
    if (r.contains("train_loss")) std::cerr << r.dump() << "\n";
  };
  auto run = train::train_task<T, Example>(mc, train_set, valid_set, tc, outputs);
  for (const char* f : {"model.ckpt", "metrics.jsonl", "coverage.jsonl"}) m.outputs.push_back(f);
  std::cout << "steps " << run.outcome.steps << ", best epoch " << run.outcome.best_epoch << "\n";
  if constexpr (std::is_same_v<Example, corpus::DialSpkExample>) {
    std::cout << "train DAC " << 100.0 * train::speaker_accuracy(run.model, train_set) << "%\n";
    if (!valid_set.empty()) std::cout << "valid DAC " << 100.0 * run.outcome.best_validation << "%\n";
  } else {
    std::cout << "train loss " << train::mean_loss(run.model, train_set) << "\n";
    if (!run.outcome.coverage.empty()) {
      double mean = 0;
      for (const auto& c : run.outcome.coverage) mean += c.mean;
      std::cout << "character-selection coverage " << 100.0 * mean / static_cast<double>(run.outcome.coverage.size())
                << "% over " << run.outcome.coverage.size() << " windows\n";
    }
  }
}

template <typename T>
void train_coherence(const TrainArgs& a, const Json& config_file, Manifest& m, Staging& stage) {
  auto c = load_corpus(a.data);
  std::vector<Story> stories = c.stories;
  if (!a.splits.empty()) {
    require_exists(a.splits, "splits file");
    std::set<std::string> keep;
    const Json splits = read_json(a.splits);
    for (const auto& id : splits.at("train")) keep.insert(id.get<std::string>());
    std::erase_if(stories, [&](const Story& s) { return !keep.count(s.id); });
    m.inputs.push_back(a.splits);
  }
  auto cc = config_file.contains("coherence") ? eval::CoherenceConfig::from_json(config_file["coherence"])
                                              : eval::CoherenceConfig{};
  if (a.seed) cc.seed = *a.seed;
  m.config = {{"coherence", cc.to_json()}};
  m.seed = cc.seed;
  auto clf = eval::train_coherence_classifier<T>(stories, c.vocab.size(), cc);
  clf.save(stage / "classifier.ckpt");
  m.outputs.push_back("classifier.ckpt");
  std::cout << "coherence classifier held-out accuracy " << 100.0 * clf.holdout_accuracy << "%\n";
}

int cmd_train(const TrainArgs& a) {
  Manifest m{"train"};
  require_exists(a.data, "dataset path");
  m.inputs.push_back(a.data);
  Json config_file = Json::object();
  if (!a.config.empty()) {
    require_exists(a.config, "config file");
    config_file = read_json(a.config);
    m.inputs.push_back(a.config);
    for (const auto& [key, value] : config_file.items()) {
      if (key != "model" && key != "train" && key != "coherence") throw ConfigError(key, "unknown config section");
    }
  }
  const bool f64 = numerics::precision_from_env() == numerics::Precision::f64;
  Staging stage(a.out);
  if (a.task == "coherence") {
    if (a.baseline) throw UsageError("--baseline does not apply to the coherence classifier");
    f64 ? train_coherence<double>(a, config_file, m, stage) : train_coherence<float>(a, config_file, m, stage);
  } else {
    const auto task = model::parse_task(a.task);
    if (dataset_task(a.data) != a.task) {
      throw DataError("dataset " + a.data + " was built for " + dataset_task(a.data) + ", not " + a.task);
    }
    if (task == model::Task::dialgen) {
      f64 ? train_model<double, corpus::DialGenExample>(a, config_file, m, stage)
          : train_model<float, corpus::DialGenExample>(a, config_file, m, stage);
    } else {
      f64 ? train_model<double, corpus::DialSpkExample>(a, config_file, m, stage)
          : train_model<float, corpus::DialSpkExample>(a, config_file, m, stage);
    }
  }
  m.write(stage);
  stage.commit();
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string task, checkpoint, data, out, split = "test", classifier, decoding = "greedy";
  std::size_t top_k = 5, max_length = 160, workers = 1;
  std::uint64_t seed = 1;
  bool use_gold = false;
};

template <typename T>
model::Model<T> load_model(const fs::path& path, model::Task task, std::size_t vocab_size) {
  auto model = model::model_from_checkpoint(numerics::load_checkpoint<T>(path));
  if (model.config().task != task) {
    throw DataError("checkpoint " + path.string() + " holds a " + std::string(model::task_name(model.config().task)) +
                    " model");
  }
  if (model.config().vocab_size != vocab_size) {
    throw DataError("checkpoint vocabulary has " + std::to_string(model.config().vocab_size) +
                    " entries but the dataset vocabulary has " + std::to_string(vocab_size));
  }
  return model;
}

template <typename T>
void eval_dialgen(const EvalArgs& a, const Vocabulary& vocab, Manifest& m, Staging& stage, eval::MetricReport& report) {
  auto examples = load_examples<corpus::DialGenExample>(fs::path(a.data) / (a.split + ".jsonl"));
  if (examples.empty()) throw DataError("split " + a.split + " is empty");
  std::optional<model::Model<T>> model;
  if (!a.use_gold) model.emplace(load_model<T>(a.checkpoint, model::Task::dialgen, vocab.size()));

  model::GenerationSettings settings;
  if (a.decoding == "top_k") settings.strategy = model::GenerationSettings::Strategy::top_k;
  else if (a.decoding != "greedy") throw UsageError("--decoding must be greedy or top_k");
  settings.top_k = a.top_k;
  settings.max_length = a.max_length;

  auto gens = parallel_map<model::Generation>(examples.size(), a.workers, [&](std::size_t i) {
    if (!model) {
      model::Generation g;
      g.tokens = examples[i].gold_output;
      g.turns = corpus::split_turns(g.tokens);
      return g;
    }
    auto s = settings;
    // Per-example sub-seed keeps sampling independent of worker count.
    std::seed_seq seq{a.seed, static_cast<std::uint64_t>(i)};
    std::mt19937_64 r(seq);
    s.seed = r();
    return model->generate(examples[i], s);
  });

  std::vector<std::vector<corpus::TokenId>> cands, refs, filled;
  std::vector<Json> lines;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto gold = corpus::split_turns(examples[i].gold_output);
    const auto& g = gens[i];
    report.generation_faults += g.truncated || g.turn_count_fault;
    for (std::size_t t = 0; t < gold.size(); ++t) {
      cands.push_back(t < g.turns.size() ? g.turns[t] : std::vector<corpus::TokenId>{});
      refs.push_back(gold[t]);
    }
    filled.push_back(corpus::fill_masks(examples[i].input_tokens, g.turns));
    Json gen_turns = Json::array(), gold_turns = Json::array();
    for (const auto& t : g.turns) gen_turns.push_back(vocab.detokenize(t));
    for (const auto& t : gold) gold_turns.push_back(vocab.detokenize(t));
    lines.push_back({{"id", examples[i].id},
                     {"generated", gen_turns},
                     {"gold", gold_turns},
                     {"truncated", g.truncated},
                     {"turn_count_fault", g.turn_count_fault}});
  }
  report.bleu1 = eval::corpus_bleu(cands, refs, 1);
  report.bleu2 = eval::corpus_bleu(cands, refs, 2);
  report.distinct2 = eval::distinct_n(cands, 2);
  report.distinct3 = eval::distinct_n(cands, 3);
  report.distinct4 = eval::distinct_n(cands, 4);
  if (!a.classifier.empty()) {
    require_exists(a.classifier, "classifier checkpoint");
    auto clf = eval::CoherenceClassifier<T>::load(a.classifier);
    if (clf.vocab_size() != vocab.size()) throw DataError("classifier vocabulary differs from the dataset vocabulary");
    report.coherence = eval::coherence_score(clf, filled);
    m.inputs.push_back(a.classifier);
  }
  write_jsonl(stage, m, "generations.jsonl", lines);
}

template <typename T>
void eval_dialspk(const EvalArgs& a, const Vocabulary& vocab, Manifest& m, Staging& stage, eval::MetricReport& report) {
  auto examples = load_examples<corpus::DialSpkExample>(fs::path(a.data) / (a.split + ".jsonl"));
  if (examples.empty()) throw DataError("split " + a.split + " is empty");
  std::optional<model::Model<T>> model;
  if (!a.use_gold) model.emplace(load_model<T>(a.checkpoint, model::Task::dialspk, vocab.size()));
  auto preds = parallel_map<std::vector<std::size_t>>(examples.size(), a.workers, [&](std::size_t i) {
    return model ? model->predict_speakers(examples[i]) : examples[i].gold;
  });
  std::vector<eval::StoryPrediction> stories;
  std::vector<Json> lines;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    stories.push_back({examples[i].story_id, preds[i], examples[i].gold});
    lines.push_back({{"id", examples[i].id}, {"predicted", preds[i]}, {"gold", examples[i].gold}});
  }
  report.speakers = eval::dac_sac(stories);
  write_jsonl(stage, m, "predictions.jsonl", lines);
}

int cmd_eval(const EvalArgs& a) {
  Manifest m{"eval"};
  const auto task = model::parse_task(a.task);
  if (a.use_gold == !a.checkpoint.empty()) throw UsageError("pass exactly one of --checkpoint and --use-gold");
  if (!a.use_gold) {
    require_exists(a.checkpoint, "checkpoint");
    m.inputs.push_back(a.checkpoint);
  }
  if (dataset_task(a.data) != a.task) throw DataError("dataset " + a.data + " was not built for " + a.task);
  m.inputs.push_back(a.data);
  const auto vocab = Vocabulary::from_json(read_json(fs::path(a.data) / "vocab.json"));

  bool f64 = numerics::precision_from_env() == numerics::Precision::f64;
  if (!a.use_gold) f64 = numerics::peek_checkpoint(a.checkpoint).second == numerics::Precision::f64;
  Staging stage(a.out);
  eval::MetricReport report;
  if (task == model::Task::dialgen) {
    f64 ? eval_dialgen<double>(a, vocab, m, stage, report) : eval_dialgen<float>(a, vocab, m, stage, report);
  } else {
    f64 ? eval_dialspk<double>(a, vocab, m, stage, report) : eval_dialspk<float>(a, vocab, m, stage, report);
  }
  write_json(stage, m, "report.json", report.to_json());
  atomic_write(stage / "report.txt", report.table());
  m.outputs.push_back("report.txt");
  m.config = {{"task", a.task},     {"split", a.split}, {"decoding", a.decoding}, {"top_k", a.top_k},
              {"max_length", a.max_length}, {"use_gold", a.use_gold}, {"workers", a.workers}};
  m.seed = a.seed;
  std::cout << report.table();
  m.write(stage);
  stage.commit();
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Character-aware story dialogue toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  GenCorpusArgs gen;
  auto* g = app.add_subcommand("gen-corpus", "Generate a synthetic story corpus");
  g->add_option("--config", gen.config, "Generator config JSON (defaults used when omitted)");
  g->add_option("--out", gen.out, "Output corpus directory")->required();
  g->add_option("--seed", gen.seed, "Overrides the config seed");

  AnnotateArgs ann;
  auto* an = app.add_subcommand("annotate", "Detect turns, mentions and speakers");
  auto* an_corpus = an->add_option("--corpus", ann.corpus, "Corpus directory to re-annotate");
  auto* an_texts = an->add_option("--texts", ann.texts, "Plain-text stories, one per line");
  an->add_option("--lexicon", ann.lexicon, "Character lexicon JSON (with --texts)")->needs(an_texts);
  an_corpus->excludes(an_texts);
  an->add_option("--out", ann.out, "Output corpus directory")->required();
  an->add_option("--workers", ann.workers, "Parallel workers")->check(CLI::PositiveNumber);

  BuildArgs build;
  auto* b = app.add_subcommand("build", "Build a DialGen or DialSpk dataset with train/valid/test splits");
  b->add_option("--task", build.task, "dialgen or dialspk")->required()->check(CLI::IsMember({"dialgen", "dialspk"}));
  b->add_option("--corpus", build.corpus, "Corpus directory")->required();
  b->add_option("--out", build.out, "Output dataset directory")->required();
  b->add_option("--seed", build.seed, "Masking, probing and split seed");
  b->add_option("--ratio", build.ratio, "Mask ratio (dialgen) or probe ratio (dialspk)");
  b->add_option("--train-probe-ratio", build.train_probe_ratio, "Probe ratio for the dialspk training split");
  b->add_option("--labels", build.labels, "Speaker labels for dialspk: gold, attributed, prefer-gold");
  b->add_option("--train-ratio", build.train_ratio, "Share of examples in the training split");
  b->add_option("--valid-ratio", build.valid_ratio, "Share of examples in the validation split");
  b->add_option("--test-ratio", build.test_ratio, "Share of examples in the test split");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model or the coherence classifier");
  t->add_option("--task", tr.task, "dialgen, dialspk or coherence")
      ->required()
      ->check(CLI::IsMember({"dialgen", "dialspk", "coherence"}));
  t->add_option("--data", tr.data, "Dataset directory (corpus directory for coherence)")->required();
  t->add_option("--config", tr.config, "JSON with optional model, train and coherence sections");
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--splits", tr.splits, "splits.json restricting coherence training to train stories");
  t->add_flag("--baseline", tr.baseline, "Train the ablated model without character representations");
  t->add_option("--seed", tr.seed, "Overrides the config seed");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  e->add_option("--task", ev.task, "dialgen or dialspk")->required()->check(CLI::IsMember({"dialgen", "dialspk"}));
  e->add_option("--checkpoint", ev.checkpoint, "Model checkpoint");
  e->add_flag("--use-gold", ev.use_gold, "Score the gold outputs instead of a model");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--split", ev.split, "Split to evaluate")->check(CLI::IsMember({"train", "valid", "test"}));
  e->add_option("--out", ev.out, "Report directory")->required();
  e->add_option("--classifier", ev.classifier, "Coherence classifier checkpoint (dialgen)");
  e->add_option("--decoding", ev.decoding, "greedy or top_k")->check(CLI::IsMember({"greedy", "top_k"}));
  e->add_option("--top-k", ev.top_k, "Candidates kept by top_k decoding")->check(CLI::PositiveNumber);
  e->add_option("--max-length", ev.max_length, "Generated token cap");
  e->add_option("--seed", ev.seed, "Sampling seed");
  e->add_option("--workers", ev.workers, "Parallel workers")->check(CLI::PositiveNumber);

  StatsArgs st;
  auto* s = app.add_subcommand("stats", "Print corpus statistics");
  s->add_option("--corpus", st.corpus, "Corpus directory")->required();
  s->add_flag("--json", st.json, "Emit JSON instead of a table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? kOk : kUsage;
  }

  try {
    if (g->parsed()) return cmd_gen_corpus(gen);
    if (an->parsed()) {
      if (ann.corpus.empty() && (ann.texts.empty() || ann.lexicon.empty())) {
        throw UsageError("annotate needs --corpus, or --texts with --lexicon");
      }
      return cmd_annotate(ann);
    }
    if (b->parsed()) return cmd_build(build);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (s->parsed()) return cmd_stats(st);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const numerics::NumericError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    return kNumericFailure;
  } catch (const ConfigError& err) {
    std::cerr << "invalid configuration (" << err.field() << "): " << err.what() << "\n";
    return kDataFailure;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kDataFailure;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kDataFailure;
  }
  return kUsage;
}

}  // namespace charadial::cli
