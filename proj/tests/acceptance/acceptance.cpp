// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--criterion N]... [--workdir DIR]
//
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "charadial/cli/cli.hpp"
#include "charadial/corpus/annotate.hpp"
#include "charadial/corpus/datasets.hpp"
#include "charadial/corpus/generator.hpp"
#include "charadial/eval/coherence.hpp"
#include "charadial/eval/metrics.hpp"
#include "charadial/train/train.hpp"
#include "../unit/gradcheck.hpp"
#include "../unit/metric_oracle.hpp"
#include "../unit/random_examples.hpp"

namespace fs = std::filesystem;
using namespace charadial;
using corpus::Story;
using corpus::TokenId;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// Every forward/backward path, 64-bit, T <= 32 and K <= 4.
Verdict gradient_oracle() {
  using testing::max_gradient_error;
  using model::Task;
  using model::Variant;
  double worst = 0;
  std::size_t instances = 0;
  auto params = [](model::Model<double>& m) {
    std::vector<numerics::Tensor<double>> out;
    for (auto& [name, t] : m.parameters()) out.push_back(t);
    return out;
  };
  for (int seed = 0; seed < 6; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const std::size_t k = 1 + seed % 4;
    const std::size_t len = 20 + rng() % 13;

    {
      model::Model<double> m(testing::tiny_config(Task::dialgen, Variant::full, 16), seed);
      auto ex = testing::random_dialgen(rng, 16, len, k);
      std::vector<std::size_t> forced(ex.gold_output.size() + 1);
      for (auto& f : forced) f = rng() % k;
      worst = std::max(worst, max_gradient_error<double>([&] { return train::dialgen_loss(m, ex, &forced).loss; },
                                                        params(m)));
      ++instances;
    }
    {
      model::Model<double> m(testing::tiny_config(Task::dialgen, Variant::baseline, 16), seed);
      auto ex = testing::random_dialgen(rng, 16, len, k);
      worst = std::max(worst, max_gradient_error<double>([&] { return train::dialgen_loss(m, ex).loss; }, params(m)));
      ++instances;
    }
    for (auto variant : {Variant::full, Variant::baseline}) {
      model::Model<double> m(testing::tiny_config(Task::dialspk, variant, 16), seed);
      auto ex = testing::random_dialspk(rng, 16, len, std::max<std::size_t>(2, k), 1 + seed % 3);
      worst = std::max(worst, max_gradient_error<double>([&] { return train::dialspk_loss(m, ex); }, params(m)));
      ++instances;
    }
  }
  return {instances >= 20 && worst <= 1e-6,
          std::to_string(instances) + " instances, max relative error " + [&] {
            std::ostringstream s;
            s << std::scientific << std::setprecision(2) << worst;
            return s.str();
          }()};
}

Verdict metric_oracles() {
  std::mt19937_64 rng(2024);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    auto c = testing::random_turn_corpus(rng);
    for (std::size_t n : {1, 2}) {
      worst = std::max(worst, std::abs(eval::corpus_bleu(c.candidates, c.references, n).value() -
                                       testing::brute_bleu(c.candidates, c.references, n)));
    }
    for (std::size_t n : {2, 3, 4}) {
      worst = std::max(worst, std::abs(eval::distinct_n(c.candidates, n).value() -
                                       testing::brute_distinct(c.candidates, n)));
    }
  }
  // Eight of ten turns right, one of two stories perfect.
  std::vector<eval::StoryPrediction> fixture{{"a", {0, 1, 2, 0, 1}, {0, 1, 2, 0, 1}},
                                             {"b", {0, 1, 2, 0, 0}, {0, 1, 2, 1, 1}}};
  auto t = eval::dac_sac(fixture);
  const bool fixture_ok = t.correct_turns == 8 && t.total_turns == 10 && t.dac() == 80.0 && t.correct_stories == 1 &&
                          t.sac() == 50.0;
  std::vector<eval::StoryPrediction> second{{"x", {2}, {2}}, {"y", {0, 0}, {1, 1}}, {"z", {1, 0, 1}, {1, 0, 1}}};
  auto u = eval::dac_sac(second);
  const bool second_ok = u.correct_turns == 4 && u.total_turns == 6 && u.correct_stories == 2 && u.total_stories == 3;
  return {worst <= 1e-9 && fixture_ok && second_ok,
          "max oracle gap " + [&] {
            std::ostringstream s;
            s << std::scientific << std::setprecision(1) << worst;
            return s.str();
          }() + ", DAC/SAC fixture " + fmt(t.dac(), 0) + "/" + fmt(t.sac(), 0)};
}

// Independent restatement of the dataset rules.
Verdict dataset_constraints() {
  corpus::GeneratorConfig gc;
  gc.story_count = 500;
  gc.seed = 31;
  auto g = corpus::generate_synthetic_corpus(gc);
  std::map<std::string, const Story*> by_id;
  for (const auto& s : g.stories) by_id[s.id] = &s;

  std::size_t violations = 0, gen_count = 0, spk_count = 0;
  std::string first_violation;
  auto flag = [&](const std::string& what) {
    if (!violations++) first_violation = what;
  };

  std::vector<corpus::SkipRecord> skipped;
  for (const auto& ex : corpus::build_dialgen_dataset(g.stories, {}, &skipped)) {
    ++gen_count;
    const Story& s = *by_id.at(ex.story_id);
    const std::size_t n = s.dialogue_turns.size();
    const auto expected = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(0.3 * n + 0.5 + 1e-9)));
    if (ex.masked_turn_indices.size() != expected) flag(ex.id + ": mask count");
    if (corpus::mask_positions(ex.input_tokens).size() != expected) flag(ex.id + ": placeholder count");
    for (auto t : ex.masked_turn_indices) {
      const auto& span = s.dialogue_turns.at(t);
      // Quote delimiters sit at start - 1 and end.
      if (span.start - 1 < 50 || span.end + 30 >= s.tokens.size()) flag(ex.id + ": masked turn in protected zone");
    }
    std::set<corpus::CharacterId> cast;
    for (const auto& m : ex.mentions) cast.insert(m.character);
    if (cast.size() < 5) flag(ex.id + ": fewer than five characters");
    if (corpus::fill_masks(ex.input_tokens, corpus::split_turns(ex.gold_output)) != s.tokens) {
      flag(ex.id + ": gold does not restore the story");
    }
  }
  for (const auto& ex : corpus::build_dialspk_dataset(g.stories, {})) {
    ++spk_count;
    const Story& s = *by_id.at(ex.story_id);
    std::set<corpus::CharacterId> seen(ex.candidates.begin(), ex.candidates.end());
    if (seen.size() != ex.candidates.size()) flag(ex.id + ": duplicate candidate");
    if (ex.gold.size() != ex.specified_turns.size()) flag(ex.id + ": gold length");
    std::size_t probes = std::count(ex.tokens.begin(), ex.tokens.end(), corpus::special::kProbe);
    if (probes != ex.specified_turns.size()) flag(ex.id + ": probe count");
    for (std::size_t m = 0; m < ex.gold.size(); ++m) {
      if (ex.gold[m] >= ex.candidates.size()) {
        flag(ex.id + ": gold index out of range");
        continue;
      }
      if (ex.candidates[ex.gold[m]] != s.gold_speakers->at(ex.specified_turns[m])) flag(ex.id + ": wrong gold speaker");
    }
  }
  return {violations == 0 && gen_count > 0 && spk_count > 0,
          std::to_string(gen_count) + " DialGen and " + std::to_string(spk_count) + " DialSpk examples from 500 stories, " +
              std::to_string(violations) + " violations" + (violations ? " (first: " + first_violation + ")" : "")};
}

Verdict attribution_quality() {
  corpus::GeneratorConfig gc;
  gc.story_count = 200;
  gc.seed = 41;
  auto g = corpus::generate_synthetic_corpus(gc);
  std::vector<Story> annotated;
  for (const auto& s : g.stories) annotated.push_back(corpus::annotate_story(s, g.lexicon, g.vocab));
  auto acc = corpus::attribution_accuracy(annotated);
  return {acc.accuracy() >= 0.95, fmt(100 * acc.accuracy()) + "% of " + std::to_string(acc.attributed) +
                                       " attributed turns agree (" + std::to_string(acc.unknown) + " unknown)"};
}

template <typename E>
void split(const std::vector<E>& all, std::vector<E>& train, std::vector<E>& valid, std::vector<E>& test) {
  const std::size_t n_train = all.size() * 9 / 10, n_valid = all.size() / 20;
  train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  valid.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
               all.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), all.end());
}

Verdict dialspk_direction() {
  corpus::GeneratorConfig gc;
  gc.story_count = 2000;
  gc.seed = 51;
  auto g = corpus::generate_synthetic_corpus(gc);
  std::vector<Story> train_stories, valid_stories, test_stories;
  split(g.stories, train_stories, valid_stories, test_stories);
  corpus::DialSpkOptions dense;
  dense.probe_ratio = 1.0;
  auto train_set = corpus::build_dialspk_dataset(train_stories, dense);
  auto valid_set = corpus::build_dialspk_dataset(valid_stories, {});
  auto test_set = corpus::build_dialspk_dataset(test_stories, {});

  model::ModelConfig mc;
  mc.task = model::Task::dialspk;
  mc.vocab_size = g.vocab.size();
  train::TrainConfig tc;
  tc.task = model::Task::dialspk;
  tc.epochs = 20;
  tc.learning_rate = 1e-3;
  tc.seed = 52;

  auto score = [&](const model::Model<float>& m) {
    std::vector<eval::StoryPrediction> preds;
    for (const auto& ex : test_set) preds.push_back({ex.story_id, m.predict_speakers(ex), ex.gold});
    return eval::dac_sac(preds);
  };
  auto full = train::train_task<float>(mc, train_set, valid_set, tc);
  const auto f = score(full.model);
  mc.variant = model::Variant::baseline;
  auto base = train::train_task<float>(mc, train_set, valid_set, tc);
  const auto b = score(base.model);
  return {f.dac() >= 85.0 && f.sac() >= 50.0 && f.dac() - b.dac() >= 10.0,
          "full DAC " + fmt(f.dac()) + " SAC " + fmt(f.sac()) + ", baseline DAC " + fmt(b.dac()) + " SAC " +
              fmt(b.sac()) + " on " + std::to_string(test_set.size()) + " held-out stories"};
}

Verdict dialgen_trainability() {
  corpus::GeneratorConfig gc;
  gc.story_count = 2000;
  gc.seed = 61;
  auto g = corpus::generate_synthetic_corpus(gc);
  auto all = corpus::build_dialgen_dataset(g.stories, {});
  std::vector<corpus::DialGenExample> train_set, valid_set, test_set;
  split(all, train_set, valid_set, test_set);

  model::ModelConfig mc;
  mc.task = model::Task::dialgen;
  mc.vocab_size = g.vocab.size();

  // Overfit: 50 examples, at most 500 optimizer steps.
  std::vector<corpus::DialGenExample> tiny(train_set.begin(), train_set.begin() + 50);
  train::TrainConfig oc;
  oc.task = model::Task::dialgen;
  oc.epochs = 80;
  oc.batch_size = 8;
  oc.max_steps = 500;
  oc.seed = 62;
  const double before = train::mean_loss(model::Model<float>(mc, oc.seed), tiny);
  auto over = train::train_task<float>(mc, tiny, {}, oc);
  const double after = train::mean_loss(over.model, tiny);
  const double drop = 1.0 - after / before;

  train::TrainConfig tc;
  tc.task = model::Task::dialgen;
  tc.epochs = 10;
  tc.learning_rate = 1e-3;
  tc.coverage_window = 1000;
  tc.seed = 63;
  auto full = train::train_task<float>(mc, train_set, valid_set, tc);
  double coverage = 0;
  for (const auto& r : full.outcome.coverage) coverage += r.mean;
  const auto windows = full.outcome.coverage.size();
  if (windows) coverage /= static_cast<double>(windows);
  return {drop >= 0.5 && windows > 0 && coverage >= 0.9,
          "overfit loss drop " + fmt(100 * drop, 1) + "% in " + std::to_string(over.outcome.steps) +
              " steps; coverage " + fmt(100 * coverage) + "% averaged over " + std::to_string(windows) +
              " windows of 1000 steps"};
}

Verdict coherence_sanity() {
  corpus::GeneratorConfig gc;
  gc.story_count = 1200;
  gc.seed = 71;
  auto g = corpus::generate_synthetic_corpus(gc);
  std::vector<Story> train_stories(g.stories.begin(), g.stories.end() - 200);
  std::vector<Story> held(g.stories.end() - 200, g.stories.end());
  eval::CoherenceConfig cc;
  cc.seed = 72;
  auto clf = eval::train_coherence_classifier<float>(train_stories, g.vocab.size(), cc);

  // Infill the masked turns of held-out stories with their gold contents,
  // then with the same contents in a deranged order.
  std::vector<Story> eligible;
  for (const auto& s : held)
    if (s.dialogue_turns.size() >= 2) eligible.push_back(s);
  auto examples = corpus::build_dialgen_dataset(eligible, {});
  std::vector<std::vector<TokenId>> gold, shuffled;
  std::mt19937_64 rng(73);
  for (const auto& ex : examples) {
    auto turns = corpus::split_turns(ex.gold_output);
    gold.push_back(corpus::fill_masks(ex.input_tokens, turns));
    if (turns.size() >= 2) {
      auto perm = eval::random_derangement(turns.size(), rng);
      std::vector<std::vector<TokenId>> moved;
      for (auto i : perm) moved.push_back(turns[i]);
      turns = moved;
    }
    shuffled.push_back(corpus::fill_masks(ex.input_tokens, turns));
  }
  const auto a = eval::coherence_score(clf, gold);
  const auto b = eval::coherence_score(clf, shuffled);
  return {a.ratio() > b.ratio() && clf.holdout_accuracy >= 0.8, "gold infills " + fmt(a.ratio()) + "% coherent vs shuffled " + fmt(b.ratio()) +
                                     "% over " + std::to_string(gold.size()) + " held-out stories (classifier held-out accuracy " +
                                     fmt(100 * clf.holdout_accuracy) + "%)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict cli_determinism(const fs::path& workdir) {
  fs::remove_all(workdir);
  fs::create_directories(workdir);
  {
    std::ofstream(workdir / "gen.json") << R"({"story_count": 60})";
    std::ofstream(workdir / "small.json") << R"({
      "model": {"model_dim": 32, "layers_encoder": 1, "layers_decoder": 1, "attention_heads": 2, "feedforward_dim": 64,
                "dropout": 0.1},
      "train": {"epochs": 2, "batch_size": 8, "coverage_window": 5, "checkpoint_every": 5},
      "coherence": {"embed_dim": 16, "channels": 16, "window": 5, "epochs": 1}})";
  }
  auto pipeline = [&](const fs::path& dir) -> std::string {
    const auto d = [&](const std::string& name) { return (dir / name).string(); };
    const std::string cfg = (workdir / "small.json").string();
    const std::vector<std::vector<std::string>> steps{
        {"gen-corpus", "--config", (workdir / "gen.json").string(), "--out", d("corpus"), "--seed", "81"},
        {"annotate", "--corpus", d("corpus"), "--out", d("annotated"), "--workers", "3"},
        {"stats", "--corpus", d("annotated")},
        {"build", "--task", "dialgen", "--corpus", d("annotated"), "--out", d("dialgen")},
        {"build", "--task", "dialspk", "--corpus", d("annotated"), "--out", d("dialspk")},
        {"train", "--task", "dialgen", "--data", d("dialgen"), "--config", cfg, "--out", d("run_gen")},
        {"train", "--task", "dialgen", "--data", d("dialgen"), "--config", cfg, "--out", d("run_base"), "--baseline"},
        {"train", "--task", "dialspk", "--data", d("dialspk"), "--config", cfg, "--out", d("run_spk")},
        {"train", "--task", "coherence", "--data", d("annotated"), "--splits", d("dialgen/splits.json"), "--config",
         cfg, "--out", d("run_coh")},
        {"eval", "--task", "dialgen", "--checkpoint", d("run_gen/model.ckpt"), "--data", d("dialgen"), "--out",
         d("eval_gen"), "--classifier", d("run_coh/classifier.ckpt"), "--decoding", "top_k", "--workers", "2"},
        {"eval", "--task", "dialspk", "--checkpoint", d("run_spk/model.ckpt"), "--data", d("dialspk"), "--out",
         d("eval_spk")},
    };
    std::streambuf* saved = std::cout.rdbuf();
    std::ostringstream sink;
    std::cout.rdbuf(sink.rdbuf());
    std::string failure;
    for (const auto& args : steps) {
      if (cli::run(args) != 0) {
        failure = args[0] + " failed";
        break;
      }
    }
    std::cout.rdbuf(saved);
    return failure;
  };
  for (const char* run : {"first", "second"}) {
    if (auto err = pipeline(workdir / run); !err.empty()) return {false, std::string(run) + " run: " + err};
  }
  std::size_t files = 0, differing = 0;
  std::string example;
  for (const auto& e : fs::recursive_directory_iterator(workdir / "first")) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
    const auto rel = fs::relative(e.path(), workdir / "first");
    ++files;
    if (!fs::exists(workdir / "second" / rel) || slurp(e.path()) != slurp(workdir / "second" / rel)) {
      if (!differing++) example = rel.string();
    }
  }
  const bool reports_equal = slurp(workdir / "first/eval_gen/report.json") == slurp(workdir / "second/eval_gen/report.json") &&
                             slurp(workdir / "first/eval_spk/report.json") == slurp(workdir / "second/eval_spk/report.json");
  fs::remove_all(workdir);
  return {differing == 0 && reports_equal && files > 0,
          std::to_string(files) + " artifacts compared, " + std::to_string(differing) + " differ" +
              (differing ? " (e.g. " + example + ")" : "")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> selected;
  std::string workdir = (fs::temp_directory_path() / "charadial_acceptance").string();
  app.add_option("--criterion", selected, "Criterion number (repeatable); all when omitted")->check(CLI::Range(1, 8));
  app.add_option("--workdir", workdir, "Scratch directory for the CLI determinism check");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};

  const std::map<int, std::pair<std::string, std::function<Verdict()>>> criteria{
      {1, {"gradient oracle", gradient_oracle}},
      {2, {"metric oracles", metric_oracles}},
      {3, {"dataset constraints", dataset_constraints}},
      {4, {"speaker attribution", attribution_quality}},
      {5, {"DialSpk direction", dialspk_direction}},
      {6, {"DialGen trainability and coverage", dialgen_trainability}},
      {7, {"coherence sanity", coherence_sanity}},
      {8, {"CLI determinism", [&] { return cli_determinism(workdir); }}},
  };
  bool all = true;
  for (int id : selected) {
    const auto& [name, fn] = criteria.at(id);
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << "criterion " << id << " " << (v.pass ? "PASS" : "FAIL") << "  " << name << ": " << v.detail << " ["
              << fmt(secs, 1) << " s]" << std::endl;
    all = all && v.pass;
  }
  return all ? 0 : 1;
}
