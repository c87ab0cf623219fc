#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "charadial/cli/cli.hpp"
#include "charadial/corpus/datasets.hpp"
#include "charadial/corpus/generator.hpp"
#include "charadial/eval/coherence.hpp"
#include "charadial/eval/metrics.hpp"
#include "charadial/train/train.hpp"

namespace fs = std::filesystem;
using charadial::Json;
using charadial::cli::run;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

Json json_at(const fs::path& p) { return Json::parse(slurp(p)); }

/// Fresh scratch directory holding a small corpus and both datasets, built
/// once per test binary.
class CliTest : public ::testing::Test {
 protected:
  static fs::path root;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / "charadial_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
    spit(root / "gen.json", R"({"story_count": 40})");
    spit(root / "tiny.json", R"({
      "model": {"model_dim": 16, "layers_encoder": 1, "layers_decoder": 1, "attention_heads": 2,
                "feedforward_dim": 32},
      "train": {"epochs": 2, "batch_size": 8, "learning_rate": 0.003, "coverage_window": 4},
      "coherence": {"embed_dim": 16, "channels": 16, "window": 5, "epochs": 1}
    })");
    ASSERT_EQ(call({"gen-corpus", "--config", p("gen.json"), "--out", p("corpus"), "--seed", "5"}), 0);
    ASSERT_EQ(call({"build", "--task", "dialgen", "--corpus", p("corpus"), "--out", p("gen")}), 0);
    ASSERT_EQ(call({"build", "--task", "dialspk", "--corpus", p("corpus"), "--out", p("spk")}), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root); }

  static std::string p(const std::string& rel) { return (root / rel).string(); }

  static int call(const std::vector<std::string>& args) {
    ::testing::internal::CaptureStdout();
    ::testing::internal::CaptureStderr();
    const int rc = run(args);
    last_out = ::testing::internal::GetCapturedStdout();
    last_err = ::testing::internal::GetCapturedStderr();
    return rc;
  }
  static std::string last_out, last_err;
};

fs::path CliTest::root;
std::string CliTest::last_out;
std::string CliTest::last_err;

}  // namespace

TEST_F(CliTest, HelpWorksForEveryCommand) {
  EXPECT_EQ(call({"--help"}), 0);
  for (const char* cmd : {"gen-corpus", "annotate", "build", "train", "eval", "stats"}) {
    EXPECT_EQ(call({cmd, "--help"}), 0) << cmd;
    EXPECT_NE(last_out.find("--"), std::string::npos) << cmd;
  }
}

TEST_F(CliTest, UnknownFlagsAndMissingCommandAreUsageErrors) {
  EXPECT_EQ(call({}), 1);
  EXPECT_EQ(call({"stats", "--corpus", p("corpus"), "--bogus"}), 1);
  EXPECT_EQ(call({"frobnicate"}), 1);
  EXPECT_EQ(call({"build", "--task", "dialogue", "--corpus", p("corpus"), "--out", p("x")}), 1);
}

TEST_F(CliTest, GenCorpusWritesOneManifestAndIsDeterministic) {
  ASSERT_EQ(call({"gen-corpus", "--config", p("gen.json"), "--out", p("corpus2"), "--seed", "5"}), 0);
  for (const char* f : {"stories.jsonl", "lexicon.json", "vocab.json", "generator.json"}) {
    EXPECT_EQ(slurp(root / "corpus" / f), slurp(root / "corpus2" / f)) << f;
  }
  auto m = json_at(root / "corpus" / "manifest.json");
  for (const char* key : {"command", "config", "inputs", "outputs", "seed", "tool_version", "wall_clock_seconds"}) {
    EXPECT_TRUE(m.contains(key)) << key;
  }
  EXPECT_EQ(m["command"], "gen-corpus");
  EXPECT_EQ(m["seed"], 5);
  std::size_t manifests = 0, staging = 0;
  for (const auto& e : fs::directory_iterator(root)) {
    staging += e.path().filename().string().find("staging") != std::string::npos;
  }
  for (const auto& e : fs::recursive_directory_iterator(root / "corpus")) {
    manifests += e.path().filename() == "manifest.json";
  }
  EXPECT_EQ(manifests, 1u);
  EXPECT_EQ(staging, 0u);
  EXPECT_NE(last_out.find("#Story"), std::string::npos);

  ASSERT_EQ(call({"gen-corpus", "--config", p("gen.json"), "--out", p("corpus3"), "--seed", "6"}), 0);
  EXPECT_NE(slurp(root / "corpus" / "stories.jsonl"), slurp(root / "corpus3" / "stories.jsonl"));
}

TEST_F(CliTest, InvalidGeneratorConfigNamesTheField) {
  spit(root / "bad.json", R"({"story_count": 4, "lexicon_sise": 3})");
  EXPECT_EQ(call({"gen-corpus", "--config", p("bad.json"), "--out", p("bad")}), 2);
  EXPECT_NE(last_err.find("lexicon_sise"), std::string::npos) << last_err;
  EXPECT_FALSE(fs::exists(root / "bad"));
}

TEST(ShippedConfigs, ParseAndValidate) {
  using namespace charadial;
  const fs::path dir(CHARADIAL_CONFIG_DIR);
  corpus::GeneratorConfig::from_json(json_at(dir / "generator.json")).validate();
  for (const char* name : {"train_dialgen.json", "train_dialspk.json"}) {
    const auto j = json_at(dir / name);
    auto mc = model::ModelConfig::from_json(j.at("model"));
    mc.vocab_size = 100;
    EXPECT_NO_THROW(mc.validate()) << name;
    EXPECT_NO_THROW(train::TrainConfig::from_json(j.at("train")).validate()) << name;
  }
  EXPECT_NO_THROW(eval::CoherenceConfig::from_json(json_at(dir / "coherence.json").at("coherence")).validate());
}

TEST_F(CliTest, StatsPrintsTableAndJson) {
  ASSERT_EQ(call({"stats", "--corpus", p("corpus")}), 0);
  EXPECT_NE(last_out.find("Avg. #Dialogue Turn"), std::string::npos);
  ASSERT_EQ(call({"stats", "--corpus", p("corpus"), "--json"}), 0);
  EXPECT_EQ(Json::parse(last_out).at("stories"), 40);
  EXPECT_EQ(call({"stats", "--corpus", p("nowhere")}), 1);
}

TEST_F(CliTest, AnnotateMatchesGeneratorAndIsOrderStableAcrossWorkers) {
  ASSERT_EQ(call({"annotate", "--corpus", p("corpus"), "--out", p("ann1")}), 0);
  ASSERT_EQ(call({"annotate", "--corpus", p("corpus"), "--out", p("ann4"), "--workers", "4"}), 0);
  EXPECT_EQ(slurp(root / "ann1" / "stories.jsonl"), slurp(root / "ann4" / "stories.jsonl"));
  EXPECT_NE(last_out.find("attribution agreement"), std::string::npos);
}

TEST_F(CliTest, AnnotatesPlainText) {
  spit(root / "texts.txt",
       "Alice met Bob . Alice said : \xE2\x80\x9C hello there . \xE2\x80\x9D \xE2\x80\x9C hi ! \xE2\x80\x9D replied Bob .\n"
       "\n"
       "Bob waved . \xE2\x80\x9C bye . \xE2\x80\x9D\n");
  spit(root / "lex.json", R"({"characters": [{"id": 0, "name": "Alice", "style": []},
                                            {"id": 1, "name": "Bob", "style": []}]})");
  ASSERT_EQ(call({"annotate", "--texts", p("texts.txt"), "--lexicon", p("lex.json"), "--out", p("plain")}), 0)
      << last_err;
  std::vector<Json> stories;
  std::istringstream in(slurp(root / "plain" / "stories.jsonl"));
  for (std::string line; std::getline(in, line);) stories.push_back(Json::parse(line));
  ASSERT_EQ(stories.size(), 2u);
  EXPECT_EQ(stories[0]["dialogue_turns"].size(), 2u);
  EXPECT_EQ(stories[0]["attributed_speakers"]["0"], 0);
  EXPECT_EQ(stories[0]["attributed_speakers"]["1"], 1);
  EXPECT_EQ(stories[1]["dialogue_turns"].size(), 1u);
  EXPECT_EQ(call({"annotate", "--texts", p("texts.txt"), "--out", p("plain2")}), 1);
}

TEST_F(CliTest, BuildWritesSplitsAndIsDeterministic) {
  const auto ids = json_at(root / "gen" / "splits.json");
  EXPECT_EQ(ids["train"].size() + ids["valid"].size() + ids["test"].size(), 40u);
  EXPECT_EQ(ids["train"].size(), 36u);
  EXPECT_EQ(ids["valid"].size(), 2u);
  ASSERT_EQ(call({"build", "--task", "dialgen", "--corpus", p("corpus"), "--out", p("gen2")}), 0);
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "splits.json", "skipped.jsonl", "vocab.json"}) {
    EXPECT_EQ(slurp(root / "gen" / f), slurp(root / "gen2" / f)) << f;
  }
  ASSERT_EQ(call({"build", "--task", "dialgen", "--corpus", p("corpus"), "--out", p("gen3"), "--seed", "9"}), 0);
  EXPECT_NE(slurp(root / "gen" / "splits.json"), slurp(root / "gen3" / "splits.json"));
}

TEST_F(CliTest, DialSpkTrainSplitProbesEveryTurnAndEvalSplitsStaySparse) {
  auto probed_share = [&](const char* split) {
    std::size_t probes = 0, turns = 0;
    std::istringstream in(slurp(root / "spk" / split));
    for (std::string line; std::getline(in, line);) {
      const auto j = Json::parse(line);
      probes += j["gold"].size();
      for (const auto& t : j["tokens"]) turns += t.get<int>() == charadial::corpus::special::kOpenQuote;
    }
    return static_cast<double>(probes) / static_cast<double>(turns);
  };
  EXPECT_DOUBLE_EQ(probed_share("train.jsonl"), 1.0);
  EXPECT_LT(probed_share("test.jsonl"), 0.6);
  EXPECT_EQ(json_at(root / "spk" / "build.json")["train_probe_ratio"], 1.0);
  EXPECT_EQ(call({"build", "--task", "dialspk", "--corpus", p("corpus"), "--out", p("badprobe"), "--train-probe-ratio",
                  "0"}),
            1);
  EXPECT_FALSE(fs::exists(root / "badprobe"));
}

TEST_F(CliTest, BuildRejectsBadRatiosWithoutWritingOutput) {
  EXPECT_EQ(call({"build", "--task", "dialspk", "--corpus", p("corpus"), "--out", p("badsplit"), "--train-ratio",
                  "0.8"}),
            1);
  EXPECT_NE(last_err.find("sum to 1"), std::string::npos);
  EXPECT_FALSE(fs::exists(root / "badsplit"));
}

TEST_F(CliTest, BuildFailsWhenEveryStoryIsSkipped) {
  spit(root / "pair.json", R"({"characters": [{"id": 0, "name": "Alice"}, {"id": 1, "name": "Bob"}]})");
  // Two characters fall below the DialGen minimum; no turns leaves DialSpk nothing to probe.
  spit(root / "pair.txt", "Alice met Bob . Alice said : \xE2\x80\x9C hello . \xE2\x80\x9D\n");
  spit(root / "quiet.txt", "Alice met Bob . They walked home .\n");
  const std::pair<const char*, const char*> cases[] = {{"dialgen", "pair.txt"}, {"dialspk", "quiet.txt"}};
  for (const auto& [task, text] : cases) {
    fs::remove_all(root / "pair");
    ASSERT_EQ(call({"annotate", "--texts", p(text), "--lexicon", p("pair.json"), "--out", p("pair")}), 0);
    EXPECT_EQ(call({"build", "--task", task, "--corpus", p("pair"), "--out", p("pair_ds")}), 2) << task;
    EXPECT_NE(last_err.find("skipped"), std::string::npos);
    EXPECT_FALSE(fs::exists(root / "pair_ds"));
  }
}

TEST_F(CliTest, TrainRejectsMissingDatasetAndWrongTask) {
  EXPECT_EQ(call({"train", "--task", "dialgen", "--data", p("absent"), "--out", p("r0")}), 1);
  EXPECT_EQ(call({"train", "--task", "dialgen", "--data", p("spk"), "--out", p("r0")}), 2);
  spit(root / "extra.json", R"({"optimizer": {}})");
  EXPECT_EQ(call({"train", "--task", "dialgen", "--data", p("gen"), "--config", p("extra.json"), "--out", p("r0")}),
            2);
  EXPECT_FALSE(fs::exists(root / "r0"));
}

TEST_F(CliTest, DivergentTrainingExitsWithNumericFailure) {
  spit(root / "boom.json", R"({"model": {"model_dim": 16, "layers_encoder": 1, "layers_decoder": 1,
                                         "attention_heads": 2, "feedforward_dim": 32},
                               "train": {"epochs": 1, "batch_size": 1, "learning_rate": 1e30}})");
  EXPECT_EQ(call({"train", "--task", "dialgen", "--data", p("gen"), "--config", p("boom.json"), "--out", p("boom")}),
            3);
  EXPECT_FALSE(fs::exists(root / "boom"));
}

TEST_F(CliTest, DialSpkTinyRunBeatsChanceOnTrainSplit) {
  spit(root / "spk.json", R"({"model": {"model_dim": 16, "layers_encoder": 1, "attention_heads": 2,
                                        "feedforward_dim": 32},
                              "train": {"epochs": 30, "batch_size": 4, "learning_rate": 0.01}})");
  ASSERT_EQ(call({"train", "--task", "dialspk", "--data", p("spk"), "--config", p("spk.json"), "--out", p("rs")}), 0)
      << last_err;
  using namespace charadial;
  auto model = model::model_from_checkpoint(numerics::load_checkpoint<float>(root / "rs" / "model.ckpt"));
  std::vector<corpus::DialSpkExample> train;
  double chance = 0;
  std::size_t turns = 0;
  std::istringstream in(slurp(root / "spk" / "train.jsonl"));
  for (std::string line; std::getline(in, line);) {
    train.push_back(corpus::dialspk_from_json(Json::parse(line)));
    chance += static_cast<double>(train.back().gold.size()) / static_cast<double>(train.back().candidates.size());
    turns += train.back().gold.size();
  }
  chance /= static_cast<double>(turns);
  EXPECT_GT(train::speaker_accuracy(model, train), chance + 0.1);
}

TEST_F(CliTest, BaselineRunEmitsNoCoverage) {
  ASSERT_EQ(call({"train", "--task", "dialgen", "--data", p("gen"), "--config", p("tiny.json"), "--out", p("rb"),
                  "--baseline"}),
            0);
  EXPECT_EQ(json_at(root / "rb" / "manifest.json")["config"]["model"]["variant"], "baseline");
  EXPECT_TRUE(!fs::exists(root / "rb" / "coverage.jsonl") || slurp(root / "rb" / "coverage.jsonl").empty());
  EXPECT_EQ(slurp(root / "rb" / "metrics.jsonl").find("coverage"), std::string::npos);

  ASSERT_EQ(call({"train", "--task", "dialgen", "--data", p("gen"), "--config", p("tiny.json"), "--out", p("rf")}), 0);
  EXPECT_FALSE(slurp(root / "rf" / "coverage.jsonl").empty());
}

TEST_F(CliTest, GoldAsGeneratedScoresFullBleuAndValidReport) {
  ASSERT_EQ(call({"eval", "--task", "dialgen", "--use-gold", "--data", p("gen"), "--out", p("egold")}), 0);
  auto report = json_at(root / "egold" / "report.json");
  EXPECT_EQ(charadial::eval::validate_report_json(report), "");
  EXPECT_DOUBLE_EQ(report["bleu1"]["value"].get<double>(), 100.0);
  EXPECT_DOUBLE_EQ(report["bleu2"]["value"].get<double>(), 100.0);
  EXPECT_NE(last_out.find("BLEU1"), std::string::npos);

  ASSERT_EQ(call({"eval", "--task", "dialspk", "--use-gold", "--data", p("spk"), "--out", p("sgold")}), 0);
  auto spk = json_at(root / "sgold" / "report.json");
  EXPECT_EQ(charadial::eval::validate_report_json(spk), "");
  EXPECT_DOUBLE_EQ(spk["dac"]["value"].get<double>(), 100.0);
}

TEST_F(CliTest, EvalWritesGenerationsBesideGold) {
  ASSERT_EQ(call({"train", "--task", "dialgen", "--data", p("gen"), "--config", p("tiny.json"), "--out", p("rg")}), 0);
  ASSERT_EQ(call({"eval", "--task", "dialgen", "--checkpoint", p("rg/model.ckpt"), "--data", p("gen"), "--out",
                  p("eg")}),
            0);
  std::istringstream in(slurp(root / "eg" / "generations.jsonl"));
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    auto j = Json::parse(line);
    EXPECT_TRUE(j.contains("generated") && j.contains("gold") && j.contains("id"));
    EXPECT_EQ(j["generated"].size(), j["gold"].size());
  }
  EXPECT_EQ(lines, json_at(root / "gen" / "splits.json")["test"].size());
  EXPECT_EQ(charadial::eval::validate_report_json(json_at(root / "eg" / "report.json")), "");
}

TEST_F(CliTest, EvalRejectsMismatchedVocabulary) {
  ASSERT_EQ(call({"train", "--task", "dialgen", "--data", p("gen"), "--config", p("tiny.json"), "--out", p("rv")}), 0);
  spit(root / "other.json", R"({"story_count": 12, "lexicon_size": 30})");
  ASSERT_EQ(call({"gen-corpus", "--config", p("other.json"), "--out", p("other")}), 0);
  ASSERT_EQ(call({"build", "--task", "dialgen", "--corpus", p("other"), "--out", p("other_ds")}), 0);
  EXPECT_EQ(call({"eval", "--task", "dialgen", "--checkpoint", p("rv/model.ckpt"), "--data", p("other_ds"), "--out",
                  p("ev")}),
            2);
  EXPECT_NE(last_err.find("vocabulary"), std::string::npos) << last_err;
  EXPECT_FALSE(fs::exists(root / "ev"));
  EXPECT_EQ(call({"eval", "--task", "dialspk", "--checkpoint", p("rv/model.ckpt"), "--data", p("spk"), "--out",
                  p("ev")}),
            2);
}

// Every data artifact of a full pipeline rerun matches byte for byte.
TEST_F(CliTest, PipelineRerunIsByteIdentical) {
  auto pipeline = [&](const std::string& tag) {
    const auto d = [&](const std::string& name) { return p(tag + "/" + name); };
    fs::create_directories(root / tag);
    ASSERT_EQ(call({"gen-corpus", "--config", p("gen.json"), "--out", d("corpus"), "--seed", "11"}), 0);
    ASSERT_EQ(call({"annotate", "--corpus", d("corpus"), "--out", d("ann"), "--workers", "2"}), 0);
    ASSERT_EQ(call({"build", "--task", "dialgen", "--corpus", d("ann"), "--out", d("gen")}), 0);
    ASSERT_EQ(call({"build", "--task", "dialspk", "--corpus", d("ann"), "--out", d("spk")}), 0);
    ASSERT_EQ(call({"train", "--task", "dialgen", "--data", d("gen"), "--config", p("tiny.json"), "--out", d("rg")}), 0);
    ASSERT_EQ(call({"train", "--task", "dialspk", "--data", d("spk"), "--config", p("tiny.json"), "--out", d("rs")}), 0);
    ASSERT_EQ(call({"train", "--task", "coherence", "--data", d("ann"), "--splits", d("gen/splits.json"), "--config",
                    p("tiny.json"), "--out", d("rc")}),
              0);
    ASSERT_EQ(call({"eval", "--task", "dialgen", "--checkpoint", d("rg/model.ckpt"), "--data", d("gen"), "--out",
                    d("eg"), "--classifier", d("rc/classifier.ckpt"), "--decoding", "top_k", "--workers", tag == "a" ? "1" : "3"}),
              0);
    ASSERT_EQ(call({"eval", "--task", "dialspk", "--checkpoint", d("rs/model.ckpt"), "--data", d("spk"), "--out",
                    d("es")}),
              0);
  };
  pipeline("a");
  pipeline("b");
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
    const auto rel = fs::relative(e.path(), root / "a");
    ASSERT_TRUE(fs::exists(root / "b" / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(root / "b" / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 25u);
  // Manifests differ only in their wall-clock field.
  auto ma = json_at(root / "a" / "eg" / "manifest.json");
  auto mb = json_at(root / "b" / "eg" / "manifest.json");
  ma.erase("wall_clock_seconds");
  mb.erase("wall_clock_seconds");
  for (auto* m : {&ma, &mb}) (*m)["config"].erase("workers");
  ma.erase("inputs");
  mb.erase("inputs");
  ma.erase("outputs");
  mb.erase("outputs");
  EXPECT_EQ(ma, mb);
}
