#include "charadial/eval/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <set>

namespace charadial::eval {

namespace {

using Gram = std::vector<TokenId>;

std::map<Gram, std::size_t> count_grams(std::span<const TokenId> tokens, std::size_t n) {
  std::map<Gram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[Gram(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

}  // namespace

double bleu_n(std::span<const TokenId> candidate, std::span<const TokenId> reference, std::size_t n) {
  if (n != 1 && n != 2) throw std::invalid_argument("bleu_n supports n = 1 or 2");
  if (reference.empty()) throw DataError("BLEU needs a non-empty reference");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const auto cand = count_grams(candidate, k);
    const auto ref = count_grams(reference, k);
    std::size_t matches = 0, total = 0;
    for (const auto& [gram, c] : cand) {
      total += c;
      auto it = ref.find(gram);
      if (it != ref.end()) matches += std::min(c, it->second);
    }
    const double p = matches > 0 ? static_cast<double>(matches) / static_cast<double>(total)
                                 : 1.0 / static_cast<double>(total + 1);
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(n));
}

BleuTally corpus_bleu(const std::vector<std::vector<TokenId>>& candidates,
                      const std::vector<std::vector<TokenId>>& references, std::size_t n) {
  if (candidates.size() != references.size()) {
    throw DataError("corpus_bleu: " + std::to_string(candidates.size()) + " candidates for " +
                    std::to_string(references.size()) + " references");
  }
  BleuTally tally;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    tally.sum += bleu_n(candidates[i], references[i], n);
    ++tally.turns;
  }
  return tally;
}

DistinctTally distinct_n(const std::vector<std::vector<TokenId>>& turns, std::size_t n) {
  if (n == 0) throw std::invalid_argument("distinct_n needs n >= 1");
  std::set<Gram> seen;
  DistinctTally tally;
  for (const auto& turn : turns) {
    for (std::size_t i = 0; i + n <= turn.size(); ++i) {
      seen.insert(Gram(turn.begin() + i, turn.begin() + i + n));
      ++tally.total;
    }
  }
  tally.distinct = seen.size();
  tally.empty = tally.total == 0;
  return tally;
}

SpeakerTally dac_sac(const std::vector<StoryPrediction>& stories) {
  if (stories.empty()) throw DataError("DAC/SAC over zero stories");
  SpeakerTally t;
  for (const auto& s : stories) {
    if (s.predicted.size() != s.gold.size()) {
      throw DataError("story " + s.story_id + ": " + std::to_string(s.predicted.size()) + " predictions for " +
                      std::to_string(s.gold.size()) + " specified turns");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < s.gold.size(); ++i) correct += s.predicted[i] == s.gold[i];
    t.correct_turns += correct;
    t.total_turns += s.gold.size();
    t.correct_stories += correct == s.gold.size();
    ++t.total_stories;
  }
  if (t.total_turns == 0) throw DataError("DAC/SAC over stories without specified turns");
  return t;
}

Json MetricReport::to_json() const {
  Json j = Json::object();
  auto bleu = [&](const char* key, const std::optional<BleuTally>& b) {
    if (b) j[key] = {{"value", 100.0 * b->value()}, {"sum", b->sum}, {"turns", b->turns}};
  };
  auto dist = [&](const char* key, const std::optional<DistinctTally>& d) {
    if (d) j[key] = {{"value", 100.0 * d->value()}, {"distinct", d->distinct}, {"total", d->total}, {"empty", d->empty}};
  };
  bleu("bleu1", bleu1);
  bleu("bleu2", bleu2);
  dist("distinct2", distinct2);
  dist("distinct3", distinct3);
  dist("distinct4", distinct4);
  if (coherence) {
    j["coherence"] = {{"value", coherence->ratio()}, {"coherent", coherence->coherent}, {"total", coherence->total}};
  }
  if (speakers) {
    j["dac"] = {{"value", speakers->dac()}, {"correct", speakers->correct_turns}, {"total", speakers->total_turns}};
    j["sac"] = {{"value", speakers->sac()}, {"correct", speakers->correct_stories}, {"total", speakers->total_stories}};
  }
  if (bleu1 || distinct2) j["generation_faults"] = generation_faults;
  return j;
}

std::string MetricReport::table() const {
  std::vector<std::pair<std::string, double>> cols;
  if (bleu1) cols.emplace_back("BLEU1", 100.0 * bleu1->value());
  if (bleu2) cols.emplace_back("BLEU2", 100.0 * bleu2->value());
  if (distinct2) cols.emplace_back("DIST2", 100.0 * distinct2->value());
  if (distinct3) cols.emplace_back("DIST3", 100.0 * distinct3->value());
  if (distinct4) cols.emplace_back("DIST4", 100.0 * distinct4->value());
  if (coherence) cols.emplace_back("Coherence(%)", coherence->ratio());
  if (speakers) {
    cols.emplace_back("DAC(%)", speakers->dac());
    cols.emplace_back("SAC(%)", speakers->sac());
  }
  std::string head, row;
  char cell[32];
  for (const auto& [name, value] : cols) {
    std::snprintf(cell, sizeof cell, "%13s", name.c_str());
    head += cell;
    std::snprintf(cell, sizeof cell, "%13.2f", value);
    row += cell;
  }
  return head + "\n" + row + "\n";
}

std::string validate_report_json(const Json& j) {
  if (!j.is_object()) return "report is not an object";
  const std::map<std::string, std::vector<std::string>> schema{
      {"bleu1", {"value", "sum", "turns"}},         {"bleu2", {"value", "sum", "turns"}},
      {"distinct2", {"value", "distinct", "total"}}, {"distinct3", {"value", "distinct", "total"}},
      {"distinct4", {"value", "distinct", "total"}}, {"coherence", {"value", "coherent", "total"}},
      {"dac", {"value", "correct", "total"}},        {"sac", {"value", "correct", "total"}}};
  for (const auto& [key, value] : j.items()) {
    if (key == "generation_faults") {
      if (!value.is_number_unsigned()) return "generation_faults must be a count";
      continue;
    }
    auto it = schema.find(key);
    if (it == schema.end()) return "unexpected key " + key;
    for (const auto& field : it->second)
      if (!value.contains(field) || !value[field].is_number()) return key + "." + field + " missing";
    const double v = value["value"].get<double>();
    if (!(v >= 0.0 && v <= 100.0)) return key + ".value outside [0, 100]";
  }
  auto ratio_ok = [&](const char* key, const char* num, const char* den) {
    if (!j.contains(key)) return true;
    const double d = j[key][den].get<double>();
    const double expect = d > 0 ? 100.0 * j[key][num].get<double>() / d : 0.0;
    return std::fabs(expect - j[key]["value"].get<double>()) < 1e-9;
  };
  for (const char* key : {"distinct2", "distinct3", "distinct4"})
    if (!ratio_ok(key, "distinct", "total")) return std::string(key) + " value disagrees with counts";
  if (!ratio_ok("coherence", "coherent", "total")) return "coherence value disagrees with counts";
  if (!ratio_ok("dac", "correct", "total")) return "dac value disagrees with counts";
  if (!ratio_ok("sac", "correct", "total")) return "sac value disagrees with counts";
  if (!ratio_ok("bleu1", "sum", "turns") || !ratio_ok("bleu2", "sum", "turns")) {
    return "bleu value disagrees with counts";
  }
  return {};
}

}  // namespace charadial::eval
