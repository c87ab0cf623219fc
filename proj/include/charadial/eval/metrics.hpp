#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "charadial/corpus/vocab.hpp"

namespace charadial::eval {

using corpus::TokenId;

/// Sentence-level cumulative BLEU-n (n in {1, 2}) with brevity penalty.
/// A k-gram order with zero matches uses add-one smoothing,
/// p_k = 1 / (candidate k-grams + 1). An empty candidate scores 0; an empty
/// reference is an error.
double bleu_n(std::span<const TokenId> candidate, std::span<const TokenId> reference, std::size_t n);

/// Macro average of per-turn BLEU over aligned candidate/reference turns.
struct BleuTally {
  double sum = 0.0;
  std::size_t turns = 0;
  double value() const { return turns ? sum / static_cast<double>(turns) : 0.0; }
};
BleuTally corpus_bleu(const std::vector<std::vector<TokenId>>& candidates,
                      const std::vector<std::vector<TokenId>>& references, std::size_t n);

struct DistinctTally {
  std::size_t distinct = 0;
  std::size_t total = 0;
  /// Set when there were no n-grams at all (value defined as 0).
  bool empty = false;
  double value() const { return total ? static_cast<double>(distinct) / static_cast<double>(total) : 0.0; }
};

/// Distinct n-grams over total n-grams pooled across turns (n-grams never
/// cross turn boundaries).
DistinctTally distinct_n(const std::vector<std::vector<TokenId>>& turns, std::size_t n);

struct StoryPrediction {
  std::string story_id;
  std::vector<std::size_t> predicted;
  std::vector<std::size_t> gold;
};

struct SpeakerTally {
  std::size_t correct_turns = 0;
  std::size_t total_turns = 0;
  std::size_t correct_stories = 0;
  std::size_t total_stories = 0;
  double dac() const { return 100.0 * static_cast<double>(correct_turns) / static_cast<double>(total_turns); }
  double sac() const { return 100.0 * static_cast<double>(correct_stories) / static_cast<double>(total_stories); }
};

/// Throws DataError on an empty input or a per-story length mismatch.
SpeakerTally dac_sac(const std::vector<StoryPrediction>& stories);

struct CoherenceTally {
  std::size_t coherent = 0;
  std::size_t total = 0;
  double ratio() const { return total ? 100.0 * static_cast<double>(coherent) / static_cast<double>(total) : 0.0; }
};

/// All values are percentages; absent metrics are omitted from outputs.
struct MetricReport {
  std::optional<BleuTally> bleu1, bleu2;
  std::optional<DistinctTally> distinct2, distinct3, distinct4;
  std::optional<CoherenceTally> coherence;
  std::optional<SpeakerTally> speakers;
  std::size_t generation_faults = 0;

  Json to_json() const;
  std::string table() const;
};

/// Structural checks against the report schema; empty string when valid.
std::string validate_report_json(const Json& j);

}  // namespace charadial::eval
