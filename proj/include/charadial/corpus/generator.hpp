#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "charadial/corpus/story.hpp"

namespace charadial::corpus {

using charadial::ConfigError;

enum class StyleMode {
  separable,    // pairwise-disjoint style vocabularies
  overlapping,  // adjacent characters share part of their style vocabulary
};

enum class PersonaBinding {
  story,    // each story deals the lexicon's style sets to its cast at random
  lexicon,  // a character always speaks with its own lexicon style
};

struct AttributionMix {
  double pre = 0.40;       // NAME said : “...”
  double post = 0.35;      // “...” said NAME .
  double implicit = 0.25;  // bare continuation
};

struct GeneratorConfig {
  std::uint64_t seed = 1;
  std::size_t story_count = 200;
  std::pair<std::size_t, std::size_t> characters_per_story{5, 6};
  std::pair<std::size_t, std::size_t> turns_per_story{10, 14};
  std::pair<double, double> dialogue_ratio{0.30, 0.50};
  std::pair<std::size_t, std::size_t> turn_length{4, 8};
  std::size_t lexicon_size = 24;
  std::size_t style_vocab_size = 8;
  StyleMode style_mode = StyleMode::separable;
  PersonaBinding persona_binding = PersonaBinding::lexicon;
  double style_token_share = 0.8;
  AttributionMix attribution;
  /// Share of pre-turn attributions phrased "A turned to B and said :".
  double distractor_rate = 0.03;
  std::size_t max_attempts = 200;

  Json to_json() const;
  /// Unknown keys are rejected; missing keys keep their defaults.
  static GeneratorConfig from_json(const Json& j);
  /// Throws ConfigError naming the violated bound.
  void validate() const;
};

struct GeneratedCorpus {
  std::vector<Story> stories;
  CharacterLexicon lexicon;
  Vocabulary vocab;
};

GeneratedCorpus generate_synthetic_corpus(const GeneratorConfig& config);

/// Share of story tokens that lie inside dialogue turns.
double dialogue_ratio(const Story& story);

}  // namespace charadial::corpus
