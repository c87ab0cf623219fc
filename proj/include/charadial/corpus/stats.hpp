#pragma once

#include <string>
#include <vector>

#include "charadial/corpus/story.hpp"

namespace charadial::corpus {

struct CorpusStats {
  std::size_t story_count = 0;
  double avg_tokens = 0;
  double avg_dialogue_tokens = 0;
  double avg_sentences = 0;
  double avg_dialogue_turns = 0;
  double avg_characters = 0;

  Json to_json() const;
  /// Two-column table using the corpus-statistics row names.
  std::string table() const;
};

/// Sentences are counted as sentence-final punctuation tokens. Throws
/// DataError on an empty corpus.
CorpusStats compute_stats(const std::vector<Story>& stories, const Vocabulary& vocab);

}  // namespace charadial::corpus
