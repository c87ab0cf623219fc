#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "charadial/corpus/story.hpp"

namespace charadial::corpus {

class QuoteError : public DataError {
 public:
  QuoteError(const std::string& what, std::size_t position)
      : DataError(what), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// One span per balanced open/close quote pair, delimiters excluded.
/// Throws QuoteError at the offending index for nested or unbalanced quotes.
std::vector<Span> extract_dialogue_turns(std::span<const TokenId> tokens);

struct MentionScan {
  std::vector<Mention> narration;
  /// Name matches inside dialogue spans; kept apart from story mentions.
  std::vector<Mention> in_dialogue;
};

/// Lexicon names encoded as token sequences (multi-token names allowed).
struct NamePattern {
  CharacterId character;
  std::vector<TokenId> tokens;
};
std::vector<NamePattern> name_patterns(const CharacterLexicon& lexicon, const Vocabulary& vocab);

/// Left-to-right scan taking the longest lexicon match at each position.
MentionScan detect_mentions(std::span<const TokenId> tokens, std::span<const Span> dialogue_turns,
                            std::span<const NamePattern> patterns);

/// Nearest-mention heuristic. For each turn: the narration fragment between
/// the previous sentence boundary (sentence-final punctuation or a closing
/// quote) and the opening quote wins, taking the mention closest to the
/// quote; otherwise the fragment after the closing quote up to the next
/// sentence-final token (stopping at an opening quote), taking the first
/// mention; otherwise kUnknownSpeaker.
SpeakerMap attribute_speakers(const Story& story, const Vocabulary& vocab);

/// Re-derives turns, mentions and attributed speakers from the raw tokens.
Story annotate_story(Story story, const CharacterLexicon& lexicon, const Vocabulary& vocab);

struct AttributionAccuracy {
  std::size_t correct = 0;
  std::size_t attributed = 0;  // non-UNKNOWN turns with gold available
  std::size_t unknown = 0;
  double accuracy() const { return attributed ? static_cast<double>(correct) / attributed : 0.0; }
};

AttributionAccuracy attribution_accuracy(std::span<const Story> stories);

}  // namespace charadial::corpus
