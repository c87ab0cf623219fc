#include "charadial/corpus/annotate.hpp"

#include <algorithm>

namespace charadial::corpus {

std::vector<Span> extract_dialogue_turns(std::span<const TokenId> tokens) {
  std::vector<Span> spans;
  std::optional<std::size_t> open;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == special::kOpenQuote) {
      if (open) {
        throw QuoteError("nested opening quote at token " + std::to_string(i) +
                         " (previous quote opened at " + std::to_string(*open) + ")", i);
      }
      open = i;
    } else if (tokens[i] == special::kCloseQuote) {
      if (!open) throw QuoteError("closing quote without opening quote at token " + std::to_string(i), i);
      spans.push_back({*open + 1, i});
      open.reset();
    }
  }
  if (open) throw QuoteError("unterminated quote opened at token " + std::to_string(*open), *open);
  return spans;
}

std::vector<NamePattern> name_patterns(const CharacterLexicon& lexicon, const Vocabulary& vocab) {
  if (lexicon.empty()) throw DataError("character lexicon is empty");
  std::vector<NamePattern> out;
  for (const auto& e : lexicon.entries()) {
    const auto words = tokenize(e.name);
    out.push_back({e.id, vocab.encode(words)});
  }
  return out;
}

MentionScan detect_mentions(std::span<const TokenId> tokens, std::span<const Span> dialogue_turns,
                            std::span<const NamePattern> patterns) {
  std::vector<bool> in_dialogue(tokens.size(), false);
  for (const auto& s : dialogue_turns)
    for (std::size_t i = s.start; i < s.end && i < tokens.size(); ++i) in_dialogue[i] = true;

  MentionScan scan;
  std::size_t i = 0;
  while (i < tokens.size()) {
    const NamePattern* best = nullptr;
    for (const auto& p : patterns) {
      const auto n = p.tokens.size();
      if (n == 0 || i + n > tokens.size()) continue;
      if (best != nullptr && n <= best->tokens.size()) continue;
      if (std::equal(p.tokens.begin(), p.tokens.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) {
        best = &p;
      }
    }
    if (best == nullptr) {
      ++i;
      continue;
    }
    Mention m{best->character, {i, i + best->tokens.size()}};
    (in_dialogue[i] ? scan.in_dialogue : scan.narration).push_back(m);
    i = m.span.end;
  }
  return scan;
}

SpeakerMap attribute_speakers(const Story& story, const Vocabulary& vocab) {
  const auto& tokens = story.tokens;
  auto is_boundary = [&](std::size_t pos) {
    return vocab.is_sentence_final(tokens[pos]) || tokens[pos] == special::kCloseQuote;
  };

  SpeakerMap speakers;
  for (std::size_t t = 0; t < story.dialogue_turns.size(); ++t) {
    const Span& turn = story.dialogue_turns[t];
    CharacterId who = kUnknownSpeaker;

    // Fragment [before_start, open_quote) leading into the quote.
    if (turn.start >= 1) {
      const std::size_t open_quote = turn.start - 1;
      std::size_t before_start = open_quote;
      while (before_start > 0 && !is_boundary(before_start - 1)) --before_start;
      const Mention* nearest = nullptr;
      for (const auto& m : story.mentions) {
        if (m.span.start >= before_start && m.span.end <= open_quote) {
          if (nearest == nullptr || m.span.start > nearest->span.start) nearest = &m;
        }
      }
      if (nearest != nullptr) who = nearest->character;
    }

    // Fragment after the closing quote up to the sentence end.
    if (who == kUnknownSpeaker) {
      const std::size_t after_start = turn.end + 1;
      std::size_t after_end = after_start;
      while (after_end < tokens.size() && tokens[after_end] != special::kOpenQuote) {
        const bool final = vocab.is_sentence_final(tokens[after_end]);
        ++after_end;
        if (final) break;
      }
      const Mention* first = nullptr;
      for (const auto& m : story.mentions) {
        if (m.span.start >= after_start && m.span.end <= after_end) {
          if (first == nullptr || m.span.start < first->span.start) first = &m;
        }
      }
      if (first != nullptr) who = first->character;
    }
    speakers[t] = who;
  }
  return speakers;
}

Story annotate_story(Story story, const CharacterLexicon& lexicon, const Vocabulary& vocab) {
  story.dialogue_turns = extract_dialogue_turns(story.tokens);
  const auto patterns = name_patterns(lexicon, vocab);
  story.mentions = detect_mentions(story.tokens, story.dialogue_turns, patterns).narration;
  story.attributed_speakers = attribute_speakers(story, vocab);
  return story;
}

AttributionAccuracy attribution_accuracy(std::span<const Story> stories) {
  AttributionAccuracy acc;
  for (const auto& s : stories) {
    if (!s.gold_speakers || !s.attributed_speakers) continue;
    for (const auto& [turn, who] : *s.attributed_speakers) {
      if (who == kUnknownSpeaker) {
        ++acc.unknown;
        continue;
      }
      auto gold = s.gold_speakers->find(turn);
      if (gold == s.gold_speakers->end()) continue;
      ++acc.attributed;
      if (gold->second == who) ++acc.correct;
    }
  }
  return acc;
}

}  // namespace charadial::corpus
