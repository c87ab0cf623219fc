#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "charadial/common/io.hpp"
#include "charadial/corpus/vocab.hpp"

namespace charadial::corpus {

using CharacterId = std::int32_t;
inline constexpr CharacterId kUnknownSpeaker = -1;

/// Half-open token range [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start; }
  bool contains(std::size_t pos) const { return pos >= start && pos < end; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct Mention {
  CharacterId character = 0;
  Span span;
  friend bool operator==(const Mention&, const Mention&) = default;
};

using SpeakerMap = std::map<std::size_t, CharacterId>;

struct Story {
  std::string id;
  std::vector<TokenId> tokens;
  /// Content spans, quote delimiters excluded.
  std::vector<Span> dialogue_turns;
  /// Narration-only mentions.
  std::vector<Mention> mentions;
  std::optional<SpeakerMap> gold_speakers;
  /// Filled by the annotator; kUnknownSpeaker where no speaker was found.
  std::optional<SpeakerMap> attributed_speakers;

  friend bool operator==(const Story&, const Story&) = default;
};

/// Distinct characters in order of first narration mention.
std::vector<CharacterId> characters_in_order(const std::vector<Mention>& mentions);

struct CharacterEntry {
  CharacterId id = 0;
  std::string name;
  /// Preferred content tokens when this character speaks (synthetic only).
  std::vector<std::string> style;
  friend bool operator==(const CharacterEntry&, const CharacterEntry&) = default;
};

class CharacterLexicon {
 public:
  CharacterLexicon() = default;
  explicit CharacterLexicon(std::vector<CharacterEntry> entries);

  const std::vector<CharacterEntry>& entries() const { return entries_; }
  const CharacterEntry& at(CharacterId id) const;
  std::optional<CharacterId> find(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  /// True when every pair of style vocabularies is disjoint.
  bool styles_disjoint() const;

  Json to_json() const;
  static CharacterLexicon from_json(const Json& j);
  friend bool operator==(const CharacterLexicon&, const CharacterLexicon&) = default;

 private:
  std::vector<CharacterEntry> entries_;
};

Json to_json(const Story& story);
Story story_from_json(const Json& j);
Json speakers_to_json(const SpeakerMap& speakers);
SpeakerMap speakers_from_json(const Json& j);

}  // namespace charadial::corpus
