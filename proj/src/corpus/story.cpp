#include "charadial/corpus/story.hpp"

#include <algorithm>
#include <set>

namespace charadial::corpus {

std::vector<CharacterId> characters_in_order(const std::vector<Mention>& mentions) {
  std::vector<const Mention*> sorted;
  for (const auto& m : mentions) sorted.push_back(&m);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Mention* a, const Mention* b) { return a->span.start < b->span.start; });
  std::vector<CharacterId> order;
  for (const auto* m : sorted) {
    if (std::find(order.begin(), order.end(), m->character) == order.end()) {
      order.push_back(m->character);
    }
  }
  return order;
}

CharacterLexicon::CharacterLexicon(std::vector<CharacterEntry> entries)
    : entries_(std::move(entries)) {
  std::set<std::string> names;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].id != static_cast<CharacterId>(i)) {
      throw DataError("lexicon ids must be dense and ordered; entry " + std::to_string(i) +
                      " has id " + std::to_string(entries_[i].id));
    }
    if (entries_[i].name.empty()) throw DataError("lexicon entry with empty name");
    if (!names.insert(entries_[i].name).second) {
      throw DataError("duplicate character name in lexicon: " + entries_[i].name);
    }
  }
}

const CharacterEntry& CharacterLexicon::at(CharacterId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= entries_.size()) {
    throw std::out_of_range("unknown character id " + std::to_string(id));
  }
  return entries_[static_cast<std::size_t>(id)];
}

std::optional<CharacterId> CharacterLexicon::find(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.id;
  return std::nullopt;
}

bool CharacterLexicon::styles_disjoint() const {
  std::set<std::string> seen;
  for (const auto& e : entries_)
    for (const auto& s : e.style)
      if (!seen.insert(s).second) return false;
  return true;
}

Json CharacterLexicon::to_json() const {
  Json chars = Json::array();
  for (const auto& e : entries_) chars.push_back({{"id", e.id}, {"name", e.name}, {"style", e.style}});
  return Json{{"characters", chars}};
}

CharacterLexicon CharacterLexicon::from_json(const Json& j) {
  std::vector<CharacterEntry> entries;
  for (const auto& c : j.at("characters")) {
    entries.push_back({c.at("id").get<CharacterId>(), c.at("name").get<std::string>(),
                       c.value("style", std::vector<std::string>{})});
  }
  return CharacterLexicon(std::move(entries));
}

Json speakers_to_json(const SpeakerMap& speakers) {
  Json j = Json::object();
  for (const auto& [turn, who] : speakers) j[std::to_string(turn)] = who;
  return j;
}

SpeakerMap speakers_from_json(const Json& j) {
  SpeakerMap out;
  for (const auto& [key, value] : j.items()) {
    out[static_cast<std::size_t>(std::stoul(key))] = value.get<CharacterId>();
  }
  return out;
}

Json to_json(const Story& story) {
  Json turns = Json::array();
  for (const auto& s : story.dialogue_turns) turns.push_back({s.start, s.end});
  Json mentions = Json::array();
  for (const auto& m : story.mentions) mentions.push_back({m.character, m.span.start, m.span.end});
  Json j = {{"id", story.id},
            {"tokens", story.tokens},
            {"dialogue_turns", turns},
            {"mentions", mentions}};
  if (story.gold_speakers) j["gold_speakers"] = speakers_to_json(*story.gold_speakers);
  if (story.attributed_speakers) {
    j["attributed_speakers"] = speakers_to_json(*story.attributed_speakers);
  }
  return j;
}

Story story_from_json(const Json& j) {
  Story s;
  s.id = j.at("id").get<std::string>();
  s.tokens = j.at("tokens").get<std::vector<TokenId>>();
  for (const auto& t : j.at("dialogue_turns")) {
    s.dialogue_turns.push_back({t.at(0).get<std::size_t>(), t.at(1).get<std::size_t>()});
  }
  for (const auto& m : j.at("mentions")) {
    s.mentions.push_back(
        {m.at(0).get<CharacterId>(), {m.at(1).get<std::size_t>(), m.at(2).get<std::size_t>()}});
  }
  if (j.contains("gold_speakers")) s.gold_speakers = speakers_from_json(j.at("gold_speakers"));
  if (j.contains("attributed_speakers")) {
    s.attributed_speakers = speakers_from_json(j.at("attributed_speakers"));
  }
  for (const auto& t : s.dialogue_turns) {
    if (t.start > t.end || t.end > s.tokens.size()) {
      throw DataError("story " + s.id + ": dialogue span out of range");
    }
  }
  for (const auto& m : s.mentions) {
    if (m.span.start >= m.span.end || m.span.end > s.tokens.size()) {
      throw DataError("story " + s.id + ": mention span out of range");
    }
  }
  return s;
}

}  // namespace charadial::corpus
