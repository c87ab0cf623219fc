#include "charadial/corpus/stats.hpp"

#include <cstdio>
#include <set>

namespace charadial::corpus {

CorpusStats compute_stats(const std::vector<Story>& stories, const Vocabulary& vocab) {
  if (stories.empty()) throw DataError("cannot compute statistics of an empty corpus");
  CorpusStats st;
  st.story_count = stories.size();
  for (const auto& s : stories) {
    st.avg_tokens += static_cast<double>(s.tokens.size());
    for (const auto& t : s.dialogue_turns) st.avg_dialogue_tokens += static_cast<double>(t.length());
    for (auto tok : s.tokens)
      if (vocab.is_sentence_final(tok)) st.avg_sentences += 1;
    st.avg_dialogue_turns += static_cast<double>(s.dialogue_turns.size());
    std::set<CharacterId> chars;
    for (const auto& m : s.mentions) chars.insert(m.character);
    st.avg_characters += static_cast<double>(chars.size());
  }
  const double n = static_cast<double>(stories.size());
  st.avg_tokens /= n;
  st.avg_dialogue_tokens /= n;
  st.avg_sentences /= n;
  st.avg_dialogue_turns /= n;
  st.avg_characters /= n;
  return st;
}

Json CorpusStats::to_json() const {
  return Json{{"stories", story_count},
              {"avg_tokens", avg_tokens},
              {"avg_dialogue_tokens", avg_dialogue_tokens},
              {"avg_sentences", avg_sentences},
              {"avg_dialogue_turns", avg_dialogue_turns},
              {"avg_characters", avg_characters}};
}

std::string CorpusStats::table() const {
  const std::pair<const char*, double> rows[] = {
      {"Avg. #Token", avg_tokens},
      {"Avg. #Dialogue Token", avg_dialogue_tokens},
      {"Avg. #Sentence", avg_sentences},
      {"Avg. #Dialogue Turn", avg_dialogue_turns},
      {"Avg. #Character", avg_characters},
  };
  std::string out;
  char line[96];
  std::snprintf(line, sizeof line, "%-22s %10zu\n", "#Story", story_count);
  out += line;
  for (const auto& [name, value] : rows) {
    std::snprintf(line, sizeof line, "%-22s %10.2f\n", name, value);
    out += line;
  }
  return out;
}

}  // namespace charadial::corpus
