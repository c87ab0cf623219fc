#pragma once

#include <string>
#include <vector>

#include "charadial/corpus/annotate.hpp"
#include "charadial/corpus/generator.hpp"

namespace charadial::testing {

/// A small hand-written world: fixed names plus whatever words the texts use.
struct TextWorld {
  corpus::CharacterLexicon lexicon;
  corpus::Vocabulary vocab;

  TextWorld(const std::vector<std::string>& names, const std::vector<std::string>& texts) {
    std::vector<corpus::CharacterEntry> entries;
    std::vector<std::vector<std::string>> docs{{".", ",", "!", "?", ":", ";"}};
    for (std::size_t i = 0; i < names.size(); ++i) {
      entries.push_back({static_cast<corpus::CharacterId>(i), names[i], {}});
      docs.push_back(corpus::tokenize(names[i]));
    }
    for (const auto& t : texts) docs.push_back(corpus::tokenize(t));
    lexicon = corpus::CharacterLexicon(entries);
    vocab = corpus::Vocabulary::build(docs);
  }

  corpus::Story story(const std::string& text, const std::string& id = "s") const {
    corpus::Story s;
    s.id = id;
    s.tokens = vocab.encode(corpus::tokenize(text));
    return corpus::annotate_story(std::move(s), lexicon, vocab);
  }
};

inline corpus::GeneratedCorpus small_corpus(std::size_t stories, std::uint64_t seed = 7) {
  corpus::GeneratorConfig config;
  config.story_count = stories;
  config.seed = seed;
  return corpus::generate_synthetic_corpus(config);
}

/// Generated stories after running the annotator over them.
inline std::vector<corpus::Story> annotated(const corpus::GeneratedCorpus& c) {
  std::vector<corpus::Story> out;
  for (const auto& s : c.stories) out.push_back(corpus::annotate_story(s, c.lexicon, c.vocab));
  return out;
}

}  // namespace charadial::testing
