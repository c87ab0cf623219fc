#include "charadial/corpus/generator.hpp"

#include <algorithm>
#include <array>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace charadial::corpus {

namespace {

constexpr std::array<std::string_view, 40> kNamePool = {
    "Alice",  "Bob",   "Carol", "Dave",  "Erin",   "Frank",   "Grace",  "Heidi",
    "Ivan",   "Judy",  "Mallory", "Niaj", "Olivia", "Peggy",  "Rupert", "Sybil",
    "Trent",  "Uma",   "Victor", "Wendy", "Xavier", "Yara",   "Ann",    "Ann Lee",
    "Bruno",  "Clara", "Dmitri", "Elena", "Felix",  "Gwen",   "Hugo",   "Iris",
    "Jonas",  "Kira",  "Leo",   "Mona",  "Nils",   "Opal",    "Pavel",  "Quinn"};

constexpr std::array<std::string_view, 20> kOnsets = {"ba", "ko", "mi", "ru", "se", "ta", "vo",
                                                      "zi", "pe", "lu", "da", "fo", "gi", "ha",
                                                      "ju", "ne", "qi", "wa", "xo", "ye"};
constexpr std::array<std::string_view, 20> kCodas = {"rn", "lk", "mp", "sh", "th", "nd", "rk",
                                                     "st", "ng", "ft", "zz", "lv", "rd", "ck",
                                                     "sp", "mb", "nt", "lt", "rp", "gh"};

constexpr std::array<std::string_view, 12> kPlaces = {
    "river", "market", "inn", "garden", "bridge", "temple",
    "hall", "forest", "gate", "kitchen", "courtyard", "harbor"};

constexpr std::array<std::string_view, 20> kCommonWords = {
    "i", "you", "we", "it", "is", "the", "a", "will", "not", "that",
    "this", "do", "go", "now", "here", "there", "come", "know", "think", "must"};

constexpr std::array<std::string_view, 6> kSpeechVerbs = {"said", "asked", "replied",
                                                          "whispered", "shouted", "answered"};

constexpr std::array<std::string_view, 8> kFillers = {
    "The wind was cold .", "Nobody spoke for a while .", "Rain began to fall .",
    "The candle flickered .", "A dog barked in the distance .", "The room fell silent .",
    "Night came slowly .", "The bells rang twice ."};

constexpr std::array<std::string_view, 3> kFinalPunct = {".", "!", "?"};

std::string style_word(std::size_t k) {
  std::string w(kOnsets[k % kOnsets.size()]);
  w += kCodas[(k / kOnsets.size()) % kCodas.size()];
  if (k >= kOnsets.size() * kCodas.size()) w += std::to_string(k / (kOnsets.size() * kCodas.size()));
  return w;
}

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

template <typename Range>
const auto& pick(const Range& r, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, std::size(r) - 1);
  return r[d(rng)];
}

std::size_t uniform_in(std::pair<std::size_t, std::size_t> range, std::mt19937_64& rng) {
  return std::uniform_int_distribution<std::size_t>(range.first, range.second)(rng);
}

double unit(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

enum class Pattern { pre, post, implicit };

struct DraftStory {
  std::vector<std::string> words;
  std::vector<Span> turns;
  std::vector<Mention> mentions;
  SpeakerMap speakers;
};

class StoryBuilder {
 public:
  StoryBuilder(const GeneratorConfig& config, const CharacterLexicon& lexicon,
               std::mt19937_64& rng)
      : config_(config), lexicon_(lexicon), rng_(rng) {}

  DraftStory build() {
    draft_ = {};
    last_implicit_ = false;

    const std::size_t cast_size = uniform_in(config_.characters_per_story, rng_);
    std::vector<CharacterId> everyone(lexicon_.size());
    for (std::size_t i = 0; i < everyone.size(); ++i) everyone[i] = static_cast<CharacterId>(i);
    std::shuffle(everyone.begin(), everyone.end(), rng_);
    cast_.assign(everyone.begin(), everyone.begin() + static_cast<std::ptrdiff_t>(cast_size));

    persona_.clear();
    if (config_.persona_binding == PersonaBinding::story) {
      std::vector<CharacterId> styles(lexicon_.size());
      for (std::size_t i = 0; i < styles.size(); ++i) styles[i] = static_cast<CharacterId>(i);
      std::shuffle(styles.begin(), styles.end(), rng_);
      for (std::size_t i = 0; i < cast_.size(); ++i) persona_[cast_[i]] = styles[i];
    } else {
      for (auto c : cast_) persona_[c] = c;
    }

    intro();
    const std::size_t total_turns = uniform_in(config_.turns_per_story, rng_);
    std::size_t emitted = 0;
    while (emitted < total_turns) {
      const std::size_t remaining = total_turns - emitted;
      std::size_t scene_turns = std::min<std::size_t>(remaining, 2 + rng_() % 3);
      if (remaining - scene_turns == 1) scene_turns += 1;  // no orphan single-turn scene
      scene(scene_turns);
      emitted += scene_turns;
    }
    ending();
    return std::move(draft_);
  }

 private:
  void word(std::string_view w) { draft_.words.emplace_back(w); }

  void name(CharacterId c) {
    const auto parts = words_of(lexicon_.at(c).name);
    const std::size_t start = draft_.words.size();
    for (const auto& p : parts) draft_.words.push_back(p);
    draft_.mentions.push_back({c, {start, draft_.words.size()}});
  }

  void text(std::string_view t) {
    for (const auto& w : words_of(t)) draft_.words.push_back(w);
  }

  /// Narration about to start with a name must not be read as the speaker of
  /// a preceding unattributed turn.
  void guard_implicit() {
    if (last_implicit_) text(pick(kFillers, rng_));
    last_implicit_ = false;
  }

  void intro() {
    std::vector<CharacterId> order = cast_;
    std::shuffle(order.begin(), order.end(), rng_);
    word("Long");
    word("ago");
    word(",");
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i + 1 == order.size()) {
        word("and");
      } else if (i > 0) {
        word(",");
      }
      name(order[i]);
    }
    text("lived near the");
    word(pick(kPlaces, rng_));
    word(".");
    text(pick(kFillers, rng_));
  }

  void scene(std::size_t turns) {
    std::vector<CharacterId> pair = cast_;
    std::shuffle(pair.begin(), pair.end(), rng_);
    const CharacterId a = pair[0];
    const CharacterId b = pair[1];

    guard_implicit();
    switch (rng_() % 4) {
      case 0: name(a); text("met"); name(b); text("near the"); break;
      case 1: name(a); text("and"); name(b); text("sat by the"); break;
      case 2: name(a); text("walked with"); name(b); text("to the"); break;
      default: name(a); text("waited for"); name(b); text("at the"); break;
    }
    word(pick(kPlaces, rng_));
    word(".");

    CharacterId speaker = (rng_() % 2) ? a : b;
    for (std::size_t t = 0; t < turns; ++t) {
      const CharacterId listener = speaker == a ? b : a;
      turn(speaker, listener, choose_pattern(t == 0));
      speaker = listener;
    }
  }

  Pattern choose_pattern(bool scene_start) {
    const auto& mix = config_.attribution;
    const double implicit = scene_start ? 0.0 : mix.implicit;
    const double r = unit(rng_) * (mix.pre + mix.post + implicit);
    if (r < mix.pre) return Pattern::pre;
    if (r < mix.pre + mix.post) return Pattern::post;
    return Pattern::implicit;
  }

  void turn(CharacterId speaker, CharacterId listener, Pattern pattern) {
    if (pattern == Pattern::pre) {
      guard_implicit();
      if (unit(rng_) < config_.distractor_rate) {
        name(speaker);
        text("turned to");
        name(listener);
        text("and said :");
      } else {
        name(speaker);
        word(pick(kSpeechVerbs, rng_));
        word(":");
      }
    }
    word("“");
    const std::size_t start = draft_.words.size();
    const auto& style = lexicon_.at(persona_.at(speaker)).style;
    const std::size_t length = uniform_in(config_.turn_length, rng_);
    for (std::size_t i = 0; i < length; ++i) {
      if (!style.empty() && unit(rng_) < config_.style_token_share) {
        word(pick(style, rng_));
      } else {
        word(pick(kCommonWords, rng_));
      }
    }
    word(pick(kFinalPunct, rng_));
    draft_.speakers[draft_.turns.size()] = speaker;
    draft_.turns.push_back({start, draft_.words.size()});
    word("”");
    last_implicit_ = pattern == Pattern::implicit;
    if (pattern == Pattern::post) {
      word(pick(kSpeechVerbs, rng_));
      name(speaker);
      word(".");
    }
  }

  void ending() {
    guard_implicit();
    std::vector<CharacterId> pair = cast_;
    std::shuffle(pair.begin(), pair.end(), rng_);
    text("In the end ,");
    name(pair[0]);
    text("and");
    name(pair[1]);
    text("went back to the");
    word(pick(kPlaces, rng_));
    word(".");
    text(pick(kFillers, rng_));
  }

  const GeneratorConfig& config_;
  const CharacterLexicon& lexicon_;
  std::mt19937_64& rng_;
  DraftStory draft_;
  std::vector<CharacterId> cast_;
  std::map<CharacterId, CharacterId> persona_;
  bool last_implicit_ = false;
};

CharacterLexicon make_lexicon(const GeneratorConfig& config) {
  std::vector<CharacterEntry> entries;
  const std::size_t s = config.style_vocab_size;
  for (std::size_t i = 0; i < config.lexicon_size; ++i) {
    CharacterEntry e;
    e.id = static_cast<CharacterId>(i);
    e.name = std::string(kNamePool[i]);
    // overlapping mode: consecutive characters share half of their words
    const std::size_t first = config.style_mode == StyleMode::separable ? i * s : i * ((s + 1) / 2);
    for (std::size_t k = 0; k < s; ++k) e.style.push_back(style_word(first + k));
    entries.push_back(std::move(e));
  }
  return CharacterLexicon(std::move(entries));
}

std::string_view style_mode_name(StyleMode m) {
  return m == StyleMode::separable ? "separable" : "overlapping";
}
std::string_view binding_name(PersonaBinding b) {
  return b == PersonaBinding::story ? "story" : "lexicon";
}

template <typename V>
void read_field(const Json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const Json::exception& e) {
    throw ConfigError(key, std::string("wrong type: ") + e.what());
  }
}

}  // namespace

double dialogue_ratio(const Story& story) {
  if (story.tokens.empty()) return 0.0;
  std::size_t dialogue = 0;
  for (const auto& t : story.dialogue_turns) dialogue += t.length();
  return static_cast<double>(dialogue) / static_cast<double>(story.tokens.size());
}

Json GeneratorConfig::to_json() const {
  return Json{{"seed", seed},
              {"story_count", story_count},
              {"characters_per_story", {characters_per_story.first, characters_per_story.second}},
              {"turns_per_story", {turns_per_story.first, turns_per_story.second}},
              {"dialogue_ratio", {dialogue_ratio.first, dialogue_ratio.second}},
              {"turn_length", {turn_length.first, turn_length.second}},
              {"lexicon_size", lexicon_size},
              {"style_vocab_size", style_vocab_size},
              {"style_mode", style_mode_name(style_mode)},
              {"persona_binding", binding_name(persona_binding)},
              {"style_token_share", style_token_share},
              {"attribution",
               {{"pre", attribution.pre}, {"post", attribution.post}, {"implicit", attribution.implicit}}},
              {"distractor_rate", distractor_rate},
              {"max_attempts", max_attempts}};
}

GeneratorConfig GeneratorConfig::from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "generator config must be a JSON object");
  static const std::set<std::string> known = {
      "seed", "story_count", "characters_per_story", "turns_per_story", "dialogue_ratio",
      "turn_length", "lexicon_size", "style_vocab_size", "style_mode", "persona_binding",
      "style_token_share", "attribution", "distractor_rate", "max_attempts"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError(key, "unknown setting");
  }
  GeneratorConfig c;
  read_field(j, "seed", c.seed);
  read_field(j, "story_count", c.story_count);
  read_field(j, "characters_per_story", c.characters_per_story);
  read_field(j, "turns_per_story", c.turns_per_story);
  read_field(j, "dialogue_ratio", c.dialogue_ratio);
  read_field(j, "turn_length", c.turn_length);
  read_field(j, "lexicon_size", c.lexicon_size);
  read_field(j, "style_vocab_size", c.style_vocab_size);
  read_field(j, "style_token_share", c.style_token_share);
  read_field(j, "distractor_rate", c.distractor_rate);
  read_field(j, "max_attempts", c.max_attempts);
  if (j.contains("style_mode")) {
    const auto m = j.at("style_mode").get<std::string>();
    if (m == "separable") c.style_mode = StyleMode::separable;
    else if (m == "overlapping") c.style_mode = StyleMode::overlapping;
    else throw ConfigError("style_mode", "expected 'separable' or 'overlapping', got '" + m + "'");
  }
  if (j.contains("persona_binding")) {
    const auto b = j.at("persona_binding").get<std::string>();
    if (b == "story") c.persona_binding = PersonaBinding::story;
    else if (b == "lexicon") c.persona_binding = PersonaBinding::lexicon;
    else throw ConfigError("persona_binding", "expected 'story' or 'lexicon', got '" + b + "'");
  }
  if (j.contains("attribution")) {
    const auto& a = j.at("attribution");
    for (const auto& [key, value] : a.items()) {
      if (key != "pre" && key != "post" && key != "implicit") {
        throw ConfigError("attribution." + key, "unknown setting");
      }
    }
    c.attribution.pre = a.value("pre", c.attribution.pre);
    c.attribution.post = a.value("post", c.attribution.post);
    c.attribution.implicit = a.value("implicit", c.attribution.implicit);
  }
  c.validate();
  return c;
}

void GeneratorConfig::validate() const {
  auto range = [](const char* field, auto r) {
    if (r.first > r.second) {
      throw ConfigError(field, "lower bound " + std::to_string(r.first) +
                                   " exceeds upper bound " + std::to_string(r.second));
    }
  };
  if (story_count == 0) throw ConfigError("story_count", "must be at least 1");
  range("characters_per_story", characters_per_story);
  if (characters_per_story.first < 5) {
    throw ConfigError("characters_per_story", "stories need at least 5 characters, got " +
                                                  std::to_string(characters_per_story.first));
  }
  if (lexicon_size > kNamePool.size()) {
    throw ConfigError("lexicon_size", "at most " + std::to_string(kNamePool.size()) + " names available");
  }
  if (characters_per_story.second > lexicon_size) {
    throw ConfigError("characters_per_story", "upper bound " +
                                                  std::to_string(characters_per_story.second) +
                                                  " exceeds lexicon_size " + std::to_string(lexicon_size));
  }
  range("turns_per_story", turns_per_story);
  if (turns_per_story.first < 10) {
    throw ConfigError("turns_per_story", "stories need at least 10 dialogue turns, got " +
                                             std::to_string(turns_per_story.first));
  }
  range("dialogue_ratio", dialogue_ratio);
  if (dialogue_ratio.first < 0.30 || dialogue_ratio.second > 0.50) {
    throw ConfigError("dialogue_ratio", "bounds must lie within [0.30, 0.50]");
  }
  range("turn_length", turn_length);
  if (turn_length.first == 0) throw ConfigError("turn_length", "turns need at least one token");
  if (style_vocab_size == 0) throw ConfigError("style_vocab_size", "must be at least 1");
  if (style_token_share < 0.0 || style_token_share > 1.0) {
    throw ConfigError("style_token_share", "must lie in [0, 1]");
  }
  if (distractor_rate < 0.0 || distractor_rate > 1.0) {
    throw ConfigError("distractor_rate", "must lie in [0, 1]");
  }
  if (attribution.pre < 0 || attribution.post < 0 || attribution.implicit < 0) {
    throw ConfigError("attribution", "weights must be non-negative");
  }
  if (attribution.pre + attribution.post <= 0) {
    throw ConfigError("attribution", "pre + post weight must be positive");
  }
  if (max_attempts == 0) throw ConfigError("max_attempts", "must be at least 1");
}

GeneratedCorpus generate_synthetic_corpus(const GeneratorConfig& config) {
  config.validate();
  GeneratedCorpus out;
  out.lexicon = make_lexicon(config);

  std::vector<DraftStory> drafts;
  drafts.reserve(config.story_count);
  double lowest = 1.0, highest = 0.0;
  for (std::size_t i = 0; i < config.story_count; ++i) {
    std::seed_seq seq{config.seed, static_cast<std::uint64_t>(i)};
    std::mt19937_64 rng(seq);
    StoryBuilder builder(config, out.lexicon, rng);
    bool accepted = false;
    for (std::size_t attempt = 0; attempt < config.max_attempts; ++attempt) {
      DraftStory draft = builder.build();
      std::size_t dialogue = 0;
      for (const auto& t : draft.turns) dialogue += t.length();
      const double ratio = static_cast<double>(dialogue) / static_cast<double>(draft.words.size());
      lowest = std::min(lowest, ratio);
      highest = std::max(highest, ratio);
      if (ratio >= config.dialogue_ratio.first && ratio <= config.dialogue_ratio.second) {
        drafts.push_back(std::move(draft));
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      std::ostringstream msg;
      msg << "story " << i << ": no draft within [" << config.dialogue_ratio.first << ", "
          << config.dialogue_ratio.second << "] after " << config.max_attempts
          << " attempts (observed ratios " << lowest << " to " << highest << ")";
      throw ConfigError("dialogue_ratio", msg.str());
    }
  }

  std::vector<std::vector<std::string>> documents;
  for (const auto& d : drafts) documents.push_back(d.words);
  std::vector<std::string> closed;
  for (const auto& e : out.lexicon.entries()) {
    for (const auto& w : words_of(e.name)) closed.push_back(w);
    for (const auto& w : e.style) closed.push_back(w);
  }
  for (auto w : kCommonWords) closed.emplace_back(w);
  documents.push_back(closed);
  out.vocab = Vocabulary::build(documents);

  for (std::size_t i = 0; i < drafts.size(); ++i) {
    auto& d = drafts[i];
    Story s;
    std::ostringstream id;
    id << "story-" << std::setw(6) << std::setfill('0') << i;
    s.id = id.str();
    s.tokens = out.vocab.encode(d.words);
    s.dialogue_turns = std::move(d.turns);
    s.mentions = std::move(d.mentions);
    s.gold_speakers = std::move(d.speakers);
    out.stories.push_back(std::move(s));
  }
  return out;
}

}  // namespace charadial::corpus
