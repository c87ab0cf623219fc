#include "charadial/corpus/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

namespace charadial::corpus {

namespace {

std::mt19937_64 story_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{seed, static_cast<std::uint64_t>(index)};
  return std::mt19937_64(seq);
}

std::vector<std::size_t> sample_sorted(std::vector<std::size_t> pool, std::size_t count,
                                       std::mt19937_64& rng) {
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Maps an original token position to its position after edits, given the
/// sorted list of (original position, delta) edits that apply before it.
struct Shift {
  std::vector<std::pair<std::size_t, std::ptrdiff_t>> edits;
  std::size_t operator()(std::size_t pos) const {
    std::ptrdiff_t delta = 0;
    for (const auto& [at, d] : edits) {
      if (at <= pos) delta += d;
    }
    return static_cast<std::size_t>(static_cast<std::ptrdiff_t>(pos) + delta);
  }
};

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

Json mentions_json(const std::vector<Mention>& mentions) {
  Json out = Json::array();
  for (const auto& m : mentions) out.push_back({m.character, m.span.start, m.span.end});
  return out;
}

std::vector<Mention> mentions_from(const Json& j) {
  std::vector<Mention> out;
  for (const auto& m : j) {
    out.push_back({m.at(0).get<CharacterId>(), {m.at(1).get<std::size_t>(), m.at(2).get<std::size_t>()}});
  }
  return out;
}

}  // namespace

std::size_t masked_turn_count(std::size_t turn_count, double mask_ratio) {
  // small epsilon so 0.3 * 5 = 1.4999999999999998 rounds like 1.5 would not
  return std::max<std::size_t>(1, round_half_up(mask_ratio * static_cast<double>(turn_count) + 1e-9));
}

bool turn_is_maskable(const Span& turn, std::size_t story_length) {
  if (turn.start == 0) return false;
  const std::size_t open_quote = turn.start - 1;
  const std::size_t after_close = turn.end + 1;
  return open_quote >= kProtectedPrefix && story_length >= kProtectedSuffix &&
         after_close <= story_length - kProtectedSuffix;
}

std::vector<DialGenExample> build_dialgen_dataset(const std::vector<Story>& stories,
                                                  const DialGenOptions& options,
                                                  std::vector<SkipRecord>* skipped) {
  if (options.mask_ratio <= 0.0 || options.mask_ratio > 1.0) {
    throw std::invalid_argument("mask_ratio must lie in (0, 1]");
  }
  auto skip = [&](const Story& s, std::string reason) {
    if (skipped) skipped->push_back({s.id, std::move(reason)});
  };

  std::vector<DialGenExample> out;
  for (std::size_t idx = 0; idx < stories.size(); ++idx) {
    const Story& story = stories[idx];
    const std::size_t need = masked_turn_count(story.dialogue_turns.size(), options.mask_ratio);
    std::vector<std::size_t> maskable;
    for (std::size_t t = 0; t < story.dialogue_turns.size(); ++t) {
      if (turn_is_maskable(story.dialogue_turns[t], story.tokens.size())) maskable.push_back(t);
    }
    if (maskable.empty()) {
      skip(story, "no maskable turn outside the protected first-50/last-30 tokens");
      continue;
    }
    if (maskable.size() < need) {
      skip(story, "only " + std::to_string(maskable.size()) + " maskable turns, " +
                      std::to_string(need) + " required");
      continue;
    }

    auto rng = story_rng(options.seed, idx);
    const auto chosen = sample_sorted(maskable, need, rng);

    DialGenExample ex;
    ex.id = story.id + "/dialgen";
    ex.story_id = story.id;
    ex.masked_turn_indices = chosen;
    Shift shift;
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      const Span& turn = story.dialogue_turns[chosen[k]];
      ex.input_tokens.insert(ex.input_tokens.end(), story.tokens.begin() + static_cast<std::ptrdiff_t>(cursor),
                             story.tokens.begin() + static_cast<std::ptrdiff_t>(turn.start));
      ex.input_tokens.push_back(special::kMask);
      cursor = turn.end;
      shift.edits.emplace_back(turn.end, 1 - static_cast<std::ptrdiff_t>(turn.length()));
      if (k > 0) ex.gold_output.push_back(special::kSep);
      ex.gold_output.insert(ex.gold_output.end(), story.tokens.begin() + static_cast<std::ptrdiff_t>(turn.start),
                            story.tokens.begin() + static_cast<std::ptrdiff_t>(turn.end));
    }
    ex.input_tokens.insert(ex.input_tokens.end(), story.tokens.begin() + static_cast<std::ptrdiff_t>(cursor),
                           story.tokens.end());
    for (const auto& m : story.mentions) {
      ex.mentions.push_back({m.character, {shift(m.span.start), shift(m.span.start) + m.span.length()}});
    }
    if (characters_in_order(ex.mentions).size() < kMinCharacters) {
      skip(story, "masked input mentions fewer than 5 characters");
      continue;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<DialSpkExample> build_dialspk_dataset(const std::vector<Story>& stories,
                                                  const DialSpkOptions& options,
                                                  std::vector<SkipRecord>* skipped) {
  if (options.probe_ratio <= 0.0 || options.probe_ratio > 1.0) {
    throw std::invalid_argument("probe_ratio must lie in (0, 1]");
  }
  auto skip = [&](const Story& s, std::string reason) {
    if (skipped) skipped->push_back({s.id, std::move(reason)});
  };

  std::vector<DialSpkExample> out;
  for (std::size_t idx = 0; idx < stories.size(); ++idx) {
    const Story& story = stories[idx];
    const SpeakerMap* speakers = nullptr;
    switch (options.labels) {
      case SpeakerLabels::gold:
        if (story.gold_speakers) speakers = &*story.gold_speakers;
        break;
      case SpeakerLabels::attributed:
        if (story.attributed_speakers) speakers = &*story.attributed_speakers;
        break;
      case SpeakerLabels::prefer_gold:
        speakers = story.gold_speakers ? &*story.gold_speakers
                   : story.attributed_speakers ? &*story.attributed_speakers
                                               : nullptr;
        break;
    }
    if (speakers == nullptr) {
      skip(story, "no speaker labels");
      continue;
    }

    DialSpkExample ex;
    ex.id = story.id + "/dialspk";
    ex.story_id = story.id;
    ex.candidates = characters_in_order(story.mentions);
    if (ex.candidates.size() < 2) {
      skip(story, "fewer than 2 candidate characters");
      continue;
    }

    std::vector<std::size_t> eligible;
    for (std::size_t t = 0; t < story.dialogue_turns.size(); ++t) {
      auto it = speakers->find(t);
      if (it == speakers->end() || it->second == kUnknownSpeaker) continue;
      if (std::find(ex.candidates.begin(), ex.candidates.end(), it->second) == ex.candidates.end()) {
        throw std::logic_error("story " + story.id + ": speaker of turn " + std::to_string(t) +
                               " is not a mentioned character");
      }
      eligible.push_back(t);
    }
    if (eligible.empty()) {
      skip(story, "no turn with a known speaker");
      continue;
    }

    const std::size_t m = std::clamp<std::size_t>(
        masked_turn_count(eligible.size(), options.probe_ratio), 1, eligible.size());
    auto rng = story_rng(options.seed, idx);
    ex.specified_turns = sample_sorted(eligible, m, rng);

    Shift shift;
    std::size_t cursor = 0;
    for (auto t : ex.specified_turns) {
      const std::size_t open_quote = story.dialogue_turns[t].start - 1;
      ex.tokens.insert(ex.tokens.end(), story.tokens.begin() + static_cast<std::ptrdiff_t>(cursor),
                       story.tokens.begin() + static_cast<std::ptrdiff_t>(open_quote));
      ex.tokens.push_back(special::kProbe);
      cursor = open_quote;
      shift.edits.emplace_back(open_quote, 1);
      const CharacterId who = speakers->at(t);
      ex.gold.push_back(static_cast<std::size_t>(
          std::find(ex.candidates.begin(), ex.candidates.end(), who) - ex.candidates.begin()));
    }
    ex.tokens.insert(ex.tokens.end(), story.tokens.begin() + static_cast<std::ptrdiff_t>(cursor),
                     story.tokens.end());
    for (const auto& mention : story.mentions) {
      const auto s = shift(mention.span.start);
      ex.mentions.push_back({mention.character, {s, s + mention.span.length()}});
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<std::size_t> probe_positions(const std::vector<TokenId>& tokens) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] == special::kProbe) out.push_back(i);
  return out;
}

std::vector<std::size_t> mask_positions(const std::vector<TokenId>& tokens) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] == special::kMask) out.push_back(i);
  return out;
}

std::vector<std::vector<TokenId>> split_turns(const std::vector<TokenId>& output) {
  std::vector<std::vector<TokenId>> turns(1);
  for (auto tok : output) {
    if (tok == special::kSep) {
      turns.emplace_back();
    } else {
      turns.back().push_back(tok);
    }
  }
  return turns;
}

std::vector<TokenId> fill_masks(const std::vector<TokenId>& input,
                                const std::vector<std::vector<TokenId>>& turns) {
  std::vector<TokenId> out;
  std::size_t next = 0;
  for (auto tok : input) {
    if (tok == special::kMask) {
      if (next < turns.size()) out.insert(out.end(), turns[next].begin(), turns[next].end());
      ++next;
    } else {
      out.push_back(tok);
    }
  }
  return out;
}

Json to_json(const DialGenExample& ex) {
  return Json{{"id", ex.id},
              {"story_id", ex.story_id},
              {"input_tokens", ex.input_tokens},
              {"masked_turn_indices", ex.masked_turn_indices},
              {"gold_output", ex.gold_output},
              {"mentions", mentions_json(ex.mentions)}};
}

DialGenExample dialgen_from_json(const Json& j) {
  DialGenExample ex;
  ex.id = j.at("id").get<std::string>();
  ex.story_id = j.at("story_id").get<std::string>();
  ex.input_tokens = j.at("input_tokens").get<std::vector<TokenId>>();
  ex.masked_turn_indices = j.at("masked_turn_indices").get<std::vector<std::size_t>>();
  ex.gold_output = j.at("gold_output").get<std::vector<TokenId>>();
  ex.mentions = mentions_from(j.at("mentions"));
  return ex;
}

Json to_json(const DialSpkExample& ex) {
  return Json{{"id", ex.id},
              {"story_id", ex.story_id},
              {"tokens", ex.tokens},
              {"candidates", ex.candidates},
              {"specified_turns", ex.specified_turns},
              {"gold", ex.gold},
              {"mentions", mentions_json(ex.mentions)}};
}

DialSpkExample dialspk_from_json(const Json& j) {
  DialSpkExample ex;
  ex.id = j.at("id").get<std::string>();
  ex.story_id = j.at("story_id").get<std::string>();
  ex.tokens = j.at("tokens").get<std::vector<TokenId>>();
  ex.candidates = j.at("candidates").get<std::vector<CharacterId>>();
  ex.specified_turns = j.at("specified_turns").get<std::vector<std::size_t>>();
  ex.gold = j.at("gold").get<std::vector<std::size_t>>();
  ex.mentions = mentions_from(j.at("mentions"));
  const auto problem = check_dialspk(ex);
  if (!problem.empty()) throw DataError("example " + ex.id + ": " + problem);
  return ex;
}

std::string check_dialgen(const DialGenExample& ex, const Story& original) {
  const auto masks = mask_positions(ex.input_tokens);
  const auto gold_turns = split_turns(ex.gold_output);
  if (masks.size() != ex.masked_turn_indices.size()) return "placeholder count differs from masked turns";
  if (gold_turns.size() != masks.size()) return "placeholder count differs from gold turn count";
  for (auto t : ex.masked_turn_indices) {
    if (t >= original.dialogue_turns.size()) return "masked turn index out of range";
    if (!turn_is_maskable(original.dialogue_turns[t], original.tokens.size())) {
      return "turn " + std::to_string(t) + " lies in a protected zone";
    }
  }
  if (fill_masks(ex.input_tokens, gold_turns) != original.tokens) {
    return "filling gold turns does not reproduce the story";
  }
  if (characters_in_order(ex.mentions).size() < kMinCharacters) return "fewer than 5 characters";
  for (const auto& m : ex.mentions) {
    if (m.span.end > ex.input_tokens.size()) return "mention out of range";
  }
  return {};
}

std::string check_dialspk(const DialSpkExample& ex) {
  const std::size_t k = ex.candidates.size();
  if (k < 2) return "fewer than 2 candidates";
  if (std::set<CharacterId>(ex.candidates.begin(), ex.candidates.end()).size() != k) {
    return "duplicate candidates";
  }
  if (ex.specified_turns.empty()) return "no specified turns";
  if (ex.gold.size() != ex.specified_turns.size()) return "gold count differs from specified turns";
  for (auto g : ex.gold)
    if (g >= k) return "gold index " + std::to_string(g) + " outside candidate list";
  const auto probes = probe_positions(ex.tokens);
  if (probes.size() != ex.specified_turns.size()) return "probe count differs from specified turns";
  for (auto p : probes) {
    if (p + 1 >= ex.tokens.size() || ex.tokens[p + 1] != special::kOpenQuote) {
      return "probe at " + std::to_string(p) + " is not followed by an opening quote";
    }
  }
  for (const auto& m : ex.mentions) {
    if (m.span.end > ex.tokens.size()) return "mention out of range";
    if (std::find(ex.candidates.begin(), ex.candidates.end(), m.character) == ex.candidates.end()) {
      return "mention of a non-candidate character";
    }
  }
  return {};
}

}  // namespace charadial::corpus
