#pragma once

// Small randomized examples that bypass the corpus pipeline, for gradient
// checks and model property tests.

#include <algorithm>
#include <numeric>
#include <random>

#include "charadial/corpus/datasets.hpp"
#include "charadial/model/config.hpp"

namespace charadial::testing {

inline model::ModelConfig tiny_config(model::Task task, model::Variant variant, std::size_t vocab = 24) {
  model::ModelConfig c;
  c.task = task;
  c.variant = variant;
  c.vocab_size = vocab;
  c.model_dim = 8;
  c.layers_encoder = 1;
  c.layers_decoder = 1;
  c.character_encoder_layers = 1;
  c.attention_heads = 2;
  c.feedforward_dim = 16;
  c.max_sequence_length = 40;
  return c;
}

inline corpus::TokenId random_word(std::mt19937_64& rng, std::size_t vocab) {
  std::uniform_int_distribution<corpus::TokenId> d(corpus::special::kCount, static_cast<corpus::TokenId>(vocab - 1));
  return d(rng);
}

/// Random token body of length `len` with one single-token mention per
/// character (K of them) at distinct positions not in `reserved`.
inline std::vector<corpus::Mention> scatter_mentions(std::size_t len, std::size_t k,
                                                     const std::vector<std::size_t>& reserved,
                                                     std::mt19937_64& rng) {
  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < len; ++i)
    if (std::find(reserved.begin(), reserved.end(), i) == reserved.end()) free.push_back(i);
  std::shuffle(free.begin(), free.end(), rng);
  // Two mentions for the first character when room allows, so pooling
  // averages more than one state.
  const std::size_t extra = free.size() > k ? 1 : 0;
  free.resize(k + extra);
  std::vector<std::size_t> first(free.begin(), free.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(first.begin(), first.end());
  std::vector<corpus::Mention> out;
  for (std::size_t c = 0; c < k; ++c)
    out.push_back({static_cast<corpus::CharacterId>(c), {first[c], first[c] + 1}});
  if (extra && free.back() > first[0]) out.push_back({0, {free.back(), free.back() + 1}});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.span.start < b.span.start; });
  return out;
}

inline corpus::DialGenExample random_dialgen(std::mt19937_64& rng, std::size_t vocab, std::size_t len,
                                             std::size_t k, std::size_t masks = 2) {
  corpus::DialGenExample ex;
  ex.id = ex.story_id = "rand";
  ex.input_tokens.resize(len);
  for (auto& t : ex.input_tokens) t = random_word(rng, vocab);
  std::vector<std::size_t> slots(len);
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  std::shuffle(slots.begin(), slots.end(), rng);
  slots.resize(masks);
  for (auto p : slots) ex.input_tokens[p] = corpus::special::kMask;
  ex.mentions = scatter_mentions(len, k, slots, rng);
  for (std::size_t m = 0; m < masks; ++m) {
    ex.masked_turn_indices.push_back(m);
    if (m) ex.gold_output.push_back(corpus::special::kSep);
    const std::size_t turn_len = 1 + rng() % 3;
    for (std::size_t i = 0; i < turn_len; ++i) ex.gold_output.push_back(random_word(rng, vocab));
  }
  return ex;
}

inline corpus::DialSpkExample random_dialspk(std::mt19937_64& rng, std::size_t vocab, std::size_t len,
                                             std::size_t k, std::size_t probes = 2) {
  corpus::DialSpkExample ex;
  ex.id = ex.story_id = "rand";
  ex.tokens.resize(len);
  for (auto& t : ex.tokens) t = random_word(rng, vocab);
  std::vector<std::size_t> slots(len);
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  std::shuffle(slots.begin(), slots.end(), rng);
  slots.resize(probes);
  for (auto p : slots) ex.tokens[p] = corpus::special::kProbe;
  ex.mentions = scatter_mentions(len, k, slots, rng);
  for (std::size_t c = 0; c < k; ++c) ex.candidates.push_back(static_cast<corpus::CharacterId>(c));
  for (std::size_t m = 0; m < probes; ++m) {
    ex.specified_turns.push_back(m);
    ex.gold.push_back(rng() % k);
  }
  return ex;
}

}  // namespace charadial::testing
