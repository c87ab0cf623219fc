#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "charadial/corpus/story.hpp"

namespace charadial::corpus {

inline constexpr std::size_t kProtectedPrefix = 50;
inline constexpr std::size_t kProtectedSuffix = 30;
inline constexpr std::size_t kMinCharacters = 5;

struct DialGenExample {
  std::string id;
  std::string story_id;
  /// Story tokens where each masked turn's content is a single [MASK].
  std::vector<TokenId> input_tokens;
  std::vector<std::size_t> masked_turn_indices;
  /// Masked turns in document order joined by <sep> (no end token).
  std::vector<TokenId> gold_output;
  /// Narration mentions re-indexed into input_tokens.
  std::vector<Mention> mentions;
  friend bool operator==(const DialGenExample&, const DialGenExample&) = default;
};

struct DialSpkExample {
  std::string id;
  std::string story_id;
  /// Story tokens with a [PROBE] inserted before each specified turn's opening quote.
  std::vector<TokenId> tokens;
  /// Distinct mentioned characters in first-mention order.
  std::vector<CharacterId> candidates;
  std::vector<std::size_t> specified_turns;
  /// Index into candidates per specified turn.
  std::vector<std::size_t> gold;
  std::vector<Mention> mentions;
  friend bool operator==(const DialSpkExample&, const DialSpkExample&) = default;
};

/// Why a story produced no example.
struct SkipRecord {
  std::string story_id;
  std::string reason;
};

/// round-half-up(ratio * turns), at least 1.
std::size_t masked_turn_count(std::size_t turn_count, double mask_ratio);

/// A turn is maskable when it starts at or after token 50 and ends at or
/// before length - 30 (quote delimiters included).
bool turn_is_maskable(const Span& turn, std::size_t story_length);

struct DialGenOptions {
  double mask_ratio = 0.30;
  std::uint64_t seed = 1;
};

std::vector<DialGenExample> build_dialgen_dataset(const std::vector<Story>& stories,
                                                  const DialGenOptions& options,
                                                  std::vector<SkipRecord>* skipped = nullptr);

enum class SpeakerLabels { gold, attributed, prefer_gold };

struct DialSpkOptions {
  double probe_ratio = 0.4;
  std::uint64_t seed = 1;
  SpeakerLabels labels = SpeakerLabels::prefer_gold;
};

std::vector<DialSpkExample> build_dialspk_dataset(const std::vector<Story>& stories,
                                                  const DialSpkOptions& options,
                                                  std::vector<SkipRecord>* skipped = nullptr);

/// Positions of every [PROBE] token.
std::vector<std::size_t> probe_positions(const std::vector<TokenId>& tokens);
/// Positions of every [MASK] token.
std::vector<std::size_t> mask_positions(const std::vector<TokenId>& tokens);

/// Splits <sep>-joined output into turns.
std::vector<std::vector<TokenId>> split_turns(const std::vector<TokenId>& output);

/// Replaces each [MASK] (in order) with the given turn contents.
std::vector<TokenId> fill_masks(const std::vector<TokenId>& input,
                                const std::vector<std::vector<TokenId>>& turns);

Json to_json(const DialGenExample& ex);
DialGenExample dialgen_from_json(const Json& j);
Json to_json(const DialSpkExample& ex);
DialSpkExample dialspk_from_json(const Json& j);

/// Structural checks; returns an empty string when the example is valid.
std::string check_dialgen(const DialGenExample& ex, const Story& original);
std::string check_dialspk(const DialSpkExample& ex);

}  // namespace charadial::corpus
