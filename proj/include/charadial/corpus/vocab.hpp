#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "charadial/common/io.hpp"

namespace charadial::corpus {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kStart = 2;
inline constexpr TokenId kEnd = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kProbe = 5;
inline constexpr TokenId kSep = 6;
inline constexpr TokenId kOpenQuote = 7;
inline constexpr TokenId kCloseQuote = 8;
inline constexpr TokenId kCount = 9;
}  // namespace special

/// Surface forms of the special tokens, indexed by id.
std::span<const std::string_view> special_token_names();

/// Whitespace + punctuation splitting. Curly quotes map to the open/close
/// quote tokens; straight double quotes alternate open/close.
std::vector<std::string> tokenize(std::string_view text);

bool is_sentence_final(std::string_view token);

class Vocabulary {
 public:
  Vocabulary();

  /// Specials first, then corpus tokens by descending frequency (ties broken
  /// lexicographically).
  static Vocabulary build(const std::vector<std::vector<std::string>>& documents);

  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }

  std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const TokenId> ids) const;
  std::string detokenize(std::span<const TokenId> ids) const;
  bool is_sentence_final(TokenId id) const;

  Json to_json() const;
  static Vocabulary from_json(const Json& j);

 private:
  void push(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace charadial::corpus
