#include "charadial/corpus/vocab.hpp"

#include <algorithm>
#include <array>
#include <map>

namespace charadial::corpus {

namespace {

constexpr std::array<std::string_view, special::kCount> kSpecialNames = {
    "<pad>", "<unk>", "<s>", "</s>", "[MASK]", "[PROBE]", "<sep>", "“", "”"};

constexpr std::string_view kOpenCurly = "“";
constexpr std::string_view kCloseCurly = "”";
constexpr std::string_view kPunctuation = ".,!?:;";

}  // namespace

std::span<const std::string_view> special_token_names() { return kSpecialNames; }

bool is_sentence_final(std::string_view token) {
  return token == "." || token == "!" || token == "?";
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  bool inside_straight_quote = false;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    const char c = text[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      flush();
      ++i;
    } else if (text.substr(i, kOpenCurly.size()) == kOpenCurly) {
      flush();
      out.emplace_back(kOpenCurly);
      i += kOpenCurly.size();
    } else if (text.substr(i, kCloseCurly.size()) == kCloseCurly) {
      flush();
      out.emplace_back(kCloseCurly);
      i += kCloseCurly.size();
    } else if (c == '"') {
      flush();
      out.emplace_back(inside_straight_quote ? kCloseCurly : kOpenCurly);
      inside_straight_quote = !inside_straight_quote;
      ++i;
    } else if (kPunctuation.find(c) != std::string_view::npos) {
      flush();
      out.emplace_back(1, c);
      ++i;
    } else {
      current.push_back(c);
      ++i;
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() {
  for (auto name : kSpecialNames) push(std::string(name));
}

void Vocabulary::push(std::string token) {
  index_.emplace(token, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& documents) {
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : documents)
    for (const auto& tok : doc) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (auto& [tok, n] : ordered) {
    if (!vocab.contains(tok)) vocab.push(tok);
  }
  return vocab;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? special::kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(token(i));
  return out;
}

std::string Vocabulary::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (auto i : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(i);
  }
  return out;
}

bool Vocabulary::is_sentence_final(TokenId id) const {
  return id >= 0 && static_cast<std::size_t>(id) < tokens_.size() &&
         corpus::is_sentence_final(tokens_[static_cast<std::size_t>(id)]);
}

Json Vocabulary::to_json() const { return Json{{"tokens", tokens_}}; }

Vocabulary Vocabulary::from_json(const Json& j) {
  const auto tokens = j.at("tokens").get<std::vector<std::string>>();
  if (tokens.size() < special::kCount) throw DataError("vocabulary is missing special tokens");
  for (std::size_t i = 0; i < special::kCount; ++i) {
    if (tokens[i] != kSpecialNames[i]) {
      throw DataError("vocabulary special token " + std::to_string(i) + " is '" + tokens[i] +
                      "', expected '" + std::string(kSpecialNames[i]) + "'");
    }
  }
  Vocabulary vocab;
  for (std::size_t i = special::kCount; i < tokens.size(); ++i) {
    if (vocab.contains(tokens[i])) throw DataError("duplicate vocabulary token: " + tokens[i]);
    vocab.push(tokens[i]);
  }
  return vocab;
}

}  // namespace charadial::corpus
