#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "charadial/eval/metrics.hpp"
#include "charadial/corpus/story.hpp"
#include "charadial/numerics/parameters.hpp"

namespace charadial::eval {

/// Story tokens with dialogue-turn contents permuted among the turn slots,
/// narration untouched. `permutation[i]` is the turn whose content fills
/// slot i.
std::vector<TokenId> permute_turns(const corpus::Story& story, const std::vector<std::size_t>& permutation);

/// Uniform random derangement of n >= 2 items (rejection sampling).
std::vector<std::size_t> random_derangement(std::size_t n, std::mt19937_64& rng);

/// One original (label 1) and one shuffled copy (label 0) per story with at
/// least two turns; shorter stories are skipped.
struct CoherencePair {
  std::string story_id;
  std::vector<TokenId> original;
  std::vector<TokenId> shuffled;
};
std::vector<CoherencePair> coherence_pairs(const std::vector<corpus::Story>& stories, std::uint64_t seed);

struct CoherenceConfig {
  std::size_t embed_dim = 32;
  std::size_t channels = 64;
  std::size_t window = 9;  // odd; tokens seen by one convolution position
  std::size_t layers = 1;
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  double learning_rate = 2e-3;
  double holdout = 0.1;
  std::uint64_t seed = 1;

  Json to_json() const;
  /// Unknown keys rejected; missing keys keep defaults.
  static CoherenceConfig from_json(const Json& j);
  void validate() const;
};

/// Token embeddings, windowed convolutions with SiLU, mean and max pooling,
/// sigmoid head. Probability of "coherent".
///
/// A moved turn shows up as a local clash between a quote's wording and the
/// names around it, which a narrow window sees directly; a from-scratch
/// transformer with pooled output stayed at chance on the same data.
template <typename T>
class CoherenceClassifier {
 public:
  CoherenceClassifier(const CoherenceConfig& config, std::size_t vocab_size);

  double probability(std::span<const TokenId> tokens) const;
  /// Strictly above 0.5 counts as coherent.
  bool coherent(std::span<const TokenId> tokens) const { return probability(tokens) > 0.5; }
  numerics::Tensor<T> logit(std::span<const TokenId> tokens) const;

  numerics::ParameterStore<T>& parameters() { return params_; }
  const CoherenceConfig& config() const { return config_; }
  std::size_t vocab_size() const { return vocab_size_; }

  void save(const std::filesystem::path& path) const;
  static CoherenceClassifier load(const std::filesystem::path& path);

  /// Held-out accuracy measured during training (pairs split by story).
  double holdout_accuracy = 0.0;

 private:
  numerics::Tensor<T> convolve(const numerics::Tensor<T>& x, std::size_t layer) const;

  CoherenceConfig config_;
  std::size_t vocab_size_;
  numerics::ParameterStore<T> params_;
};

template <typename T>
CoherenceClassifier<T> train_coherence_classifier(const std::vector<corpus::Story>& stories,
                                                  std::size_t vocab_size, const CoherenceConfig& config);

/// Share of token sequences the classifier marks as coherent.
template <typename T>
CoherenceTally coherence_score(const CoherenceClassifier<T>& classifier,
                               const std::vector<std::vector<TokenId>>& filled_stories);

extern template class CoherenceClassifier<float>;
extern template class CoherenceClassifier<double>;

}  // namespace charadial::eval
