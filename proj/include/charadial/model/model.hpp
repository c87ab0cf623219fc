#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "charadial/corpus/datasets.hpp"
#include "charadial/model/config.hpp"
#include "charadial/numerics/checkpoint.hpp"
#include "charadial/numerics/ops.hpp"

namespace charadial::model {

using corpus::CharacterId;
using corpus::TokenId;
using numerics::ParameterStore;
using numerics::Tensor;

/// One pooled vector per mentioned character, in first-mention order.
template <typename T>
struct CharacterBank {
  std::vector<CharacterId> characters;
  /// Encoder positions covered by each character's mentions, document order.
  std::vector<std::vector<std::size_t>> mention_index;
  Tensor<T> reps;  // (K, model_dim)

  std::size_t size() const { return characters.size(); }
};

struct DecoderStepTrace {
  std::size_t selected = 0;
  std::vector<double> scores;  // Ĥ_n · C_i for every character i
  friend bool operator==(const DecoderStepTrace&, const DecoderStepTrace&) = default;
};

/// Lowest index among the maxima.
template <typename V>
std::size_t argmax_lowest(std::span<const V> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

/// Row m holds D_m · C_k for every candidate k.
template <typename T>
Tensor<T> speaker_scores(const Tensor<T>& probe_states, const Tensor<T>& reps) {
  return numerics::matmul_nt(probe_states, reps);
}

template <typename T>
struct Decoded {
  Tensor<T> logits;  // (steps, vocab)
  std::vector<DecoderStepTrace> traces;  // empty for the baseline
};

struct GenerationSettings {
  enum class Strategy { greedy, top_k };
  Strategy strategy = Strategy::greedy;
  std::size_t top_k = 5;
  std::uint64_t seed = 1;
  /// Hard cap on emitted tokens (end token excluded).
  std::size_t max_length = 160;
};

struct Generation {
  std::vector<TokenId> tokens;  // without the end token
  /// Exactly one entry per placeholder.
  std::vector<std::vector<TokenId>> turns;
  std::vector<DecoderStepTrace> traces;
  bool truncated = false;
  /// Split turn count differed from the placeholder count.
  bool turn_count_fault = false;
};

/// Decoder input is <s> + gold; targets are gold + </s>.
std::vector<TokenId> decoder_inputs(std::span<const TokenId> gold);
std::vector<std::size_t> decoder_targets(std::span<const TokenId> gold);

template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }

  /// Dropout is active only in training mode.
  void set_training(bool training, std::uint64_t dropout_seed = 0);
  bool training() const { return training_; }
  /// Test mode: the character encoder becomes the identity, so C_i is the
  /// plain mean of mention states.
  void set_identity_character_encoder(bool identity) { identity_char_encoder_ = identity; }

  /// (T, model_dim) encoder states. Throws DataError on overlength input.
  Tensor<T> encode(std::span<const TokenId> tokens) const;

  /// Throws DataError when `order` names a character without mentions.
  CharacterBank<T> character_representations(const Tensor<T>& hidden,
                                             const std::vector<corpus::Mention>& mentions) const;
  CharacterBank<T> character_representations(const Tensor<T>& hidden,
                                             const std::vector<corpus::Mention>& mentions,
                                             const std::vector<CharacterId>& order) const;

  /// Teacher-forced pass over `inputs`. The full model needs a non-empty
  /// bank; `forced` replaces the argmax selections (one per step).
  Decoded<T> decode(const Tensor<T>& memory, const CharacterBank<T>* bank,
                    std::span<const TokenId> inputs,
                    const std::vector<std::size_t>* forced = nullptr) const;

  /// Next-token distribution after `prefix` plus the selection trace.
  std::pair<std::vector<T>, std::optional<DecoderStepTrace>> decode_step(
      const Tensor<T>& memory, const CharacterBank<T>* bank, std::span<const TokenId> prefix) const;

  Generation generate(const corpus::DialGenExample& example, const GenerationSettings& settings) const;

  /// (M, K) probe-versus-candidate scores.
  Tensor<T> speaker_logits(const corpus::DialSpkExample& example) const;
  std::vector<std::size_t> predict_speakers(const corpus::DialSpkExample& example) const;

  /// Convenience for DialGen: encoder pass plus bank (null for the baseline).
  std::pair<Tensor<T>, std::optional<CharacterBank<T>>> encode_example(
      const corpus::DialGenExample& example) const;

 private:
  struct Linear {
    Tensor<T> w, b;
  };
  struct Norm {
    Tensor<T> g, b;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct FeedForward {
    Linear in, out;
  };
  struct EncoderLayer {
    Norm ln1, ln2;
    Attention attn;
    FeedForward ff;
  };
  struct DecoderLayer {
    Norm ln1, ln2, ln3;
    Attention self_attn, cross_attn;
    FeedForward ff;
  };

  Linear add_linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
  Norm add_norm(const std::string& name, std::size_t dim);
  Attention add_attention(const std::string& name, std::mt19937_64& rng);
  FeedForward add_ff(const std::string& name, std::mt19937_64& rng);

  Tensor<T> apply(const Linear& l, const Tensor<T>& x) const;
  Tensor<T> apply(const Norm& n, const Tensor<T>& x) const;
  Tensor<T> attend(const Attention& a, const Tensor<T>& queries, const Tensor<T>& memory, bool causal) const;
  Tensor<T> apply(const FeedForward& f, const Tensor<T>& x) const;
  Tensor<T> apply(const EncoderLayer& layer, Tensor<T> x) const;
  Tensor<T> drop(const Tensor<T>& x) const;
  Tensor<T> embed(std::span<const TokenId> tokens, const Tensor<T>& positions) const;

  ModelConfig config_;
  ParameterStore<T> params_;
  bool training_ = false;
  bool identity_char_encoder_ = false;
  mutable std::mt19937_64 dropout_rng_;

  Tensor<T> token_embedding_;
  Tensor<T> encoder_positions_;
  Tensor<T> decoder_positions_;
  std::vector<EncoderLayer> encoder_;
  Norm encoder_norm_;
  std::vector<EncoderLayer> char_encoder_;
  Norm char_encoder_norm_;
  std::vector<DecoderLayer> decoder_;
  Norm decoder_norm_;
  Linear selection_;  // W_c, b_c
  Norm fusion_norm_;
  Linear output_;
  Linear speaker_;  // baseline speaker head
};

extern template class Model<float>;
extern template class Model<double>;

/// Checkpoint header carrying the model configuration.
Json model_header(const ModelConfig& config);
/// Reads and validates the configuration stored in a checkpoint header.
ModelConfig config_from_header(const Json& header);

/// Rebuilds a model from checkpoint contents; every parameter must be
/// present with the expected shape.
template <typename T>
Model<T> model_from_checkpoint(const numerics::Checkpoint<T>& checkpoint);

}  // namespace charadial::model
