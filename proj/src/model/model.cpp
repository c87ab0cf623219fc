#include "charadial/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace charadial::model {

using namespace numerics;
namespace special = corpus::special;

std::vector<TokenId> decoder_inputs(std::span<const TokenId> gold) {
  std::vector<TokenId> in{special::kStart};
  in.insert(in.end(), gold.begin(), gold.end());
  return in;
}

std::vector<std::size_t> decoder_targets(std::span<const TokenId> gold) {
  std::vector<std::size_t> out(gold.begin(), gold.end());
  out.push_back(static_cast<std::size_t>(special::kEnd));
  return out;
}

namespace {

template <typename T>
Tensor<T> uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> data(shape_size(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> sinusoidal(std::size_t length, std::size_t dim) {
  std::vector<T> data(length * dim);
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(p) * freq;
      data[p * dim + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<T>({length, dim}, std::move(data));
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

}  // namespace

template <typename T>
typename Model<T>::Linear Model<T>::add_linear(const std::string& name, std::size_t in, std::size_t out,
                                               std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return {params_.add(name + ".w", uniform<T>({in, out}, bound, rng)),
          params_.add(name + ".b", Tensor<T>::zeros({out}))};
}

template <typename T>
typename Model<T>::Norm Model<T>::add_norm(const std::string& name, std::size_t dim) {
  return {params_.add(name + ".g", Tensor<T>::full({dim}, T{1})),
          params_.add(name + ".b", Tensor<T>::zeros({dim}))};
}

template <typename T>
typename Model<T>::Attention Model<T>::add_attention(const std::string& name, std::mt19937_64& rng) {
  const auto d = config_.model_dim;
  return {add_linear(name + ".q", d, d, rng), add_linear(name + ".k", d, d, rng),
          add_linear(name + ".v", d, d, rng), add_linear(name + ".o", d, d, rng)};
}

template <typename T>
typename Model<T>::FeedForward Model<T>::add_ff(const std::string& name, std::mt19937_64& rng) {
  return {add_linear(name + ".in", config_.model_dim, config_.feedforward_dim, rng),
          add_linear(name + ".out", config_.feedforward_dim, config_.model_dim, rng)};
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto d = config_.model_dim;
  const auto v = config_.vocab_size;
  const bool full = config_.variant == Variant::full;

  token_embedding_ = params_.add("embed.token", uniform<T>({v, d}, 1.0, rng));
  encoder_positions_ = params_.add("embed.position", sinusoidal<T>(config_.max_sequence_length, d));
  for (std::size_t l = 0; l < config_.layers_encoder; ++l) {
    const std::string p = "encoder." + std::to_string(l);
    EncoderLayer layer;
    layer.ln1 = add_norm(p + ".ln1", d);
    layer.attn = add_attention(p + ".attn", rng);
    layer.ln2 = add_norm(p + ".ln2", d);
    layer.ff = add_ff(p + ".ff", rng);
    encoder_.push_back(layer);
  }
  encoder_norm_ = add_norm("encoder.ln", d);

  if (full) {
    for (std::size_t l = 0; l < config_.character_encoder_layers; ++l) {
      const std::string p = "charenc." + std::to_string(l);
      EncoderLayer layer;
      layer.ln1 = add_norm(p + ".ln1", d);
      layer.attn = add_attention(p + ".attn", rng);
      layer.ln2 = add_norm(p + ".ln2", d);
      layer.ff = add_ff(p + ".ff", rng);
      char_encoder_.push_back(layer);
    }
    char_encoder_norm_ = add_norm("charenc.ln", d);
  }

  if (config_.task == Task::dialgen) {
    decoder_positions_ = params_.add("decoder.position", sinusoidal<T>(config_.max_sequence_length, d));
    for (std::size_t l = 0; l < config_.layers_decoder; ++l) {
      const std::string p = "decoder." + std::to_string(l);
      DecoderLayer layer;
      layer.ln1 = add_norm(p + ".ln1", d);
      layer.self_attn = add_attention(p + ".self", rng);
      layer.ln2 = add_norm(p + ".ln2", d);
      layer.cross_attn = add_attention(p + ".cross", rng);
      layer.ln3 = add_norm(p + ".ln3", d);
      layer.ff = add_ff(p + ".ff", rng);
      decoder_.push_back(layer);
    }
    decoder_norm_ = add_norm("decoder.ln", d);
    const std::size_t fused = full ? 2 * d : d;
    if (full) selection_ = add_linear("select", d, d, rng);
    fusion_norm_ = add_norm("fusion.ln", fused);
    output_ = add_linear("output", fused, v, rng);
  } else if (!full) {
    speaker_ = add_linear("speaker", d, d, rng);
  }
}

template <typename T>
void Model<T>::set_training(bool training, std::uint64_t dropout_seed) {
  training_ = training;
  dropout_rng_.seed(dropout_seed);
}

template <typename T>
Tensor<T> Model<T>::apply(const Linear& l, const Tensor<T>& x) const {
  return linear(x, l.w, l.b);
}

template <typename T>
Tensor<T> Model<T>::apply(const Norm& n, const Tensor<T>& x) const {
  return layer_norm(x, n.g, n.b);
}

template <typename T>
Tensor<T> Model<T>::attend(const Attention& a, const Tensor<T>& queries, const Tensor<T>& memory,
                           bool causal) const {
  auto q = apply(a.q, queries);
  auto k = apply(a.k, memory);
  auto v = apply(a.v, memory);
  return apply(a.o, multi_head_attention(q, k, v, config_.attention_heads, causal));
}

template <typename T>
Tensor<T> Model<T>::apply(const FeedForward& f, const Tensor<T>& x) const {
  return apply(f.out, gelu(apply(f.in, x)));
}

template <typename T>
Tensor<T> Model<T>::drop(const Tensor<T>& x) const {
  if (!training_ || config_.dropout == 0.0) return x;
  return dropout(x, static_cast<T>(config_.dropout), dropout_rng_);
}

template <typename T>
Tensor<T> Model<T>::apply(const EncoderLayer& layer, Tensor<T> x) const {
  auto h = apply(layer.ln1, x);
  x = add(x, drop(attend(layer.attn, h, h, false)));
  return add(x, drop(apply(layer.ff, apply(layer.ln2, x))));
}

template <typename T>
Tensor<T> Model<T>::embed(std::span<const TokenId> tokens, const Tensor<T>& positions) const {
  if (tokens.empty()) throw DataError("cannot embed an empty token sequence");
  if (tokens.size() > config_.max_sequence_length) {
    throw DataError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_sequence_length " +
                    std::to_string(config_.max_sequence_length));
  }
  std::vector<std::size_t> ids(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= config_.vocab_size) {
      throw DataError("token id " + std::to_string(tokens[i]) + " outside vocabulary of size " +
                      std::to_string(config_.vocab_size));
    }
    ids[i] = static_cast<std::size_t>(tokens[i]);
  }
  const auto pos = iota(tokens.size());
  return drop(add(gather_rows(token_embedding_, ids), gather_rows(positions, pos)));
}

template <typename T>
Tensor<T> Model<T>::encode(std::span<const TokenId> tokens) const {
  auto x = embed(tokens, encoder_positions_);
  for (const auto& layer : encoder_) x = apply(layer, x);
  return apply(encoder_norm_, x);
}

template <typename T>
CharacterBank<T> Model<T>::character_representations(const Tensor<T>& hidden,
                                                     const std::vector<corpus::Mention>& mentions) const {
  return character_representations(hidden, mentions, corpus::characters_in_order(mentions));
}

template <typename T>
CharacterBank<T> Model<T>::character_representations(const Tensor<T>& hidden,
                                                     const std::vector<corpus::Mention>& mentions,
                                                     const std::vector<CharacterId>& order) const {
  if (config_.variant != Variant::full) throw std::logic_error("baseline model has no character encoder");
  CharacterBank<T> bank;
  bank.characters = order;
  std::map<CharacterId, std::size_t> slot;
  for (std::size_t k = 0; k < order.size(); ++k) slot[order[k]] = k;
  bank.mention_index.resize(order.size());
  for (const auto& m : mentions) {
    auto it = slot.find(m.character);
    if (it == slot.end()) continue;
    for (std::size_t p = m.span.start; p < m.span.end; ++p) {
      if (p >= hidden.rows()) {
        throw DataError("mention position " + std::to_string(p) + " outside encoded length " +
                        std::to_string(hidden.rows()));
      }
      bank.mention_index[it->second].push_back(p);
    }
  }
  std::vector<Tensor<T>> reps;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& positions = bank.mention_index[k];
    if (positions.empty()) {
      throw DataError("character " + std::to_string(order[k]) + " has no mention to pool");
    }
    std::sort(positions.begin(), positions.end());
    auto x = gather_rows(hidden, positions);
    if (!identity_char_encoder_) {
      for (const auto& layer : char_encoder_) x = apply(layer, x);
      x = apply(char_encoder_norm_, x);
    }
    reps.push_back(mean_rows(x));
  }
  if (!reps.empty()) bank.reps = concat_rows(reps);
  return bank;
}

template <typename T>
Decoded<T> Model<T>::decode(const Tensor<T>& memory, const CharacterBank<T>* bank,
                            std::span<const TokenId> inputs,
                            const std::vector<std::size_t>* forced) const {
  if (config_.task != Task::dialgen) throw std::logic_error("decode needs a DialGen model");
  const bool full = config_.variant == Variant::full;
  if (full && (bank == nullptr || bank->size() == 0)) {
    throw DataError("decoding with the character model needs a non-empty character bank");
  }
  auto x = embed(inputs, decoder_positions_);
  for (const auto& layer : decoder_) {
    auto h = apply(layer.ln1, x);
    x = add(x, drop(attend(layer.self_attn, h, h, true)));
    x = add(x, drop(attend(layer.cross_attn, apply(layer.ln2, x), memory, false)));
    x = add(x, drop(apply(layer.ff, apply(layer.ln3, x))));
  }
  auto states = apply(decoder_norm_, x);

  Decoded<T> out;
  Tensor<T> fused = states;
  if (full) {
    const std::size_t steps = states.rows();
    const std::size_t k = bank->size();
    if (forced && forced->size() != steps) {
      throw ShapeError("forced selections: expected " + std::to_string(steps) + ", got " +
                       std::to_string(forced->size()));
    }
    Tensor<T> scores;
    {
      // Selection is a hard argmax, so nothing upstream of it sees a gradient.
      NoGradGuard no_grad;
      scores = matmul_nt(apply(selection_, states), bank->reps);
    }
    std::vector<std::size_t> chosen(steps);
    out.traces.resize(steps);
    for (std::size_t n = 0; n < steps; ++n) {
      auto& trace = out.traces[n];
      trace.scores.assign(scores.data().begin() + n * k, scores.data().begin() + (n + 1) * k);
      trace.selected = forced ? (*forced)[n] : argmax_lowest<double>(trace.scores);
      if (trace.selected >= k) throw ShapeError("forced selection outside the character bank");
      chosen[n] = trace.selected;
    }
    fused = concat_cols<T>({states, gather_rows(bank->reps, chosen)});
  }
  out.logits = apply(output_, apply(fusion_norm_, silu(fused)));
  return out;
}

template <typename T>
std::pair<std::vector<T>, std::optional<DecoderStepTrace>> Model<T>::decode_step(
    const Tensor<T>& memory, const CharacterBank<T>* bank, std::span<const TokenId> prefix) const {
  NoGradGuard no_grad;
  auto decoded = decode(memory, bank, prefix);
  const std::size_t v = config_.vocab_size;
  const std::size_t last = decoded.logits.rows() - 1;
  const auto row = decoded.logits.data().subspan(last * v, v);
  std::vector<T> logits(row.begin(), row.end());
  auto probs = softmax(Tensor<T>({v}, std::move(logits)), 0);
  std::optional<DecoderStepTrace> trace;
  if (!decoded.traces.empty()) trace = decoded.traces.back();
  return {std::vector<T>(probs.data().begin(), probs.data().end()), trace};
}

template <typename T>
std::pair<Tensor<T>, std::optional<CharacterBank<T>>> Model<T>::encode_example(
    const corpus::DialGenExample& example) const {
  auto memory = encode(example.input_tokens);
  std::optional<CharacterBank<T>> bank;
  if (config_.variant == Variant::full) bank = character_representations(memory, example.mentions);
  return {memory, std::move(bank)};
}

template <typename T>
Generation Model<T>::generate(const corpus::DialGenExample& example,
                              const GenerationSettings& settings) const {
  const std::size_t placeholders = corpus::mask_positions(example.input_tokens).size();
  if (placeholders == 0) throw DataError("example " + example.id + " has no placeholder to fill");
  NoGradGuard no_grad;
  auto [memory, bank] = encode_example(example);
  const CharacterBank<T>* bank_ptr = bank ? &*bank : nullptr;

  std::mt19937_64 rng(settings.seed);
  const std::size_t cap = std::min(settings.max_length, config_.max_sequence_length - 1);
  Generation gen;
  std::vector<TokenId> prefix{special::kStart};
  while (true) {
    if (gen.tokens.size() >= cap) {
      gen.truncated = true;
      break;
    }
    auto [probs, trace] = decode_step(memory, bank_ptr, prefix);
    if (trace) gen.traces.push_back(*trace);
    std::size_t next = 0;
    if (settings.strategy == GenerationSettings::Strategy::greedy) {
      next = argmax_lowest<T>(probs);
    } else {
      std::vector<std::size_t> order(probs.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      const std::size_t k = std::clamp<std::size_t>(settings.top_k, 1, probs.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](std::size_t a, std::size_t b) {
                          return probs[a] > probs[b] || (probs[a] == probs[b] && a < b);
                        });
      std::vector<double> weights(k);
      for (std::size_t i = 0; i < k; ++i) weights[i] = static_cast<double>(probs[order[i]]);
      std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
      next = order[pick(rng)];
    }
    if (static_cast<TokenId>(next) == special::kEnd) break;
    gen.tokens.push_back(static_cast<TokenId>(next));
    prefix.push_back(static_cast<TokenId>(next));
  }
  gen.turns = corpus::split_turns(gen.tokens);
  if (gen.turns.size() != placeholders) {
    gen.turn_count_fault = true;
    gen.turns.resize(placeholders);
  }
  return gen;
}

template <typename T>
Tensor<T> Model<T>::speaker_logits(const corpus::DialSpkExample& example) const {
  if (config_.task != Task::dialspk) throw std::logic_error("speaker_logits needs a DialSpk model");
  const auto probes = corpus::probe_positions(example.tokens);
  if (probes.size() != example.specified_turns.size()) {
    throw DataError("example " + example.id + ": " + std::to_string(probes.size()) + " probes for " +
                    std::to_string(example.specified_turns.size()) + " specified turns");
  }
  if (probes.empty()) throw DataError("example " + example.id + " has no probe");
  auto hidden = encode(example.tokens);
  auto probe_states = gather_rows(hidden, probes);
  if (config_.variant == Variant::full) {
    auto bank = character_representations(hidden, example.mentions, example.candidates);
    return speaker_scores(probe_states, bank.reps);
  }
  std::vector<std::size_t> first(example.candidates.size());
  for (std::size_t k = 0; k < example.candidates.size(); ++k) {
    auto it = std::find_if(example.mentions.begin(), example.mentions.end(),
                           [&](const corpus::Mention& m) { return m.character == example.candidates[k]; });
    if (it == example.mentions.end()) {
      throw DataError("candidate " + std::to_string(example.candidates[k]) + " is never mentioned");
    }
    first[k] = it->span.start;
  }
  return matmul_nt(apply(speaker_, probe_states), gather_rows(hidden, first));
}

template <typename T>
std::vector<std::size_t> Model<T>::predict_speakers(const corpus::DialSpkExample& example) const {
  NoGradGuard no_grad;
  auto logits = speaker_logits(example);
  const std::size_t k = logits.cols();
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < logits.rows(); ++m) {
    out.push_back(argmax_lowest<T>(logits.data().subspan(m * k, k)));
  }
  return out;
}

Json model_header(const ModelConfig& config) {
  return Json{{"format", "charadial-model"}, {"model", config.to_json()}};
}

ModelConfig config_from_header(const Json& header) {
  if (!header.contains("model")) throw DataError("checkpoint header lacks a model configuration");
  auto config = ModelConfig::from_json(header.at("model"));
  config.validate();
  return config;
}

template <typename T>
Model<T> model_from_checkpoint(const Checkpoint<T>& checkpoint) {
  Model<T> model(config_from_header(checkpoint.header), 0);
  if (checkpoint.params.size() != model.parameters().size()) {
    throw DataError("checkpoint holds " + std::to_string(checkpoint.params.size()) +
                    " tensors, configuration expects " + std::to_string(model.parameters().size()));
  }
  for (auto& [name, tensor] : model.parameters()) {
    if (!checkpoint.params.contains(name)) throw DataError("checkpoint lacks parameter " + name);
    const auto& stored = checkpoint.params.get(name);
    if (stored.shape() != tensor.shape()) {
      throw DataError("parameter " + name + " has shape " + shape_string(stored.shape()) + ", expected " +
                      shape_string(tensor.shape()));
    }
    std::copy(stored.data().begin(), stored.data().end(), tensor.mutable_data().begin());
  }
  return model;
}

template class Model<float>;
template class Model<double>;
template Model<float> model_from_checkpoint(const Checkpoint<float>&);
template Model<double> model_from_checkpoint(const Checkpoint<double>&);

}  // namespace charadial::model
