#include "charadial/eval/coherence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "charadial/numerics/adam.hpp"
#include "charadial/numerics/checkpoint.hpp"
#include "charadial/numerics/ops.hpp"

namespace charadial::eval {

using namespace numerics;

std::vector<TokenId> permute_turns(const corpus::Story& story, const std::vector<std::size_t>& permutation) {
  const auto& turns = story.dialogue_turns;
  if (permutation.size() != turns.size()) throw DataError("permutation size differs from turn count");
  std::vector<TokenId> out;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    out.insert(out.end(), story.tokens.begin() + static_cast<std::ptrdiff_t>(cursor),
               story.tokens.begin() + static_cast<std::ptrdiff_t>(turns[i].start));
    const auto& src = turns.at(permutation[i]);
    out.insert(out.end(), story.tokens.begin() + static_cast<std::ptrdiff_t>(src.start),
               story.tokens.begin() + static_cast<std::ptrdiff_t>(src.end));
    cursor = turns[i].end;
  }
  out.insert(out.end(), story.tokens.begin() + static_cast<std::ptrdiff_t>(cursor), story.tokens.end());
  return out;
}

std::vector<std::size_t> random_derangement(std::size_t n, std::mt19937_64& rng) {
  if (n < 2) throw std::invalid_argument("a derangement needs at least two items");
  std::vector<std::size_t> p(n);
  while (true) {
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::shuffle(p.begin(), p.end(), rng);
    bool fixed = false;
    for (std::size_t i = 0; i < n && !fixed; ++i) fixed = p[i] == i;
    if (!fixed) return p;
  }
}

std::vector<CoherencePair> coherence_pairs(const std::vector<corpus::Story>& stories, std::uint64_t seed) {
  std::vector<CoherencePair> out;
  for (std::size_t i = 0; i < stories.size(); ++i) {
    const auto& s = stories[i];
    if (s.dialogue_turns.size() < 2) continue;
    std::seed_seq seq{seed, static_cast<std::uint64_t>(i)};
    std::mt19937_64 rng(seq);
    out.push_back({s.id, s.tokens, permute_turns(s, random_derangement(s.dialogue_turns.size(), rng))});
  }
  return out;
}

Json CoherenceConfig::to_json() const {
  return Json{{"embed_dim", embed_dim}, {"channels", channels},     {"window", window},
              {"layers", layers},       {"epochs", epochs},         {"batch_size", batch_size},
              {"learning_rate", learning_rate}, {"holdout", holdout}, {"seed", seed}};
}

CoherenceConfig CoherenceConfig::from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("coherence", "expected a JSON object");
  CoherenceConfig c;
  auto read = [&](const std::string& key, auto& out) {
    try {
      out = j.at(key).get<std::decay_t<decltype(out)>>();
    } catch (const Json::exception& e) {
      throw ConfigError(key, e.what());
    }
  };
  for (const auto& [key, value] : j.items()) {
    if (key == "embed_dim") read(key, c.embed_dim);
    else if (key == "channels") read(key, c.channels);
    else if (key == "window") read(key, c.window);
    else if (key == "layers") read(key, c.layers);
    else if (key == "epochs") read(key, c.epochs);
    else if (key == "batch_size") read(key, c.batch_size);
    else if (key == "learning_rate") read(key, c.learning_rate);
    else if (key == "holdout") read(key, c.holdout);
    else if (key == "seed") read(key, c.seed);
    else throw ConfigError(key, "unknown coherence setting");
  }
  return c;
}

void CoherenceConfig::validate() const {
  if (embed_dim == 0) throw ConfigError("embed_dim", "must be positive");
  if (channels == 0) throw ConfigError("channels", "must be positive");
  if (window % 2 == 0) throw ConfigError("window", "must be odd");
  if (layers == 0) throw ConfigError("layers", "must be positive");
  if (epochs == 0) throw ConfigError("epochs", "must be positive");
  if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate", "must be nonnegative");
  if (!(holdout > 0.0 && holdout < 1.0)) throw ConfigError("holdout", "must lie strictly between 0 and 1");
}

namespace {

template <typename T>
Tensor<T> uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> data(shape_size(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace

template <typename T>
CoherenceClassifier<T>::CoherenceClassifier(const CoherenceConfig& config, std::size_t vocab_size)
    : config_(config), vocab_size_(vocab_size) {
  config.validate();
  if (vocab_size == 0) throw ConfigError("vocab_size", "must be positive");
  std::mt19937_64 rng(config.seed ^ 0x5eedULL);
  params_.add("embed", uniform<T>({vocab_size, config.embed_dim}, 1.0, rng));
  std::size_t in = config.embed_dim;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t fan_in = in * config.window;
    const auto name = "conv" + std::to_string(l);
    params_.add(name + ".w", uniform<T>({fan_in, config.channels}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
    params_.add(name + ".b", Tensor<T>::zeros({config.channels}));
    in = config.channels;
  }
  params_.add("head.w", uniform<T>({2 * in, 1}, 1.0 / std::sqrt(static_cast<double>(2 * in)), rng));
  params_.add("head.b", Tensor<T>::zeros({1}));
}

template <typename T>
Tensor<T> CoherenceClassifier<T>::convolve(const Tensor<T>& x, std::size_t layer) const {
  const std::size_t n = x.rows(), in = x.cols(), half = config_.window / 2;
  // Zero rows at both ends keep one output row per token.
  const auto padded = concat_rows<T>({Tensor<T>::zeros({half, in}), x, Tensor<T>::zeros({half, in})});
  std::vector<Tensor<T>> shifted;
  std::vector<std::size_t> rows(n);
  for (std::size_t k = 0; k < config_.window; ++k) {
    std::iota(rows.begin(), rows.end(), k);
    shifted.push_back(gather_rows(padded, rows));
  }
  const auto name = "conv" + std::to_string(layer);
  return silu(linear(concat_cols(shifted), params_.get(name + ".w"), params_.get(name + ".b")));
}

template <typename T>
Tensor<T> CoherenceClassifier<T>::logit(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw DataError("cannot score an empty story");
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (auto t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size_) throw DataError("token id outside the classifier vocabulary");
    ids.push_back(static_cast<std::size_t>(t));
  }
  auto x = gather_rows(params_.get("embed"), ids);
  for (std::size_t l = 0; l < config_.layers; ++l) x = convolve(x, l);
  auto pooled = concat_cols(std::vector<Tensor<T>>{mean_rows(x), max_rows(x)});
  return reshape(linear(pooled, params_.get("head.w"), params_.get("head.b")), {1});
}

template <typename T>
double CoherenceClassifier<T>::probability(std::span<const TokenId> tokens) const {
  NoGradGuard no_grad;
  const double z = static_cast<double>(logit(tokens).item());
  return 1.0 / (1.0 + std::exp(-z));
}

template <typename T>
void CoherenceClassifier<T>::save(const std::filesystem::path& path) const {
  Json header{{"format", "charadial-coherence"},
              {"config", config_.to_json()},
              {"vocab_size", vocab_size()},
              {"holdout_accuracy", holdout_accuracy}};
  save_checkpoint<T>(path, header, params_, nullptr);
}

template <typename T>
CoherenceClassifier<T> CoherenceClassifier<T>::load(const std::filesystem::path& path) {
  auto ckpt = load_checkpoint<T>(path);
  if (ckpt.header.value("format", "") != "charadial-coherence") {
    throw DataError(path.string() + " is not a coherence classifier checkpoint");
  }
  const auto vocab = ckpt.header.at("vocab_size").template get<std::size_t>();
  CoherenceClassifier c(CoherenceConfig::from_json(ckpt.header.at("config")), vocab);
  c.holdout_accuracy = ckpt.header.value("holdout_accuracy", 0.0);
  auto copy = [&](const std::string& stored, Tensor<T>& into) {
    if (!ckpt.params.contains(stored)) throw DataError("classifier checkpoint lacks " + stored);
    const auto& src = ckpt.params.get(stored);
    if (src.shape() != into.shape()) throw DataError("classifier parameter " + stored + " has the wrong shape");
    std::copy(src.data().begin(), src.data().end(), into.mutable_data().begin());
  };
  for (auto& [name, t] : c.parameters()) copy(name, t);
  return c;
}

template <typename T>
CoherenceClassifier<T> train_coherence_classifier(const std::vector<corpus::Story>& stories,
                                                  std::size_t vocab_size, const CoherenceConfig& config) {
  config.validate();
  auto pairs = coherence_pairs(stories, config.seed);
  if (pairs.size() < 2) throw DataError("coherence classifier needs at least two stories with two or more turns");
  std::mt19937_64 rng(config.seed);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  const std::size_t held = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.holdout * static_cast<double>(pairs.size()))));
  const std::vector<CoherencePair> valid(pairs.end() - static_cast<std::ptrdiff_t>(held), pairs.end());
  pairs.resize(pairs.size() - held);

  // (pair index, label) items
  std::vector<std::pair<std::size_t, int>> items;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    items.emplace_back(i, 1);
    items.emplace_back(i, 0);
  }

  CoherenceClassifier<T> clf(config, vocab_size);
  AdamState<T> adam;
  adam.learning_rate = config.learning_rate;

  auto accuracy = [&] {
    std::size_t ok = 0;
    for (const auto& p : valid) ok += clf.coherent(p.original) + !clf.coherent(p.shuffled);
    return static_cast<double>(ok) / static_cast<double>(2 * valid.size());
  };
  auto snapshot = [&] {
    std::vector<std::vector<T>> out;
    for (const auto& [name, t] : clf.parameters()) out.emplace_back(t.data().begin(), t.data().end());
    return out;
  };

  double best = -1.0;
  std::vector<std::vector<T>> best_values;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(items.begin(), items.end(), rng);
    for (std::size_t start = 0; start < items.size(); start += config.batch_size) {
      const std::size_t end = std::min(items.size(), start + config.batch_size);
      clf.parameters().zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const auto& [idx, label] = items[b];
        const auto& tokens = label ? pairs[idx].original : pairs[idx].shuffled;
        auto loss = bce_with_logits(clf.logit(tokens), static_cast<T>(label));
        if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericError("coherence training diverged");
        backward(scale(loss, T{1} / static_cast<T>(end - start)));
      }
      adam_step(clf.parameters(), adam);
    }
    const double acc = accuracy();
    if (acc > best) {
      best = acc;
      best_values = snapshot();
    }
  }
  std::size_t i = 0;
  for (auto& [name, t] : clf.parameters()) {
    std::copy(best_values[i].begin(), best_values[i].end(), t.mutable_data().begin());
    ++i;
  }
  clf.holdout_accuracy = best;
  return clf;
}

template <typename T>
CoherenceTally coherence_score(const CoherenceClassifier<T>& classifier,
                               const std::vector<std::vector<TokenId>>& filled_stories) {
  CoherenceTally t;
  for (const auto& s : filled_stories) {
    t.coherent += classifier.coherent(s);
    ++t.total;
  }
  return t;
}

template class CoherenceClassifier<float>;
template class CoherenceClassifier<double>;
template CoherenceClassifier<float> train_coherence_classifier(const std::vector<corpus::Story>&, std::size_t,
                                                               const CoherenceConfig&);
template CoherenceClassifier<double> train_coherence_classifier(const std::vector<corpus::Story>&, std::size_t,
                                                                const CoherenceConfig&);
template CoherenceTally coherence_score(const CoherenceClassifier<float>&, const std::vector<std::vector<TokenId>>&);
template CoherenceTally coherence_score(const CoherenceClassifier<double>&, const std::vector<std::vector<TokenId>>&);

}  // namespace charadial::eval
