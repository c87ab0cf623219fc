#include "charadial/model/config.hpp"

#include <set>

namespace charadial::model {

std::string_view task_name(Task task) { return task == Task::dialgen ? "dialgen" : "dialspk"; }

Task parse_task(std::string_view name) {
  if (name == "dialgen") return Task::dialgen;
  if (name == "dialspk") return Task::dialspk;
  throw ConfigError("task", "expected dialgen or dialspk, got '" + std::string(name) + "'");
}

std::string_view variant_name(Variant variant) {
  return variant == Variant::full ? "full" : "baseline";
}

Variant parse_variant(std::string_view name) {
  if (name == "full") return Variant::full;
  if (name == "baseline") return Variant::baseline;
  throw ConfigError("variant", "expected full or baseline, got '" + std::string(name) + "'");
}

Json ModelConfig::to_json() const {
  return Json{{"task", task_name(task)},
              {"variant", variant_name(variant)},
              {"vocab_size", vocab_size},
              {"model_dim", model_dim},
              {"layers_encoder", layers_encoder},
              {"layers_decoder", layers_decoder},
              {"character_encoder_layers", character_encoder_layers},
              {"attention_heads", attention_heads},
              {"feedforward_dim", feedforward_dim},
              {"max_sequence_length", max_sequence_length},
              {"dropout", dropout}};
}

ModelConfig ModelConfig::from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("model", "expected a JSON object");
  ModelConfig c;
  const std::set<std::string> known{"task", "variant", "vocab_size", "model_dim", "layers_encoder",
                                    "layers_decoder", "character_encoder_layers", "attention_heads",
                                    "feedforward_dim", "max_sequence_length", "dropout"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(key, "unknown model setting");
  }
  auto size_field = [&](const char* key, std::size_t& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_unsigned()) throw ConfigError(key, "expected a nonnegative integer");
    out = j[key].get<std::size_t>();
  };
  if (j.contains("task")) c.task = parse_task(j["task"].get<std::string>());
  if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
  size_field("vocab_size", c.vocab_size);
  size_field("model_dim", c.model_dim);
  size_field("layers_encoder", c.layers_encoder);
  size_field("layers_decoder", c.layers_decoder);
  size_field("character_encoder_layers", c.character_encoder_layers);
  size_field("attention_heads", c.attention_heads);
  size_field("feedforward_dim", c.feedforward_dim);
  size_field("max_sequence_length", c.max_sequence_length);
  if (j.contains("dropout")) {
    if (!j["dropout"].is_number()) throw ConfigError("dropout", "expected a number");
    c.dropout = j["dropout"].get<double>();
  }
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](const char* field, std::size_t v) {
    if (v == 0) throw ConfigError(field, "must be positive");
  };
  positive("vocab_size", vocab_size);
  positive("model_dim", model_dim);
  positive("layers_encoder", layers_encoder);
  positive("attention_heads", attention_heads);
  positive("feedforward_dim", feedforward_dim);
  positive("max_sequence_length", max_sequence_length);
  if (task == Task::dialgen) positive("layers_decoder", layers_decoder);
  if (variant == Variant::full) positive("character_encoder_layers", character_encoder_layers);
  if (model_dim % attention_heads != 0) {
    throw ConfigError("attention_heads", "model_dim " + std::to_string(model_dim) +
                                             " is not divisible by " + std::to_string(attention_heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout", "must lie in [0, 1)");
}

}  // namespace charadial::model
