#pragma once

#include <cstddef>
#include <string_view>

#include "charadial/common/io.hpp"

namespace charadial::model {

enum class Task { dialgen, dialspk };

/// `baseline` removes the character bank: no pooling, selection or fusion.
enum class Variant { full, baseline };

std::string_view task_name(Task task);
Task parse_task(std::string_view name);
std::string_view variant_name(Variant variant);
Variant parse_variant(std::string_view name);

struct ModelConfig {
  Task task = Task::dialgen;
  Variant variant = Variant::full;
  std::size_t vocab_size = 0;
  std::size_t model_dim = 64;
  std::size_t layers_encoder = 2;
  std::size_t layers_decoder = 2;
  std::size_t character_encoder_layers = 1;
  std::size_t attention_heads = 4;
  std::size_t feedforward_dim = 256;
  std::size_t max_sequence_length = 512;
  double dropout = 0.0;

  Json to_json() const;
  /// Unknown keys rejected; missing keys keep defaults.
  static ModelConfig from_json(const Json& j);
  /// Throws ConfigError naming the offending field.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace charadial::model
