#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "charadial/numerics/parameters.hpp"

namespace charadial::numerics {

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

/// One bias-corrected Adam update. Moments are allocated on the first call;
/// afterwards their shapes must match the parameters.
template <typename T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::vector<T>> grads,
               AdamState<T>& state);

/// Convenience overload reading each parameter's accumulated gradient
/// (a parameter without a gradient is treated as zero-gradient).
template <typename T>
void adam_step(ParameterStore<T>& params, AdamState<T>& state);

}  // namespace charadial::numerics
