#include "charadial/numerics/adam.hpp"

#include <cmath>

namespace charadial::numerics {

template <typename T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::vector<T>> grads,
               AdamState<T>& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), T{0});
      state.second_moment.emplace_back(p.size(), T{0});
    }
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " +
                     std::to_string(state.first_moment.size()) + " tensors, model has " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto n = params[i].size();
    if (grads[i].size() != n || state.first_moment[i].size() != n ||
        state.second_moment[i].size() != n) {
      throw ShapeError("adam_step: size mismatch for tensor " + std::to_string(i) + " of shape " +
                       shape_string(params[i].shape()));
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T step_size = static_cast<T>(state.learning_rate / correction1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(correction2));
  const T eps = static_cast<T>(state.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].mutable_data();
    const auto& g = grads[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = b1 * m[j] + (T{1} - b1) * g[j];
      v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
      value[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_c2 + eps);
    }
  }
}

template <typename T>
void adam_step(ParameterStore<T>& params, AdamState<T>& state) {
  std::vector<Tensor<T>> tensors;
  std::vector<std::vector<T>> grads;
  tensors.reserve(params.size());
  grads.reserve(params.size());
  for (auto& [name, tensor] : params) {
    tensors.push_back(tensor);
    if (tensor.has_grad()) {
      grads.emplace_back(tensor.grad().begin(), tensor.grad().end());
    } else {
      grads.emplace_back(tensor.size(), T{0});
    }
  }
  adam_step<T>(std::span<Tensor<T>>(tensors), std::span<const std::vector<T>>(grads), state);
}

template void adam_step(std::span<Tensor<float>>, std::span<const std::vector<float>>,
                        AdamState<float>&);
template void adam_step(std::span<Tensor<double>>, std::span<const std::vector<double>>,
                        AdamState<double>&);
template void adam_step(ParameterStore<float>&, AdamState<float>&);
template void adam_step(ParameterStore<double>&, AdamState<double>&);

}  // namespace charadial::numerics
