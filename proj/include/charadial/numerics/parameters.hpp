#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "charadial/numerics/tensor.hpp"

namespace charadial::numerics {

/// Named trainable tensors in registration order.
template <typename T>
class ParameterStore {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  const Tensor<T>& add(std::string name, Tensor<T> tensor);
  const Tensor<T>& get(std::string_view name) const;
  Tensor<T>& get(std::string_view name);
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grad();
  /// Overwrites values from another store with identical names and shapes.
  void copy_values_from(const ParameterStore& other);

 private:
  std::vector<Entry> entries_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace charadial::numerics
