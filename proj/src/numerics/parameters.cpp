#include "charadial/numerics/parameters.hpp"

#include <algorithm>
#include <stdexcept>

namespace charadial::numerics {

template <typename T>
const Tensor<T>& ParameterStore<T>::add(std::string name, Tensor<T> tensor) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  tensor.set_requires_grad(true);
  entries_.emplace_back(std::move(name), std::move(tensor));
  return entries_.back().second;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(std::string_view name) const {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const Entry& e) { return e.first == name; });
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return it->second;
}

template <typename T>
Tensor<T>& ParameterStore<T>::get(std::string_view name) {
  return const_cast<Tensor<T>&>(std::as_const(*this).get(name));
}

template <typename T>
bool ParameterStore<T>::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.first == name; });
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

template <typename T>
void ParameterStore<T>::copy_values_from(const ParameterStore& other) {
  if (other.size() != size()) {
    throw ShapeError("parameter count mismatch: " + std::to_string(other.size()) + " vs " +
                     std::to_string(size()));
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& [name, tensor] = entries_[i];
    const auto& [oname, otensor] = other.entries_[i];
    if (name != oname || tensor.shape() != otensor.shape()) {
      throw ShapeError("parameter mismatch: " + name + shape_string(tensor.shape()) + " vs " +
                       oname + shape_string(otensor.shape()));
    }
    std::copy(otensor.data().begin(), otensor.data().end(), tensor.mutable_data().begin());
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace charadial::numerics
