#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rrdn/tensor.hpp"

namespace rrdn {

/// Named trainable tensors in insertion order.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) throw Error("duplicate parameter name: " + name);
    index_.emplace(name, items_.size());
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return items_[it->second].second;
  }
  const Tensor<T>& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }

  std::size_t size() const { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  void zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
  std::map<std::string, std::size_t> index_;
};

// Total trainable scalars.
template <typename T>
std::size_t param_count(const ParamStore<T>& store) {
  std::size_t total = 0;
  for (const auto& [name, t] : store) total += t.size();
  return total;
}

// Kaiming-normal (fan-in) initialisation from a seeded generator; values are
// drawn in double so float and double stores agree up to rounding.
template <typename T>
Tensor<T> kaiming_normal(Shape shape, std::mt19937_64& rng, bool requires_grad = true, double gain = 1.0) {
  const double fan_in = static_cast<double>(shape.c * shape.h * shape.w);
  std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / fan_in));
  std::vector<T> values(shape.size());
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>::from(shape, std::move(values), requires_grad);
}

}  // namespace rrdn
