#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cmm/tensor/random.hpp"
#include "cmm/tensor/tape.hpp"

namespace cmm::nn {

// Flat, ordered view of a network's trainable parameters and persistent buffers.
template <typename T>
struct ParamRegistry {
  std::vector<Parameter<T>*> params;
  std::vector<std::pair<std::string, Array<T>*>> buffers;

  void add(Parameter<T>& p) { params.push_back(&p); }
  void add_buffer(std::string name, Array<T>& a) { buffers.emplace_back(std::move(name), &a); }
};

// Uniform in +-sqrt(1/fan_in).
template <typename T>
Parameter<T> fan_in_uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  Array<T> a(std::move(shape));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<T>(rng.uniform(-bound, bound));
  return Parameter<T>(std::move(name), std::move(a));
}

template <typename T>
Parameter<T> filled(std::string name, Shape shape, T value) {
  return Parameter<T>(std::move(name), Array<T>(std::move(shape), value));
}

}  // namespace cmm::nn
