#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cmm/tensor/tape.hpp"

namespace cmm {

enum class Elementwise { add, sub, mul, relu, tanh, sigmoid };
enum class Reduce { sum, mean, max };

// Binary kinds broadcast `b` against `a` by the trailing-dimension rule: b's
// extents, aligned from the right, must equal a's or be 1. The result has a's
// shape. add and mul are commutative, so a broadcastable `a` is swapped in.
template <typename T>
Tensor<T> elementwise(Elementwise kind, const Tensor<T>& a, std::optional<Tensor<T>> b = {});

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise<T>(Elementwise::add, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise<T>(Elementwise::sub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise<T>(Elementwise::mul, a, b); }
template <typename T>
Tensor<T> relu(const Tensor<T>& a) { return elementwise<T>(Elementwise::relu, a); }
template <typename T>
Tensor<T> tanh(const Tensor<T>& a) { return elementwise<T>(Elementwise::tanh, a); }
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) { return elementwise<T>(Elementwise::sigmoid, a); }

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Numerically stable softmax along `axis`. Entries with keep[i] == 0 get
// probability exactly 0; every slice must keep at least one entry.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis,
                  std::span<const std::uint8_t> keep = {});

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> parts, std::size_t axis) {
  return concat(std::span<const Tensor<T>>(parts.begin(), parts.size()), axis);
}

// Half-open range [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
struct ReduceResult {
  Tensor<T> values;
  // Index along the reduced axis per output element (max only). Ties go to the
  // first occurrence.
  std::vector<std::size_t> argmax;
};

// Removes `axis`; a rank-1 input reduces to shape [1].
template <typename T>
ReduceResult<T> reduce(Reduce kind, const Tensor<T>& x, std::size_t axis);

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x);

// Row selection over the leading axis: out[r] = take_a[r] ? a[r] : b[r].
// Copies values exactly, so masked recurrences stay bit-stable.
template <typename T>
Tensor<T> select_rows(std::span<const std::uint8_t> take_a, const Tensor<T>& a, const Tensor<T>& b);

}  // namespace cmm
