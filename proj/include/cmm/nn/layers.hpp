#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "cmm/nn/batch_norm.hpp"
#include "cmm/nn/conv.hpp"
#include "cmm/nn/film.hpp"
#include "cmm/nn/module.hpp"
#include "cmm/nn/recurrent.hpp"

namespace cmm::nn {

// Gathers rows of table [vocab, dim]; backward scatter-adds, so repeated ids
// accumulate.
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids);

template <typename T>
struct Embedding {
  Parameter<T> table;

  Embedding() = default;
  Embedding(const std::string& name, std::size_t vocab, std::size_t dim, Rng& rng)
      : table(fan_in_uniform<T>(name + ".table", {vocab, dim}, dim, rng)) {}

  std::size_t vocab_size() const { return table.value.dim(0); }
  Tensor<T> forward(Tape<T>& tape, std::span<const std::int32_t> ids) {
    return embedding_lookup(tape.parameter(table), ids);
  }
  void register_into(ParamRegistry<T>& reg) { reg.add(table); }
};

// x [batch, in] * W [in, out] + b [out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
struct Linear {
  Parameter<T> weight;
  Parameter<T> bias;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : weight(fan_in_uniform<T>(name + ".weight", {in, out}, in, rng)),
        bias(fan_in_uniform<T>(name + ".bias", {out}, in, rng)) {}

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) {
    return linear(x, tape.parameter(weight), tape.parameter(bias));
  }
  void register_into(ParamRegistry<T>& reg) {
    reg.add(weight);
    reg.add(bias);
  }
};

struct PixelPos {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const PixelPos&) const = default;
};

template <typename T>
struct MaxPoolResult {
  Tensor<T> values;               // [batch, ch]
  std::vector<PixelPos> argmax;   // batch * ch, row-major
};

// Spatial max per channel of [batch, ch, H, W]; ties resolve to the first
// position in row-major order.
template <typename T>
MaxPoolResult<T> global_max_pool_argmax(const Tensor<T>& x);

// Same result as global_max_pool_argmax(relu(batch_norm(x))) (ReLU optional)
// without materializing the normalized map.
template <typename T>
MaxPoolResult<T> bn_relu_max_pool(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                  BatchNormState<T>& state, bool training, bool apply_relu = true);

// [2, H, W]: map 0 holds the row coordinate, map 1 the column coordinate, each
// spaced linearly over [-1, 1]. A unit extent gives the midpoint 0.
template <typename T>
Array<T> coordinate_maps(std::size_t h, std::size_t w);

}  // namespace cmm::nn
