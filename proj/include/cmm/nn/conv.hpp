#pragma once

#include "cmm/nn/module.hpp"

namespace cmm::nn {

// 2-D cross-correlation (no kernel flip), stride 1, zero padding on every side.
//   x      [batch, in_ch, H, W]
//   weight [out_ch, in_ch, kh, kw]
//   bias   [out_ch]
// Output is [batch, out_ch, H + 2p - kh + 1, W + 2p - kw + 1].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t padding);

template <typename T>
struct Conv2d {
  Parameter<T> weight;
  Parameter<T> bias;
  std::size_t padding = 0;

  Conv2d() = default;
  // Same padding; kernel must be 1 or 3.
  Conv2d(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Rng& rng);

  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x);
  void register_into(ParamRegistry<T>& reg) {
    reg.add(weight);
    reg.add(bias);
  }
};

}  // namespace cmm::nn
