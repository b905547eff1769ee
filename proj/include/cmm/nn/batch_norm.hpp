#pragma once

#include "cmm/nn/module.hpp"

namespace cmm::nn {

template <typename T>
struct BatchNormState {
  Array<T> running_mean;
  Array<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.1);
};

template <typename T>
struct ChannelStats {
  std::vector<T> mean;
  std::vector<T> inv_std;  // 1 / sqrt(var + epsilon)
};

// Statistics used to normalize x [batch, ch, ...]: batch statistics in
// training mode (folded into the running averages), running ones otherwise.
template <typename T>
ChannelStats<T> batch_norm_statistics(const Array<T>& x, BatchNormState<T>& state, bool training);

// Validates shapes and lazily sizes the running statistics.
template <typename T>
void check_batch_norm_inputs(const Shape& x_shape, const Tensor<T>& gamma, const Tensor<T>& beta,
                             BatchNormState<T>& state, bool training);

// Per-channel normalization over every axis except axis 1 of x [batch, ch, ...].
// Training mode uses batch statistics and folds them into the running
// averages (the variance update uses the unbiased estimate); eval mode uses the
// running statistics. gamma/beta are applied after normalization.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, bool training);

template <typename T>
struct BatchNorm {
  Parameter<T> gamma;
  Parameter<T> beta;
  BatchNormState<T> state;
  std::string name;

  BatchNorm() = default;
  BatchNorm(const std::string& prefix, std::size_t channels);

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, bool training) {
    return batch_norm(x, tape.parameter(gamma), tape.parameter(beta), state, training);
  }
  void register_into(ParamRegistry<T>& reg) {
    reg.add(gamma);
    reg.add(beta);
    reg.add_buffer(name + ".running_mean", state.running_mean);
    reg.add_buffer(name + ".running_var", state.running_var);
  }
};

}  // namespace cmm::nn
