#pragma once

#include "cmm/tensor/tape.hpp"

namespace cmm::nn {

// Feature-wise affine modulation: out[.., c, ..] = gamma[c] * x[.., c, ..] + beta[c].
//
// gamma/beta are either [channels] (shared across the batch) or
// [batch, channels], in which case `batch_axis` names the features' batch axis
// and must precede `channel_axis`. Visual maps use (channel_axis=1,
// batch_axis=0) on [B, C, H, W]; time-major language states use
// (channel_axis=2, batch_axis=1) on [T, B, D].
template <typename T>
Tensor<T> film_affine(const Tensor<T>& features, const Tensor<T>& gamma, const Tensor<T>& beta,
                      std::size_t channel_axis, std::size_t batch_axis = 0);

}  // namespace cmm::nn
