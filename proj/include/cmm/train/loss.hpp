#pragma once

#include <cstdint>
#include <span>

#include "cmm/tensor/tape.hpp"

namespace cmm::train {

// Mean over the batch of -log softmax(logits)[label]. logits: [batch, classes].
// Throws std::out_of_range for a label outside [0, classes).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels);

}  // namespace cmm::train
