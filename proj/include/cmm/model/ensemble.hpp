#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmm/model/cmm_model.hpp"

namespace cmm::model {

// Row-wise softmax of [batch, classes] logits, computed in double.
Array<double> softmax_rows(const Array<float>& logits);

// Index of the largest entry per row; ties go to the lowest index.
std::vector<std::int32_t> argmax_rows(const Array<double>& probs);

// Class probabilities averaged over the members (eval mode, no gradients).
// A single member reduces to that model's own softmax.
Array<double> ensemble_probabilities(std::span<CmmModel<float>* const> members, const Batch& batch);

std::vector<std::int32_t> ensemble_predict(std::span<CmmModel<float>* const> members, const Batch& batch);

}  // namespace cmm::model
