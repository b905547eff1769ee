#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmm/data/dataset.hpp"
#include "cmm/model/cmm_model.hpp"

namespace cmm::train {

// A split with every image rendered and every answer mapped to its id, ready
// to be sliced into batches.
struct EncodedSplit {
  std::size_t size = 0;
  std::size_t max_len = 0;
  std::size_t image_size = 0;  // floats per image
  std::vector<std::int32_t> tokens;
  std::vector<std::int32_t> lengths;
  std::vector<float> images;
  std::vector<std::int32_t> labels;
  std::vector<data::QType> qtypes;
};

// Throws DatasetError if a sample's token count differs from max_len or its
// answer is outside the vocabulary.
EncodedSplit encode_split(std::span<const data::Sample> samples, const data::Vocab& vocab, std::size_t max_len,
                          int cell_px);

model::Batch make_batch(const EncodedSplit& split, std::span<const std::size_t> indices);
// Samples [begin, end).
model::Batch make_batch(const EncodedSplit& split, std::size_t begin, std::size_t end);

// Throws DatasetError if the split cannot feed a model with this config.
void check_compatible(const EncodedSplit& split, const model::ModelConfig& config);

}  // namespace cmm::train
