#include "cmm/train/batch.hpp"

#include <numeric>
#include <string>

namespace cmm::train {

EncodedSplit encode_split(std::span<const data::Sample> samples, const data::Vocab& vocab, std::size_t max_len,
                          int cell_px) {
  EncodedSplit out;
  out.size = samples.size();
  out.max_len = max_len;
  out.tokens.reserve(samples.size() * max_len);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const data::Sample& s = samples[i];
    if (s.question_tokens.size() != max_len) {
      throw data::DatasetError("sample " + std::to_string(i) + ": " + std::to_string(s.question_tokens.size()) +
                               " tokens, expected " + std::to_string(max_len));
    }
    std::int32_t label;
    try {
      label = vocab.answer_id(s.answer);
    } catch (const std::out_of_range&) {
      throw data::DatasetError("sample " + std::to_string(i) + ": answer '" + s.answer + "' not in the vocabulary");
    }
    const data::Image img = data::render_scene(s.scene, cell_px);
    if (out.image_size == 0) out.image_size = img.pixels.size();
    if (img.pixels.size() != out.image_size) throw data::DatasetError("samples render to different image sizes");
    out.tokens.insert(out.tokens.end(), s.question_tokens.begin(), s.question_tokens.end());
    out.lengths.push_back(s.length);
    out.images.insert(out.images.end(), img.pixels.begin(), img.pixels.end());
    out.labels.push_back(label);
    out.qtypes.push_back(s.qtype);
  }
  return out;
}

model::Batch make_batch(const EncodedSplit& split, std::span<const std::size_t> indices) {
  model::Batch b;
  b.size = indices.size();
  b.tokens.reserve(indices.size() * split.max_len);
  b.images.reserve(indices.size() * split.image_size);
  for (std::size_t i : indices) {
    if (i >= split.size) throw std::out_of_range("make_batch: index " + std::to_string(i) + " past the split");
    b.tokens.insert(b.tokens.end(), split.tokens.begin() + static_cast<std::ptrdiff_t>(i * split.max_len),
                    split.tokens.begin() + static_cast<std::ptrdiff_t>((i + 1) * split.max_len));
    b.lengths.push_back(split.lengths[i]);
    b.images.insert(b.images.end(), split.images.begin() + static_cast<std::ptrdiff_t>(i * split.image_size),
                    split.images.begin() + static_cast<std::ptrdiff_t>((i + 1) * split.image_size));
    b.labels.push_back(split.labels[i]);
  }
  return b;
}

model::Batch make_batch(const EncodedSplit& split, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return make_batch(split, idx);
}

void check_compatible(const EncodedSplit& split, const model::ModelConfig& config) {
  const std::size_t pixels = config.image.channels * config.image.height * config.image.width;
  if (split.size == 0) return;
  if (split.max_len != config.max_len) {
    throw data::DatasetError("data has questions of " + std::to_string(split.max_len) + " tokens, model expects " +
                             std::to_string(config.max_len));
  }
  if (split.image_size != pixels) {
    throw data::DatasetError("data images have " + std::to_string(split.image_size) + " values, model expects " +
                             std::to_string(pixels));
  }
  for (std::int32_t y : split.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= config.answer_vocab) {
      throw data::DatasetError("answer id " + std::to_string(y) + " outside the model's answer vocabulary");
    }
  }
}

}  // namespace cmm::train
