#include "cmm/model/ensemble.hpp"

#include <cmath>

namespace cmm::model {

Array<double> softmax_rows(const Array<float>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax_rows: expected [batch, classes], got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Array<double> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = logits.ptr() + r * cols;
    double* y = out.ptr() + r * cols;
    double top = x[0];
    for (std::size_t c = 1; c < cols; ++c) top = std::max(top, static_cast<double>(x[c]));
    double total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += y[c] = std::exp(static_cast<double>(x[c]) - top);
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  return out;
}

std::vector<std::int32_t> argmax_rows(const Array<double>& probs) {
  const std::size_t rows = probs.dim(0), cols = probs.dim(1);
  std::vector<std::int32_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = probs.ptr() + r * cols;
    out[r] = static_cast<std::int32_t>(std::max_element(p, p + cols) - p);
  }
  return out;
}

Array<double> ensemble_probabilities(std::span<CmmModel<float>* const> members, const Batch& batch) {
  if (members.empty()) throw std::invalid_argument("ensemble: no members");
  const std::size_t classes = members.front()->config().answer_vocab;
  Array<double> sum({batch.size, classes});
  for (CmmModel<float>* m : members) {
    if (m->config().answer_vocab != classes) throw ShapeError("ensemble: members disagree on answer vocabulary");
    const bool was_training = m->training();
    m->set_training(false);
    Tape<float> tape(GradMode::disabled);
    Array<double> p = softmax_rows(m->forward(tape, batch).logits.value());
    m->set_training(was_training);
    for (std::size_t i = 0; i < p.size(); ++i) sum[i] += p[i];
  }
  const double scale = 1.0 / static_cast<double>(members.size());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] *= scale;
  return sum;
}

std::vector<std::int32_t> ensemble_predict(std::span<CmmModel<float>* const> members, const Batch& batch) {
  return argmax_rows(ensemble_probabilities(members, batch));
}

}  // namespace cmm::model
