#include "cmm/train/loss.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace cmm::train {

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw ShapeError("cross_entropy: expected [batch, classes], got " + shape_str(s));
  const std::size_t batch = s[0], classes = s[1];
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for a batch of " +
                     std::to_string(batch));
  }
  if (batch == 0) throw ShapeError("cross_entropy: empty batch");
  for (std::int32_t y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
  }

  const Array<T>& x = logits.value();
  auto probs = std::make_shared<Array<T>>(s);
  double total = 0;
  for (std::size_t r = 0; r < batch; ++r) {
    const T* row = x.ptr() + r * classes;
    T* p = probs->ptr() + r * classes;
    double top = row[0];
    for (std::size_t c = 1; c < classes; ++c) top = std::max(top, static_cast<double>(row[c]));
    double z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(static_cast<double>(row[c]) - top);
    const double log_z = std::log(z);
    for (std::size_t c = 0; c < classes; ++c) p[c] = static_cast<T>(std::exp(static_cast<double>(row[c]) - top - log_z));
    total += log_z - (static_cast<double>(row[labels[r]]) - top);
  }
  Array<T> out({1}, T(0));
  out[0] = static_cast<T>(total / static_cast<double>(batch));

  std::vector<std::int32_t> ys(labels.begin(), labels.end());
  return logits.tape().record("cross_entropy", std::move(out), {logits},
                              [probs, ys = std::move(ys), batch, classes](const GradContext<T>& c) {
    Array<T>* gx = c.in_grads[0];
    if (!gx) return;
    const T scale = c.out_grad[0] / static_cast<T>(batch);
    for (std::size_t r = 0; r < batch; ++r) {
      const T* p = probs->ptr() + r * classes;
      T* g = gx->ptr() + r * classes;
      for (std::size_t k = 0; k < classes; ++k) g[k] += scale * p[k];
      g[ys[r]] -= scale;
    }
  });
}

template Tensor<float> cross_entropy(const Tensor<float>&, std::span<const std::int32_t>);
template Tensor<double> cross_entropy(const Tensor<double>&, std::span<const std::int32_t>);

}  // namespace cmm::train
