#include "cmm/train/optimizer.hpp"

#include <cmath>
#include <string>

namespace cmm::train {

template <typename T>
void Optimizer<T>::step(const std::vector<Parameter<T>*>& params) {
  const bool adam = settings_.kind == OptimizerKind::adam;
  if (steps_ == 0) {
    first_.clear();
    second_.clear();
    for (const Parameter<T>* p : params) {
      first_.emplace_back(p->value.shape());
      if (adam) second_.emplace_back(p->value.shape());
    }
  }
  if (params.size() != first_.size()) {
    throw ShapeError("optimizer: " + std::to_string(params.size()) + " parameters, state tracks " +
                     std::to_string(first_.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<T>& p = *params[i];
    if (first_[i].shape() != p.value.shape()) throw ShapeError("optimizer: parameter '" + p.name + "' changed shape");
    if (!p.grad.empty() && p.grad.shape() != p.value.shape()) {
      throw ShapeError("optimizer: gradient of '" + p.name + "' is " + shape_str(p.grad.shape()) + ", parameter is " +
                       shape_str(p.value.shape()));
    }
  }
  ++steps_;

  const double t = static_cast<double>(steps_);
  const T lr = static_cast<T>(settings_.lr);
  const T b1 = static_cast<T>(settings_.beta1), b2 = static_cast<T>(settings_.beta2);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(settings_.beta1, t)));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(settings_.beta2, t)));
  const T eps = static_cast<T>(settings_.epsilon);
  const T mu = static_cast<T>(settings_.momentum);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    const bool has_grad = !p.grad.empty();
    T* w = p.value.ptr();
    T* m = first_[i].ptr();
    const std::size_t n = p.value.size();
    if (adam) {
      T* v = second_[i].ptr();
      for (std::size_t k = 0; k < n; ++k) {
        const T g = has_grad ? p.grad[k] : T(0);
        m[k] = b1 * m[k] + (T(1) - b1) * g;
        v[k] = b2 * v[k] + (T(1) - b2) * g * g;
        w[k] -= lr * (m[k] * c1) / (std::sqrt(v[k] * c2) + eps);
      }
    } else {
      for (std::size_t k = 0; k < n; ++k) {
        m[k] = mu * m[k] + (has_grad ? p.grad[k] : T(0));
        w[k] -= lr * m[k];
      }
    }
  }
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace cmm::train
