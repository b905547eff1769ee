#include "cmm/tensor/tape.hpp"

namespace cmm {

namespace debug {
namespace {
std::string& faulty_op() {
  static std::string op;
  return op;
}
}  // namespace

void set_faulty_backward(std::string op) { faulty_op() = std::move(op); }
bool backward_is_faulty(std::string_view op) { return !faulty_op().empty() && faulty_op() == op; }
}  // namespace debug

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw TapeError("Tape: node id " + std::to_string(id) + " not on this tape");
  }
  return nodes_[static_cast<std::size_t>(id)];
}

template <typename T>
void Tape<T>::check_owned(const Tensor<T>& t) const {
  if (t.tape_ != this) throw TapeError("Tape: tensor belongs to a different tape");
  node(t.id_);
}

template <typename T>
Tensor<T> Tape<T>::constant(Array<T> value) {
  return leaf(std::move(value), false);
}

template <typename T>
Tensor<T> Tape<T>::leaf(Array<T> value, bool requires_grad) {
  if (consumed_) throw TapeError("Tape: recording after backward; reset the tape first");
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled();
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Tensor<T>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename T>
Tensor<T> Tape<T>::parameter(Parameter<T>& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Tensor<T>(this, it->second);
  Tensor<T> t = leaf(p.value, true);
  bound_.emplace(&p, t.id_);
  nodes_.back().op = "param:" + p.name;
  if (grad_enabled()) nodes_.back().param = &p;
  return t;
}

template <typename T>
Tensor<T> Tape<T>::record(std::string_view op, Array<T> value, std::span<const Tensor<T>> inputs,
                          BackwardFn<T> backward) {
  if (consumed_) throw TapeError("Tape: recording after backward; reset the tape first");
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    check_owned(in);
    n.inputs.push_back(in.id_);
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(in.id_)].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Tensor<T>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename T>
GradientMap<T> Tape<T>::backward(const Tensor<T>& loss) {
  check_owned(loss);
  if (consumed_) throw TapeError("Tape: backward already ran on this tape; reset it first");
  Node& root = nodes_[static_cast<std::size_t>(loss.id_)];
  if (root.value.size() != 1) {
    throw TapeError("Tape: backward needs a scalar loss, got shape " + shape_str(root.value.shape()));
  }
  consumed_ = true;

  if (root.requires_grad) {
    root.grad = Array<T>(root.value.shape(), T(1));
    std::vector<const Array<T>*> in_values;
    std::vector<Array<T>*> in_grads;
    for (int id = loss.id_; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      in_values.clear();
      in_grads.clear();
      for (int in : n.inputs) {
        Node& src = nodes_[static_cast<std::size_t>(in)];
        in_values.push_back(&src.value);
        if (src.requires_grad) {
          if (src.grad.empty()) src.grad = Array<T>(src.value.shape());
          in_grads.push_back(&src.grad);
        } else {
          in_grads.push_back(nullptr);
        }
      }
      n.backward(GradContext<T>{n.value, n.grad, in_values, in_grads});
    }
  }

  GradientMap<T> grads;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (!n.is_leaf || !n.requires_grad) continue;
    Array<T> g = n.grad.empty() ? Array<T>(n.value.shape()) : n.grad;
    if (n.param) {
      if (n.param->grad.empty()) n.param->grad = Array<T>(n.param->value.shape());
      auto dst = n.param->grad.data();
      auto src = g.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    grads.emplace(static_cast<int>(i), std::move(g));
  }
  return grads;
}

template <typename T>
const Array<T>* Tape<T>::grad(int id) const {
  const Node& n = node(id);
  return n.grad.empty() ? nullptr : &n.grad;
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  bound_.clear();
  consumed_ = false;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace cmm
