#pragma once

#include <deque>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cmm/tensor/array.hpp"

namespace cmm {

template <typename T>
class Tape;

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Trainable tensor that outlives any single tape. Gradients from each
// backward pass are accumulated into `grad`.
template <typename T>
struct Parameter {
  std::string name;
  Array<T> value;
  Array<T> grad;

  Parameter() = default;
  Parameter(std::string n, Array<T> v) : name(std::move(n)), value(std::move(v)) {}

  void zero_grad() { grad = Array<T>(value.shape()); }
};

// Handle to a node recorded on a tape. Cheap to copy; valid while the tape lives
// and has not been reset.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  Tape<T>& tape() const { return *tape_; }
  int node_id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Array<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::span<const T> data() const { return value().data(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;

 private:
  friend class Tape<T>;
  Tensor(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

// What a backward rule sees: its forward output, the incoming gradient, the
// forward inputs, and gradient buffers for inputs (nullptr where no gradient
// is needed). Rules accumulate into the buffers, never overwrite.
template <typename T>
struct GradContext {
  const Array<T>& out_value;
  const Array<T>& out_grad;
  std::span<const Array<T>* const> in_values;
  std::span<Array<T>* const> in_grads;
};

template <typename T>
using BackwardFn = std::function<void(const GradContext<T>&)>;

// Gradient per requires-grad leaf, keyed by node id.
template <typename T>
using GradientMap = std::map<int, Array<T>>;

enum class GradMode { enabled, disabled };

// Explicit, per-forward-pass record of operations. Nodes are appended in
// execution order, so the node list is already topologically sorted. Node
// storage never relocates, so references to values stay valid until reset().
template <typename T>
class Tape {
 public:
  explicit Tape(GradMode mode = GradMode::enabled) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return mode_ == GradMode::enabled; }

  Tensor<T> constant(Array<T> value);
  Tensor<T> leaf(Array<T> value, bool requires_grad = true);
  // Binds a parameter; backward adds this node's gradient into p.grad. Binding
  // the same parameter again returns the existing node.
  Tensor<T> parameter(Parameter<T>& p);

  // Appends an op result. The backward rule is dropped when no input needs a gradient.
  Tensor<T> record(std::string_view op, Array<T> value, std::span<const Tensor<T>> inputs,
                   BackwardFn<T> backward);
  Tensor<T> record(std::string_view op, Array<T> value, std::initializer_list<Tensor<T>> inputs,
                   BackwardFn<T> backward) {
    return record(op, std::move(value), std::span<const Tensor<T>>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  // Reverse sweep from a scalar loss. One call per recording; reset() re-arms.
  GradientMap<T> backward(const Tensor<T>& loss);

  const Array<T>& value(int id) const { return node(id).value; }
  bool requires_grad(int id) const { return node(id).requires_grad; }
  std::string_view op_name(int id) const { return node(id).op; }
  // Gradient of any node after backward(); nullptr if it received none.
  const Array<T>* grad(int id) const;

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  void reset();

 private:
  struct Node {
    std::string op;
    Array<T> value;
    Array<T> grad;
    std::vector<int> inputs;
    BackwardFn<T> backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  const Node& node(int id) const;
  void check_owned(const Tensor<T>& t) const;

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, int> bound_;
  GradMode mode_;
  bool consumed_ = false;
};

template <typename T>
const Array<T>& Tensor<T>::value() const {
  if (!tape_) throw TapeError("Tensor: null handle");
  return tape_->value(id_);
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return tape_ && tape_->requires_grad(id_);
}

// Test hook: names one op whose backward rule deliberately produces wrong
// gradients. Used to prove the gradient checker detects broken rules.
namespace debug {
void set_faulty_backward(std::string op);
bool backward_is_faulty(std::string_view op);
}  // namespace debug

}  // namespace cmm
