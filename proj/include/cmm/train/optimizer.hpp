#pragma once

#include <cstdint>
#include <vector>

#include "cmm/tensor/tape.hpp"

namespace cmm::train {

enum class OptimizerKind { adam, sgd_momentum };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.9;
};

// Per-parameter accumulators, created lazily on the first step and shaped
// like the parameters they track. An unallocated gradient counts as zero.
//   adam: m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
//         p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
//   sgd_momentum: v <- mu v + g; p <- p - lr v
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerSettings settings) : settings_(settings) {}

  const OptimizerSettings& settings() const { return settings_; }
  std::uint64_t steps() const { return steps_; }
  const std::vector<Array<T>>& first_moments() const { return first_; }
  const std::vector<Array<T>>& second_moments() const { return second_; }

  // Throws ShapeError if a gradient or accumulator disagrees with its parameter
  // or the parameter list changed length since the first step.
  void step(const std::vector<Parameter<T>*>& params);

 private:
  OptimizerSettings settings_;
  std::uint64_t steps_ = 0;
  std::vector<Array<T>> first_;   // adam m, or sgd velocity
  std::vector<Array<T>> second_;  // adam v
};

}  // namespace cmm::train
