#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cmm/tensor/tape.hpp"

namespace cmm {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double step = 0;
  double tolerance = 0;

  bool passed() const;
  double worst() const;
};

// Builds a scalar loss on the given tape from the current parameter values.
using LossFn = std::function<Tensor<double>(Tape<double>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Below this gradient scale the error is reported as absolute rather than relative.
  double abs_floor = 1e-10;
  // Caps the number of coordinates probed per parameter (0 = all), picked evenly.
  std::size_t max_coords = 0;
};

// Compares the taped gradient of `loss` with central differences
// (f(x+h) - f(x-h)) / 2h, one parameter coordinate at a time. Double mode only:
// single precision cannot resolve the quotient at useful step sizes.
//
// Relative error per parameter is max|a - n| / max(max|a|, max|n|); when both
// gradients are below abs_floor the absolute error is used instead.
GradCheckReport grad_check(const LossFn& loss, const std::vector<Parameter<double>*>& params,
                           const GradCheckOptions& options = {});

}  // namespace cmm
