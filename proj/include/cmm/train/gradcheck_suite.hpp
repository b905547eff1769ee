#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cmm/model/config.hpp"
#include "cmm/tensor/grad_check.hpp"

namespace cmm::train {

struct SuiteResult {
  std::string name;
  bool end_to_end = false;
  double tolerance = 0;
  GradCheckReport report;
  bool passed() const { return report.passed(); }
};

struct SuiteOptions {
  std::uint64_t seed = 7;
  double layer_tolerance = 1e-6;
  double model_tolerance = 1e-5;
  bool layers = true;
  bool models = true;
  std::function<void(const SuiteResult&)> on_result;
};

// A small model config for double-precision checks: 2 steps, 4 channels,
// 4x4 images.
model::ModelConfig tiny_model_config();

// Checks every differentiable op in isolation, then the whole network under
// each architectural switch, against central differences.
std::vector<SuiteResult> run_gradcheck_suite(const model::ModelConfig& tiny, const SuiteOptions& options = {});

}  // namespace cmm::train
