#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmm/train/batch.hpp"

namespace cmm::train {

struct EvalReport {
  double overall = 0;
  std::array<double, 5> accuracy{};      // by QType
  std::array<std::size_t, 5> counts{};   // samples by QType
  std::array<std::size_t, 5> correct{};
  std::size_t total = 0;

  double of(data::QType t) const { return accuracy[static_cast<std::size_t>(t)]; }
  bool operator==(const EvalReport&) const = default;
};

EvalReport report_from_predictions(std::span<const data::QType> qtypes, std::span<const std::int32_t> predicted,
                                   std::span<const std::int32_t> labels);

std::vector<std::int32_t> predict(std::span<model::CmmModel<float>* const> members, const EncodedSplit& split,
                                  std::size_t batch_size = 256);

// Eval-mode pass; the model's mode and buffers are left as they were.
EvalReport evaluate(model::CmmModel<float>& model, const EncodedSplit& split, std::size_t batch_size = 256);
// Averages member probabilities before the argmax.
EvalReport evaluate_ensemble(std::span<model::CmmModel<float>* const> members, const EncodedSplit& split,
                             std::size_t batch_size = 256);

// Header plus one row: Overall, Count, Exist, Compare Numbers, Query Attribute,
// Compare Attribute, as percentages.
std::string format_report(const EvalReport& report, const std::string& label = "");
std::string report_header(std::size_t label_width = 0);
std::string report_row(const EvalReport& report, const std::string& label = "", std::size_t label_width = 0);

}  // namespace cmm::train
