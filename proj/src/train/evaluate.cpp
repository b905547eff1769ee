#include "cmm/train/evaluate.hpp"

#include <algorithm>
#include <cstdio>

#include "cmm/model/ensemble.hpp"

namespace cmm::train {

EvalReport report_from_predictions(std::span<const data::QType> qtypes, std::span<const std::int32_t> predicted,
                                   std::span<const std::int32_t> labels) {
  if (qtypes.size() != predicted.size() || labels.size() != predicted.size()) {
    throw std::invalid_argument("report: predictions, labels and types differ in length");
  }
  EvalReport r;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto t = static_cast<std::size_t>(qtypes[i]);
    ++r.counts[t];
    if (predicted[i] == labels[i]) {
      ++r.correct[t];
      ++hits;
    }
  }
  r.total = predicted.size();
  for (std::size_t t = 0; t < 5; ++t) {
    r.accuracy[t] = r.counts[t] ? static_cast<double>(r.correct[t]) / static_cast<double>(r.counts[t]) : 0.0;
  }
  r.overall = r.total ? static_cast<double>(hits) / static_cast<double>(r.total) : 0.0;
  return r;
}

std::vector<std::int32_t> predict(std::span<model::CmmModel<float>* const> members, const EncodedSplit& split,
                                  std::size_t batch_size) {
  std::vector<std::int32_t> out;
  out.reserve(split.size);
  for (std::size_t b = 0; b < split.size; b += batch_size) {
    const auto preds = model::ensemble_predict(members, make_batch(split, b, std::min(split.size, b + batch_size)));
    out.insert(out.end(), preds.begin(), preds.end());
  }
  return out;
}

EvalReport evaluate_ensemble(std::span<model::CmmModel<float>* const> members, const EncodedSplit& split,
                             std::size_t batch_size) {
  for (auto* m : members) check_compatible(split, m->config());
  const auto preds = predict(members, split, batch_size);
  return report_from_predictions(split.qtypes, preds, split.labels);
}

EvalReport evaluate(model::CmmModel<float>& model, const EncodedSplit& split, std::size_t batch_size) {
  model::CmmModel<float>* one[] = {&model};
  return evaluate_ensemble(one, split, batch_size);
}

namespace {
constexpr const char* kColumns[] = {"Overall", "Count", "Exist", "Compare Numbers", "Query Attribute",
                                    "Compare Attribute"};
}

std::string report_header(std::size_t label_width) {
  std::string out(label_width ? label_width + 2 : 0, ' ');
  for (const char* c : kColumns) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%*s", static_cast<int>(std::max<std::size_t>(8, std::string(c).size())), c);
    out += buf;
    out += "  ";
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::string report_row(const EvalReport& r, const std::string& label, std::size_t label_width) {
  std::string out;
  if (label_width) {
    out = label;
    out.resize(std::max(label_width, label.size()) + 2, ' ');
  }
  double values[6] = {r.overall, r.accuracy[0], r.accuracy[1], r.accuracy[2], r.accuracy[3], r.accuracy[4]};
  for (int i = 0; i < 6; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%*.2f",
                  static_cast<int>(std::max<std::size_t>(8, std::string(kColumns[i]).size())), 100.0 * values[i]);
    out += buf;
    out += "  ";
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::string format_report(const EvalReport& report, const std::string& label) {
  const std::size_t w = label.size();
  return report_header(w) + "\n" + report_row(report, label, w) + "\n";
}

}  // namespace cmm::train
