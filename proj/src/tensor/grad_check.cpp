#include "cmm/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace cmm {

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradCheckReport::worst() const {
  double w = 0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

namespace {

double evaluate(const LossFn& loss) {
  Tape<double> tape(GradMode::disabled);
  Tensor<double> out = loss(tape);
  if (out.size() != 1) throw TapeError("grad_check: loss must be scalar, got " + shape_str(out.shape()));
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss, const std::vector<Parameter<double>*>& params,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.step = options.step;
  report.tolerance = options.tolerance;

  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    Tensor<double> out = loss(tape);
    if (out.size() != 1) throw TapeError("grad_check: loss must be scalar, got " + shape_str(out.shape()));
    tape.backward(out);
  }

  const double h = options.step;
  for (auto* p : params) {
    GradCheckEntry e;
    e.name = p->name;
    const std::size_t n = p->value.size();
    std::vector<std::size_t> coords;
    if (options.max_coords == 0 || options.max_coords >= n) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (std::size_t k = 0; k < options.max_coords; ++k) coords.push_back(k * n / options.max_coords);
    }
    double max_a = 0, max_n = 0, max_diff = 0;
    for (std::size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double fp = evaluate(loss);
      p->value[i] = saved - h;
      const double fm = evaluate(loss);
      p->value[i] = saved;
      const double numeric = (fp - fm) / (2 * h);
      const double analytic = p->grad[i];
      max_a = std::max(max_a, std::abs(analytic));
      max_n = std::max(max_n, std::abs(numeric));
      max_diff = std::max(max_diff, std::abs(analytic - numeric));
    }
    const double scale = std::max(max_a, max_n);
    e.checked = coords.size();
    e.max_abs_error = max_diff;
    e.max_rel_error = scale < options.abs_floor ? max_diff : max_diff / scale;
    e.passed = std::isfinite(e.max_rel_error) && e.max_rel_error < options.tolerance;
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace cmm
