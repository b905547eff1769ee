#include "cmm/train/ablation.hpp"

#include <algorithm>

namespace cmm::train {

std::vector<AblationVariant> expand_grid(const model::ModelConfig& base, const AblationGrid& grid) {
  std::vector<AblationVariant> out;
  for (std::size_t n : grid.steps) {
    model::ModelConfig c = base;
    c.n_steps = n;
    out.push_back({std::to_string(n) + "-step", c});
  }
  for (model::GmVariant v : grid.gm_variants) {
    model::ModelConfig c = base;
    c.gm_variant = v;
    out.push_back({std::to_string(base.n_steps) + "-step g_m=" + std::string(model::to_string(v)), c});
  }
  for (model::CellKind k : grid.encoders) {
    model::ModelConfig c = base;
    c.encoder = k;
    out.push_back({std::to_string(base.n_steps) + "-step " + std::string(model::to_string(k)), c});
  }
  for (const auto& v : out) v.config.validate();
  return out;
}

std::vector<AblationRow> ablation_run(const model::ModelConfig& base, const AblationGrid& grid,
                                      const EncodedSplit& train_split, const EncodedSplit& val_split,
                                      const TrainSchedule& schedule, const std::vector<std::uint64_t>& seeds,
                                      const AblationOptions& options) {
  if (seeds.empty() && !grid.empty()) throw std::invalid_argument("ablation: no seeds");
  std::vector<AblationRow> rows;
  for (const AblationVariant& v : expand_grid(base, grid)) {
    AblationRow row{v.label, v.config, seeds, {}, {}, 0};
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      TrainSchedule s = schedule;
      s.seed = seeds[i];
      model::CmmModel<float> m(v.config, seeds[i]);
      const TrainResult r = train(m, train_split, &val_split, s);
      row.per_seed.push_back(evaluate(m, val_split));
      row.best_epochs.push_back(r.best_epoch);
      if (row.per_seed.back().overall > row.per_seed[row.best_seed].overall) row.best_seed = i;
      if (options.on_run) options.on_run(row, i);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::size_t w = 7;
  for (const auto& r : rows) w = std::max(w, r.label.size());
  std::string out = report_header(w) + "\n";
  for (const auto& r : rows) out += report_row(r.best(), r.label, w) + "\n";
  return out;
}

}  // namespace cmm::train
