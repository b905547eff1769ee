#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cmm/train/trainer.hpp"

namespace cmm::train {

struct AblationGrid {
  std::vector<std::size_t> steps;             // each with the base g_m and encoder
  std::vector<model::GmVariant> gm_variants;  // each at the base step count
  std::vector<model::CellKind> encoders;      // each at the base step count and g_m

  bool empty() const { return steps.empty() && gm_variants.empty() && encoders.empty(); }
};

struct AblationVariant {
  std::string label;
  model::ModelConfig config;
};

// Rows in grid order: steps, then g_m variants, then encoders.
std::vector<AblationVariant> expand_grid(const model::ModelConfig& base, const AblationGrid& grid);

struct AblationRow {
  std::string label;
  model::ModelConfig config;
  std::vector<std::uint64_t> seeds;
  std::vector<EvalReport> per_seed;  // best-epoch validation report per seed
  std::vector<std::size_t> best_epochs;
  std::size_t best_seed = 0;  // index into seeds
  const EvalReport& best() const { return per_seed.at(best_seed); }
};

struct AblationOptions {
  std::function<void(const AblationRow& row, std::size_t seed_index)> on_run;
};

// One model per (variant, seed), all sharing the schedule; schedule.seed is
// replaced by each seed in turn.
std::vector<AblationRow> ablation_run(const model::ModelConfig& base, const AblationGrid& grid,
                                      const EncodedSplit& train_split, const EncodedSplit& val_split,
                                      const TrainSchedule& schedule, const std::vector<std::uint64_t>& seeds,
                                      const AblationOptions& options = {});

// One line per variant with its best-of-seeds validation report.
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace cmm::train
