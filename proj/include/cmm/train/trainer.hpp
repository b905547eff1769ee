#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmm/train/evaluate.hpp"
#include "cmm/train/schedule.hpp"

namespace cmm::train {

// Loss or parameters went non-finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochRecord {
  std::size_t epoch = 0;     // 1-based
  std::string phase;         // "adam" or "sgd"
  double train_loss = 0;     // mean over samples
  double train_accuracy = 0; // train-mode predictions during the epoch
  std::optional<EvalReport> val;
};

// One JSON object per line, keys sorted.
std::string to_json_line(const EpochRecord& record);

struct TrainOptions {
  std::function<void(const EpochRecord&)> on_epoch;
  // Test hook: poisons the loss of the first batch of this epoch (1-based) with NaN.
  std::size_t poison_epoch = 0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;  // 0 if no validation ran
  double best_val = -1;
};

// ADAM for schedule.adam_epochs, then SGD with momentum for schedule.sgd_epochs.
// Batches are drawn from a permutation reshuffled each epoch from schedule.seed.
// With a validation split the model ends holding the parameters of the epoch
// with the best overall validation accuracy (earliest on ties); otherwise
// those of the final epoch.
TrainResult train(model::CmmModel<float>& model, const EncodedSplit& train_split, const EncodedSplit* val_split,
                  const TrainSchedule& schedule, const TrainOptions& options = {});

}  // namespace cmm::train
