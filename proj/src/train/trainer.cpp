#include "cmm/train/trainer.hpp"

#include <cmath>
#include <numeric>

#include "json.hpp"

#include "cmm/tensor/random.hpp"
#include "cmm/train/loss.hpp"
#include "cmm/train/optimizer.hpp"

namespace cmm::train {

std::string to_json_line(const EpochRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["phase"] = r.phase;
  j["train_loss"] = r.train_loss;
  j["train_accuracy"] = r.train_accuracy;
  if (r.val) {
    j["val_overall"] = r.val->overall;
    nlohmann::json per;
    for (data::QType t : data::kQTypes) per[std::string(data::name(t))] = r.val->of(t);
    j["val"] = per;
  }
  return j.dump();
}

namespace {

bool all_finite(const std::vector<Parameter<float>*>& params) {
  for (const Parameter<float>* p : params) {
    for (float v : p->value.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace

TrainResult train(model::CmmModel<float>& model, const EncodedSplit& train_split, const EncodedSplit* val_split,
                  const TrainSchedule& schedule, const TrainOptions& options) {
  schedule.validate();
  check_compatible(train_split, model.config());
  if (val_split) check_compatible(*val_split, model.config());
  if (train_split.size == 0) throw std::invalid_argument("train: empty training split");

  OptimizerSettings adam_cfg{OptimizerKind::adam, schedule.adam_lr, schedule.beta1, schedule.beta2, schedule.epsilon,
                             schedule.momentum};
  OptimizerSettings sgd_cfg = adam_cfg;
  sgd_cfg.kind = OptimizerKind::sgd_momentum;
  sgd_cfg.lr = schedule.sgd_lr;
  Optimizer<float> adam(adam_cfg), sgd(sgd_cfg);

  const auto params = model.parameters();
  Rng order(mix_seed(schedule.seed ^ 0x6f72646572ULL));
  std::vector<std::size_t> perm(train_split.size);
  std::iota(perm.begin(), perm.end(), std::size_t{0});

  TrainResult result;
  model::NamedArrays<float> best_state;
  const std::size_t total = schedule.total_epochs();
  for (std::size_t epoch = 1; epoch <= total; ++epoch) {
    const bool in_adam = epoch <= schedule.adam_epochs;
    Optimizer<float>& opt = in_adam ? adam : sgd;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = in_adam ? "adam" : "sgd";

    model.set_training(true);
    order.shuffle(perm);
    double loss_sum = 0;
    std::size_t hits = 0;
    for (std::size_t b = 0; b < perm.size(); b += schedule.batch_size) {
      const std::size_t e = std::min(perm.size(), b + schedule.batch_size);
      const model::Batch batch = make_batch(train_split, std::span(perm).subspan(b, e - b));
      model.zero_grad();
      Tape<float> tape;
      const auto out = model.forward(tape, batch);
      const Tensor<float> loss = cross_entropy(out.logits, batch.labels);
      double value = loss.value()[0];
      if (epoch == options.poison_epoch && b == 0) value = std::nan("");
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b / schedule.batch_size + 1));
      }
      tape.backward(loss);
      opt.step(params);
      loss_sum += value * static_cast<double>(batch.size);

      const Array<float>& logits = out.logits.value();
      const std::size_t classes = logits.dim(1);
      for (std::size_t r = 0; r < batch.size; ++r) {
        const float* row = logits.ptr() + r * classes;
        if (std::max_element(row, row + classes) - row == batch.labels[r]) ++hits;
      }
    }
    if (!all_finite(params)) throw NumericError("non-finite parameter after epoch " + std::to_string(epoch));
    rec.train_loss = loss_sum / static_cast<double>(perm.size());
    rec.train_accuracy = static_cast<double>(hits) / static_cast<double>(perm.size());

    if (val_split && (epoch % schedule.eval_every == 0 || epoch == total)) {
      rec.val = evaluate(model, *val_split);
      if (rec.val->overall > result.best_val) {
        result.best_val = rec.val->overall;
        result.best_epoch = epoch;
        best_state = model.state();
      }
    }
    result.log.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  if (!best_state.empty()) model.load_state(best_state);
  model.set_training(false);
  return result;
}

}  // namespace cmm::train
