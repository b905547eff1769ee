#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>

namespace cmm::train {

struct TrainSchedule {
  std::size_t adam_epochs = 30;
  std::size_t sgd_epochs = 5;
  std::size_t batch_size = 64;
  double adam_lr = 2.5e-4;
  double sgd_lr = 2.5e-4;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t eval_every = 1;  // epochs between validation passes
  std::uint64_t seed = 1;      // parameter init and batch order

  std::size_t total_epochs() const { return adam_epochs + sgd_epochs; }

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be at least 1");
    if (!(adam_lr > 0) || !(sgd_lr > 0)) throw std::invalid_argument("train: learning rates must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("train: momentum must be in [0, 1)");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
      throw std::invalid_argument("train: adam betas must be in [0, 1)");
    }
    if (!(epsilon > 0)) throw std::invalid_argument("train: epsilon must be positive");
    if (eval_every < 1) throw std::invalid_argument("train: eval_every must be at least 1");
  }
  bool operator==(const TrainSchedule&) const = default;
};

}  // namespace cmm::train
