#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cmm/data/dataset.hpp"
#include "cmm/model/config.hpp"
#include "cmm/train/schedule.hpp"

namespace cmm::io {

// Everything a run needs, read from flat "section.key = value" text. Blank
// lines and lines starting with '#' are ignored. Unknown keys are errors.
struct RunConfig {
  model::ModelConfig model;
  data::DataConfig data;
  train::TrainSchedule train;

  // The model config with sizes taken from the data settings and vocabulary.
  model::ModelConfig resolved_model(const data::Vocab& vocab) const;
  // Throws model::ConfigError naming the first bad field.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_run_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);
// Every key with its current value, in a fixed order. parse_run_config
// reproduces the input exactly.
std::string to_text(const RunConfig& config);
std::vector<std::string> run_config_keys();

}  // namespace cmm::io
