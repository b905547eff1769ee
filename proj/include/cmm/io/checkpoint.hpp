#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmm/data/vocab.hpp"
#include "cmm/model/cmm_model.hpp"

namespace cmm::io {

// Binary layout, all integers little-endian u32:
//   "CMM1" | version | config length | config text
//   | tensor count | per tensor: name length, name, rank, extents, f32 values
//   | CRC-32 of every preceding byte
// The config text holds the model config and both vocabularies.
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, version, checksum, malformed, shape, config };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct LoadedCheckpoint {
  std::unique_ptr<model::CmmModel<float>> model;
  data::Vocab vocab;
};

std::vector<std::uint8_t> serialize_checkpoint(const model::CmmModel<float>& model, const data::Vocab& vocab);
LoadedCheckpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const model::CmmModel<float>& model, const data::Vocab& vocab, const std::filesystem::path& path);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
// Rejects a checkpoint whose config differs from `expected` (Kind::config).
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const model::ModelConfig& expected);

// Model config as "key=value" lines; exact inverse pair.
std::string model_config_text(const model::ModelConfig& config);
model::ModelConfig parse_model_config_text(const std::string& text);

}  // namespace cmm::io
