#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

#include "cmm/nn/recurrent.hpp"

namespace cmm::model {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using nn::CellKind;

// Structure of the visual-to-language modulation projection.
//   standard : 1x1 conv -> BN -> ReLU -> global max pool, one set shared by all steps
//   cnn2     : two 3x3 convs with ReLU -> global max pool -> linear
//   no_bn    : standard without batch norm
//   unshared : standard structure with an independent set per step
enum class GmVariant { standard, cnn2, no_bn, unshared };

// plain: the modulation MLP predicts gamma directly.
// one_plus_delta: it predicts a delta and gamma = 1 + delta.
enum class GammaMode { plain, one_plus_delta };

struct ImageSpec {
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  bool operator==(const ImageSpec&) const = default;
};

struct ModelConfig {
  std::size_t n_steps = 4;
  std::size_t channels = 128;      // feature maps per ResBlock
  std::size_t lang_dim = 1024;     // bi-RNN state width, both directions
  std::size_t embed_dim = 200;
  std::size_t max_len = 24;        // padded question length including START/END
  std::size_t proj_dim = 512;      // kernels in the final projection
  std::size_t head_hidden = 1024;
  std::size_t word_vocab = 0;
  std::size_t answer_vocab = 0;
  CellKind encoder = CellKind::gru;
  GmVariant gm_variant = GmVariant::standard;
  GammaMode gamma_mode = GammaMode::one_plus_delta;
  bool mask_pad = true;
  bool gm_relu = true;             // ReLU before pooling in the language projection
  bool attend_modulated = false;   // sum modulated states instead of raw ones
  bool zero_visual = false;        // question-only baseline: V0 is all zeros
  ImageSpec image;

  std::size_t hidden_size() const { return lang_dim / 2; }
  std::size_t gm_sets() const { return gm_variant == GmVariant::unshared ? n_steps : 1; }

  // Throws ConfigError naming the first violated constraint.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

std::string_view to_string(CellKind k);
std::string_view to_string(GmVariant v);
std::string_view to_string(GammaMode m);
CellKind parse_encoder(std::string_view s);
GmVariant parse_gm_variant(std::string_view s);
GammaMode parse_gamma_mode(std::string_view s);

}  // namespace cmm::model
