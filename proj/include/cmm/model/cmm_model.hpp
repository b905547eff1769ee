#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmm/model/config.hpp"
#include "cmm/nn/layers.hpp"

namespace cmm::model {

// One mini-batch as the network consumes it. Tokens are padded to max_len
// and bracketed by START/END; `lengths` counts the unpadded tokens including
// both brackets.
struct Batch {
  std::size_t size = 0;
  std::vector<std::int32_t> tokens;   // [size, max_len]
  std::vector<std::int32_t> lengths;  // [size]
  std::vector<float> images;          // [size, channels, height, width]
  std::vector<std::int32_t> labels;   // [size], may be empty
};

template <typename T>
struct StepTrace {
  std::vector<Array<T>> attention;   // per step: [batch, max_len]
  std::vector<Array<T>> questions;   // q_0..q_N, [batch, lang_dim] (snapshots only)
  std::vector<Array<T>> visuals;     // V_0..V_N, [batch, C, H, W] (snapshots only)
  std::vector<nn::PixelPos> argmax;  // final projection: [batch, proj_dim]
};

template <typename T>
struct ForwardOutput {
  Tensor<T> logits;  // [batch, answer_vocab]
  StepTrace<T> trace;
};

template <typename T>
struct QuestionEncoding {
  Tensor<T> states;                 // h, time-major [max_len, batch, lang_dim]
  Tensor<T> q0;                     // [batch, lang_dim]
  std::vector<std::uint8_t> keep;   // attention mask, time-major [max_len * batch]; empty = attend all
};

template <typename T>
struct Modulation {
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
struct AttentionResult {
  Tensor<T> q;      // [batch, lang_dim]
  Tensor<T> alpha;  // [max_len, batch]
};

template <typename T>
struct StepResult {
  Tensor<T> q;
  Tensor<T> v;
  Tensor<T> alpha;
};

template <typename T>
struct Projection {
  Tensor<T> u;                       // [batch, proj_dim]
  std::vector<nn::PixelPos> argmax;  // [batch * proj_dim]
};

struct ParamCensus {
  std::size_t film_mlp_sets = 0;
  std::size_t resblock_sets = 0;
  std::size_t attention_sets = 0;
  std::size_t gm_sets = 0;
  std::map<std::string, std::size_t> counts;  // component -> scalar parameters
  std::size_t total = 0;
};

template <typename T>
using NamedArrays = std::vector<std::pair<std::string, Array<T>>>;

// The cascaded mutual modulation network. Each step i consumes (q_{i-1},
// V_{i-1}): the question vector sets the FiLM parameters of a ResBlock that
// produces V_i, and V_i in turn sets the FiLM parameters applied to the token
// states before attention produces q_i.
template <typename T>
class CmmModel {
 public:
  CmmModel(ModelConfig config, std::uint64_t seed);
  CmmModel(const CmmModel&) = delete;
  CmmModel& operator=(const CmmModel&) = delete;

  const ModelConfig& config() const { return config_; }
  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }

  QuestionEncoding<T> encode_question(Tape<T>& tape, std::span<const std::int32_t> tokens,
                                      std::span<const std::int32_t> lengths);
  Tensor<T> encode_image(Tape<T>& tape, std::span<const float> images, std::size_t batch);
  // Step indices are 1-based.
  Modulation<T> visual_mod_params(Tape<T>& tape, std::size_t step, const Tensor<T>& q_prev);
  Tensor<T> modulated_resblock(Tape<T>& tape, std::size_t step, const Tensor<T>& v_prev, const Modulation<T>& mod);
  Modulation<T> language_mod_params(Tape<T>& tape, std::size_t step, const Tensor<T>& v);
  AttentionResult<T> textual_attention(Tape<T>& tape, std::size_t step, const QuestionEncoding<T>& question,
                                       const Modulation<T>& mod);
  StepResult<T> cmm_step(Tape<T>& tape, std::size_t step, const Tensor<T>& q_prev, const Tensor<T>& v_prev,
                         const QuestionEncoding<T>& question);
  Projection<T> project(Tape<T>& tape, const Tensor<T>& v_last);
  Tensor<T> answer_head(Tape<T>& tape, const Tensor<T>& u);

  ForwardOutput<T> forward(Tape<T>& tape, const Batch& batch, bool snapshots = false);

  ParamCensus param_census() const;
  const nn::ParamRegistry<T>& registry() const { return registry_; }
  std::vector<Parameter<T>*> parameters() const { return registry_.params; }
  void zero_grad();

  // Parameters and buffers by name, in registration order.
  NamedArrays<T> state() const;
  void load_state(const NamedArrays<T>& state);

 private:
  struct Step {
    nn::Linear<T> film_mlp;     // q_{i-1} -> (gamma, beta) for C channels
    nn::Conv2d<T> conv_in;      // 1x1, C+2 -> C
    nn::Conv2d<T> conv_mid;     // 3x3, C -> C
    nn::BatchNorm<T> bn;
    nn::Linear<T> attention;    // lang_dim -> 1
  };
  struct LanguageProjection {
    nn::Conv2d<T> conv_a;
    nn::Conv2d<T> conv_b;       // cnn2 only
    nn::BatchNorm<T> bn;        // standard/unshared only
    nn::Linear<T> mlp;          // cnn2 only
  };

  void check_step(std::size_t step) const;
  Tensor<T> coordinates(Tape<T>& tape, std::size_t batch, std::size_t h, std::size_t w) const;
  Modulation<T> split_modulation(Tape<T>& tape, const Tensor<T>& raw, std::size_t width, bool one_plus) const;

  ModelConfig config_;
  bool training_ = true;
  nn::Embedding<T> embedding_;
  nn::RecurrentCell<T> rnn_fwd_;
  nn::RecurrentCell<T> rnn_bwd_;
  nn::Conv2d<T> stem_;
  nn::BatchNorm<T> stem_bn_;
  std::vector<Step> steps_;
  std::vector<LanguageProjection> gm_;
  nn::Conv2d<T> proj_conv_;
  nn::BatchNorm<T> proj_bn_;
  nn::Linear<T> head_hidden_;
  nn::Linear<T> head_out_;
  nn::ParamRegistry<T> registry_;
};

template <typename T>
std::unique_ptr<CmmModel<T>> make_model(const ModelConfig& config, std::uint64_t seed) {
  return std::make_unique<CmmModel<T>>(config, seed);
}

}  // namespace cmm::model
