#include "cmm/model/cmm_model.hpp"

#include "cmm/tensor/ops.hpp"

namespace cmm::model {

template <typename T>
CmmModel<T>::CmmModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const ModelConfig& c = config_;
  Rng rng(seed);
  const std::size_t d = c.lang_dim;

  embedding_ = nn::Embedding<T>("encoder.embedding", c.word_vocab, c.embed_dim, rng);
  rnn_fwd_ = nn::RecurrentCell<T>("encoder.fwd", c.encoder, c.embed_dim, c.hidden_size(), rng);
  rnn_bwd_ = nn::RecurrentCell<T>("encoder.bwd", c.encoder, c.embed_dim, c.hidden_size(), rng);
  stem_ = nn::Conv2d<T>("stem.conv", c.image.channels, c.channels, 3, rng);
  stem_bn_ = nn::BatchNorm<T>("stem.bn", c.channels);

  steps_.resize(c.n_steps);
  for (std::size_t i = 0; i < c.n_steps; ++i) {
    const std::string p = "step" + std::to_string(i + 1);
    Step& s = steps_[i];
    s.film_mlp = nn::Linear<T>(p + ".film_mlp", d, 2 * c.channels, rng);
    s.conv_in = nn::Conv2d<T>(p + ".conv_in", c.channels + 2, c.channels, 1, rng);
    s.conv_mid = nn::Conv2d<T>(p + ".conv_mid", c.channels, c.channels, 3, rng);
    s.bn = nn::BatchNorm<T>(p + ".bn", c.channels);
    s.attention = nn::Linear<T>(p + ".attention", d, 1, rng);
  }

  gm_.resize(c.gm_sets());
  for (std::size_t i = 0; i < gm_.size(); ++i) {
    const std::string p = c.gm_variant == GmVariant::unshared ? "g_m" + std::to_string(i + 1) : "g_m";
    LanguageProjection& g = gm_[i];
    if (c.gm_variant == GmVariant::cnn2) {
      g.conv_a = nn::Conv2d<T>(p + ".conv_a", c.channels, c.channels, 3, rng);
      g.conv_b = nn::Conv2d<T>(p + ".conv_b", c.channels, c.channels, 3, rng);
      g.mlp = nn::Linear<T>(p + ".mlp", c.channels, 2 * d, rng);
    } else {
      g.conv_a = nn::Conv2d<T>(p + ".conv", c.channels, 2 * d, 1, rng);
      if (c.gm_variant != GmVariant::no_bn) g.bn = nn::BatchNorm<T>(p + ".bn", 2 * d);
    }
  }

  proj_conv_ = nn::Conv2d<T>("g_p.conv", c.channels, c.proj_dim, 1, rng);
  proj_bn_ = nn::BatchNorm<T>("g_p.bn", c.proj_dim);
  head_hidden_ = nn::Linear<T>("head.hidden", c.proj_dim, c.head_hidden, rng);
  head_out_ = nn::Linear<T>("head.out", c.head_hidden, c.answer_vocab, rng);

  embedding_.register_into(registry_);
  rnn_fwd_.register_into(registry_);
  rnn_bwd_.register_into(registry_);
  stem_.register_into(registry_);
  stem_bn_.register_into(registry_);
  for (Step& s : steps_) {
    s.film_mlp.register_into(registry_);
    s.conv_in.register_into(registry_);
    s.conv_mid.register_into(registry_);
    s.bn.register_into(registry_);
    s.attention.register_into(registry_);
  }
  for (LanguageProjection& g : gm_) {
    g.conv_a.register_into(registry_);
    if (c.gm_variant == GmVariant::cnn2) {
      g.conv_b.register_into(registry_);
      g.mlp.register_into(registry_);
    } else if (c.gm_variant != GmVariant::no_bn) {
      g.bn.register_into(registry_);
    }
  }
  proj_conv_.register_into(registry_);
  proj_bn_.register_into(registry_);
  head_hidden_.register_into(registry_);
  head_out_.register_into(registry_);
}

template <typename T>
void CmmModel<T>::check_step(std::size_t step) const {
  if (step < 1 || step > config_.n_steps) {
    throw std::out_of_range("step " + std::to_string(step) + " outside 1.." + std::to_string(config_.n_steps));
  }
}

template <typename T>
QuestionEncoding<T> CmmModel<T>::encode_question(Tape<T>& tape, std::span<const std::int32_t> tokens,
                                                 std::span<const std::int32_t> lengths) {
  const std::size_t batch = lengths.size();
  const std::size_t steps = config_.max_len;
  if (batch == 0) throw std::invalid_argument("encode_question: empty batch");
  if (tokens.size() != batch * steps) {
    throw ShapeError("encode_question: expected " + std::to_string(batch * steps) + " token ids, got " +
                     std::to_string(tokens.size()));
  }
  for (std::int32_t len : lengths) {
    if (len < 1) throw std::invalid_argument("encode_question: zero-length question");
    if (static_cast<std::size_t>(len) > steps) throw std::invalid_argument("encode_question: question longer than max_len");
  }

  std::vector<std::int32_t> ids(batch * steps);
  std::vector<std::uint8_t> valid(batch * steps);
  Array<T> last({steps, batch, 1});
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < batch; ++b) {
      ids[t * batch + b] = tokens[b * steps + t];
      valid[t * batch + b] = t < static_cast<std::size_t>(lengths[b]);
      if (t + 1 == static_cast<std::size_t>(lengths[b])) last[t * batch + b] = T(1);
    }
  }

  QuestionEncoding<T> out;
  Tensor<T> emb = reshape(embedding_.forward(tape, ids), {steps, batch, config_.embed_dim});
  std::span<const std::uint8_t> mask;
  if (config_.mask_pad) mask = valid;
  out.states = bi_rnn(tape, rnn_fwd_, rnn_bwd_, emb, mask);
  out.q0 = reduce(Reduce::sum, mul(out.states, tape.constant(std::move(last))), 0).values;
  if (config_.mask_pad) out.keep = std::move(valid);
  return out;
}

template <typename T>
Tensor<T> CmmModel<T>::encode_image(Tape<T>& tape, std::span<const float> images, std::size_t batch) {
  const ImageSpec& im = config_.image;
  const std::size_t per = im.channels * im.height * im.width;
  if (images.size() != batch * per) {
    throw ShapeError("encode_image: expected " + std::to_string(batch) + " images of " + std::to_string(im.channels) +
                     "x" + std::to_string(im.height) + "x" + std::to_string(im.width));
  }
  if (config_.zero_visual) {
    return tape.constant(Array<T>({batch, config_.channels, im.height, im.width}));
  }
  Array<T> x({batch, im.channels, im.height, im.width}, std::vector<T>(images.begin(), images.end()));
  Tensor<T> y = stem_.forward(tape, tape.constant(std::move(x)));
  return relu(stem_bn_.forward(tape, y, training_));
}

template <typename T>
Modulation<T> CmmModel<T>::split_modulation(Tape<T>& tape, const Tensor<T>& raw, std::size_t width,
                                            bool one_plus) const {
  Modulation<T> m;
  m.gamma = slice(raw, 1, 0, width);
  m.beta = slice(raw, 1, width, 2 * width);
  if (one_plus) m.gamma = add(m.gamma, tape.constant(Array<T>({width}, T(1))));
  return m;
}

template <typename T>
Modulation<T> CmmModel<T>::visual_mod_params(Tape<T>& tape, std::size_t step, const Tensor<T>& q_prev) {
  check_step(step);
  Tensor<T> raw = steps_[step - 1].film_mlp.forward(tape, q_prev);
  return split_modulation(tape, raw, config_.channels, config_.gamma_mode == GammaMode::one_plus_delta);
}

template <typename T>
Tensor<T> CmmModel<T>::coordinates(Tape<T>& tape, std::size_t batch, std::size_t h, std::size_t w) const {
  const Array<T> maps = nn::coordinate_maps<T>(h, w);
  Array<T> out({batch, 2, h, w});
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(maps.ptr(), maps.size(), out.ptr() + b * maps.size());
  return tape.constant(std::move(out));
}

template <typename T>
Tensor<T> CmmModel<T>::modulated_resblock(Tape<T>& tape, std::size_t step, const Tensor<T>& v_prev,
                                          const Modulation<T>& mod) {
  check_step(step);
  const Shape& s = v_prev.shape();
  if (s.size() != 4 || s[1] != config_.channels) {
    throw ShapeError("modulated_resblock: expected [batch, " + std::to_string(config_.channels) + ", H, W], got " +
                     shape_str(s));
  }
  Step& st = steps_[step - 1];
  Tensor<T> x = concat({v_prev, coordinates(tape, s[0], s[2], s[3])}, 1);
  Tensor<T> skip = relu(st.conv_in.forward(tape, x));
  Tensor<T> y = st.bn.forward(tape, st.conv_mid.forward(tape, skip), training_);
  y = relu(nn::film_affine(y, mod.gamma, mod.beta, 1, 0));
  return add(skip, y);
}

template <typename T>
Modulation<T> CmmModel<T>::language_mod_params(Tape<T>& tape, std::size_t step, const Tensor<T>& v) {
  check_step(step);
  LanguageProjection& g = gm_[config_.gm_variant == GmVariant::unshared ? step - 1 : 0];
  Tensor<T> raw;
  if (config_.gm_variant == GmVariant::cnn2) {
    Tensor<T> y = relu(g.conv_a.forward(tape, v));
    y = relu(g.conv_b.forward(tape, y));
    raw = g.mlp.forward(tape, nn::global_max_pool_argmax(y).values);
  } else {
    Tensor<T> y = g.conv_a.forward(tape, v);
    if (config_.gm_variant == GmVariant::no_bn) {
      raw = nn::global_max_pool_argmax(config_.gm_relu ? relu(y) : y).values;
    } else {
      raw = nn::bn_relu_max_pool(y, tape.parameter(g.bn.gamma), tape.parameter(g.bn.beta), g.bn.state, training_,
                                 config_.gm_relu)
                .values;
    }
  }
  return split_modulation(tape, raw, config_.lang_dim, config_.gamma_mode == GammaMode::one_plus_delta);
}

template <typename T>
AttentionResult<T> CmmModel<T>::textual_attention(Tape<T>& tape, std::size_t step,
                                                  const QuestionEncoding<T>& question, const Modulation<T>& mod) {
  check_step(step);
  const Tensor<T>& h = question.states;
  const std::size_t steps = h.shape()[0], batch = h.shape()[1], d = h.shape()[2];
  Tensor<T> e = nn::film_affine(h, mod.gamma, mod.beta, 2, 1);
  Tensor<T> logits = reshape(steps_[step - 1].attention.forward(tape, reshape(e, {steps * batch, d})), {steps, batch});
  AttentionResult<T> out;
  out.alpha = softmax(logits, 0, std::span<const std::uint8_t>(question.keep));
  const Tensor<T>& summed = config_.attend_modulated ? e : h;
  out.q = reduce(Reduce::sum, mul(summed, reshape(out.alpha, {steps, batch, 1})), 0).values;
  return out;
}

template <typename T>
StepResult<T> CmmModel<T>::cmm_step(Tape<T>& tape, std::size_t step, const Tensor<T>& q_prev,
                                    const Tensor<T>& v_prev, const QuestionEncoding<T>& question) {
  StepResult<T> out;
  out.v = modulated_resblock(tape, step, v_prev, visual_mod_params(tape, step, q_prev));
  AttentionResult<T> att = textual_attention(tape, step, question, language_mod_params(tape, step, out.v));
  out.q = att.q;
  out.alpha = att.alpha;
  return out;
}

template <typename T>
Projection<T> CmmModel<T>::project(Tape<T>& tape, const Tensor<T>& v_last) {
  Tensor<T> y = proj_conv_.forward(tape, v_last);
  nn::MaxPoolResult<T> pooled = nn::bn_relu_max_pool(y, tape.parameter(proj_bn_.gamma), tape.parameter(proj_bn_.beta),
                                                      proj_bn_.state, training_);
  return {pooled.values, std::move(pooled.argmax)};
}

template <typename T>
Tensor<T> CmmModel<T>::answer_head(Tape<T>& tape, const Tensor<T>& u) {
  return head_out_.forward(tape, relu(head_hidden_.forward(tape, u)));
}

template <typename T>
ForwardOutput<T> CmmModel<T>::forward(Tape<T>& tape, const Batch& batch, bool snapshots) {
  ForwardOutput<T> out;
  QuestionEncoding<T> question = encode_question(tape, batch.tokens, batch.lengths);
  Tensor<T> v = encode_image(tape, batch.images, batch.size);
  Tensor<T> q = question.q0;
  if (snapshots) {
    out.trace.questions.push_back(q.value());
    out.trace.visuals.push_back(v.value());
  }
  const std::size_t steps = config_.max_len;
  for (std::size_t i = 1; i <= config_.n_steps; ++i) {
    StepResult<T> r = cmm_step(tape, i, q, v, question);
    q = r.q;
    v = r.v;
    Array<T> alpha({batch.size, steps});
    const Array<T>& a = r.alpha.value();
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t b = 0; b < batch.size; ++b) alpha[b * steps + t] = a[t * batch.size + b];
    }
    out.trace.attention.push_back(std::move(alpha));
    if (snapshots) {
      out.trace.questions.push_back(q.value());
      out.trace.visuals.push_back(v.value());
    }
  }
  Projection<T> proj = project(tape, v);
  out.trace.argmax = std::move(proj.argmax);
  out.logits = answer_head(tape, proj.u);
  return out;
}

template <typename T>
ParamCensus CmmModel<T>::param_census() const {
  ParamCensus census;
  census.film_mlp_sets = steps_.size();
  census.resblock_sets = steps_.size();
  census.attention_sets = steps_.size();
  census.gm_sets = gm_.size();
  for (const Parameter<T>* p : registry_.params) {
    const std::string& name = p->name;
    const auto dot = name.find('.');
    std::string component = name.substr(0, dot);
    if (component.rfind("step", 0) == 0) {
      const std::string part = name.substr(dot + 1, name.find('.', dot + 1) - dot - 1);
      component += part == "film_mlp" || part == "attention" ? "." + part : ".resblock";
    }
    census.counts[component] += p->value.size();
    census.total += p->value.size();
  }
  return census;
}

template <typename T>
void CmmModel<T>::zero_grad() {
  for (Parameter<T>* p : registry_.params) p->zero_grad();
}

template <typename T>
NamedArrays<T> CmmModel<T>::state() const {
  NamedArrays<T> out;
  for (const Parameter<T>* p : registry_.params) out.emplace_back(p->name, p->value);
  for (const auto& [name, buf] : registry_.buffers) out.emplace_back(name, *buf);
  return out;
}

template <typename T>
void CmmModel<T>::load_state(const NamedArrays<T>& state) {
  std::map<std::string, const Array<T>*> by_name;
  for (const auto& [name, a] : state) by_name[name] = &a;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Array<T>& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::invalid_argument("load_state: missing tensor '" + name + "'");
    if (it->second->shape() != shape) {
      throw ShapeError("load_state: '" + name + "' has shape " + shape_str(it->second->shape()) + ", model expects " +
                       shape_str(shape));
    }
    return *it->second;
  };
  if (by_name.size() != registry_.params.size() + registry_.buffers.size()) {
    throw std::invalid_argument("load_state: tensor count differs from model");
  }
  for (Parameter<T>* p : registry_.params) p->value = fetch(p->name, p->value.shape());
  for (auto& [name, buf] : registry_.buffers) *buf = fetch(name, buf->shape());
}

template class CmmModel<float>;
template class CmmModel<double>;

}  // namespace cmm::model
