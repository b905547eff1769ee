#include <gtest/gtest.h>

#include <cmath>

#include "cmm/model/cmm_model.hpp"
#include "cmm/model/ensemble.hpp"
#include "cmm/tensor/ops.hpp"
#include "cmm/train/gradcheck_suite.hpp"

using namespace cmm;
using namespace cmm::model;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.n_steps = 3;
  c.channels = 4;
  c.lang_dim = 8;
  c.embed_dim = 5;
  c.max_len = 7;
  c.proj_dim = 6;
  c.head_hidden = 9;
  c.word_vocab = 15;
  c.answer_vocab = 6;
  c.image = {3, 4, 4};
  return c;
}

Batch make_batch(const ModelConfig& c, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Batch b;
  b.size = n;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = 3 + rng.below(c.max_len - 2);
    for (std::size_t t = 0; t < c.max_len; ++t) {
      std::int32_t id = 0;
      if (t == 0) id = 1;
      else if (t + 1 == len) id = 2;
      else if (t < len) id = static_cast<std::int32_t>(4 + rng.below(c.word_vocab - 4));
      b.tokens.push_back(id);
    }
    b.lengths.push_back(static_cast<std::int32_t>(len));
    b.labels.push_back(static_cast<std::int32_t>(rng.below(c.answer_vocab)));
  }
  for (std::size_t i = 0; i < n * c.image.channels * c.image.height * c.image.width; ++i) {
    b.images.push_back(static_cast<float>(rng.uniform()));
  }
  return b;
}

template <typename T>
Parameter<T>& param(CmmModel<T>& m, const std::string& name) {
  for (auto* p : m.parameters())
    if (p->name == name) return *p;
  throw std::out_of_range(name);
}

template <typename T>
void zero(Parameter<T>& p) {
  p.value = Array<T>(p.value.shape(), T(0));
}


double max_abs_diff(const Array<double>& a, const Array<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST(Config, ValidationRejectsBadValues) {
  ModelConfig c = small_config();
  c.lang_dim = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.n_steps = 0;
  EXPECT_THROW(CmmModel<float>(c, 1), ConfigError);
  c = small_config();
  c.max_len = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_gm_variant("cnn3"), ConfigError);
  EXPECT_EQ(parse_gm_variant("no-bn"), GmVariant::no_bn);
}

TEST(Census, PerStepCopiesAndSharedProjection) {
  ModelConfig c = small_config();
  const std::size_t C = c.channels, D = c.lang_dim;
  for (std::size_t n : {1u, 4u, 6u}) {
    c.n_steps = n;
    CmmModel<float> m(c, 1);
    const ParamCensus census = m.param_census();
    EXPECT_EQ(census.film_mlp_sets, n);
    EXPECT_EQ(census.resblock_sets, n);
    EXPECT_EQ(census.attention_sets, n);
    EXPECT_EQ(census.gm_sets, 1u);
    for (std::size_t i = 1; i <= n; ++i) {
      const std::string s = "step" + std::to_string(i);
      EXPECT_EQ(census.counts.at(s + ".film_mlp"), D * 2 * C + 2 * C);
      EXPECT_EQ(census.counts.at(s + ".attention"), D + 1);
      // 1x1 (C+2 -> C), 3x3 (C -> C), BN affine
      EXPECT_EQ(census.counts.at(s + ".resblock"), (C + 2) * C + C + 9 * C * C + C + 2 * C);
    }
    // 1x1 conv to 2D plus BN affine, independent of N
    EXPECT_EQ(census.counts.at("g_m"), C * 2 * D + 2 * D + 4 * D);
    EXPECT_FALSE(census.counts.count("step" + std::to_string(n + 1) + ".film_mlp"));
    std::size_t total = 0;
    for (auto& [k, v] : census.counts) total += v;
    EXPECT_EQ(total, census.total);
  }
}

TEST(Census, UnsharedVariantHasOneProjectionPerStep) {
  ModelConfig c = small_config();
  c.n_steps = 4;
  c.gm_variant = GmVariant::unshared;
  CmmModel<float> m(c, 1);
  const ParamCensus census = m.param_census();
  EXPECT_EQ(census.gm_sets, 4u);
  for (int i = 1; i <= 4; ++i) EXPECT_EQ(census.counts.at("g_m" + std::to_string(i)), census.counts.at("g_m1"));
  EXPECT_FALSE(census.counts.count("g_m"));
}

TEST(Census, AllParameterNamesDistinct) {
  for (GmVariant v : {GmVariant::standard, GmVariant::cnn2, GmVariant::no_bn, GmVariant::unshared}) {
    ModelConfig c = small_config();
    c.gm_variant = v;
    CmmModel<float> m(c, 1);
    std::set<std::string> names;
    for (auto& [name, a] : m.state()) EXPECT_TRUE(names.insert(name).second) << name;
  }
}

TEST(Forward, AttentionRowsAreProbabilityVectors) {
  for (bool mask : {true, false}) {
    ModelConfig c = small_config();
    c.mask_pad = mask;
    CmmModel<float> m(c, 3);
    Batch b = make_batch(c, 5, 9);
    Tape<float> t(GradMode::disabled);
    auto out = m.forward(t, b);
    ASSERT_EQ(out.trace.attention.size(), c.n_steps);
    for (const auto& a : out.trace.attention) {
      ASSERT_EQ(a.shape(), (Shape{5, c.max_len}));
      for (std::size_t r = 0; r < 5; ++r) {
        double sum = 0;
        for (std::size_t k = 0; k < c.max_len; ++k) {
          sum += a[r * c.max_len + k];
          if (mask && k >= static_cast<std::size_t>(b.lengths[r])) {
            EXPECT_EQ(a[r * c.max_len + k], 0.0f);
          }
        }
        EXPECT_NEAR(sum, 1.0, 1e-6);
      }
    }
    EXPECT_EQ(out.logits.shape(), (Shape{5, c.answer_vocab}));
    EXPECT_EQ(out.trace.argmax.size(), 5 * c.proj_dim);
  }
}

TEST(Forward, OutputShapesAndNonnegativeProjections) {
  ModelConfig c = small_config();
  CmmModel<double> m(c, 2);
  Batch b = make_batch(c, 3, 4);
  Tape<double> t;
  auto q = m.encode_question(t, b.tokens, b.lengths);
  EXPECT_EQ(q.states.shape(), (Shape{c.max_len, 3, c.lang_dim}));
  auto v0 = m.encode_image(t, b.images, 3);
  EXPECT_EQ(v0.shape(), (Shape{3, c.channels, 4, 4}));
  auto mod = m.visual_mod_params(t, 1, q.q0);
  EXPECT_EQ(mod.gamma.shape(), (Shape{3, c.channels}));
  auto v1 = m.modulated_resblock(t, 1, v0, mod);
  EXPECT_EQ(v1.shape(), v0.shape());
  auto lang = m.language_mod_params(t, 1, v1);
  EXPECT_EQ(lang.beta.shape(), (Shape{3, c.lang_dim}));
  for (double x : lang.beta.data()) EXPECT_GE(x, 0.0);
  auto proj = m.project(t, v1);
  EXPECT_EQ(proj.u.shape(), (Shape{3, c.proj_dim}));
  for (double x : proj.u.data()) EXPECT_GE(x, 0.0);
  EXPECT_THROW(m.visual_mod_params(t, 0, q.q0), std::out_of_range);
  EXPECT_THROW(m.visual_mod_params(t, c.n_steps + 1, q.q0), std::out_of_range);
}

TEST(Encoder, Q0IsStateAtLastUnpaddedToken) {
  ModelConfig c = small_config();
  c.max_len = 8;
  for (CellKind kind : {CellKind::gru, CellKind::lstm}) {
    c.encoder = kind;
    CmmModel<double> m(c, 5);
    Batch b = make_batch(c, 2, 1);
    b.lengths = {5, 8};
    Tape<double> t;
    auto q = m.encode_question(t, b.tokens, b.lengths);
    for (std::size_t s = 0; s < 2; ++s) {
      const std::size_t last = static_cast<std::size_t>(b.lengths[s]) - 1;
      for (std::size_t d = 0; d < c.lang_dim; ++d) {
        EXPECT_EQ(q.q0.value()[s * c.lang_dim + d], q.states.value()[(last * 2 + s) * c.lang_dim + d]);
      }
    }
  }
}

TEST(Encoder, PaddingBeyondLengthDoesNotChangeQ0WhenMasked) {
  ModelConfig c = small_config();
  CmmModel<double> m(c, 6);
  Batch b = make_batch(c, 1, 2);
  b.lengths = {4};
  std::vector<std::int32_t> other = b.tokens;
  for (std::size_t t = 4; t < c.max_len; ++t) other[t] = 7;  // garbage after END
  Tape<double> t;
  auto a = m.encode_question(t, b.tokens, b.lengths);
  auto z = m.encode_question(t, other, b.lengths);
  EXPECT_EQ(a.q0.value(), z.q0.value());
}

TEST(Encoder, RejectsBadLengths) {
  ModelConfig c = small_config();
  CmmModel<double> m(c, 6);
  Batch b = make_batch(c, 1, 2);
  Tape<double> t;
  b.lengths = {0};
  EXPECT_THROW(m.encode_question(t, b.tokens, b.lengths), std::invalid_argument);
  b.lengths = {static_cast<std::int32_t>(c.max_len + 1)};
  EXPECT_THROW(m.encode_question(t, b.tokens, b.lengths), std::invalid_argument);
}

TEST(Attention, HandComputedWeightedSum) {
  ModelConfig c = small_config();
  c.n_steps = 1;
  c.lang_dim = 2;
  c.max_len = 2;
  c.gamma_mode = GammaMode::plain;
  CmmModel<double> m(c, 1);
  // Logits w . e + b with e = h (gamma 1, beta 0): w = [ln 2, 0] gives [ln 2, 0].
  param(m, "step1.attention.weight").value = Array<double>({2, 1}, std::vector<double>{std::log(2.0), 0.0});
  zero(param(m, "step1.attention.bias"));
  Tape<double> t;
  QuestionEncoding<double> q;
  q.states = t.constant(Array<double>({2, 1, 2}, std::vector<double>{1, 0, 0, 1}));
  Modulation<double> mod{t.constant(Array<double>({1, 2}, 1.0)), t.constant(Array<double>({1, 2}, 0.0))};
  auto r = m.textual_attention(t, 1, q, mod);
  EXPECT_NEAR(r.alpha.value()[0], 2.0 / 3, 1e-15);
  EXPECT_NEAR(r.q.value()[0], 2.0 / 3, 1e-15);
  EXPECT_NEAR(r.q.value()[1], 1.0 / 3, 1e-15);

  // Uniform logits give the mean over attended positions.
  zero(param(m, "step1.attention.weight"));
  Tape<double> t2;
  q.states = t2.constant(Array<double>({2, 1, 2}, std::vector<double>{3, 5, 1, -1}));
  mod = {t2.constant(Array<double>({1, 2}, 1.0)), t2.constant(Array<double>({1, 2}, 0.0))};
  auto u = m.textual_attention(t2, 1, q, mod);
  EXPECT_NEAR(u.q.value()[0], 2.0, 1e-15);
  EXPECT_NEAR(u.q.value()[1], 2.0, 1e-15);
}

TEST(Modulation, ZeroMlpGivesIdentityOrZeroFilm) {
  for (GammaMode mode : {GammaMode::plain, GammaMode::one_plus_delta}) {
    ModelConfig c = small_config();
    c.gamma_mode = mode;
    CmmModel<double> m(c, 1);
    zero(param(m, "step1.film_mlp.weight"));
    zero(param(m, "step1.film_mlp.bias"));
    Tape<double> t;
    auto q0 = t.constant(Array<double>({2, c.lang_dim}, 0.3));
    auto mod = m.visual_mod_params(t, 1, q0);
    for (double g : mod.gamma.data()) EXPECT_EQ(g, mode == GammaMode::plain ? 0.0 : 1.0);
    for (double b : mod.beta.data()) EXPECT_EQ(b, 0.0);
  }
}

TEST(Modulation, ZeroMainBranchPassesResidualThrough) {
  ModelConfig c = small_config();
  CmmModel<double> m(c, 1);
  zero(param(m, "step1.conv_mid.weight"));
  zero(param(m, "step1.conv_mid.bias"));
  Batch b = make_batch(c, 2, 3);
  Tape<double> t;
  auto v0 = m.encode_image(t, b.images, 2);
  Modulation<double> mod{t.constant(Array<double>({2, c.channels}, 0.0)), t.constant(Array<double>({2, c.channels}, 0.0))};
  auto v1 = m.modulated_resblock(t, 1, v0, mod);
  // Reference: ReLU of the 1x1 conv over [V0, coordinates].
  auto& w = param(m, "step1.conv_in.weight");
  auto& bias = param(m, "step1.conv_in.bias");
  const Array<double> coords = nn::coordinate_maps<double>(4, 4);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t o = 0; o < c.channels; ++o)
      for (std::size_t p = 0; p < 16; ++p) {
        double acc = bias.value[o];
        for (std::size_t i = 0; i < c.channels; ++i) acc += w.value[o * (c.channels + 2) + i] * v0.value()[(s * c.channels + i) * 16 + p];
        for (std::size_t k = 0; k < 2; ++k) acc += w.value[o * (c.channels + 2) + c.channels + k] * coords[k * 16 + p];
        EXPECT_NEAR(v1.value()[(s * c.channels + o) * 16 + p], std::max(acc, 0.0), 1e-12);
      }
}

TEST(Modulation, AllFilmMlpsZeroedStillGivesFiniteLogits) {
  ModelConfig c = small_config();
  CmmModel<float> m(c, 1);
  for (std::size_t i = 1; i <= c.n_steps; ++i) {
    zero(param(m, "step" + std::to_string(i) + ".film_mlp.weight"));
    zero(param(m, "step" + std::to_string(i) + ".film_mlp.bias"));
  }
  Tape<float> t;
  auto out = m.forward(t, make_batch(c, 4, 1));
  for (float v : out.logits.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Cascade, VisualDependsOnQuestionAndQuestionOnVisual) {
  ModelConfig c = small_config();
  CmmModel<double> m(c, 4);
  Batch b = make_batch(c, 2, 5);
  Tape<double> t;
  auto q = m.encode_question(t, b.tokens, b.lengths);
  Parameter<double> qprev("q_prev", q.q0.value());
  Parameter<double> vprev("v_prev", m.encode_image(t, b.images, 2).value());
  qprev.zero_grad();
  vprev.zero_grad();
  auto r = m.cmm_step(t, 1, t.parameter(qprev), t.parameter(vprev), q);
  // Sensitivity probes by finite perturbation.
  auto rerun = [&](const Array<double>& qv, const Array<double>& vv) {
    Tape<double> tp(GradMode::disabled);
    auto qq = m.encode_question(tp, b.tokens, b.lengths);
    return m.cmm_step(tp, 1, tp.constant(qv), tp.constant(vv), qq);
  };
  Array<double> q_bumped = qprev.value, v_bumped = vprev.value;
  for (std::size_t i = 0; i < q_bumped.size(); ++i) q_bumped[i] += 0.05;
  for (std::size_t i = 0; i < v_bumped.size(); ++i) v_bumped[i] += 0.05 * std::sin(static_cast<double>(i));
  EXPECT_GT(max_abs_diff(rerun(q_bumped, vprev.value).v.value(), r.v.value()), 1e-6);
  EXPECT_GT(max_abs_diff(rerun(qprev.value, v_bumped).q.value(), r.q.value()), 1e-6);

  // q_i sees V_prev only through V_i: recomputing from V_i alone matches.
  Tape<double> t3;
  auto q3 = m.encode_question(t3, b.tokens, b.lengths);
  auto lang = m.language_mod_params(t3, 1, t3.constant(r.v.value()));
  EXPECT_LT(max_abs_diff(m.textual_attention(t3, 1, q3, lang).q.value(), r.q.value()), 1e-12);

  t.backward(sum_all(r.q));
  double gq = 0;
  for (double g : qprev.grad.data()) gq += std::abs(g);
  EXPECT_GT(gq, 0.0);  // q_{i-1} -> V_i -> g_m -> q_i
}

TEST(Forward, EvalModeIsDeterministicAndPerSampleBatchInvariant) {
  ModelConfig c = small_config();
  CmmModel<float> m(c, 8);
  m.set_training(false);
  Batch b = make_batch(c, 4, 3);
  // Duplicate sample 0 into slot 3.
  for (std::size_t k = 0; k < c.max_len; ++k) b.tokens[3 * c.max_len + k] = b.tokens[k];
  b.lengths[3] = b.lengths[0];
  const std::size_t px = 3 * 16;
  std::copy_n(b.images.begin(), px, b.images.begin() + 3 * px);
  Tape<float> t1(GradMode::disabled), t2(GradMode::disabled);
  auto a = m.forward(t1, b).logits.value();
  auto z = m.forward(t2, b).logits.value();
  EXPECT_EQ(a, z);
  for (std::size_t k = 0; k < c.answer_vocab; ++k) EXPECT_EQ(a[k], a[3 * c.answer_vocab + k]);
  // Reversed batch order.
  Batch r;
  r.size = 4;
  for (int s = 3; s >= 0; --s) {
    r.tokens.insert(r.tokens.end(), b.tokens.begin() + s * c.max_len, b.tokens.begin() + (s + 1) * c.max_len);
    r.lengths.push_back(b.lengths[s]);
    r.images.insert(r.images.end(), b.images.begin() + s * px, b.images.begin() + (s + 1) * px);
  }
  Tape<float> t3(GradMode::disabled);
  auto rl = m.forward(t3, r).logits.value();
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t k = 0; k < c.answer_vocab; ++k) EXPECT_EQ(rl[(3 - s) * c.answer_vocab + k], a[s * c.answer_vocab + k]);
}

TEST(Forward, ZeroVisualIgnoresImages) {
  ModelConfig c = small_config();
  c.zero_visual = true;
  CmmModel<float> m(c, 8);
  m.set_training(false);
  Batch b = make_batch(c, 2, 3);
  Tape<float> t1(GradMode::disabled), t2(GradMode::disabled);
  auto a = m.forward(t1, b).logits.value();
  for (float& p : b.images) p = 1.0f - p;
  EXPECT_EQ(a, m.forward(t2, b).logits.value());
}

TEST(AnswerHead, HandComputedToyCase) {
  ModelConfig c = small_config();
  c.proj_dim = 2;
  c.head_hidden = 2;
  c.answer_vocab = 2;
  CmmModel<double> m(c, 1);
  param(m, "head.hidden.weight").value = Array<double>({2, 2}, std::vector<double>{1, -1, 2, 1});
  param(m, "head.hidden.bias").value = Array<double>({2}, std::vector<double>{0, -0.5});
  param(m, "head.out.weight").value = Array<double>({2, 2}, std::vector<double>{1, 2, 3, -1});
  param(m, "head.out.bias").value = Array<double>({2}, std::vector<double>{0.25, 0});
  Tape<double> t;
  auto y = m.answer_head(t, t.constant(Array<double>({1, 2}, std::vector<double>{1, 2})));
  // hidden = relu([1+4, -1+2-0.5]) = [5, 0.5]; out = [5+1.5+0.25, 10-0.5]
  EXPECT_DOUBLE_EQ(y.value()[0], 6.75);
  EXPECT_DOUBLE_EQ(y.value()[1], 9.5);

  for (auto* p : m.parameters())
    if (p->name.rfind("head.", 0) == 0 && p->name.ends_with("bias")) zero(*p);
  Tape<double> t2;
  for (double v : m.answer_head(t2, t2.constant(Array<double>({1, 2}))).data()) EXPECT_EQ(v, 0.0);
}

TEST(GradCheck, TinyModelEndToEnd) {
  train::SuiteOptions o;
  o.layers = false;
  ModelConfig tiny = train::tiny_model_config();
  tiny.lang_dim = 8;
  tiny.max_len = 5;
  const auto results = train::run_gradcheck_suite(tiny, o);
  ASSERT_FALSE(results.empty());
  for (const auto& r : results) EXPECT_TRUE(r.passed()) << r.name << " rel " << r.report.worst();
}

TEST(Ensemble, ArithmeticMeanOfProbabilities) {
  Array<double> a({1, 2}, std::vector<double>{0.6, 0.4});
  Array<double> b({1, 2}, std::vector<double>{0.2, 0.8});
  Array<double> mean({1, 2});
  for (std::size_t i = 0; i < 2; ++i) mean[i] = (a[i] + b[i]) / 2;
  EXPECT_NEAR(mean[0], 0.4, 1e-15);
  EXPECT_EQ(argmax_rows(mean), (std::vector<std::int32_t>{1}));
}

TEST(Ensemble, SingleMemberAndOrderInvariance) {
  ModelConfig c = small_config();
  CmmModel<float> m1(c, 1), m2(c, 2);
  Batch b = make_batch(c, 6, 4);
  CmmModel<float>* one[] = {&m1};
  m1.set_training(false);
  Tape<float> t(GradMode::disabled);
  const auto own = argmax_rows(softmax_rows(m1.forward(t, b).logits.value()));
  EXPECT_EQ(ensemble_predict(one, b), own);
  EXPECT_TRUE(m1.training() == false);

  CmmModel<float>* ab[] = {&m1, &m2};
  CmmModel<float>* ba[] = {&m2, &m1};
  const auto pab = ensemble_probabilities(ab, b), pba = ensemble_probabilities(ba, b);
  for (std::size_t i = 0; i < pab.size(); ++i) EXPECT_NEAR(pab[i], pba[i], 1e-15);

  ModelConfig other = c;
  other.answer_vocab = c.answer_vocab + 1;
  CmmModel<float> m3(other, 3);
  CmmModel<float>* bad[] = {&m1, &m3};
  EXPECT_THROW(ensemble_probabilities(bad, b), ShapeError);
}

TEST(State, RoundTripRestoresEveryValue) {
  ModelConfig c = small_config();
  CmmModel<float> a(c, 1), b(c, 2);
  b.load_state(a.state());
  auto sa = a.state(), sb = b.state();
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i].first, sb[i].first);
    EXPECT_EQ(sa[i].second, sb[i].second);
  }
  auto broken = a.state();
  broken.pop_back();
  EXPECT_THROW(b.load_state(broken), std::invalid_argument);
  ModelConfig wider = c;
  wider.channels = 5;
  CmmModel<float> w(wider, 1);
  EXPECT_THROW(w.load_state(a.state()), ShapeError);
}
