#include <gtest/gtest.h>

#include <cmath>

#include "cmm/nn/layers.hpp"
#include "cmm/tensor/grad_check.hpp"
#include "cmm/tensor/ops.hpp"

using namespace cmm;
using namespace cmm::nn;

namespace {

Array<double> random_array(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Array<double> a(std::move(s));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(lo, hi);
  return a;
}

// Direct 4-loop cross-correlation with zero padding.
Array<double> naive_conv(const Array<double>& x, const Array<double>& w, const Array<double>& b, std::size_t pad) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = h + 2 * pad - kh + 1, ow = wd + 2 * pad - kw + 1;
  Array<double> out({n, co, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
          double acc = b[o];
          for (std::size_t i = 0; i < ci; ++i)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long rr = static_cast<long>(r + u) - static_cast<long>(pad);
                const long cc = static_cast<long>(c + v) - static_cast<long>(pad);
                if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(wd)) continue;
                acc += w[((o * ci + i) * kh + u) * kw + v] * x[((s * ci + i) * h + rr) * wd + cc];
              }
          out[((s * co + o) * oh + r) * ow + c] = acc;
        }
  return out;
}

BatchNormState<double> fresh_state(std::size_t ch) {
  BatchNormState<double> s;
  s.running_mean = Array<double>({ch}, 0.0);
  s.running_var = Array<double>({ch}, 1.0);
  return s;
}

}  // namespace

TEST(Conv2d, Examples) {
  Tape<double> t;
  Array<double> x({1, 1, 3, 3}, 1.0);
  auto out = conv2d(t.constant(x), t.constant(Array<double>({1, 1, 3, 3}, 1.0)), t.constant(Array<double>({1})), 1);
  const std::vector<double> expect{4, 6, 4, 6, 9, 6, 4, 6, 4};
  EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()), expect);

  Rng rng(1);
  Array<double> img = random_array({2, 1, 4, 5}, rng);
  auto id = conv2d(t.constant(img), t.constant(Array<double>({1, 1, 1, 1}, 1.0)), t.constant(Array<double>({1})), 0);
  EXPECT_EQ(id.value(), img);

  auto biased = conv2d(t.constant(img), t.constant(Array<double>({2, 1, 3, 3})),
                       t.constant(Array<double>({2}, std::vector<double>{0.5, -2.0})), 1);
  for (std::size_t i = 0; i < biased.size(); ++i) EXPECT_EQ(biased.value()[i], (i / 20) % 2 == 0 ? 0.5 : -2.0);
}

TEST(Conv2d, MatchesNaiveLoopOnRandomInputs) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t k = trial % 2 ? 3 : 1;
    Array<double> x = random_array({2, 3, 2 + rng.below(5), 1 + rng.below(6)}, rng);
    Array<double> w = random_array({4, 3, k, k}, rng);
    Array<double> b = random_array({4}, rng);
    Tape<double> t;
    auto y = conv2d(t.constant(x), t.constant(w), t.constant(b), k / 2);
    const Array<double> ref = naive_conv(x, w, b, k / 2);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.value()[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, ChannelMismatchThrows) {
  Tape<double> t;
  EXPECT_THROW(conv2d(t.constant(Array<double>({1, 2, 3, 3})), t.constant(Array<double>({1, 3, 1, 1})),
                      t.constant(Array<double>({1})), 0),
               ShapeError);
}

TEST(BatchNorm, Examples) {
  Tape<double> t;
  auto g = t.constant(Array<double>({1}, 1.0));
  auto b = t.constant(Array<double>({1}, 0.0));
  {
    auto st = fresh_state(1);
    auto y = batch_norm(t.constant(Array<double>({2, 1, 2, 2}, 3.0)), g, b, st, true);
    for (double v : y.data()) EXPECT_LT(std::abs(v), 1e-2);
  }
  {
    auto st = fresh_state(1);
    auto y = batch_norm(t.constant(Array<double>({2, 1}, std::vector<double>{0.0, 2.0})), g, b, st, true);
    EXPECT_NEAR(y.value()[0], -1.0, 1e-4);
    EXPECT_NEAR(y.value()[1], 1.0, 1e-4);
    // running stats: 0.9 * 0 + 0.1 * 1 mean; unbiased variance 2
    EXPECT_NEAR(st.running_mean[0], 0.1, 1e-12);
    EXPECT_NEAR(st.running_var[0], 0.9 + 0.1 * 2.0, 1e-12);
  }
  {
    auto st = fresh_state(1);
    Array<double> x({3, 1}, std::vector<double>{-1.0, 0.5, 4.0});
    auto y = batch_norm(t.constant(x), g, b, st, false);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y.value()[i], x[i] / std::sqrt(1 + 1e-5), 1e-15);
  }
}

TEST(BatchNorm, TrainModeNormalizesEachChannel) {
  Rng rng(4);
  auto st = fresh_state(3);
  Tape<double> t;
  auto y = batch_norm(t.constant(random_array({4, 3, 3, 2}, rng, -5, 9)), t.constant(Array<double>({3}, 1.0)),
                      t.constant(Array<double>({3}, 0.0)), st, true);
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 6; ++i) {
        const double v = y.value()[(n * 3 + c) * 6 + i];
        sum += v;
        sq += v * v;
      }
    EXPECT_NEAR(sum / 24, 0.0, 1e-4);
    EXPECT_NEAR(sq / 24, 1.0, 1e-4);
  }
}

TEST(BatchNorm, SingleValuePerChannelInTrainModeThrows) {
  auto st = fresh_state(2);
  Tape<double> t;
  EXPECT_THROW(batch_norm(t.constant(Array<double>({1, 2, 1, 1})), t.constant(Array<double>({2}, 1.0)),
                          t.constant(Array<double>({2})), st, true),
               std::invalid_argument);
}

TEST(Film, Examples) {
  Tape<double> t;
  auto x = t.constant(Array<double>({2, 2}, std::vector<double>{1, 2, 3, 4}));
  auto y = film_affine(x, t.constant(Array<double>({2}, std::vector<double>{2, 1})),
                       t.constant(Array<double>({2}, std::vector<double>{-1, 0})), 0);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{1, 3, 3, 4}));
  auto z = film_affine(x, t.constant(Array<double>({2})), t.constant(Array<double>({2}, std::vector<double>{5, 6})), 0);
  EXPECT_EQ(std::vector<double>(z.data().begin(), z.data().end()), (std::vector<double>{5, 5, 6, 6}));
  EXPECT_THROW(film_affine(x, t.constant(Array<double>({3})), t.constant(Array<double>({3})), 0), ShapeError);
}

TEST(Film, UnitGammaZeroBetaIsBitExactIdentity) {
  Rng rng(9);
  Tape<float> t;
  Array<float> x({2, 3, 4, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.uniform(-1e6, 1e6) * rng.uniform());
  auto y = film_affine(t.constant(x), t.constant(Array<float>({2, 3}, 1.0f)), t.constant(Array<float>({2, 3}, 0.0f)), 1, 0);
  EXPECT_EQ(y.value(), x);
}

TEST(Recurrent, GruHandEvaluation) {
  Rng rng(1);
  RecurrentCell<double> cell("g", CellKind::gru, 1, 1, rng);
  for (auto* group : {&cell.w, &cell.u, &cell.b})
    for (auto& p : *group) p.value = Array<double>(p.value.shape(), 0.0);
  Tape<double> t;
  auto x = t.constant(Array<double>({1, 1}, 0.7));
  auto s = rnn_cell_step(t, cell, x, {t.constant(Array<double>({1, 1}, 1.0)), {}});
  EXPECT_NEAR(s.h.value()[0], 0.5, 1e-15);  // z = 0.5, n = 0
  auto zero = rnn_cell_step(t, cell, x, zero_state(t, cell, 1));
  EXPECT_EQ(zero.h.value()[0], 0.0);
}

TEST(Recurrent, LengthOneSequenceEqualsOneCellStep) {
  Rng rng(2);
  RecurrentCell<double> f("f", CellKind::lstm, 3, 2, rng), b("b", CellKind::lstm, 3, 2, rng);
  Tape<double> t;
  auto x = t.constant(random_array({1, 2, 3}, rng));
  auto h = bi_rnn(t, f, b, x);
  auto x2 = reshape(x, {2, 3});
  auto hf = rnn_cell_step(t, f, x2, zero_state(t, f, 2)).h;
  auto hb = rnn_cell_step(t, b, x2, zero_state(t, b, 2)).h;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t d = 0; d < 2; ++d) {
      EXPECT_EQ(h.value()[n * 4 + d], hf.value()[n * 2 + d]);
      EXPECT_EQ(h.value()[n * 4 + 2 + d], hb.value()[n * 2 + d]);
    }
}

TEST(Recurrent, ReversingTheSequenceSwapsDirections) {
  Rng rng(3);
  RecurrentCell<double> f("f", CellKind::gru, 2, 3, rng), b("b", CellKind::gru, 2, 3, rng);
  const std::size_t T = 5;
  Array<double> x = random_array({T, 1, 2}, rng);
  Array<double> rev(x.shape());
  for (std::size_t s = 0; s < T; ++s)
    for (std::size_t k = 0; k < 2; ++k) rev[s * 2 + k] = x[(T - 1 - s) * 2 + k];
  Tape<double> t;
  auto h = bi_rnn(t, f, b, t.constant(x));
  auto hr = bi_rnn(t, b, f, t.constant(rev));  // cells swapped
  for (std::size_t s = 0; s < T; ++s)
    for (std::size_t d = 0; d < 3; ++d) {
      EXPECT_NEAR(h.value()[s * 6 + d], hr.value()[(T - 1 - s) * 6 + 3 + d], 1e-14);
      EXPECT_NEAR(h.value()[s * 6 + 3 + d], hr.value()[(T - 1 - s) * 6 + d], 1e-14);
    }
}

TEST(Recurrent, HiddenSizesMustAgree) {
  Rng rng(4);
  RecurrentCell<double> f("f", CellKind::gru, 2, 3, rng), b("b", CellKind::gru, 2, 4, rng);
  Tape<double> t;
  EXPECT_THROW(bi_rnn(t, f, b, t.constant(Array<double>({2, 1, 2}))), ShapeError);
}

TEST(Pooling, Examples) {
  Tape<double> t;
  auto one = global_max_pool_argmax(t.constant(Array<double>({1, 1, 1, 1}, 4.0)));
  EXPECT_EQ(one.values.value()[0], 4.0);
  EXPECT_EQ(one.argmax[0], (PixelPos{0, 0}));
  auto r = global_max_pool_argmax(t.constant(Array<double>({1, 1, 2, 2}, std::vector<double>{1, 5, 3, 2})));
  EXPECT_EQ(r.values.value()[0], 5.0);
  EXPECT_EQ(r.argmax[0], (PixelPos{0, 1}));
  auto flat = global_max_pool_argmax(t.constant(Array<double>({1, 1, 3, 3}, 2.0)));
  EXPECT_EQ(flat.argmax[0], (PixelPos{0, 0}));
}

// The fused op must agree with the composition it replaces, values, argmax,
// running statistics and gradients.
class FusedPool : public ::testing::TestWithParam<int> {};

TEST_P(FusedPool, MatchesUnfusedComposition) {
  Rng rng(static_cast<std::uint64_t>(GetParam()));
  const bool training = GetParam() % 2 == 0;
  const bool use_relu = GetParam() % 3 != 0;
  const Shape s{2 + rng.below(3), 3, 1 + rng.below(4), 1 + rng.below(4)};
  if (training && s[0] * s[2] * s[3] < 2) GTEST_SKIP();
  Parameter<double> x("x", random_array(s, rng, -2, 2));
  Parameter<double> g("g", random_array({3}, rng, 0.5, 1.5));
  Parameter<double> b("b", random_array({3}, rng, -0.5, 0.5));
  Array<double> probe = random_array({s[0], 3}, rng);

  auto run = [&](bool fused, BatchNormState<double>& st) {
    for (auto* p : {&x, &g, &b}) p->zero_grad();
    Tape<double> t;
    MaxPoolResult<double> r;
    if (fused) {
      r = bn_relu_max_pool(t.parameter(x), t.parameter(g), t.parameter(b), st, training, use_relu);
    } else {
      auto y = batch_norm(t.parameter(x), t.parameter(g), t.parameter(b), st, training);
      r = global_max_pool_argmax(use_relu ? relu(y) : y);
    }
    t.backward(sum_all(mul(r.values, t.constant(probe))));
    return std::make_tuple(r.values.value(), r.argmax, x.grad, g.grad, b.grad);
  };
  auto st_a = fresh_state(3), st_b = fresh_state(3);
  st_a.running_mean[1] = st_b.running_mean[1] = 0.3;
  const auto [va, aa, gxa, gga, gba] = run(true, st_a);
  const auto [vb, ab, gxb, ggb, gbb] = run(false, st_b);
  EXPECT_EQ(aa, ab);
  for (std::size_t i = 0; i < va.size(); ++i) EXPECT_NEAR(va[i], vb[i], 1e-12);
  for (std::size_t i = 0; i < gxa.size(); ++i) EXPECT_NEAR(gxa[i], gxb[i], 1e-12);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(gga[i], ggb[i], 1e-12);
    EXPECT_NEAR(gba[i], gbb[i], 1e-12);
    EXPECT_NEAR(st_a.running_mean[i], st_b.running_mean[i], 1e-15);
    EXPECT_NEAR(st_a.running_var[i], st_b.running_var[i], 1e-15);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, FusedPool, ::testing::Range(1, 25));

TEST(CoordinateMaps, Examples) {
  auto m = coordinate_maps<double>(3, 3);
  const std::vector<double> rows{-1, -1, -1, 0, 0, 0, 1, 1, 1};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(m[i], rows[i]);
  auto one = coordinate_maps<double>(1, 1);
  EXPECT_EQ(one[0], 0.0);
  EXPECT_EQ(one[1], 0.0);
}

TEST(CoordinateMaps, BoundedCornersAndFlipAntisymmetric) {
  for (std::size_t h : {2u, 3u, 5u, 8u})
    for (std::size_t w : {2u, 4u, 7u}) {
      auto m = coordinate_maps<double>(h, w);
      for (std::size_t k = 0; k < 2; ++k) {
        const double* p = m.ptr() + k * h * w;
        for (std::size_t i = 0; i < h * w; ++i) {
          EXPECT_GE(p[i], -1.0);
          EXPECT_LE(p[i], 1.0);
        }
        for (std::size_t corner : {std::size_t{0}, w - 1, (h - 1) * w, h * w - 1}) EXPECT_EQ(std::abs(p[corner]), 1.0);
      }
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          EXPECT_NEAR(m[r * w + c], -m[(h - 1 - r) * w + c], 1e-15);
          EXPECT_NEAR(m[h * w + r * w + c], -m[h * w + r * w + (w - 1 - c)], 1e-15);
        }
    }
}

TEST(Embedding, LookupAndDuplicateAccumulation) {
  Rng rng(5);
  Parameter<double> table("t", random_array({4, 3}, rng));
  table.zero_grad();
  Tape<double> t;
  const std::vector<std::int32_t> ids{2, 0, 2};
  auto rows = embedding_lookup(t.parameter(table), ids);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(rows.value()[k], table.value[6 + k]);
  t.backward(sum_all(rows));
  EXPECT_EQ(table.grad[6], 2.0);
  EXPECT_EQ(table.grad[0], 1.0);
  EXPECT_EQ(table.grad[3], 0.0);
  auto report = grad_check([&](Tape<double>& tp) {
    auto r = embedding_lookup(tp.parameter(table), ids);
    return sum_all(mul(r, r));
  }, {&table});
  EXPECT_TRUE(report.passed());
  Tape<double> t2;
  const std::vector<std::int32_t> bad{4};
  EXPECT_THROW(embedding_lookup(t2.parameter(table), bad), std::out_of_range);
}

TEST(Linear, IdentityWeights) {
  Tape<double> t;
  Array<double> x({2, 2}, std::vector<double>{1.5, -2, 3, 4});
  auto y = linear(t.constant(x), t.constant(Array<double>({2, 2}, std::vector<double>{1, 0, 0, 1})),
                  t.constant(Array<double>({2})));
  EXPECT_EQ(y.value(), x);
}

// Layer gradients over 20 random seeds.
class LayerGradients : public ::testing::TestWithParam<int> {};

TEST_P(LayerGradients, MatchCentralDifferences) {
  Rng rng(static_cast<std::uint64_t>(GetParam()) * 7919);
  const std::size_t n = 2, ci = 1 + rng.below(3), co = 1 + rng.below(3), h = 2 + rng.below(3), w = 2 + rng.below(3);
  Parameter<double> x("x", random_array({n, ci, h, w}, rng));
  Parameter<double> k3("k3", random_array({co, ci, 3, 3}, rng));
  Parameter<double> bias("bias", random_array({co}, rng));
  Parameter<double> gam("gamma", random_array({co}, rng, 0.5, 1.5));
  Parameter<double> bet("beta", random_array({co}, rng));
  Parameter<double> fg("fg", random_array({n, co}, rng));
  Parameter<double> fb("fb", random_array({n, co}, rng));
  Array<double> probe = random_array({n, co, h, w}, rng);
  auto st = fresh_state(co);
  auto report = grad_check([&](Tape<double>& t) {
    auto y = conv2d(t.parameter(x), t.parameter(k3), t.parameter(bias), 1);
    y = batch_norm(y, t.parameter(gam), t.parameter(bet), st, GetParam() % 2 == 0);
    y = film_affine(y, t.parameter(fg), t.parameter(fb), 1, 0);
    return sum_all(mul(tanh(y), t.constant(probe)));
  }, {&x, &k3, &bias, &gam, &bet, &fg, &fb});
  EXPECT_TRUE(report.passed()) << "rel " << report.worst();

  RecurrentCell<double> f("f", GetParam() % 2 ? CellKind::gru : CellKind::lstm, 3, 2, rng);
  RecurrentCell<double> b("b", f.kind, 3, 2, rng);
  ParamRegistry<double> reg;
  f.register_into(reg);
  b.register_into(reg);
  Parameter<double> seq("seq", random_array({4, 2, 3}, rng));
  Parameter<double> lw("lw", random_array({4, 3}, rng));
  Parameter<double> lb("lb", random_array({3}, rng));
  reg.add(seq);
  reg.add(lw);
  reg.add(lb);
  const std::vector<std::uint8_t> valid{1, 1, 1, 1, 1, 1, 0, 1};
  Array<double> probe2 = random_array({8, 3}, rng);
  auto rnn_report = grad_check([&](Tape<double>& t) {
    auto hs = bi_rnn(t, f, b, t.parameter(seq), valid);
    auto y = linear(reshape(hs, {8, 4}), t.parameter(lw), t.parameter(lb));
    return sum_all(mul(y, t.constant(probe2)));
  }, reg.params);
  EXPECT_TRUE(rnn_report.passed()) << "rel " << rnn_report.worst();
}

INSTANTIATE_TEST_SUITE_P(Seeds, LayerGradients, ::testing::Range(1, 21));
