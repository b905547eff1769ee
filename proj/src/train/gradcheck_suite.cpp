#include "cmm/train/gradcheck_suite.hpp"

#include <memory>

#include "cmm/model/cmm_model.hpp"
#include "cmm/nn/layers.hpp"
#include "cmm/tensor/ops.hpp"
#include "cmm/tensor/random.hpp"
#include "cmm/train/loss.hpp"

namespace cmm::train {

using P = Parameter<double>;
using Tn = Tensor<double>;

model::ModelConfig tiny_model_config() {
  model::ModelConfig c;
  c.n_steps = 2;
  c.channels = 4;
  c.lang_dim = 6;
  c.embed_dim = 4;
  c.max_len = 6;
  c.proj_dim = 5;
  c.head_hidden = 7;
  c.word_vocab = 12;
  c.answer_vocab = 5;
  c.image = {3, 4, 4};
  return c;
}

namespace {

P random_param(const std::string& name, Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Array<double> a(std::move(shape));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(lo, hi);
  return P(name, std::move(a));
}

// Contracts the output with fixed random weights so every output element
// receives a distinct upstream gradient.
struct Probe {
  explicit Probe(std::uint64_t seed) : seed(seed) {}
  Tn operator()(const Tn& y) const {
    Rng rng(seed);
    Array<double> w(y.shape());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1, 1);
    return sum_all(mul(y, y.tape().constant(std::move(w))));
  }
  std::uint64_t seed;
};

class Runner {
 public:
  Runner(const SuiteOptions& o, std::vector<SuiteResult>& out) : opt_(o), out_(out) {}

  // `params` is owned by the closure's captures; the caller passes pointers.
  void check(const std::string& name, const LossFn& loss, const std::vector<P*>& params, bool end_to_end = false) {
    GradCheckOptions g;
    g.tolerance = end_to_end ? opt_.model_tolerance : opt_.layer_tolerance;
    SuiteResult r{name, end_to_end, g.tolerance, grad_check(loss, params, g)};
    if (opt_.on_result) opt_.on_result(r);
    out_.push_back(std::move(r));
  }

 private:
  const SuiteOptions& opt_;
  std::vector<SuiteResult>& out_;
};

void layer_checks(Runner& run, std::uint64_t seed) {
  Rng rng(seed);
  const Probe probe(mix_seed(seed));

  auto elementwise_case = [&](const std::string& name, Elementwise kind, Shape sa, Shape sb) {
    auto a = std::make_shared<P>(random_param("a", sa, rng));
    auto b = std::make_shared<P>(random_param("b", sb, rng));
    const bool binary = kind == Elementwise::add || kind == Elementwise::sub || kind == Elementwise::mul;
    if (binary) {
      run.check(name, [=](Tape<double>& t) { return probe(elementwise<double>(kind, t.parameter(*a), t.parameter(*b))); },
                {a.get(), b.get()});
    } else {
      run.check(name, [=](Tape<double>& t) { return probe(elementwise<double>(kind, t.parameter(*a))); }, {a.get()});
    }
  };
  elementwise_case("add", Elementwise::add, {3, 4}, {3, 4});
  elementwise_case("add (broadcast)", Elementwise::add, {2, 3, 4}, {3, 1});
  elementwise_case("sub (broadcast)", Elementwise::sub, {2, 3, 4}, {4});
  elementwise_case("mul (broadcast)", Elementwise::mul, {2, 3, 4}, {1, 3, 1});
  elementwise_case("relu", Elementwise::relu, {3, 5}, {1});
  elementwise_case("tanh", Elementwise::tanh, {3, 5}, {1});
  elementwise_case("sigmoid", Elementwise::sigmoid, {3, 5}, {1});

  {
    auto a = std::make_shared<P>(random_param("a", {3, 4}, rng));
    auto b = std::make_shared<P>(random_param("b", {4, 5}, rng));
    run.check("matmul", [=](Tape<double>& t) { return probe(matmul(t.parameter(*a), t.parameter(*b))); },
              {a.get(), b.get()});
  }
  {
    auto x = std::make_shared<P>(random_param("x", {5, 3}, rng, -2, 2));
    run.check("softmax", [=](Tape<double>& t) { return probe(softmax(t.parameter(*x), 1)); }, {x.get()});
    const std::vector<std::uint8_t> keep{1, 1, 1, 1, 1, 1, 1, 0, 1, 0, 1, 1, 0, 0, 1};
    run.check("softmax (masked)", [=](Tape<double>& t) { return probe(softmax(t.parameter(*x), 0, keep)); },
              {x.get()});
  }
  {
    auto a = std::make_shared<P>(random_param("a", {2, 3, 2}, rng));
    auto b = std::make_shared<P>(random_param("b", {2, 1, 2}, rng));
    run.check("concat", [=](Tape<double>& t) { return probe(concat({t.parameter(*a), t.parameter(*b)}, 1)); },
              {a.get(), b.get()});
    run.check("slice", [=](Tape<double>& t) { return probe(slice(t.parameter(*a), 1, 1, 3)); }, {a.get()});
    run.check("reshape", [=](Tape<double>& t) { return probe(reshape(t.parameter(*a), {3, 4})); }, {a.get()});
    run.check("reduce sum", [=](Tape<double>& t) { return probe(reduce(Reduce::sum, t.parameter(*a), 1).values); },
              {a.get()});
    run.check("reduce mean", [=](Tape<double>& t) { return probe(reduce(Reduce::mean, t.parameter(*a), 0).values); },
              {a.get()});
    run.check("reduce max", [=](Tape<double>& t) { return probe(reduce(Reduce::max, t.parameter(*a), 2).values); },
              {a.get()});
    auto c = std::make_shared<P>(random_param("c", {2, 3, 2}, rng));
    const std::vector<std::uint8_t> take{1, 0};
    run.check("select_rows",
              [=](Tape<double>& t) { return probe(select_rows(take, t.parameter(*a), t.parameter(*c))); },
              {a.get(), c.get()});
  }
  {
    auto table = std::make_shared<P>(random_param("table", {5, 3}, rng));
    const std::vector<std::int32_t> ids{4, 0, 2, 4, 1, 4};
    run.check("embedding", [=](Tape<double>& t) { return probe(nn::embedding_lookup(t.parameter(*table), ids)); },
              {table.get()});
  }
  {
    auto x = std::make_shared<P>(random_param("x", {3, 4}, rng));
    auto w = std::make_shared<P>(random_param("w", {4, 2}, rng));
    auto b = std::make_shared<P>(random_param("b", {2}, rng));
    run.check("linear", [=](Tape<double>& t) {
      return probe(nn::linear(t.parameter(*x), t.parameter(*w), t.parameter(*b)));
    }, {x.get(), w.get(), b.get()});
  }
  for (std::size_t k : {1u, 3u}) {
    auto x = std::make_shared<P>(random_param("x", {2, 3, 4, 5}, rng));
    auto w = std::make_shared<P>(random_param("w", {2, 3, k, k}, rng));
    auto b = std::make_shared<P>(random_param("b", {2}, rng));
    run.check("conv2d " + std::to_string(k) + "x" + std::to_string(k), [=](Tape<double>& t) {
      return probe(nn::conv2d(t.parameter(*x), t.parameter(*w), t.parameter(*b), k / 2));
    }, {x.get(), w.get(), b.get()});
  }
  for (bool training : {true, false}) {
    auto x = std::make_shared<P>(random_param("x", {3, 2, 2, 3}, rng, -2, 2));
    auto g = std::make_shared<P>(random_param("gamma", {2}, rng, 0.5, 1.5));
    auto b = std::make_shared<P>(random_param("beta", {2}, rng));
    auto state = std::make_shared<nn::BatchNormState<double>>();
    state->running_mean = Array<double>({2}, std::vector<double>{0.2, -0.1});
    state->running_var = Array<double>({2}, std::vector<double>{0.7, 1.3});
    run.check(training ? "batch_norm (train)" : "batch_norm (eval)", [=](Tape<double>& t) {
      return probe(nn::batch_norm(t.parameter(*x), t.parameter(*g), t.parameter(*b), *state, training));
    }, {x.get(), g.get(), b.get()});
  }
  {
    auto x = std::make_shared<P>(random_param("x", {2, 3, 2, 2}, rng));
    auto g = std::make_shared<P>(random_param("gamma", {2, 3}, rng));
    auto b = std::make_shared<P>(random_param("beta", {2, 3}, rng));
    run.check("film (visual)", [=](Tape<double>& t) {
      return probe(nn::film_affine(t.parameter(*x), t.parameter(*g), t.parameter(*b), 1, 0));
    }, {x.get(), g.get(), b.get()});
    auto h = std::make_shared<P>(random_param("h", {4, 2, 3}, rng));
    run.check("film (language)", [=](Tape<double>& t) {
      return probe(nn::film_affine(t.parameter(*h), t.parameter(*g), t.parameter(*b), 2, 1));
    }, {h.get(), g.get(), b.get()});
    auto gs = std::make_shared<P>(random_param("gamma", {3}, rng));
    auto bs = std::make_shared<P>(random_param("beta", {3}, rng));
    run.check("film (shared)", [=](Tape<double>& t) {
      return probe(nn::film_affine(t.parameter(*x), t.parameter(*gs), t.parameter(*bs), 1, 0));
    }, {x.get(), gs.get(), bs.get()});
  }
  for (nn::CellKind kind : {nn::CellKind::gru, nn::CellKind::lstm}) {
    const std::string kname(model::to_string(kind));
    auto cell = std::make_shared<nn::RecurrentCell<double>>("cell", kind, 3, 2, rng);
    auto x = std::make_shared<P>(random_param("x", {2, 3}, rng));
    auto h = std::make_shared<P>(random_param("h", {2, 2}, rng));
    auto c = std::make_shared<P>(random_param("c", {2, 2}, rng));
    std::vector<P*> ps{x.get(), h.get()};
    if (kind == nn::CellKind::lstm) ps.push_back(c.get());
    nn::ParamRegistry<double> reg;
    cell->register_into(reg);
    ps.insert(ps.end(), reg.params.begin(), reg.params.end());
    run.check(kname + " cell", [=](Tape<double>& t) {
      nn::RnnState<double> s{t.parameter(*h), kind == nn::CellKind::lstm ? t.parameter(*c) : Tn{}};
      nn::RnnState<double> o = nn::rnn_cell_step(t, *cell, t.parameter(*x), s);
      Tn y = probe(o.h);
      return kind == nn::CellKind::lstm ? add(y, Probe(seed + 1)(o.c)) : y;
    }, ps);

    auto bwd = std::make_shared<nn::RecurrentCell<double>>("bwd", kind, 3, 2, rng);
    auto seq = std::make_shared<P>(random_param("seq", {4, 2, 3}, rng));
    const std::vector<std::uint8_t> valid{1, 1, 1, 1, 1, 0, 0, 0};
    std::vector<P*> ps2{seq.get()};
    nn::ParamRegistry<double> reg2;
    cell->register_into(reg2);
    bwd->register_into(reg2);
    ps2.insert(ps2.end(), reg2.params.begin(), reg2.params.end());
    run.check("bi_rnn " + kname + " (masked)", [=](Tape<double>& t) {
      return probe(nn::bi_rnn(t, *cell, *bwd, t.parameter(*seq), valid));
    }, ps2);
  }
  {
    auto x = std::make_shared<P>(random_param("x", {2, 3, 3, 4}, rng, -2, 2));
    run.check("global_max_pool", [=](Tape<double>& t) { return probe(nn::global_max_pool_argmax(t.parameter(*x)).values); },
              {x.get()});
    auto g = std::make_shared<P>(random_param("gamma", {3}, rng, 0.5, 1.5));
    auto b = std::make_shared<P>(random_param("beta", {3}, rng, -0.3, 0.3));
    for (bool training : {true, false}) {
      for (bool use_relu : {true, false}) {
        auto state = std::make_shared<nn::BatchNormState<double>>();
        state->running_mean = Array<double>({3}, std::vector<double>{0.1, -0.2, 0.0});
        state->running_var = Array<double>({3}, std::vector<double>{0.8, 1.2, 1.0});
        run.check(std::string("bn_relu_max_pool (") + (training ? "train" : "eval") + (use_relu ? "" : ", no relu") + ")",
                  [=](Tape<double>& t) {
          return probe(nn::bn_relu_max_pool(t.parameter(*x), t.parameter(*g), t.parameter(*b), *state, training,
                                            use_relu).values);
        }, {x.get(), g.get(), b.get()});
      }
    }
  }
  {
    auto logits = std::make_shared<P>(random_param("logits", {4, 5}, rng, -3, 3));
    const std::vector<std::int32_t> labels{0, 4, 2, 2};
    run.check("cross_entropy", [=](Tape<double>& t) { return cross_entropy(t.parameter(*logits), labels); },
              {logits.get()});
  }
}

model::Batch random_batch(const model::ModelConfig& c, std::size_t size, Rng& rng) {
  model::Batch b;
  b.size = size;
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t len = 3 + rng.below(c.max_len - 2);  // 3..max_len
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
  const std::size_t pixels = size * c.image.channels * c.image.height * c.image.width;
  for (std::size_t i = 0; i < pixels; ++i) b.images.push_back(static_cast<float>(rng.uniform()));
  return b;
}

void model_checks(Runner& run, const model::ModelConfig& base, std::uint64_t seed) {
  struct Variant {
    std::string name;
    model::ModelConfig config;
    bool training;
  };
  std::vector<Variant> variants;
  auto with = [&](const std::string& name, auto edit, bool training = true) {
    model::ModelConfig c = base;
    edit(c);
    variants.push_back({name, c, training});
  };
  with("model (gru, default g_m, train mode)", [](auto&) {});
  with("model (eval mode)", [](auto&) {}, false);
  with("model (lstm)", [](auto& c) { c.encoder = model::CellKind::lstm; });
  with("model (g_m cnn2)", [](auto& c) { c.gm_variant = model::GmVariant::cnn2; });
  with("model (g_m no-bn)", [](auto& c) { c.gm_variant = model::GmVariant::no_bn; });
  with("model (g_m unshared)", [](auto& c) { c.gm_variant = model::GmVariant::unshared; });
  with("model (plain gamma, padding unmasked)", [](auto& c) {
    c.gamma_mode = model::GammaMode::plain;
    c.mask_pad = false;
  });
  with("model (attend modulated states)", [](auto& c) { c.attend_modulated = true; });
  with("model (question only)", [](auto& c) { c.zero_visual = true; });

  for (const Variant& v : variants) {
    Rng rng(seed);
    auto m = std::make_shared<model::CmmModel<double>>(v.config, seed);
    m->set_training(v.training);
    if (!v.training) {
      // Non-trivial running statistics for the eval path.
      for (auto& [name, buf] : m->registry().buffers) {
        const bool var = name.ends_with("running_var");
        for (std::size_t i = 0; i < buf->size(); ++i) (*buf)[i] = var ? rng.uniform(0.5, 1.5) : rng.uniform(-0.3, 0.3);
      }
    }
    auto batch = std::make_shared<model::Batch>(random_batch(v.config, 3, rng));
    run.check(v.name, [=](Tape<double>& t) { return cross_entropy(m->forward(t, *batch).logits, batch->labels); },
              m->parameters(), true);
  }
}

}  // namespace

std::vector<SuiteResult> run_gradcheck_suite(const model::ModelConfig& tiny, const SuiteOptions& options) {
  tiny.validate();
  std::vector<SuiteResult> out;
  Runner run(options, out);
  if (options.layers) layer_checks(run, options.seed);
  if (options.models) model_checks(run, tiny, options.seed);
  return out;
}

}  // namespace cmm::train
