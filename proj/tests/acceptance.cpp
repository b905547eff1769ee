// Runs each acceptance criterion and prints one PASS/FAIL line per criterion.
//
//   acceptance [--only name ...] [--list]
//
// Training-based criteria use the shipped configs and really train; the desk
// criterion takes hours on one core.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cmm/data/dataset.hpp"
#include "cmm/io/checkpoint.hpp"
#include "cmm/io/run_config.hpp"
#include "cmm/model/cmm_model.hpp"
#include "cmm/model/ensemble.hpp"
#include "cmm/nn/film.hpp"
#include "cmm/tensor/ops.hpp"
#include "cmm/train/ablation.hpp"
#include "cmm/train/batch.hpp"
#include "cmm/train/evaluate.hpp"
#include "cmm/train/gradcheck_suite.hpp"
#include "cmm/train/trace.hpp"
#include "cmm/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace cmm;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  std::function<Outcome()> run;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void progress(const std::string& line) { std::cerr << "  .. " << line << std::endl; }

io::RunConfig shipped_config(const std::string& name) { return io::load_run_config(fs::path(CMM_CONFIG_DIR) / name); }

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("cmm_acceptance_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Prepared {
  io::RunConfig config;
  data::Dataset dataset;
  train::EncodedSplit train_split, val_split;
  model::ModelConfig model;
};

Prepared prepare(const io::RunConfig& c) {
  Prepared p;
  p.config = c;
  p.dataset = data::generate_dataset(c.data);
  const auto& ds = p.dataset;
  p.train_split = train::encode_split(ds.splits.at(data::Split::train), ds.vocab, c.data.max_len, c.data.cell_px);
  p.val_split = train::encode_split(ds.splits.at(data::Split::val), ds.vocab, c.data.max_len, c.data.cell_px);
  p.model = c.resolved_model(ds.vocab);
  return p;
}

train::TrainOptions epoch_printer(const std::string& tag) {
  train::TrainOptions o;
  o.on_epoch = [tag](const train::EpochRecord& r) {
    std::string line = fmt("%s epoch %zu %s loss %.4f train %.2f%%", tag.c_str(), r.epoch, r.phase.c_str(),
                           r.train_loss, 100 * r.train_accuracy);
    if (r.val) line += fmt(" val %.2f%% exist %.2f%%", 100 * r.val->overall, 100 * r.val->of(data::QType::exist));
    progress(line);
  };
  return o;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  train::SuiteOptions opts;
  opts.layer_tolerance = 1e-6;
  opts.model_tolerance = 1e-5;
  const auto results = train::run_gradcheck_suite(train::tiny_model_config(), opts);
  const double secs = seconds_since(t0);
  std::size_t layers = 0, models = 0, failed = 0;
  double worst_layer = 0, worst_model = 0;
  for (const auto& r : results) {
    (r.end_to_end ? models : layers)++;
    double& w = r.end_to_end ? worst_model : worst_layer;
    w = std::max(w, r.report.worst());
    if (!r.passed()) {
      ++failed;
      progress("gradcheck failed: " + r.name);
    }
  }
  const bool pass = failed == 0 && layers > 0 && models > 0 && secs < 300;
  return {pass, fmt("%zu layer checks (worst %.2e < 1e-6), %zu end-to-end (worst %.2e < 1e-5), %zu failed, %.1fs < 300s",
                    layers, worst_layer, models, worst_model, failed, secs)};
}

Outcome architecture_contracts() {
  std::vector<std::string> problems;
  model::ModelConfig c;
  c.n_steps = 3;
  c.channels = 6;
  c.lang_dim = 10;
  c.embed_dim = 5;
  c.max_len = 8;
  c.proj_dim = 7;
  c.head_hidden = 9;
  c.word_vocab = 16;
  c.answer_vocab = 5;
  c.image = {3, 4, 4};
  const std::size_t C = c.channels, D = c.lang_dim;

  // Census, counted from parameter names rather than the reported set counts.
  for (model::GmVariant v : {model::GmVariant::standard, model::GmVariant::unshared}) {
    model::ModelConfig cv = c;
    cv.gm_variant = v;
    model::CmmModel<double> m(cv, 1);
    const auto census = m.param_census();
    std::set<std::string> film, res, att, gm;
    for (const auto& [component, n] : census.counts) {
      if (component.ends_with(".film_mlp")) {
        film.insert(component);
        if (n != D * 2 * C + 2 * C) problems.push_back(component + " size");
      } else if (component.ends_with(".attention")) {
        att.insert(component);
        if (n != D + 1) problems.push_back(component + " size");
      } else if (component.ends_with(".resblock")) {
        res.insert(component);
      } else if (component.starts_with("g_m")) {
        gm.insert(component);
        if (n != 2 * D * C + 2 * D + 4 * D) problems.push_back(component + " size");
      }
    }
    const std::size_t want_gm = v == model::GmVariant::unshared ? c.n_steps : 1;
    if (film.size() != c.n_steps || res.size() != c.n_steps || att.size() != c.n_steps) {
      problems.push_back("per-step sets");
    }
    if (gm.size() != want_gm) problems.push_back("g_m sets = " + std::to_string(gm.size()));
  }

  // Attention rows and cascade probes.
  model::CmmModel<double> m(c, 2);
  Rng rng(3);
  model::Batch b;
  b.size = 5;
  for (std::size_t i = 0; i < b.size; ++i) {
    const std::size_t len = 3 + rng.below(c.max_len - 2);
    for (std::size_t t = 0; t < c.max_len; ++t) {
      b.tokens.push_back(t == 0 ? 1 : t + 1 == len ? 2 : t < len ? static_cast<std::int32_t>(4 + rng.below(12)) : 0);
    }
    b.lengths.push_back(static_cast<std::int32_t>(len));
  }
  for (std::size_t i = 0; i < b.size * 48; ++i) b.images.push_back(static_cast<float>(rng.uniform()));
  m.set_training(false);
  double worst_row = 0;
  {
    Tape<double> t(GradMode::disabled);
    const auto out = m.forward(t, b);
    for (const auto& a : out.trace.attention) {
      for (std::size_t r = 0; r < b.size; ++r) {
        double s = 0;
        for (std::size_t k = 0; k < c.max_len; ++k) s += a[r * c.max_len + k];
        worst_row = std::max(worst_row, std::abs(s - 1));
      }
    }
  }
  if (!(worst_row < 1e-6)) problems.push_back("attention row sum");

  double dv = 0, dq = 0;
  {
    Tape<double> t(GradMode::disabled);
    const auto q = m.encode_question(t, b.tokens, b.lengths);
    const Array<double> q0 = q.q0.value(), v0 = m.encode_image(t, b.images, b.size).value();
    const auto base = m.cmm_step(t, 2, t.constant(q0), t.constant(v0), q);
    Array<double> q1 = q0, v1 = v0;
    for (std::size_t i = 0; i < q1.size(); ++i) q1[i] += 0.05;
    for (std::size_t i = 0; i < v1.size(); ++i) v1[i] += 0.05 * std::cos(static_cast<double>(i));
    const auto pq = m.cmm_step(t, 2, t.constant(q1), t.constant(v0), q);
    const auto pv = m.cmm_step(t, 2, t.constant(q0), t.constant(v1), q);
    for (std::size_t i = 0; i < base.v.value().size(); ++i) dv = std::max(dv, std::abs(pq.v.value()[i] - base.v.value()[i]));
    for (std::size_t i = 0; i < base.q.value().size(); ++i) dq = std::max(dq, std::abs(pv.q.value()[i] - base.q.value()[i]));
  }
  if (!(dv > 0) || !(dq > 0)) problems.push_back("cascade probe");

  // FiLM identity in float, bit for bit.
  bool identity = true;
  {
    Tape<float> t(GradMode::disabled);
    Array<float> x({2, 3, 4, 5});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.uniform(-3, 3));
    const auto y = nn::film_affine(t.constant(x), t.constant(Array<float>({2, 3}, 1.0f)),
                                   t.constant(Array<float>({2, 3}, 0.0f)), 1, 0);
    identity = y.value() == x;
  }
  if (!identity) problems.push_back("FiLM identity");

  std::string detail = fmt("census ok for shared and unshared g_m; attention |row sum - 1| <= %.1e; "
                           "dV_i/dq_prev probe %.2e, dq_i/dV_prev probe %.2e; FiLM(1,0) bit-exact %s",
                           worst_row, dv, dq, identity ? "yes" : "no");
  for (const auto& p : problems) detail += "; problem: " + p;
  return {problems.empty(), detail};
}

Outcome oracle_consistency() {
  const data::DataConfig c = shipped_config("desk.cfg").data;
  const fs::path a = scratch_dir("oracle_a"), b = scratch_dir("oracle_b");
  data::write_dataset(data::generate_dataset(c), a);
  data::write_dataset(data::generate_dataset(c), b);
  bool identical = true;
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "vocab.txt", "answers.txt"}) {
    identical = identical && read_file(a / f) == read_file(b / f);
  }
  const data::Vocab vocab = data::load_vocab(a);
  std::size_t total = 0, agree = 0;
  for (data::Split s : data::kSplits) {
    for (const data::Sample& x : data::load_split(data::split_path(a, s), vocab, c.max_len)) {
      ++total;
      agree += data::oracle_answer(x.scene, data::parse_question(x.question_text)) == x.answer;
    }
  }
  fs::remove_all(a);
  fs::remove_all(b);
  return {identical && agree == total && total == c.train_size + c.val_size + c.test_size,
          fmt("%zu/%zu reloaded samples match the oracle; regeneration byte-identical: %s", agree, total,
              identical ? "yes" : "no")};
}

Outcome memorization() {
  const auto t0 = Clock::now();
  const Prepared p = prepare(shipped_config("memorize.cfg"));
  model::CmmModel<float> m(p.model, p.config.train.seed);
  train::TrainSchedule s = p.config.train;
  train::TrainOptions opts;
  double final_train = 0;
  std::size_t first_perfect = 0;
  opts.on_epoch = [&](const train::EpochRecord& r) {
    if (r.epoch % 50 == 0) progress(fmt("memorize epoch %zu loss %.5f train %.2f%%", r.epoch, r.train_loss, 100 * r.train_accuracy));
    if (first_perfect == 0 && r.train_accuracy == 1.0) first_perfect = r.epoch;
  };
  train::train(m, p.train_split, nullptr, s, opts);
  final_train = train::evaluate(m, p.train_split).overall;
  const double secs = seconds_since(t0);
  return {final_train == 1.0 && secs < 600,
          fmt("%zu samples, %zu epochs: eval-mode train accuracy %.2f%% (first perfect train-mode epoch %zu), %.0fs < 600s",
              p.train_split.size, s.total_epochs(), 100 * final_train, first_perfect, secs)};
}

Outcome desk_learning() {
  const auto t0 = Clock::now();
  const Prepared p = prepare(shipped_config("desk.cfg"));
  std::string detail;
  bool learned = false;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto ts = Clock::now();
    model::CmmModel<float> m(p.model, seed);
    train::TrainSchedule s = p.config.train;
    s.seed = seed;
    const auto res = train::train(m, p.train_split, &p.val_split, s, epoch_printer("desk seed " + std::to_string(seed)));
    const train::EvalReport r = train::evaluate(m, p.val_split);
    const bool ok = r.overall >= 0.90 && r.of(data::QType::exist) >= 0.95;
    detail += fmt("seed %llu: overall %.2f%%, exist %.2f%% (epoch %zu, %.0f min); ", static_cast<unsigned long long>(seed),
                  100 * r.overall, 100 * r.of(data::QType::exist), res.best_epoch, seconds_since(ts) / 60);
    if (ok) {
      learned = true;
      break;
    }
  }
  model::ModelConfig blind = p.model;
  blind.zero_visual = true;
  model::CmmModel<float> m(blind, 1);
  train::TrainSchedule s = p.config.train;
  train::train(m, p.train_split, &p.val_split, s, epoch_printer("question-only"));
  const train::EvalReport r = train::evaluate(m, p.val_split);
  const double hours = seconds_since(t0) / 3600;
  detail += fmt("question-only baseline %.2f%% (<= 65%%); %.2f h on 1 core", 100 * r.overall, hours);
  return {learned && r.overall <= 0.65, detail};
}

Outcome ablation_harness() {
  const Prepared p = prepare(shipped_config("ablation.cfg"));
  train::AblationGrid grid;
  grid.steps = {1, 2, 3, 4};
  grid.gm_variants = {model::GmVariant::cnn2, model::GmVariant::no_bn, model::GmVariant::unshared};
  train::AblationOptions opts;
  opts.on_run = [](const train::AblationRow& row, std::size_t i) {
    progress(fmt("%s seed %llu: %.2f%%", row.label.c_str(), static_cast<unsigned long long>(row.seeds[i]),
                 100 * row.per_seed[i].overall));
  };
  const auto rows = train::ablation_run(p.model, grid, p.train_split, p.val_split, p.config.train, {1, 2, 3}, opts);
  std::cerr << train::format_ablation_table(rows);
  std::map<std::size_t, double> by_steps;
  std::set<model::GmVariant> variants;
  for (const auto& r : rows) {
    if (r.label.find(' ') == std::string::npos && r.label.ends_with("-step")) by_steps[r.config.n_steps] = r.best().overall;
    if (r.label.find("g_m=") != std::string::npos) variants.insert(r.config.gm_variant);
  }
  const bool shape = by_steps.size() == 4 && variants.size() == 3 && rows.size() == 7;
  double best_multi = 0;
  for (std::size_t n : {2, 3, 4}) best_multi = std::max(best_multi, by_steps[n]);
  return {shape && best_multi >= by_steps[1],
          fmt("%zu rows (4 step counts, %zu g_m variants), 3 seeds each; best multi-step %.2f%% vs 1-step %.2f%%",
              rows.size(), variants.size(), 100 * best_multi, 100 * by_steps[1])};
}

Outcome trace_fidelity() {
  io::RunConfig c = shipped_config("ablation.cfg");
  c.data.train_size = 500;
  c.data.val_size = 40;
  c.data.test_size = 10;
  c.train.adam_epochs = 3;
  c.train.sgd_epochs = 0;
  const Prepared p = prepare(c);
  std::vector<std::string> problems;
  std::size_t traces = 0;
  for (bool mask : {true, false}) {
    model::ModelConfig mc = p.model;
    mc.mask_pad = mask;
    model::CmmModel<float> trained(mc, 5);
    train::train(trained, p.train_split, nullptr, c.train);
    const fs::path ck = scratch_dir("trace") / "m.ckpt";
    io::save_checkpoint(trained, p.dataset.vocab, ck);
    io::LoadedCheckpoint loaded = io::load_checkpoint(ck);
    fs::remove_all(ck.parent_path());
    model::CmmModel<float>& m = *loaded.model;
    for (const data::Sample& s : p.dataset.splits.at(data::Split::val)) {
      const train::TraceRecord t = train::export_trace(m, loaded.vocab, s, c.data.cell_px);
      ++traces;
      const std::size_t rows = mask ? static_cast<std::size_t>(s.length) : mc.max_len;
      if (t.tokens.size() != rows || t.weights.size() != rows) problems.push_back("row count");
      // Recompute everything from the emitted JSON.
      const nlohmann::json j = nlohmann::json::parse(train::trace_json(t).dump());
      const auto w = j.at("weights").get<std::vector<std::vector<double>>>();
      const auto maxima = j.at("maxima").get<std::vector<std::size_t>>();
      const auto hist = j.at("histogram").get<std::vector<std::size_t>>();
      if (j.at("steps").get<std::size_t>() != mc.n_steps || maxima.size() != mc.n_steps) problems.push_back("steps");
      for (std::size_t k = 0; k < mc.n_steps; ++k) {
        double sum = 0;
        std::size_t best = 0;
        for (std::size_t r = 0; r < w.size(); ++r) {
          if (w[r].size() != mc.n_steps) problems.push_back("columns");
          sum += w[r][k];
          if (w[r][k] > w[best][k]) best = r;
        }
        if (!(std::abs(sum - 1) <= 1e-6)) problems.push_back(fmt("step %zu sums to %.9f", k + 1, sum));
        if (maxima[k] != best) problems.push_back("maximum");
      }
      if (std::accumulate(hist.begin(), hist.end(), std::size_t{0}) != mc.proj_dim) problems.push_back("histogram sum");
      // The table marks exactly one maximum per step column.
      const std::string table = train::format_trace_table(t);
      if (static_cast<std::size_t>(std::count(table.begin(), table.end(), '*')) != mc.n_steps) problems.push_back("marks");
      // The histogram matches the argmax positions of an independent forward pass.
      const auto enc = train::encode_split(std::span(&s, 1), loaded.vocab, mc.max_len, c.data.cell_px);
      Tape<float> tape(GradMode::disabled);
      const auto out = m.forward(tape, train::make_batch(enc, 0, 1));
      std::vector<std::size_t> recount(t.height * t.width);
      for (const auto& pos : out.trace.argmax) ++recount[pos.row * t.width + pos.col];
      if (recount != hist) problems.push_back("histogram recount");
    }
  }
  std::sort(problems.begin(), problems.end());
  problems.erase(std::unique(problems.begin(), problems.end()), problems.end());
  std::string detail = fmt("%zu traces (masked and unmasked) from saved checkpoints: rows, per-step sums within 1e-6, "
                           "maxima, marks and K-sum histograms recomputed",
                           traces);
  for (const auto& x : problems) detail += "; problem: " + x;
  return {problems.empty(), detail};
}

Outcome determinism() {
  io::RunConfig c = shipped_config("ablation.cfg");
  c.data.train_size = 300;
  c.data.val_size = 100;
  c.data.test_size = 10;
  c.train.adam_epochs = 2;
  c.train.sgd_epochs = 1;
  const Prepared p = prepare(c);
  auto run = [&](const fs::path& ck) {
    model::CmmModel<float> m(p.model, 11);
    train::TrainSchedule s = c.train;
    s.seed = 11;
    std::string log;
    for (const auto& r : train::train(m, p.train_split, &p.val_split, s).log) log += train::to_json_line(r) + "\n";
    io::save_checkpoint(m, p.dataset.vocab, ck);
    return log;
  };
  const fs::path dir = scratch_dir("determinism");
  const std::string log_a = run(dir / "a.ckpt"), log_b = run(dir / "b.ckpt");
  const bool same_log = log_a == log_b;
  const bool same_ck = read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt");

  io::LoadedCheckpoint loaded = io::load_checkpoint(dir / "a.ckpt");
  io::save_checkpoint(*loaded.model, loaded.vocab, dir / "c.ckpt");
  const bool round_trip = read_file(dir / "a.ckpt") == read_file(dir / "c.ckpt");

  // Ensemble of one against the model's own argmax.
  model::CmmModel<float>& m = *loaded.model;
  std::vector<model::CmmModel<float>*> one{&m};
  const auto ens = train::predict(one, p.val_split);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < p.val_split.size; ++i) {
    Tape<float> t(GradMode::disabled);
    const auto out = m.forward(t, train::make_batch(p.val_split, i, i + 1));
    const auto& l = out.logits.value();
    const auto best = std::max_element(l.ptr(), l.ptr() + l.size()) - l.ptr();
    mismatches += best != ens[i];
  }
  fs::remove_all(dir);
  return {same_log && same_ck && round_trip && mismatches == 0,
          fmt("repeat training: logs identical %s, checkpoints identical %s; save-load-save identical %s; "
              "ensemble-of-one disagreements %zu/%zu",
              same_log ? "yes" : "no", same_ck ? "yes" : "no", round_trip ? "yes" : "no", mismatches, p.val_split.size)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {"gradient-oracle", gradient_oracle},   {"architecture-contracts", architecture_contracts},
      {"oracle-consistency", oracle_consistency}, {"memorization", memorization},
      {"desk-learning", desk_learning},       {"ablation-harness", ablation_harness},
      {"trace-fidelity", trace_fidelity},     {"determinism", determinism},
  };
  CLI::App app{"Acceptance criteria"};
  std::vector<std::string> only;
  bool list = false;
  app.add_option("--only", only, "Run only these criteria");
  app.add_flag("--list", list, "List criterion names");
  CLI11_PARSE(app, argc, argv);
  if (list) {
    for (const auto& c : all) std::cout << c.name << '\n';
    return 0;
  }
  for (const auto& name : only) {
    if (std::none_of(all.begin(), all.end(), [&](const Criterion& c) { return c.name == name; })) {
      std::cerr << "unknown criterion '" << name << "'\n";
      return 2;
    }
  }

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    std::cerr << "running " << c.name << std::endl;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
