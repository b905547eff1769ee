#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "cmm/data/dataset.hpp"
#include "cmm/io/checkpoint.hpp"
#include "cmm/io/run_config.hpp"
#include "cmm/tensor/tape.hpp"
#include "cmm/train/ablation.hpp"
#include "cmm/train/gradcheck_suite.hpp"
#include "cmm/train/trace.hpp"
#include "cmm/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace cmm;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumeric = 2, kIo = 3 };

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<std::string> encoder;
  std::optional<std::string> gm_variant;
  std::optional<std::string> mask_pad;
  std::optional<std::string> gamma_mode;
  std::optional<std::size_t> adam_epochs;
  std::optional<std::size_t> sgd_epochs;
};

void add_model_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--steps", o.steps, "Reasoning steps N");
  cmd->add_option("--encoder", o.encoder, "Question encoder")->check(CLI::IsMember({"gru", "lstm"}));
  cmd->add_option("--gm-variant", o.gm_variant, "Language-modulation projection")
      ->check(CLI::IsMember({"default", "cnn2", "no-bn", "unshared"}));
  cmd->add_option("--mask-pad", o.mask_pad, "Mask padding in encoder and attention")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--gamma-mode", o.gamma_mode, "FiLM gamma parameterization")
      ->check(CLI::IsMember({"plain", "one-plus-delta"}));
}

void add_schedule_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--adam-epochs", o.adam_epochs, "Epochs with ADAM");
  cmd->add_option("--sgd-epochs", o.sgd_epochs, "Epochs with SGD + momentum after ADAM");
}

io::RunConfig resolve_config(const Overrides& o, bool seed_is_data_seed) {
  io::RunConfig c = o.config.empty() ? io::RunConfig{} : io::load_run_config(o.config);
  if (o.seed) (seed_is_data_seed ? c.data.seed : c.train.seed) = *o.seed;
  if (o.steps) c.model.n_steps = *o.steps;
  if (o.encoder) c.model.encoder = model::parse_encoder(*o.encoder);
  if (o.gm_variant) c.model.gm_variant = model::parse_gm_variant(*o.gm_variant);
  if (o.mask_pad) c.model.mask_pad = *o.mask_pad == "on";
  if (o.gamma_mode) c.model.gamma_mode = model::parse_gamma_mode(*o.gamma_mode);
  if (o.adam_epochs) c.train.adam_epochs = *o.adam_epochs;
  if (o.sgd_epochs) c.train.sgd_epochs = *o.sgd_epochs;
  c.validate();
  return c;
}

struct LoadedData {
  data::Vocab vocab;
  std::vector<data::Sample> samples;
};

data::Vocab read_vocab(const fs::path& dir) {
  if (!fs::exists(dir / "vocab.txt") || !fs::exists(dir / "answers.txt")) {
    throw IoError("no dataset in " + dir.string() + " (run gen-data first)");
  }
  return data::load_vocab(dir);
}

std::vector<data::Sample> read_split(const fs::path& file, const data::Vocab& vocab, std::size_t max_len) {
  if (!fs::exists(file)) throw IoError("missing data file " + file.string());
  return data::load_split(file, vocab, max_len);
}

void print_distribution(const data::Dataset& ds) {
  for (data::Split s : data::kSplits) {
    const auto dist = data::answer_distribution(ds.splits.at(s));
    std::cout << data::name(s) << " (" << ds.splits.at(s).size() << " samples)\n";
    for (data::QType t : data::kQTypes) {
      const std::string q(data::name(t));
      if (!dist.count(q)) continue;
      std::size_t n = 0;
      for (const auto& [a, k] : dist.at(q)) n += k;
      std::cout << "  " << q << ":";
      for (const auto& [a, k] : dist.at(q)) {
        char buf[64];
        std::snprintf(buf, sizeof buf, " %s=%.1f%%", a.c_str(), 100.0 * static_cast<double>(k) / static_cast<double>(n));
        std::cout << buf;
      }
      std::cout << '\n';
    }
  }
}

int cmd_gen_data(const Overrides& o, const fs::path& out) {
  const io::RunConfig c = resolve_config(o, true);
  const data::Dataset ds = data::generate_dataset(c.data);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  data::write_dataset(ds, out);
  print_distribution(ds);
  std::cout << "wrote " << out.string() << '\n';
  return kOk;
}

int cmd_train(const Overrides& o, const fs::path& data_dir, const fs::path& out, std::string log_path,
              bool inject_nan) {
  const io::RunConfig c = resolve_config(o, false);
  const data::Vocab vocab = read_vocab(data_dir);
  const model::ModelConfig mc = c.resolved_model(vocab);
  mc.validate();
  const auto train_samples = read_split(data::split_path(data_dir, data::Split::train), vocab, c.data.max_len);
  const auto val_samples = read_split(data::split_path(data_dir, data::Split::val), vocab, c.data.max_len);
  const train::EncodedSplit tr = train::encode_split(train_samples, vocab, c.data.max_len, c.data.cell_px);
  const train::EncodedSplit va = train::encode_split(val_samples, vocab, c.data.max_len, c.data.cell_px);
  train::check_compatible(tr, mc);

  if (log_path.empty()) log_path = out.string() + ".metrics.jsonl";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write " + log_path);

  model::CmmModel<float> m(mc, c.train.seed);
  std::cout << "model: " << mc.n_steps << " steps, " << mc.channels << " channels, " << model::to_string(mc.encoder)
            << ", g_m " << model::to_string(mc.gm_variant) << "; " << tr.size << " train / " << va.size << " val\n";
  auto t0 = std::chrono::steady_clock::now();
  train::TrainOptions opts;
  if (inject_nan) opts.poison_epoch = 1;
  opts.on_epoch = [&](const train::EpochRecord& r) {
    log << train::to_json_line(r) << '\n';
    log.flush();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %3zu %-4s loss %.4f train %.2f%% val %s  [%.0fs]", r.epoch, r.phase.c_str(),
                  r.train_loss, 100 * r.train_accuracy,
                  r.val ? (std::to_string(100 * r.val->overall).substr(0, 5) + "%").c_str() : "-", secs);
    std::cout << buf << std::endl;
  };
  const train::TrainResult result = train::train(m, tr, &va, c.train, opts);
  io::save_checkpoint(m, vocab, out);
  std::cout << "best epoch " << result.best_epoch << "\n" << train::format_report(train::evaluate(m, va), "val");
  std::cout << "wrote " << out.string() << " and " << log_path << '\n';
  return kOk;
}

std::vector<io::LoadedCheckpoint> load_members(const std::string& checkpoint, const std::vector<std::string>& extra) {
  std::vector<std::string> paths;
  if (!checkpoint.empty()) paths.push_back(checkpoint);
  paths.insert(paths.end(), extra.begin(), extra.end());
  if (paths.empty()) throw CLI::ValidationError("--checkpoint or --ensemble is required");
  std::vector<io::LoadedCheckpoint> members;
  for (const auto& p : paths) {
    members.push_back(io::load_checkpoint(p));
    if (!(members.back().vocab == members.front().vocab)) {
      throw model::ConfigError("ensemble members disagree on vocabulary: " + p + " vs " + paths.front());
    }
  }
  return members;
}

int cmd_eval(const Overrides& o, const std::string& checkpoint, const std::vector<std::string>& ensemble,
             const fs::path& data_dir, const std::string& split) {
  const io::RunConfig c = resolve_config(o, false);
  const data::Split which = data::parse_split(split);
  auto members = load_members(checkpoint, ensemble);
  const data::Vocab vocab = read_vocab(data_dir);
  if (!(vocab == members.front().vocab)) throw model::ConfigError("checkpoint vocabulary differs from the dataset's");
  const auto samples = read_split(data::split_path(data_dir, which), vocab, c.data.max_len);
  const train::EncodedSplit enc = train::encode_split(samples, vocab, c.data.max_len, c.data.cell_px);
  std::vector<model::CmmModel<float>*> ptrs;
  for (auto& m : members) ptrs.push_back(m.model.get());
  const train::EvalReport r = train::evaluate_ensemble(ptrs, enc);
  std::cout << train::format_report(r, members.size() > 1 ? "ensemble(" + std::to_string(members.size()) + ")" : split);
  std::cout << "samples";
  for (data::QType t : data::kQTypes) std::cout << ' ' << data::name(t) << '=' << r.counts[static_cast<std::size_t>(t)];
  std::cout << '\n';
  return kOk;
}

int cmd_trace(const Overrides& o, const std::string& checkpoint, const fs::path& data_dir, const std::string& split,
              const std::string& sample_file, std::size_t index, const fs::path& out) {
  const io::RunConfig c = resolve_config(o, false);
  io::LoadedCheckpoint ck = io::load_checkpoint(checkpoint);
  const fs::path file = sample_file.empty() ? data::split_path(data_dir, data::parse_split(split)) : fs::path(sample_file);
  const auto samples = read_split(file, ck.vocab, ck.model->config().max_len);
  if (index >= samples.size()) {
    throw std::out_of_range("sample index " + std::to_string(index) + " out of range (" + std::to_string(samples.size()) +
                            " samples)");
  }
  const data::Sample& s = samples[index];
  const train::TraceRecord t = train::export_trace(*ck.model, ck.vocab, s, c.data.cell_px);
  std::cout << "question: " << t.question << "\nanswer: " << t.answer << "  predicted: " << t.predicted << "\n\n"
            << train::format_trace_table(t) << "\nargmax histogram (" << t.channels << " channels)\n"
            << train::format_histogram(t);
  fs::create_directories(out);
  std::ofstream(out / "trace.json") << train::trace_json(t).dump(2) << '\n';
  train::write_overlay(t, data::render_scene(s.scene, c.data.cell_px), out / "overlay.ppm");
  std::cout << "wrote " << (out / "trace.json").string() << " and " << (out / "overlay.ppm").string() << '\n';
  return kOk;
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& text, F parse) {
  std::vector<T> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(parse(item));
  }
  return out;
}

int cmd_ablate(const Overrides& o, const fs::path& data_dir, const std::string& steps, const std::string& gms,
               const std::string& encoders, const std::string& seeds, const fs::path& out) {
  const io::RunConfig c = resolve_config(o, false);
  train::AblationGrid grid;
  auto to_size = [](const std::string& s) { return static_cast<std::size_t>(std::stoul(s)); };
  grid.steps = parse_list<std::size_t>(steps, to_size);
  grid.gm_variants = parse_list<model::GmVariant>(gms, [](const std::string& s) { return model::parse_gm_variant(s); });
  grid.encoders = parse_list<model::CellKind>(encoders, [](const std::string& s) { return model::parse_encoder(s); });
  const auto seed_list = parse_list<std::uint64_t>(seeds, [](const std::string& s) { return std::stoull(s); });

  const data::Vocab vocab = read_vocab(data_dir);
  const model::ModelConfig base = c.resolved_model(vocab);
  train::expand_grid(base, grid);
  const auto tr_s = read_split(data::split_path(data_dir, data::Split::train), vocab, c.data.max_len);
  const auto va_s = read_split(data::split_path(data_dir, data::Split::val), vocab, c.data.max_len);
  const auto tr = train::encode_split(tr_s, vocab, c.data.max_len, c.data.cell_px);
  const auto va = train::encode_split(va_s, vocab, c.data.max_len, c.data.cell_px);

  train::AblationOptions opts;
  opts.on_run = [](const train::AblationRow& row, std::size_t i) {
    std::printf("%-24s seed %llu  val %.2f%%\n", row.label.c_str(), static_cast<unsigned long long>(row.seeds[i]),
                100 * row.per_seed[i].overall);
    std::fflush(stdout);
  };
  const auto rows = train::ablation_run(base, grid, tr, va, c.train, seed_list, opts);
  const std::string table = train::format_ablation_table(rows);
  std::cout << '\n' << table;
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw IoError("cannot write " + out.string());
    f << table;
  }
  return kOk;
}

int cmd_gradcheck(const Overrides& o, const std::string& fault) {
  model::ModelConfig tiny = train::tiny_model_config();
  if (!o.config.empty() || o.encoder || o.gm_variant || o.mask_pad || o.gamma_mode || o.steps) {
    const io::RunConfig c = resolve_config(o, false);
    tiny.n_steps = std::min<std::size_t>(c.model.n_steps, 3);
    tiny.encoder = c.model.encoder;
    tiny.gm_variant = c.model.gm_variant;
    tiny.gamma_mode = c.model.gamma_mode;
    tiny.mask_pad = c.model.mask_pad;
  }
  if (!fault.empty()) debug::set_faulty_backward(fault);
  const auto t0 = std::chrono::steady_clock::now();
  train::SuiteOptions opts;
  std::size_t failed = 0;
  opts.on_result = [&](const train::SuiteResult& r) {
    if (!r.passed()) ++failed;
    std::printf("%s  %-42s rel %.3e  (tol %.0e, %zu params)\n", r.passed() ? "PASS" : "FAIL", r.name.c_str(),
                r.report.worst(), r.tolerance, r.report.entries.size());
    std::fflush(stdout);
  };
  const auto results = train::run_gradcheck_suite(tiny, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%zu checks, %zu failed, %.1fs\n", results.size(), failed, secs);
  return failed ? kNumeric : kOk;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Large per-iteration buffers: keep them on the heap instead of fresh mmaps.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Cascaded mutual modulation for visual reasoning"};
  app.require_subcommand(1);
  Overrides o;
  std::string data_dir = "data", out, log_path, checkpoint, split = "val", sample_file, fault;
  std::string grid_steps = "1,2,3,4", grid_gm, grid_enc, seeds = "1";
  std::vector<std::string> ensemble;
  std::size_t index = 0;
  bool inject_nan = false;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "Run config file");
    cmd->add_option("--seed", o.seed, "Seed override");
  };
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  common(gen);
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model and save the best checkpoint");
  common(tr);
  add_model_flags(tr, o);
  add_schedule_flags(tr, o);
  tr->add_option("--data-dir", data_dir, "Dataset directory");
  tr->add_option("--out", out, "Checkpoint path")->required();
  tr->add_option("--log", log_path, "Metrics log (default <out>.metrics.jsonl)");
  tr->add_flag("--inject-fault", inject_nan, "Poison the first loss with NaN")->group("");

  auto* ev = app.add_subcommand("eval", "Evaluate checkpoints by question type");
  common(ev);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint");
  ev->add_option("--ensemble", ensemble, "Checkpoints whose probabilities are averaged");
  ev->add_option("--data-dir", data_dir, "Dataset directory");
  ev->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

  auto* trc = app.add_subcommand("trace", "Export attention and argmax-pool traces for one sample");
  common(trc);
  trc->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  trc->add_option("--data-dir", data_dir, "Dataset directory");
  trc->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  trc->add_option("--sample-file", sample_file, "JSONL sample file instead of a split");
  trc->add_option("--index", index, "Sample index");
  trc->add_option("--out", out, "Directory for trace.json and overlay.ppm")->default_str("trace");

  auto* ab = app.add_subcommand("ablate", "Train one model per grid variant and tabulate");
  common(ab);
  add_model_flags(ab, o);
  add_schedule_flags(ab, o);
  ab->add_option("--data-dir", data_dir, "Dataset directory");
  ab->add_option("--grid-steps", grid_steps, "Comma-separated step counts");
  ab->add_option("--grid-gm", grid_gm, "Comma-separated g_m variants");
  ab->add_option("--grid-encoders", grid_enc, "Comma-separated encoders");
  ab->add_option("--seeds", seeds, "Comma-separated seeds");
  ab->add_option("--out", out, "Table output file");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks in double precision");
  common(gc);
  add_model_flags(gc, o);
  gc->add_option("--inject-fault", fault, "Corrupt the backward rule of this op")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(o, out);
    if (*tr) return cmd_train(o, data_dir, out, log_path, inject_nan);
    if (*ev) return cmd_eval(o, checkpoint, ensemble, data_dir, split);
    if (*trc) return cmd_trace(o, checkpoint, data_dir, split, sample_file, index, out.empty() ? "trace" : out);
    if (*ab) return cmd_ablate(o, data_dir, grid_steps, grid_gm, grid_enc, seeds, out);
    if (*gc) return cmd_gradcheck(o, fault);
  } catch (const train::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const io::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return e.kind() == io::CheckpointError::Kind::config ? kUsage : kIo;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const data::DatasetError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kIo;
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
