#include "cmm/io/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace cmm::io {

using model::ConfigError;

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(std::string_view v) {
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("not a valid number: '" + std::string(v) + "'");
  return out;
}

bool parse_bool(std::string_view v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("not a valid switch: '" + std::string(v) + "' (expected on|off)");
}

std::string format_double(double d) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, ptr);
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

#define CMM_FIELD_NUM(KEY, EXPR, TYPE)                                                               \
  Field {                                                                                            \
    KEY, [](const RunConfig& c) { return std::to_string(c.EXPR); },                                  \
        [](RunConfig& c, std::string_view v) { c.EXPR = parse_number<TYPE>(v); }                     \
  }
#define CMM_FIELD_REAL(KEY, EXPR)                                                                    \
  Field {                                                                                            \
    KEY, [](const RunConfig& c) { return format_double(c.EXPR); },                                   \
        [](RunConfig& c, std::string_view v) { c.EXPR = parse_number<double>(v); }                   \
  }
#define CMM_FIELD_BOOL(KEY, EXPR)                                                                    \
  Field {                                                                                            \
    KEY, [](const RunConfig& c) { return std::string(c.EXPR ? "on" : "off"); },                      \
        [](RunConfig& c, std::string_view v) { c.EXPR = parse_bool(v); }                             \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      CMM_FIELD_NUM("model.n_steps", model.n_steps, std::size_t),
      CMM_FIELD_NUM("model.channels", model.channels, std::size_t),
      CMM_FIELD_NUM("model.lang_dim", model.lang_dim, std::size_t),
      CMM_FIELD_NUM("model.embed_dim", model.embed_dim, std::size_t),
      CMM_FIELD_NUM("model.proj_dim", model.proj_dim, std::size_t),
      CMM_FIELD_NUM("model.head_hidden", model.head_hidden, std::size_t),
      Field{"model.encoder", [](const RunConfig& c) { return std::string(model::to_string(c.model.encoder)); },
            [](RunConfig& c, std::string_view v) { c.model.encoder = model::parse_encoder(v); }},
      Field{"model.gm_variant", [](const RunConfig& c) { return std::string(model::to_string(c.model.gm_variant)); },
            [](RunConfig& c, std::string_view v) { c.model.gm_variant = model::parse_gm_variant(v); }},
      Field{"model.gamma_mode", [](const RunConfig& c) { return std::string(model::to_string(c.model.gamma_mode)); },
            [](RunConfig& c, std::string_view v) { c.model.gamma_mode = model::parse_gamma_mode(v); }},
      CMM_FIELD_BOOL("model.mask_pad", model.mask_pad),
      CMM_FIELD_BOOL("model.gm_relu", model.gm_relu),
      CMM_FIELD_BOOL("model.attend_modulated", model.attend_modulated),
      CMM_FIELD_BOOL("model.zero_visual", model.zero_visual),
      CMM_FIELD_NUM("data.grid_h", data.scene.grid_h, int),
      CMM_FIELD_NUM("data.grid_w", data.scene.grid_w, int),
      CMM_FIELD_NUM("data.min_objects", data.scene.min_objects, int),
      CMM_FIELD_NUM("data.max_objects", data.scene.max_objects, int),
      CMM_FIELD_NUM("data.cell_px", data.cell_px, int),
      CMM_FIELD_NUM("data.max_len", data.max_len, std::size_t),
      CMM_FIELD_NUM("data.train_size", data.train_size, std::size_t),
      CMM_FIELD_NUM("data.val_size", data.val_size, std::size_t),
      CMM_FIELD_NUM("data.test_size", data.test_size, std::size_t),
      CMM_FIELD_NUM("data.seed", data.seed, std::uint64_t),
      CMM_FIELD_REAL("data.max_answer_share", data.max_answer_share),
      CMM_FIELD_NUM("data.max_attempts", data.max_attempts, int),
      CMM_FIELD_NUM("train.adam_epochs", train.adam_epochs, std::size_t),
      CMM_FIELD_NUM("train.sgd_epochs", train.sgd_epochs, std::size_t),
      CMM_FIELD_NUM("train.batch_size", train.batch_size, std::size_t),
      CMM_FIELD_REAL("train.adam_lr", train.adam_lr),
      CMM_FIELD_REAL("train.sgd_lr", train.sgd_lr),
      CMM_FIELD_REAL("train.momentum", train.momentum),
      CMM_FIELD_REAL("train.beta1", train.beta1),
      CMM_FIELD_REAL("train.beta2", train.beta2),
      CMM_FIELD_REAL("train.epsilon", train.epsilon),
      CMM_FIELD_NUM("train.eval_every", train.eval_every, std::size_t),
      CMM_FIELD_NUM("train.seed", train.seed, std::uint64_t),
  };
  return table;
}

}  // namespace

model::ModelConfig RunConfig::resolved_model(const data::Vocab& vocab) const {
  model::ModelConfig m = model;
  m.word_vocab = vocab.word_count();
  m.answer_vocab = vocab.answer_count();
  m.max_len = data.max_len;
  m.image = {3, static_cast<std::size_t>(data.scene.grid_h * data.cell_px),
             static_cast<std::size_t>(data.scene.grid_w * data.cell_px)};
  return m;
}

void RunConfig::validate() const {
  try {
    data.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  model::ModelConfig probe = model;
  probe.word_vocab = 1;
  probe.answer_vocab = 1;
  probe.max_len = data.max_len;
  probe.validate();
}

RunConfig parse_run_config(std::string_view text, const std::string& source) {
  RunConfig config;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'section.key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->set(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  config.validate();
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.string());
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace cmm::io
