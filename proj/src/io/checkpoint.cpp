#include "cmm/io/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <zlib.h>

namespace cmm::io {

namespace {

using Kind = CheckpointError::Kind;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end) : bytes_(b), end_(end) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string text() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw CheckpointError(Kind::malformed, "checkpoint: record runs past the end of the data");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : " ") + s;
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::map<std::string, std::string> parse_lines(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError(Kind::malformed, "checkpoint: bad config line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

std::string model_config_text(const model::ModelConfig& c) {
  std::ostringstream o;
  o << "n_steps=" << c.n_steps << "\nchannels=" << c.channels << "\nlang_dim=" << c.lang_dim
    << "\nembed_dim=" << c.embed_dim << "\nmax_len=" << c.max_len << "\nproj_dim=" << c.proj_dim
    << "\nhead_hidden=" << c.head_hidden << "\nword_vocab=" << c.word_vocab << "\nanswer_vocab=" << c.answer_vocab
    << "\nencoder=" << model::to_string(c.encoder) << "\ngm_variant=" << model::to_string(c.gm_variant)
    << "\ngamma_mode=" << model::to_string(c.gamma_mode) << "\nmask_pad=" << c.mask_pad << "\ngm_relu=" << c.gm_relu
    << "\nattend_modulated=" << c.attend_modulated << "\nzero_visual=" << c.zero_visual
    << "\nimage=" << c.image.channels << ' ' << c.image.height << ' ' << c.image.width << '\n';
  return o.str();
}

model::ModelConfig parse_model_config_text(const std::string& text) {
  const auto kv = parse_lines(text);
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw CheckpointError(Kind::malformed, std::string("checkpoint: config lacks '") + key + "'");
    return it->second;
  };
  auto num = [&](const char* key) -> std::size_t {
    try {
      return static_cast<std::size_t>(std::stoull(get(key)));
    } catch (const std::logic_error&) {
      throw CheckpointError(Kind::malformed, std::string("checkpoint: bad value for '") + key + "'");
    }
  };
  model::ModelConfig c;
  c.n_steps = num("n_steps");
  c.channels = num("channels");
  c.lang_dim = num("lang_dim");
  c.embed_dim = num("embed_dim");
  c.max_len = num("max_len");
  c.proj_dim = num("proj_dim");
  c.head_hidden = num("head_hidden");
  c.word_vocab = num("word_vocab");
  c.answer_vocab = num("answer_vocab");
  try {
    c.encoder = model::parse_encoder(get("encoder"));
    c.gm_variant = model::parse_gm_variant(get("gm_variant"));
    c.gamma_mode = model::parse_gamma_mode(get("gamma_mode"));
  } catch (const model::ConfigError& e) {
    throw CheckpointError(Kind::malformed, std::string("checkpoint: ") + e.what());
  }
  c.mask_pad = num("mask_pad") != 0;
  c.gm_relu = num("gm_relu") != 0;
  c.attend_modulated = num("attend_modulated") != 0;
  c.zero_visual = num("zero_visual") != 0;
  std::istringstream im(get("image"));
  if (!(im >> c.image.channels >> c.image.height >> c.image.width)) {
    throw CheckpointError(Kind::malformed, "checkpoint: bad image spec");
  }
  return c;
}

std::vector<std::uint8_t> serialize_checkpoint(const model::CmmModel<float>& model, const data::Vocab& vocab) {
  Writer w;
  w.bytes = {'C', 'M', 'M', '1'};
  w.u32(kCheckpointVersion);
  w.text(model_config_text(model.config()) + "words=" + join(vocab.words()) + "\nanswers=" + join(vocab.answers()) +
         "\n");
  const model::NamedArrays<float> state = model.state();
  w.u32(static_cast<std::uint32_t>(state.size()));
  for (const auto& [name, a] : state) {
    w.text(name);
    w.u32(static_cast<std::uint32_t>(a.rank()));
    for (std::size_t e : a.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (float f : a.data()) w.f32(f);
  }
  w.u32(crc_of(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

LoadedCheckpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "CMM1", 4) != 0) {
    throw CheckpointError(Kind::bad_magic, "checkpoint: bad magic (not a CMM1 file)");
  }
  if (bytes.size() < 12) throw CheckpointError(Kind::checksum, "checkpoint: file truncated, checksum missing");
  Reader header(bytes, bytes.size());
  header.u32();
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::version, "checkpoint: format version " + std::to_string(version) + ", expected " +
                                             std::to_string(kCheckpointVersion));
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);
  if (crc_of(bytes.data(), body) != stored) {
    throw CheckpointError(Kind::checksum, "checkpoint: checksum mismatch (file corrupt or truncated)");
  }

  Reader r(bytes, body);
  r.u32();
  r.u32();
  const std::string config_text = r.text();
  const auto kv = parse_lines(config_text);
  model::ModelConfig config = parse_model_config_text(config_text);
  LoadedCheckpoint out;
  try {
    out.vocab = data::Vocab(split(kv.count("words") ? kv.at("words") : ""), split(kv.count("answers") ? kv.at("answers") : ""));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(Kind::malformed, std::string("checkpoint: ") + e.what());
  }
  if (out.vocab.word_count() != config.word_vocab || out.vocab.answer_count() != config.answer_vocab) {
    throw CheckpointError(Kind::shape, "checkpoint: vocabulary sizes disagree with the embedded config");
  }

  const std::uint32_t count = r.u32();
  model::NamedArrays<float> state;
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name = r.text();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw CheckpointError(Kind::malformed, "checkpoint: bad rank for '" + name + "'");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& e : shape) {
      e = r.u32();
      if (e == 0) throw CheckpointError(Kind::malformed, "checkpoint: zero extent in '" + name + "'");
      n *= e;
      if (n > body) throw CheckpointError(Kind::malformed, "checkpoint: '" + name + "' larger than the file");
    }
    Array<float> a = Array<float>::uninitialized(shape);
    for (std::size_t i = 0; i < n; ++i) a[i] = r.f32();
    state.emplace_back(std::move(name), std::move(a));
  }
  if (!r.done()) throw CheckpointError(Kind::malformed, "checkpoint: trailing bytes after the last tensor");

  try {
    out.model = std::make_unique<model::CmmModel<float>>(config, 0);
  } catch (const model::ConfigError& e) {
    throw CheckpointError(Kind::malformed, std::string("checkpoint: ") + e.what());
  }
  try {
    out.model->load_state(state);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(Kind::shape, std::string("checkpoint: tensors disagree with the embedded config: ") + e.what());
  }
  out.model->set_training(false);
  return out;
}

void save_checkpoint(const model::CmmModel<float>& model, const data::Vocab& vocab, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model, vocab);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(Kind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::io, "write failed: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::io, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const model::ModelConfig& expected) {
  LoadedCheckpoint loaded = load_checkpoint(path);
  if (!(loaded.model->config() == expected)) {
    throw CheckpointError(Kind::config, "checkpoint: saved for a different model config (" +
                                            std::to_string(loaded.model->config().n_steps) + " steps, run expects " +
                                            std::to_string(expected.n_steps) + ")");
  }
  return loaded;
}

}  // namespace cmm::io
