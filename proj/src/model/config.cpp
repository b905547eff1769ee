#include "cmm/model/config.hpp"

namespace cmm::model {

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("model config: ") + what);
  };
  require(n_steps >= 1, "n_steps must be at least 1");
  require(channels >= 1, "channels must be positive");
  require(lang_dim >= 2 && lang_dim % 2 == 0, "lang_dim must be even (two RNN directions)");
  require(embed_dim >= 1, "embed_dim must be positive");
  require(max_len >= 1, "max_len must be at least 1");
  require(proj_dim >= 1, "proj_dim must be positive");
  require(head_hidden >= 1, "head_hidden must be positive");
  require(word_vocab >= 1, "word_vocab must be set");
  require(answer_vocab >= 1, "answer_vocab must be set");
  require(image.channels >= 1 && image.height >= 1 && image.width >= 1, "image dims must be positive");
}

std::string_view to_string(CellKind k) { return k == CellKind::gru ? "gru" : "lstm"; }

std::string_view to_string(GmVariant v) {
  switch (v) {
    case GmVariant::standard: return "default";
    case GmVariant::cnn2: return "cnn2";
    case GmVariant::no_bn: return "no-bn";
    case GmVariant::unshared: return "unshared";
  }
  return "?";
}

std::string_view to_string(GammaMode m) { return m == GammaMode::plain ? "plain" : "one-plus-delta"; }

CellKind parse_encoder(std::string_view s) {
  if (s == "gru") return CellKind::gru;
  if (s == "lstm") return CellKind::lstm;
  throw ConfigError("unknown encoder '" + std::string(s) + "' (expected gru|lstm)");
}

GmVariant parse_gm_variant(std::string_view s) {
  if (s == "default") return GmVariant::standard;
  if (s == "cnn2") return GmVariant::cnn2;
  if (s == "no-bn" || s == "no_bn") return GmVariant::no_bn;
  if (s == "unshared") return GmVariant::unshared;
  throw ConfigError("unknown g_m variant '" + std::string(s) + "' (expected default|cnn2|no-bn|unshared)");
}

GammaMode parse_gamma_mode(std::string_view s) {
  if (s == "plain") return GammaMode::plain;
  if (s == "one-plus-delta" || s == "one_plus_delta") return GammaMode::one_plus_delta;
  throw ConfigError("unknown gamma mode '" + std::string(s) + "' (expected plain|one-plus-delta)");
}

}  // namespace cmm::model
