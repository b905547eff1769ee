#include "cmm/data/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"

#include "cmm/tensor/random.hpp"

namespace cmm::data {

using nlohmann::json;

void DataConfig::validate() const {
  data::validate(scene);
  if (scene.max_objects > 10) throw std::invalid_argument("data: max_objects above 10 leaves the answer vocabulary");
  if (cell_px < 3) throw std::invalid_argument("data: cell_px must be at least 3");
  if (max_len < 3) throw std::invalid_argument("data: max_len must be at least 3");
  if (train_size == 0 || val_size == 0 || test_size == 0) throw std::invalid_argument("data: split sizes must be positive");
  if (!(max_answer_share > 0.0 && max_answer_share <= 1.0)) {
    throw std::invalid_argument("data: max_answer_share must be in (0, 1]");
  }
  if (max_attempts < 1) throw std::invalid_argument("data: max_attempts must be positive");
}

std::string_view name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view word) {
  for (Split s : kSplits) {
    if (name(s) == word) return s;
  }
  throw std::invalid_argument("unknown split '" + std::string(word) + "' (expected train|val|test)");
}

std::size_t split_size(const DataConfig& config, Split s) {
  switch (s) {
    case Split::train: return config.train_size;
    case Split::val: return config.val_size;
    case Split::test: return config.test_size;
  }
  return 0;
}

AnswerDistribution answer_distribution(const std::vector<Sample>& samples) {
  AnswerDistribution out;
  for (const Sample& s : samples) ++out[std::string(name(s.qtype))][s.answer];
  return out;
}

namespace {

std::uint64_t scene_seed(std::uint64_t base, Split split, std::size_t index, int attempt) {
  std::uint64_t h = mix_seed(base);
  h = mix_seed(h ^ (static_cast<std::uint64_t>(split) + 1));
  h = mix_seed(h ^ static_cast<std::uint64_t>(index));
  return mix_seed(h ^ static_cast<std::uint64_t>(attempt));
}

std::uint64_t question_seed(std::uint64_t scene_seed) { return mix_seed(scene_seed ^ 0x5175657374696f6eULL); }

}  // namespace

std::vector<Sample> generate_split(const DataConfig& config, Split split, const Vocab& vocab,
                                   std::vector<std::uint64_t>& used) {
  config.validate();
  const std::size_t n = split_size(config, split);
  std::set<std::uint64_t> taken(used.begin(), used.end());
  std::map<QType, std::size_t> quota;
  for (std::size_t i = 0; i < n; ++i) ++quota[kQTypes[i % kQTypes.size()]];
  std::map<QType, std::map<std::string, std::size_t>> seen;

  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const QType type = kQTypes[i % kQTypes.size()];
    const auto cap = std::max<std::size_t>(
        1, static_cast<std::size_t>(config.max_answer_share * static_cast<double>(quota[type])));
    bool accepted = false;
    for (int attempt = 0; attempt < config.max_attempts && !accepted; ++attempt) {
      const std::uint64_t seed = scene_seed(config.seed, split, i, attempt);
      if (taken.count(seed)) continue;
      Sample s;
      s.scene = generate_scene(seed, config.scene);
      Question q;
      try {
        q = generate_question(s.scene, type, question_seed(seed));
      } catch (const GenerationError&) {
        continue;
      }
      s.answer = oracle_answer(s.scene, q);
      if (seen[type][s.answer] >= cap) continue;
      s.question_text = question_text(q);
      const EncodedQuestion e = vocab.encode(s.question_text, config.max_len);
      s.question_tokens = e.tokens;
      s.length = e.length;
      s.qtype = type;
      s.seed = seed;
      vocab.answer_id(s.answer);
      ++seen[type][s.answer];
      taken.insert(seed);
      used.push_back(seed);
      out.push_back(std::move(s));
      accepted = true;
    }
    if (!accepted) {
      throw DatasetError("could not generate " + std::string(name(split)) + " sample " + std::to_string(i) +
                         " within " + std::to_string(config.max_attempts) + " attempts");
    }
  }
  return out;
}

Dataset generate_dataset(const DataConfig& config) {
  config.validate();
  Dataset d;
  d.vocab = Vocab::standard();
  std::vector<std::uint64_t> used;
  for (Split s : kSplits) d.splits[s] = generate_split(config, s, d.vocab, used);
  return d;
}

std::string to_json_line(const Sample& s) {
  json objects = json::array();
  for (const SceneObject& o : s.scene.objects) {
    objects.push_back({{"row", o.row},
                       {"col", o.col},
                       {"shape", name(o.shape)},
                       {"color", name(o.color)},
                       {"size", name(o.size)}});
  }
  json j = {{"scene", {{"grid_h", s.scene.grid_h}, {"grid_w", s.scene.grid_w}, {"objects", objects}, {"seed", s.scene.seed}}},
            {"question_text", s.question_text},
            {"question_tokens", s.question_tokens},
            {"length", s.length},
            {"answer", s.answer},
            {"qtype", name(s.qtype)},
            {"seed", s.seed}};
  return j.dump();
}

Sample from_json_line(const std::string& line) {
  const json j = json::parse(line);
  Sample s;
  const json& sc = j.at("scene");
  s.scene.grid_h = sc.at("grid_h").get<int>();
  s.scene.grid_w = sc.at("grid_w").get<int>();
  s.scene.seed = sc.at("seed").get<std::uint64_t>();
  for (const json& o : sc.at("objects")) {
    SceneObject obj;
    obj.row = o.at("row").get<int>();
    obj.col = o.at("col").get<int>();
    obj.shape = parse_shape(o.at("shape").get<std::string>());
    obj.color = parse_color(o.at("color").get<std::string>());
    obj.size = parse_size(o.at("size").get<std::string>());
    s.scene.objects.push_back(obj);
  }
  s.question_text = j.at("question_text").get<std::string>();
  s.question_tokens = j.at("question_tokens").get<std::vector<std::int32_t>>();
  s.length = j.at("length").get<std::int32_t>();
  s.answer = j.at("answer").get<std::string>();
  s.qtype = parse_qtype(j.at("qtype").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

std::filesystem::path split_path(const std::filesystem::path& dir, Split s) {
  return dir / (std::string(name(s)) + ".jsonl");
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [split, samples] : dataset.splits) {
    const auto path = split_path(dir, split);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const Sample& s : samples) out << to_json_line(s) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
  }
  dataset.vocab.save(dir / "vocab.txt", dir / "answers.txt");
}

Vocab load_vocab(const std::filesystem::path& dir) { return Vocab::load(dir / "vocab.txt", dir / "answers.txt"); }

std::vector<Sample> load_split(const std::filesystem::path& file, const Vocab& vocab, std::size_t max_len) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      return DatasetError(file.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    Sample s;
    try {
      s = from_json_line(line);
    } catch (const std::exception& e) {
      throw fail(std::string("malformed record: ") + e.what());
    }
    Question q;
    try {
      q = parse_question(s.question_text);
    } catch (const std::invalid_argument& e) {
      throw fail(e.what());
    }
    if (q.type != s.qtype) throw fail("question type disagrees with the question text");
    std::string expected;
    try {
      expected = oracle_answer(s.scene, q);
    } catch (const OracleError& e) {
      throw fail(e.what());
    }
    if (expected != s.answer) throw fail("stored answer '" + s.answer + "' but the oracle says '" + expected + "'");
    const EncodedQuestion e = vocab.encode(s.question_text, max_len);
    if (e.tokens != s.question_tokens || e.length != s.length) throw fail("tokens disagree with the question text");
    vocab.answer_id(s.answer);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace cmm::data
