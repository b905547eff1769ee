#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmm/data/question.hpp"
#include "cmm/data/scene.hpp"
#include "cmm/data/vocab.hpp"

namespace cmm::data {

struct Sample {
  Scene scene;
  std::string question_text;
  std::vector<std::int32_t> question_tokens;  // padded to max_len
  std::int32_t length = 0;                    // unpadded, including START/END
  std::string answer;
  QType qtype = QType::count;
  std::uint64_t seed = 0;
  bool operator==(const Sample&) const = default;
};

struct DataConfig {
  SceneSpec scene;
  int cell_px = 4;
  std::size_t max_len = 24;
  std::size_t train_size = 10000;
  std::size_t val_size = 2000;
  std::size_t test_size = 2000;
  std::uint64_t seed = 1234;
  // Upper bound on any one answer's share within a question type.
  double max_answer_share = 0.55;
  int max_attempts = 2000;  // scene draws per sample before giving up

  void validate() const;
  bool operator==(const DataConfig&) const = default;
};

enum class Split { train, val, test };
inline constexpr std::array<Split, 3> kSplits{Split::train, Split::val, Split::test};
std::string_view name(Split s);
Split parse_split(std::string_view word);
std::size_t split_size(const DataConfig& config, Split s);

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// qtype -> answer -> count.
using AnswerDistribution = std::map<std::string, std::map<std::string, std::size_t>>;
AnswerDistribution answer_distribution(const std::vector<Sample>& samples);

// Sample i has question type i mod 5. Scene seeds already in `used` are
// skipped and every accepted seed is added, keeping splits disjoint.
std::vector<Sample> generate_split(const DataConfig& config, Split split, const Vocab& vocab,
                                   std::vector<std::uint64_t>& used);

struct Dataset {
  Vocab vocab;
  std::map<Split, std::vector<Sample>> splits;
};

// All three splits, generated in train, val, test order.
Dataset generate_dataset(const DataConfig& config);

// Writes train.jsonl, val.jsonl, test.jsonl, vocab.txt and answers.txt.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

std::string to_json_line(const Sample& s);
Sample from_json_line(const std::string& line);

// Parses every record and re-derives tokens and answer from the text and the
// scene; any disagreement throws DatasetError naming the line.
std::vector<Sample> load_split(const std::filesystem::path& file, const Vocab& vocab, std::size_t max_len);
Vocab load_vocab(const std::filesystem::path& dir);
std::filesystem::path split_path(const std::filesystem::path& dir, Split s);

}  // namespace cmm::data
