#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cmm::data {

inline constexpr std::int32_t kNullId = 0;
inline constexpr std::int32_t kStartId = 1;
inline constexpr std::int32_t kEndId = 2;
inline constexpr std::int32_t kUnkId = 3;

struct EncodedQuestion {
  std::vector<std::int32_t> tokens;  // START words END, NULL-padded to max_len
  std::int32_t length = 0;           // including START and END
};

// Word and answer vocabularies. Ids are positions in the lists; the first four
// words are always NULL, START, END, UNK.
class Vocab {
 public:
  Vocab() = default;
  Vocab(std::vector<std::string> words, std::vector<std::string> answers);

  // The closed vocabulary of the synthetic task.
  static Vocab standard();

  std::size_t word_count() const { return words_.size(); }
  std::size_t answer_count() const { return answers_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::string>& answers() const { return answers_; }

  // Unknown words map to UNK.
  std::int32_t word_id(std::string_view w) const;
  const std::string& word(std::int32_t id) const { return words_.at(static_cast<std::size_t>(id)); }
  // Throws std::out_of_range for answers outside the vocabulary.
  std::int32_t answer_id(std::string_view a) const;
  const std::string& answer(std::int32_t id) const { return answers_.at(static_cast<std::size_t>(id)); }

  // Throws std::length_error if the bracketed question exceeds max_len.
  EncodedQuestion encode(std::string_view text, std::size_t max_len) const;

  // "<word> <id>" per line.
  void save(const std::filesystem::path& words_file, const std::filesystem::path& answers_file) const;
  static Vocab load(const std::filesystem::path& words_file, const std::filesystem::path& answers_file);

  bool operator==(const Vocab& other) const { return words_ == other.words_ && answers_ == other.answers_; }

 private:
  std::vector<std::string> words_;
  std::vector<std::string> answers_;
  std::map<std::string, std::int32_t, std::less<>> word_ids_;
  std::map<std::string, std::int32_t, std::less<>> answer_ids_;
};

}  // namespace cmm::data
