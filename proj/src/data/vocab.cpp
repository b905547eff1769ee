#include "cmm/data/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cmm/data/question.hpp"

namespace cmm::data {

namespace {

const std::vector<std::string> kSpecials{"<NULL>", "<START>", "<END>", "<UNK>"};

std::map<std::string, std::int32_t, std::less<>> index_of(const std::vector<std::string>& items, const char* what) {
  std::map<std::string, std::int32_t, std::less<>> ids;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!ids.emplace(items[i], static_cast<std::int32_t>(i)).second) {
      throw std::invalid_argument(std::string("vocab: duplicate ") + what + " '" + items[i] + "'");
    }
  }
  return ids;
}

void write_list(const std::filesystem::path& path, const std::vector<std::string>& items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < items.size(); ++i) out << items[i] << ' ' << i << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<std::string> read_list(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::string> items;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string item;
    long id = -1;
    if (!(fields >> item >> id) || id != static_cast<long>(items.size())) {
      throw std::runtime_error(path.string() + ": malformed line '" + line + "'");
    }
    items.push_back(item);
  }
  return items;
}

}  // namespace

Vocab::Vocab(std::vector<std::string> words, std::vector<std::string> answers)
    : words_(std::move(words)), answers_(std::move(answers)) {
  if (words_.size() < kSpecials.size() || !std::equal(kSpecials.begin(), kSpecials.end(), words_.begin())) {
    throw std::invalid_argument("vocab: word list must start with <NULL> <START> <END> <UNK>");
  }
  if (answers_.empty()) throw std::invalid_argument("vocab: empty answer list");
  word_ids_ = index_of(words_, "word");
  answer_ids_ = index_of(answers_, "answer");
}

Vocab Vocab::standard() {
  std::vector<std::string> words = kSpecials;
  for (std::string& w : template_words()) words.push_back(std::move(w));
  return Vocab(std::move(words), answer_words());
}

std::int32_t Vocab::word_id(std::string_view w) const {
  auto it = word_ids_.find(w);
  return it == word_ids_.end() ? kUnkId : it->second;
}

std::int32_t Vocab::answer_id(std::string_view a) const {
  auto it = answer_ids_.find(a);
  if (it == answer_ids_.end()) throw std::out_of_range("answer '" + std::string(a) + "' not in vocabulary");
  return it->second;
}

EncodedQuestion Vocab::encode(std::string_view text, std::size_t max_len) const {
  EncodedQuestion e;
  e.tokens.push_back(kStartId);
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) e.tokens.push_back(word_id(w));
  e.tokens.push_back(kEndId);
  if (e.tokens.size() > max_len) {
    throw std::length_error("question of " + std::to_string(e.tokens.size()) + " tokens exceeds max_len " +
                            std::to_string(max_len));
  }
  e.length = static_cast<std::int32_t>(e.tokens.size());
  e.tokens.resize(max_len, kNullId);
  return e;
}

void Vocab::save(const std::filesystem::path& words_file, const std::filesystem::path& answers_file) const {
  write_list(words_file, words_);
  write_list(answers_file, answers_);
}

Vocab Vocab::load(const std::filesystem::path& words_file, const std::filesystem::path& answers_file) {
  return Vocab(read_list(words_file), read_list(answers_file));
}

}  // namespace cmm::data
