#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cmm/data/scene.hpp"

namespace cmm::data {

enum class QType { count, exist, compare_numbers, query_attribute, compare_attribute };
inline constexpr std::array<QType, 5> kQTypes{QType::count, QType::exist, QType::compare_numbers,
                                             QType::query_attribute, QType::compare_attribute};
std::string_view name(QType q);
QType parse_qtype(std::string_view word);

enum class Attribute { size, color, shape };
std::string_view name(Attribute a);

enum class Comparison { more, fewer, same };

// Conjunction of optional attribute constraints. The noun ("thing" or
// "object") carries no meaning but is kept so text round-trips.
struct Filter {
  std::optional<Size> size;
  std::optional<Color> color;
  std::optional<ShapeKind> shape;
  std::string noun = "thing";

  bool matches(const SceneObject& o) const;
  bool constrains(Attribute a) const;
  bool same_constraints(const Filter& other) const;
  bool operator==(const Filter&) const = default;
};

struct Question {
  QType type = QType::count;
  int template_id = 0;
  Filter first;
  Filter second;                      // compare_numbers, compare_attribute
  Attribute attribute = Attribute::color;  // query_attribute, compare_attribute
  Comparison comparison = Comparison::more;  // compare_numbers (fixed by template)
  bool operator==(const Question&) const = default;
};

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Number of templates for a question type.
int template_count(QType q);

// Lowercase, single-space separated.
std::string question_text(const Question& q);

// Inverse of question_text; throws std::invalid_argument on text that fits no template.
Question parse_question(std::string_view text);

// Symbolic ground truth computed from the object list alone. Throws
// OracleError when a template that needs a unique referent does not get one.
std::string oracle_answer(const Scene& scene, const Question& q);

// Objects matched by a filter.
int count_matches(const Scene& scene, const Filter& f);

// Draws a template and slot values until the referent constraints hold.
// Throws GenerationError after `max_attempts` failed draws.
Question generate_question(const Scene& scene, QType type, std::uint64_t seed, int max_attempts = 200);

// Every word any template can emit, in a fixed order.
std::vector<std::string> template_words();

// Every answer the oracle can emit for scenes of at most `max_count` objects
// matched by one filter: "0".."max_count", yes, no, then attribute values.
std::vector<std::string> answer_words(int max_count = 10);

}  // namespace cmm::data
