#include "cmm/data/question.hpp"

#include <algorithm>
#include <array>
#include <sstream>

#include "cmm/tensor/random.hpp"

namespace cmm::data {

std::string_view name(QType q) {
  switch (q) {
    case QType::count: return "count";
    case QType::exist: return "exist";
    case QType::compare_numbers: return "compare_numbers";
    case QType::query_attribute: return "query_attribute";
    case QType::compare_attribute: return "compare_attribute";
  }
  return "?";
}

QType parse_qtype(std::string_view word) {
  for (QType q : kQTypes) {
    if (name(q) == word) return q;
  }
  throw std::invalid_argument("unknown question type '" + std::string(word) + "'");
}

std::string_view name(Attribute a) {
  switch (a) {
    case Attribute::size: return "size";
    case Attribute::color: return "color";
    case Attribute::shape: return "shape";
  }
  return "?";
}

namespace {

constexpr std::array<Attribute, 3> kAttributes{Attribute::size, Attribute::color, Attribute::shape};
constexpr std::array<std::string_view, 2> kNouns{"thing", "object"};

// Slots: {P}/{P2} plural filter phrases, {S}/{S2} singular ones, {A} attribute.
const std::vector<std::string_view>& templates(QType q) {
  static const std::vector<std::string_view> count{"how many {P} are there", "what number of {P} are there"};
  static const std::vector<std::string_view> exist{"are there any {P}", "is there a {S}"};
  // Template index doubles as the Comparison value.
  static const std::vector<std::string_view> compare_numbers{
      "are there more {P} than {P2}", "are there fewer {P} than {P2}",
      "is the number of {P} the same as the number of {P2}"};
  static const std::vector<std::string_view> query{"what {A} is the {S}", "the {S} has what {A}"};
  static const std::vector<std::string_view> compare_attribute{"does the {S} have the same {A} as the {S2}",
                                                               "is the {S} the same {A} as the {S2}"};
  switch (q) {
    case QType::count: return count;
    case QType::exist: return exist;
    case QType::compare_numbers: return compare_numbers;
    case QType::query_attribute: return query;
    case QType::compare_attribute: return compare_attribute;
  }
  return count;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

void append_filter(std::vector<std::string>& out, const Filter& f, bool plural) {
  if (f.size) out.emplace_back(name(*f.size));
  if (f.color) out.emplace_back(name(*f.color));
  if (f.shape) out.emplace_back(name(*f.shape));
  out.push_back(f.noun + (plural ? "s" : ""));
}

// Consumes "[size] [color] [shape] noun" starting at words[i].
bool match_filter(const std::vector<std::string>& words, std::size_t& i, bool plural, Filter& f) {
  f = Filter{};
  auto try_word = [&](auto parse, auto& slot) {
    if (i >= words.size()) return;
    try {
      slot = parse(words[i]);
      ++i;
    } catch (const std::invalid_argument&) {
    }
  };
  try_word(parse_size, f.size);
  try_word(parse_color, f.color);
  try_word(parse_shape, f.shape);
  if (i >= words.size()) return false;
  for (std::string_view noun : kNouns) {
    if (words[i] == std::string(noun) + (plural ? "s" : "")) {
      f.noun = std::string(noun);
      ++i;
      return true;
    }
  }
  return false;
}

bool match_template(const std::vector<std::string>& words, std::string_view tmpl, Question& q) {
  std::size_t i = 0;
  for (const std::string& part : split_words(tmpl)) {
    if (part == "{P}" || part == "{S}") {
      if (!match_filter(words, i, part == "{P}", q.first)) return false;
    } else if (part == "{P2}" || part == "{S2}") {
      if (!match_filter(words, i, part == "{P2}", q.second)) return false;
    } else if (part == "{A}") {
      if (i >= words.size()) return false;
      auto it = std::find_if(kAttributes.begin(), kAttributes.end(), [&](Attribute a) { return name(a) == words[i]; });
      if (it == kAttributes.end()) return false;
      q.attribute = *it;
      ++i;
    } else {
      if (i >= words.size() || words[i] != part) return false;
      ++i;
    }
  }
  return i == words.size();
}

const SceneObject& unique_referent(const Scene& scene, const Filter& f) {
  const SceneObject* found = nullptr;
  int n = 0;
  for (const SceneObject& o : scene.objects) {
    if (f.matches(o)) {
      found = &o;
      ++n;
    }
  }
  if (n != 1) {
    std::vector<std::string> words;
    append_filter(words, f, false);
    std::string phrase;
    for (const auto& w : words) phrase += (phrase.empty() ? "" : " ") + w;
    throw OracleError("'" + phrase + "' matches " + std::to_string(n) + " objects, expected exactly one");
  }
  return *found;
}

std::string attribute_value(const SceneObject& o, Attribute a) {
  switch (a) {
    case Attribute::size: return std::string(name(o.size));
    case Attribute::color: return std::string(name(o.color));
    case Attribute::shape: return std::string(name(o.shape));
  }
  return "?";
}

template <typename E, std::size_t N>
E pick(Rng& rng, const std::array<E, N>& values) {
  return values[rng.below(N)];
}

Filter random_filter(Rng& rng, const Scene& scene) {
  Filter f;
  f.noun = std::string(pick(rng, kNouns));
  const SceneObject* anchor = nullptr;
  if (!scene.objects.empty() && rng.coin(0.6)) anchor = &scene.objects[rng.below(scene.objects.size())];
  if (rng.coin()) f.size = anchor ? anchor->size : pick(rng, kSizes);
  if (rng.coin()) f.color = anchor ? anchor->color : pick(rng, kColors);
  if (rng.coin()) f.shape = anchor ? anchor->shape : pick(rng, kShapes);
  return f;
}

// A filter naming `target` uniquely without mentioning `hidden`, using a
// random subset of the other attributes.
std::optional<Filter> referring_filter(Rng& rng, const Scene& scene, const SceneObject& target, Attribute hidden) {
  std::vector<Attribute> others;
  for (Attribute a : kAttributes) {
    if (a != hidden) others.push_back(a);
  }
  std::vector<int> subsets{0, 1, 2, 3};
  rng.shuffle(subsets);
  const std::string noun(pick(rng, kNouns));
  for (int mask : subsets) {
    Filter f;
    f.noun = noun;
    for (std::size_t k = 0; k < others.size(); ++k) {
      if (!(mask & (1 << k))) continue;
      switch (others[k]) {
        case Attribute::size: f.size = target.size; break;
        case Attribute::color: f.color = target.color; break;
        case Attribute::shape: f.shape = target.shape; break;
      }
    }
    if (count_matches(scene, f) == 1) return f;
  }
  return std::nullopt;
}

}  // namespace

bool Filter::matches(const SceneObject& o) const {
  return (!size || *size == o.size) && (!color || *color == o.color) && (!shape || *shape == o.shape);
}

bool Filter::constrains(Attribute a) const {
  switch (a) {
    case Attribute::size: return size.has_value();
    case Attribute::color: return color.has_value();
    case Attribute::shape: return shape.has_value();
  }
  return false;
}

bool Filter::same_constraints(const Filter& other) const {
  return size == other.size && color == other.color && shape == other.shape;
}

int template_count(QType q) { return static_cast<int>(templates(q).size()); }

std::string question_text(const Question& q) {
  const auto& list = templates(q.type);
  if (q.template_id < 0 || q.template_id >= static_cast<int>(list.size())) {
    throw std::invalid_argument("question_text: template id out of range");
  }
  std::vector<std::string> words;
  for (const std::string& part : split_words(list[static_cast<std::size_t>(q.template_id)])) {
    if (part == "{P}" || part == "{S}") {
      append_filter(words, q.first, part == "{P}");
    } else if (part == "{P2}" || part == "{S2}") {
      append_filter(words, q.second, part == "{P2}");
    } else if (part == "{A}") {
      words.emplace_back(name(q.attribute));
    } else {
      words.push_back(part);
    }
  }
  std::string text;
  for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
  return text;
}

Question parse_question(std::string_view text) {
  const std::vector<std::string> words = split_words(text);
  for (QType type : kQTypes) {
    const auto& list = templates(type);
    for (std::size_t t = 0; t < list.size(); ++t) {
      Question q;
      q.type = type;
      q.template_id = static_cast<int>(t);
      if (!match_template(words, list[t], q)) continue;
      if (type == QType::compare_numbers) q.comparison = static_cast<Comparison>(t);
      return q;
    }
  }
  throw std::invalid_argument("question fits no template: '" + std::string(text) + "'");
}

int count_matches(const Scene& scene, const Filter& f) {
  return static_cast<int>(std::count_if(scene.objects.begin(), scene.objects.end(),
                                        [&](const SceneObject& o) { return f.matches(o); }));
}

std::string oracle_answer(const Scene& scene, const Question& q) {
  auto yes_no = [](bool b) { return std::string(b ? "yes" : "no"); };
  switch (q.type) {
    case QType::count:
      return std::to_string(count_matches(scene, q.first));
    case QType::exist:
      return yes_no(count_matches(scene, q.first) > 0);
    case QType::compare_numbers: {
      const int a = count_matches(scene, q.first);
      const int b = count_matches(scene, q.second);
      switch (q.comparison) {
        case Comparison::more: return yes_no(a > b);
        case Comparison::fewer: return yes_no(a < b);
        case Comparison::same: return yes_no(a == b);
      }
      break;
    }
    case QType::query_attribute:
      return attribute_value(unique_referent(scene, q.first), q.attribute);
    case QType::compare_attribute:
      return yes_no(attribute_value(unique_referent(scene, q.first), q.attribute) ==
                    attribute_value(unique_referent(scene, q.second), q.attribute));
  }
  throw std::logic_error("oracle_answer: unhandled question type");
}

Question generate_question(const Scene& scene, QType type, std::uint64_t seed, int max_attempts) {
  Rng rng(seed);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Question q;
    q.type = type;
    q.template_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(template_count(type))));
    switch (type) {
      case QType::count:
      case QType::exist:
        q.first = random_filter(rng, scene);
        return q;
      case QType::compare_numbers:
        q.comparison = static_cast<Comparison>(q.template_id);
        q.first = random_filter(rng, scene);
        q.second = random_filter(rng, scene);
        if (q.first.same_constraints(q.second)) continue;
        return q;
      case QType::query_attribute: {
        if (scene.objects.empty()) break;
        q.attribute = pick(rng, kAttributes);
        const SceneObject& target = scene.objects[rng.below(scene.objects.size())];
        auto f = referring_filter(rng, scene, target, q.attribute);
        if (!f) continue;
        q.first = *f;
        return q;
      }
      case QType::compare_attribute: {
        if (scene.objects.size() < 2) break;
        q.attribute = pick(rng, kAttributes);
        const std::size_t a = rng.below(scene.objects.size());
        // Half the draws pair the first object with one sharing the compared
        // attribute, so "yes" is not starved for many-valued attributes.
        std::vector<std::size_t> partners;
        const bool want_same = rng.coin();
        for (std::size_t k = 0; k < scene.objects.size(); ++k) {
          if (k == a) continue;
          const bool same = attribute_value(scene.objects[k], q.attribute) ==
                            attribute_value(scene.objects[a], q.attribute);
          if (same == want_same) partners.push_back(k);
        }
        if (partners.empty()) continue;
        const std::size_t b = partners[rng.below(partners.size())];
        auto fa = referring_filter(rng, scene, scene.objects[a], q.attribute);
        auto fb = referring_filter(rng, scene, scene.objects[b], q.attribute);
        if (!fa || !fb) continue;
        q.first = *fa;
        q.second = *fb;
        return q;
      }
    }
    break;
  }
  throw GenerationError("no valid " + std::string(name(type)) + " question for scene " + std::to_string(scene.seed));
}

std::vector<std::string> template_words() {
  std::vector<std::string> words;
  auto add = [&](std::string w) {
    if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(std::move(w));
  };
  for (QType q : kQTypes) {
    for (std::string_view t : templates(q)) {
      for (const std::string& part : split_words(t)) {
        if (part.front() != '{') add(part);
      }
    }
  }
  for (Attribute a : kAttributes) add(std::string(name(a)));
  for (Size s : kSizes) add(std::string(name(s)));
  for (Color c : kColors) add(std::string(name(c)));
  for (ShapeKind s : kShapes) add(std::string(name(s)));
  for (std::string_view n : kNouns) {
    add(std::string(n));
    add(std::string(n) + "s");
  }
  return words;
}

std::vector<std::string> answer_words(int max_count) {
  std::vector<std::string> out;
  for (int i = 0; i <= max_count; ++i) out.push_back(std::to_string(i));
  out.emplace_back("yes");
  out.emplace_back("no");
  for (Size s : kSizes) out.emplace_back(name(s));
  for (Color c : kColors) out.emplace_back(name(c));
  for (ShapeKind s : kShapes) out.emplace_back(name(s));
  return out;
}

}  // namespace cmm::data
