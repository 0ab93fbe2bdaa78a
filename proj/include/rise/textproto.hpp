#pragma once

// Text protocol: prompt rendering, think/answer extraction, annotation
// parsing and canonical rendering, leakage detection and format validators.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rise/domain.hpp"
#include "rise/text_util.hpp"

namespace rise {

// ---------------------------------------------------------------- prompt templates

enum class PromptStage { Reasoning, Reconstruction, R1 };

inline const char* to_string(PromptStage s) {
  switch (s) {
    case PromptStage::Reasoning: return "reasoning";
    case PromptStage::Reconstruction: return "reconstruction";
    case PromptStage::R1: return "r1";
  }
  return "reasoning";
}

enum class TaskTag { Classification, Detection };

inline TaskTag tag_of(const TaskKind& task) {
  return is_classification(task) ? TaskTag::Classification : TaskTag::Detection;
}

struct PromptTemplate {
  std::string id;
  TaskTag task = TaskTag::Classification;
  PromptStage stage = PromptStage::Reasoning;
  std::string body;
};

/// Placeholder names a stage may reference.
inline const std::set<std::string>& stage_variables(PromptStage stage) {
  static const std::set<std::string> reasoning{"prob_distribution", "bbox", "target"};
  static const std::set<std::string> reconstruction{"CoTs", "categories", "target"};
  static const std::set<std::string> r1{"categories", "target"};
  switch (stage) {
    case PromptStage::Reasoning: return reasoning;
    case PromptStage::Reconstruction: return reconstruction;
    case PromptStage::R1: return r1;
  }
  return reasoning;
}

struct PlaceholderSpan {
  std::size_t begin = 0;  // position of '{'
  std::size_t end = 0;    // one past '}'
  std::string name;
};

/// Finds `{identifier}` spans. Braces around anything else (for example the
/// literal answer formats) are plain text.
inline std::vector<PlaceholderSpan> find_placeholders(std::string_view body) {
  std::vector<PlaceholderSpan> out;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] != '{') continue;
    std::size_t j = i + 1;
    if (j >= body.size() || !(text::is_alpha(body[j]) || body[j] == '_')) continue;
    while (j < body.size() && (text::is_alnum(body[j]) || body[j] == '_')) ++j;
    if (j < body.size() && body[j] == '}') {
      out.push_back({i, j + 1, std::string(body.substr(i + 1, j - i - 1))});
      i = j;
    }
  }
  return out;
}

inline void check_template(const PromptTemplate& t) {
  const auto& allowed = stage_variables(t.stage);
  for (const auto& p : find_placeholders(t.body))
    if (!allowed.count(p.name))
      throw Error(ErrorKind::TemplateError,
                  "placeholder {" + p.name + "} is not valid for the " + to_string(t.stage) + " stage of " + t.id);
}

/// Substitutes every placeholder; the rest of the body is copied verbatim.
inline std::string render_prompt(const PromptTemplate& t, const std::map<std::string, std::string>& vars) {
  check_template(t);
  const auto spans = find_placeholders(t.body);
  for (const auto& p : spans)
    if (!vars.count(p.name)) throw Error(ErrorKind::MissingVariable, p.name);
  std::string out;
  std::size_t pos = 0;
  for (const auto& p : spans) {
    out.append(t.body, pos, p.begin - pos);
    out += vars.at(p.name);
    pos = p.end;
  }
  out.append(t.body, pos, std::string::npos);
  return out;
}

// ---------------------------------------------------------------- think / answer

struct ThinkAnswer {
  std::optional<std::string> think;
  std::string answer_raw;
  std::size_t think_pos = std::string::npos;   // offset of the opening think tag
  std::size_t answer_pos = std::string::npos;  // offset of the opening answer tag
};

namespace detail {

struct TagSpan {
  std::size_t open = std::string::npos;  // offset of the opening tag
  std::string content;
};

// Innermost content of the first complete <tag>...</tag> pair.
inline std::optional<TagSpan> first_tag_pair(std::string_view text, std::string_view tag) {
  const std::string open = "<" + std::string(tag) + ">";
  const std::string close = "</" + std::string(tag) + ">";
  std::size_t first_open = text::find_ci(text, open);
  if (first_open == std::string_view::npos) return std::nullopt;
  std::size_t close_pos = text::find_ci(text, close, first_open + open.size());
  if (close_pos == std::string_view::npos) return std::nullopt;
  std::size_t open_pos = first_open;
  for (std::size_t p = text::find_ci(text, open, first_open + 1); p != std::string_view::npos && p < close_pos;
       p = text::find_ci(text, open, p + 1))
    open_pos = p;
  const std::size_t start = open_pos + open.size();
  return TagSpan{open_pos, std::string(text.substr(start, close_pos - start))};
}

}  // namespace detail

inline Outcome<ThinkAnswer> parse_think_answer(std::string_view text) {
  auto answer = detail::first_tag_pair(text, "answer");
  if (!answer) return malformed("no <answer>...</answer> pair");
  ThinkAnswer out;
  out.answer_raw = std::move(answer->content);
  out.answer_pos = answer->open;
  if (auto think = detail::first_tag_pair(text, "think")) {
    out.think = std::move(think->content);
    out.think_pos = think->open;
  }
  return out;
}

// ---------------------------------------------------------------- annotation parsing

namespace detail {

class Cursor {
 public:
  explicit Cursor(std::string_view s, std::size_t pos = 0) : s_(s), pos_(pos) {}

  void skip_ws() {
    while (pos_ < s_.size() && text::is_space(s_[pos_])) ++pos_;
  }
  bool done() const { return pos_ >= s_.size(); }
  char peek() const { return done() ? '\0' : s_[pos_]; }
  bool eat(char c) {
    skip_ws();
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  std::size_t pos() const { return pos_; }
  std::string_view rest() const { return s_.substr(pos_); }

  std::optional<double> number() {
    skip_ws();
    std::size_t b = pos_;
    while (pos_ < s_.size() && (text::is_alnum(s_[pos_]) || s_[pos_] == '.' || s_[pos_] == '-' || s_[pos_] == '+'))
      ++pos_;
    auto v = text::parse_double(s_.substr(b, pos_ - b));
    if (!v) pos_ = b;
    return v;
  }

  std::optional<std::string> key() {
    skip_ws();
    char q = peek();
    if (q == '\'' || q == '"') {
      auto end = s_.find(q, pos_ + 1);
      if (end == std::string_view::npos) return std::nullopt;
      std::string k(s_.substr(pos_ + 1, end - pos_ - 1));
      pos_ = end + 1;
      return k;
    }
    std::size_t b = pos_;
    while (pos_ < s_.size() && (text::is_alnum(s_[pos_]) || s_[pos_] == '_' || s_[pos_] == '-')) ++pos_;
    if (pos_ == b) return std::nullopt;
    return std::string(s_.substr(b, pos_ - b));
  }

 private:
  std::string_view s_;
  std::size_t pos_;
};

}  // namespace detail

/// Parses a map literal such as {'joy': 0.4, "fear": 0.6}. Keys must be exactly
/// the task's categories; the sum is not constrained here.
inline Outcome<Distribution> parse_distribution_answer(std::string_view answer_raw,
                                                       const std::vector<std::string>& categories) {
  auto open = answer_raw.find('{');
  if (open == std::string_view::npos) return malformed("no map literal in answer");
  detail::Cursor cur(answer_raw, open + 1);
  Distribution dist;
  cur.skip_ws();
  if (!cur.eat('}')) {
    while (true) {
      auto key = cur.key();
      if (!key) return malformed("expected a category key");
      if (!cur.eat(':')) return malformed("expected ':' after key '" + *key + "'");
      auto value = cur.number();
      if (!value) return malformed("non-numeric value for '" + *key + "'");
      if (!std::isfinite(*value)) return malformed("non-finite value for '" + *key + "'");
      if (*value < 0) return malformed("negative value for '" + *key + "'");
      if (*value > 1) return malformed("value above 1 for '" + *key + "'");
      if (!dist.probs.emplace(*key, *value).second) return malformed("duplicate key '" + *key + "'");
      if (cur.eat(',')) {
        if (cur.eat('}')) break;
        continue;
      }
      if (cur.eat('}')) break;
      return malformed("expected ',' or '}'");
    }
  }
  std::vector<std::string> missing, extra;
  std::set<std::string> expected(categories.begin(), categories.end());
  for (const auto& c : categories)
    if (!dist.probs.count(c)) missing.push_back(c);
  for (const auto& [k, v] : dist.probs)
    if (!expected.count(k)) extra.push_back(k);
  if (!missing.empty() || !extra.empty()) {
    std::string detail = "category set mismatch";
    if (!missing.empty()) detail += "; missing " + std::to_string(missing.size()) + ": " + text::join(missing, ", ");
    if (!extra.empty()) detail += "; unexpected: " + text::join(extra, ", ");
    return malformed(detail);
  }
  return dist;
}

struct ParsedBoxes {
  BoxSet boxes;
  bool normalized = false;  // some box had swapped corners
};

/// Parses "[x1, y1, x2, y2]" or a list of such tuples.
inline Outcome<ParsedBoxes> parse_box_answer(std::string_view answer_raw) {
  auto open = answer_raw.find('[');
  if (open == std::string_view::npos) return malformed("no bracketed tuple in answer");
  detail::Cursor cur(answer_raw, open + 1);
  ParsedBoxes out;

  auto read_tuple = [&](char close) -> std::optional<Failure> {
    std::vector<double> v;
    while (true) {
      auto n = cur.number();
      if (!n) return malformed("non-numeric coordinate");
      if (!std::isfinite(*n)) return malformed("non-finite coordinate");
      if (*n < 0) return malformed("negative coordinate");
      v.push_back(*n);
      if (cur.eat(',')) continue;
      if (cur.eat(close)) break;
      return malformed("expected ',' or closing bracket");
    }
    if (v.size() != 4) return malformed("box needs 4 coordinates, got " + std::to_string(v.size()));
    Box b{std::min(v[0], v[2]), std::min(v[1], v[3]), std::max(v[0], v[2]), std::max(v[1], v[3])};
    if (v[0] > v[2] || v[1] > v[3]) out.normalized = true;
    out.boxes.boxes.push_back(b);
    return std::nullopt;
  };

  cur.skip_ws();
  if (cur.peek() == '[' || cur.peek() == '(') {
    while (true) {
      cur.skip_ws();
      char c = cur.peek();
      if (c != '[' && c != '(') return malformed("expected a nested tuple");
      cur.eat(c);
      if (auto err = read_tuple(c == '[' ? ']' : ')')) return *err;
      if (cur.eat(',')) continue;
      if (cur.eat(']')) break;
      return malformed("expected ',' or ']' between tuples");
    }
  } else if (auto err = read_tuple(']')) {
    return *err;
  }
  return out;
}

inline Outcome<Annotation> parse_annotation_answer(std::string_view answer_raw, const TaskKind& task) {
  if (is_classification(task)) {
    auto d = parse_distribution_answer(answer_raw, categories_of(task));
    if (!d) return d.error();
    return Annotation{std::move(d).value()};
  }
  auto b = parse_box_answer(answer_raw);
  if (!b) return b.error();
  return Annotation{std::move(b).value().boxes};
}

struct ParsedOutput {
  std::optional<std::string> think;
  std::string answer_raw;
  std::optional<Annotation> answer;
  std::optional<Failure> failure;
};

inline ParsedOutput parse_output(std::string_view text, const TaskKind& task) {
  ParsedOutput out;
  auto ta = parse_think_answer(text);
  if (!ta) {
    out.failure = ta.error();
    return out;
  }
  out.think = ta->think;
  out.answer_raw = ta->answer_raw;
  auto ann = parse_annotation_answer(out.answer_raw, task);
  if (ann)
    out.answer = *ann;
  else
    out.failure = ann.error();
  return out;
}

// ---------------------------------------------------------------- canonical rendering

inline std::string render_distribution(const Distribution& d, const std::vector<std::string>& categories) {
  std::string out = "{";
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (i) out += ", ";
    out += "'" + categories[i] + "': " + text::fixed(d.at(categories[i]), 6);
  }
  return out + "}";
}

inline std::string render_box(const Box& b) {
  return "[" + text::compact_number(b.x1) + ", " + text::compact_number(b.y1) + ", " + text::compact_number(b.x2) +
         ", " + text::compact_number(b.y2) + "]";
}

inline std::string render_boxes(const BoxSet& set) {
  if (set.boxes.size() == 1) return render_box(set.boxes.front());
  std::string out = "[";
  for (std::size_t i = 0; i < set.boxes.size(); ++i) {
    if (i) out += ", ";
    out += render_box(set.boxes[i]);
  }
  return out + "]";
}

/// Classification: single-quoted map in category order with 6 decimals.
/// Detection: bracketed corner tuple(s).
inline std::string render_annotation(const Annotation& a, const TaskKind& task) {
  if (const auto* d = std::get_if<Distribution>(&a)) return render_distribution(*d, categories_of(task));
  return render_boxes(std::get<BoxSet>(a));
}

inline std::string render_category_list(const std::vector<std::string>& categories) {
  std::string out = "[";
  for (std::size_t i = 0; i < categories.size(); ++i) out += (i ? ", '" : "'") + categories[i] + "'";
  return out + "]";
}

// ---------------------------------------------------------------- leakage

struct LeakReport {
  bool leak = false;
  std::vector<std::string> evidence;
};

namespace detail {

struct NumberToken {
  std::size_t begin = 0, end = 0;
  double value = 0;
  bool has_point = false;
  bool enumerator = false;
};

inline bool line_initial(std::string_view s, std::size_t pos) {
  while (pos > 0) {
    char c = s[pos - 1];
    if (c == '\n' || c == '\r') return true;
    if (c != ' ' && c != '\t') return false;
    --pos;
  }
  return true;
}

inline std::vector<NumberToken> scan_numbers(std::string_view s) {
  std::vector<NumberToken> out;
  std::size_t i = 0;
  while (i < s.size()) {
    bool starts = text::is_digit(s[i]) || (s[i] == '.' && i + 1 < s.size() && text::is_digit(s[i + 1]));
    bool bounded = i == 0 || !(text::is_alnum(s[i - 1]) || s[i - 1] == '.' || s[i - 1] == '_');
    if (!starts || !bounded) {
      // skip the rest of a word so embedded digits (x1, mp3) are not tokens
      if (text::is_alnum(s[i]) || s[i] == '_') {
        while (i < s.size() && (text::is_alnum(s[i]) || s[i] == '_')) ++i;
      } else {
        ++i;
      }
      continue;
    }
    NumberToken t;
    t.begin = i;
    while (i < s.size() && text::is_digit(s[i])) ++i;
    if (i + 1 < s.size() && s[i] == '.' && text::is_digit(s[i + 1])) {
      t.has_point = true;
      ++i;
      while (i < s.size() && text::is_digit(s[i])) ++i;
    }
    t.end = i;
    if (i < s.size() && (text::is_alpha(s[i]) || s[i] == '_')) {
      // digits glued to letters ("3rd", "2x") are words, not numbers
      while (i < s.size() && (text::is_alnum(s[i]) || s[i] == '_')) ++i;
      continue;
    }
    t.value = text::parse_double(s.substr(t.begin, t.end - t.begin)).value_or(0.0);
    if (!t.has_point && line_initial(s, t.begin) && t.end < s.size() && (s[t.end] == ')' || s[t.end] == '.'))
      t.enumerator = true;
    out.push_back(t);
  }
  return out;
}

inline bool word_boundary_before(std::string_view s, std::size_t pos) { return pos == 0 || !text::is_alnum(s[pos - 1]); }
inline bool word_boundary_after(std::string_view s, std::size_t pos) { return pos >= s.size() || !text::is_alnum(s[pos]); }

class Coverage {
 public:
  bool overlaps(std::size_t b, std::size_t e) const {
    for (auto [cb, ce] : spans_)
      if (b < ce && cb < e) return true;
    return false;
  }
  void add(std::size_t b, std::size_t e) { spans_.emplace_back(b, e); }

 private:
  std::vector<std::pair<std::size_t, std::size_t>> spans_;
};

struct Evidence {
  std::size_t begin;
  std::string text;
};

inline void classification_leaks(std::string_view cot, const std::vector<std::string>& categories,
                                 std::vector<Evidence>& found) {
  const auto numbers = scan_numbers(cot);
  Coverage covered;
  // category: number pairs
  for (const auto& cat : categories) {
    for (std::size_t p = text::find_ci(cot, cat); p != std::string_view::npos; p = text::find_ci(cot, cat, p + 1)) {
      if (!word_boundary_before(cot, p) || !word_boundary_after(cot, p + cat.size())) continue;
      std::size_t q = p + cat.size();
      if (q < cot.size() && (cot[q] == '\'' || cot[q] == '"')) ++q;
      while (q < cot.size() && (cot[q] == ' ' || cot[q] == '\t')) ++q;
      if (q >= cot.size() || (cot[q] != ':' && cot[q] != '=')) continue;
      ++q;
      while (q < cot.size() && (cot[q] == ' ' || cot[q] == '\t')) ++q;
      for (const auto& n : numbers) {
        if (n.begin != q) continue;
        if (!covered.overlaps(p, n.end)) {
          std::size_t b = p;
          if (b > 0 && (cot[b - 1] == '\'' || cot[b - 1] == '"')) --b;
          found.push_back({b, std::string(cot.substr(b, n.end - b))});
          covered.add(b, n.end);
        }
        break;
      }
    }
  }
  for (const auto& n : numbers) {
    if (n.enumerator || covered.overlaps(n.begin, n.end)) continue;
    std::size_t q = n.end;
    while (q < cot.size() && (cot[q] == ' ' || cot[q] == '\t')) ++q;
    if (q < cot.size() && cot[q] == '%') {
      found.push_back({n.begin, std::string(cot.substr(n.begin, q + 1 - n.begin))});
      covered.add(n.begin, q + 1);
      continue;
    }
    if (n.has_point && n.value >= 0.0 && n.value <= 1.0) {
      found.push_back({n.begin, std::string(cot.substr(n.begin, n.end - n.begin))});
      covered.add(n.begin, n.end);
    }
  }
}

inline void detection_leaks(std::string_view cot, std::vector<Evidence>& found) {
  const auto numbers = scan_numbers(cot);
  Coverage covered;
  auto token_at = [&](std::size_t pos) -> const NumberToken* {
    for (const auto& n : numbers)
      if (n.begin == pos) return &n;
    return nullptr;
  };

  // bracketed tuples of two or more numbers
  for (std::size_t i = 0; i < cot.size(); ++i) {
    if (cot[i] != '[' && cot[i] != '(') continue;
    const char close = cot[i] == '[' ? ']' : ')';
    std::size_t q = i + 1;
    int count = 0;
    bool ok = false;
    while (true) {
      while (q < cot.size() && text::is_space(cot[q])) ++q;
      if (q < cot.size() && cot[q] == '-') ++q;
      const NumberToken* n = token_at(q);
      if (!n) break;
      ++count;
      q = n->end;
      while (q < cot.size() && text::is_space(cot[q])) ++q;
      if (q < cot.size() && cot[q] == ',') {
        ++q;
        continue;
      }
      if (q < cot.size() && cot[q] == close) {
        ok = count >= 2;
        break;
      }
      if (q < cot.size() && (text::is_digit(cot[q]) || cot[q] == '.')) continue;
      break;
    }
    if (ok) {
      found.push_back({i, std::string(cot.substr(i, q + 1 - i))});
      covered.add(i, q + 1);
      i = q;
    }
  }

  // runs of two or more integers >= 10 separated by commas or spaces
  for (std::size_t k = 0; k < numbers.size(); ++k) {
    auto big = [&](const NumberToken& n) { return !n.has_point && !n.enumerator && n.value >= 10; };
    if (!big(numbers[k]) || covered.overlaps(numbers[k].begin, numbers[k].end)) continue;
    std::size_t last = k;
    for (std::size_t m = k + 1; m < numbers.size(); ++m) {
      bool separated = true;
      for (std::size_t c = numbers[last].end; c < numbers[m].begin; ++c)
        if (cot[c] != ',' && cot[c] != ' ' && cot[c] != '\t') separated = false;
      if (!separated || !big(numbers[m]) || numbers[m].begin == numbers[last].end) break;
      last = m;
    }
    if (last > k) {
      const std::size_t b = numbers[k].begin, e = numbers[last].end;
      found.push_back({b, std::string(cot.substr(b, e - b))});
      covered.add(b, e);
      k = last;
    }
  }

  // coordinate names
  static const char* const kCoordNames[] = {"x1", "y1", "x2", "y2"};
  for (const char* name : kCoordNames) {
    const std::string_view nm(name);
    for (std::size_t p = text::find_ci(cot, nm); p != std::string_view::npos; p = text::find_ci(cot, nm, p + 1)) {
      if (!word_boundary_before(cot, p) || !word_boundary_after(cot, p + nm.size())) continue;
      if (covered.overlaps(p, p + nm.size())) continue;
      found.push_back({p, std::string(cot.substr(p, nm.size()))});
      covered.add(p, p + nm.size());
    }
  }

  // directional lexicon, hyphenated or space separated
  static const char* const kVertical[] = {"top", "upper", "bottom", "lower"};
  static const char* const kHorizontal[] = {"left", "right"};
  for (const char* v : kVertical) {
    const std::string_view vert(v);
    for (std::size_t p = text::find_ci(cot, vert); p != std::string_view::npos; p = text::find_ci(cot, vert, p + 1)) {
      if (!word_boundary_before(cot, p)) continue;
      std::size_t q = p + vert.size();
      if (q >= cot.size() || (cot[q] != '-' && cot[q] != ' ')) continue;
      ++q;
      for (const char* h : kHorizontal) {
        const std::string_view hor(h);
        if (text::find_ci(cot.substr(q, hor.size()), hor) == 0 && word_boundary_after(cot, q + hor.size())) {
          if (!covered.overlaps(p, q + hor.size())) {
            found.push_back({p, std::string(cot.substr(p, q + hor.size() - p))});
            covered.add(p, q + hor.size());
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Flags annotation specifics inside a chain of thought: probabilities and
/// percentages for classification, coordinates and directional terms for
/// detection. Line-initial list enumerators and spelled-out numbers are exempt.
inline LeakReport detect_leak(std::string_view cot, const TaskKind& task) {
  std::vector<detail::Evidence> found;
  if (is_classification(task))
    detail::classification_leaks(cot, categories_of(task), found);
  else
    detail::detection_leaks(cot, found);
  std::stable_sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.begin < b.begin; });
  LeakReport report;
  report.leak = !found.empty();
  for (auto& e : found) report.evidence.push_back(std::move(e.text));
  return report;
}

// ---------------------------------------------------------------- format validators

inline constexpr std::size_t kMinNarrativeLength = 15;

/// True when the text reads as prose rather than a bare map or tuple literal.
inline bool is_narrative(std::string_view cot) {
  auto t = text::trim(cot);
  if (text::utf8_length(t) < kMinNarrativeLength) return false;
  const char f = t.front(), b = t.back();
  if ((f == '{' && b == '}') || ((f == '[' || f == '(') && (b == ']' || b == ')'))) return false;
  return std::any_of(t.begin(), t.end(), [](char c) { return text::is_alpha(c); });
}

template <class T>
bool validate_f_cot(std::string_view cot, const Outcome<T>& reconstruction_parse) {
  return is_narrative(cot) && reconstruction_parse.ok();
}

inline bool validate_f_cot(std::string_view cot, bool reconstruction_parsed) {
  return is_narrative(cot) && reconstruction_parsed;
}

/// Non-empty think section followed by an answer that parses for the task.
inline bool validate_f_r1(std::string_view raw_model_output, const TaskKind& task) {
  auto ta = parse_think_answer(raw_model_output);
  if (!ta || !ta->think) return false;
  if (text::trim(*ta->think).empty()) return false;
  if (ta->think_pos > ta->answer_pos) return false;
  auto ann = parse_annotation_answer(ta->answer_raw, task);
  return ann.ok() && validate_annotation(*ann, task).empty();
}

}  // namespace rise
