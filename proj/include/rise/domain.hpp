#pragma once

// Core data model: tasks, boxes, annotations, samples and reward records.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace rise {

enum class ErrorKind {
  InvalidGeometry,
  EmptyMask,
  DomainError,
  MissingVariable,
  TemplateError,
  MalformedAnswer,
  RemoteUnavailable,
  AuthFailure,
  Timeout,
  MockMiss,
  CorruptionInfeasible,
  MissingFile,
  HeaderMismatch,
  ValidationFailure,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidGeometry: return "InvalidGeometry";
    case ErrorKind::EmptyMask: return "EmptyMask";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::MissingVariable: return "MissingVariable";
    case ErrorKind::TemplateError: return "TemplateError";
    case ErrorKind::MalformedAnswer: return "MalformedAnswer";
    case ErrorKind::RemoteUnavailable: return "RemoteUnavailable";
    case ErrorKind::AuthFailure: return "AuthFailure";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::MockMiss: return "MockMiss";
    case ErrorKind::CorruptionInfeasible: return "CorruptionInfeasible";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::HeaderMismatch: return "HeaderMismatch";
    case ErrorKind::ValidationFailure: return "ValidationFailure";
  }
  return "Unknown";
}

struct Error : public std::runtime_error {
  ErrorKind kind;
  std::string detail;
  Error(ErrorKind kind_, std::string detail_)
      : std::runtime_error(std::string(to_string(kind_)) + ": " + detail_),
        kind(kind_),
        detail(std::move(detail_)) {}
};

// A recoverable failure carried as a value (parse errors never abort a run).
struct Failure {
  ErrorKind kind = ErrorKind::MalformedAnswer;
  std::string detail;
};

template <class T>
class Outcome {
 public:
  Outcome(T value) : state_(std::move(value)) {}
  Outcome(Failure failure) : state_(std::move(failure)) {}

  bool ok() const { return state_.index() == 0; }
  explicit operator bool() const { return ok(); }

  const T& value() const& {
    if (!ok()) throw Error(error().kind, error().detail);
    return std::get<0>(state_);
  }
  T&& value() && {
    if (!ok()) throw Error(error().kind, error().detail);
    return std::get<0>(std::move(state_));
  }
  const T& operator*() const& { return value(); }
  const T* operator->() const { return &value(); }

  const Failure& error() const { return std::get<1>(state_); }

 private:
  std::variant<T, Failure> state_;
};

inline Failure malformed(std::string detail) { return Failure{ErrorKind::MalformedAnswer, std::move(detail)}; }

// ---------------------------------------------------------------- tasks

struct ClassificationTask {
  std::vector<std::string> categories;
  bool operator==(const ClassificationTask&) const = default;
};

struct DetectionTask {
  double image_width = 0;
  double image_height = 0;
  bool operator==(const DetectionTask&) const = default;
};

using TaskKind = std::variant<ClassificationTask, DetectionTask>;

inline bool is_classification(const TaskKind& task) { return std::holds_alternative<ClassificationTask>(task); }
inline bool is_detection(const TaskKind& task) { return std::holds_alternative<DetectionTask>(task); }
inline const char* task_tag(const TaskKind& task) { return is_classification(task) ? "classification" : "detection"; }

inline const std::vector<std::string>& categories_of(const TaskKind& task) {
  if (!is_classification(task)) throw Error(ErrorKind::DomainError, "task is not a classification task");
  return std::get<ClassificationTask>(task).categories;
}

/// Throws DomainError when the task violates its invariants.
inline void check_task(const TaskKind& task) {
  if (const auto* cls = std::get_if<ClassificationTask>(&task)) {
    if (cls->categories.empty()) throw Error(ErrorKind::DomainError, "classification task has no categories");
    std::set<std::string> seen;
    for (const auto& name : cls->categories) {
      if (name.empty()) throw Error(ErrorKind::DomainError, "empty category name");
      if (!seen.insert(name).second) throw Error(ErrorKind::DomainError, "duplicate category '" + name + "'");
    }
  } else {
    const auto& det = std::get<DetectionTask>(task);
    if (!(det.image_width > 0) || !(det.image_height > 0) || !std::isfinite(det.image_width) ||
        !std::isfinite(det.image_height))
      throw Error(ErrorKind::DomainError, "detection image dimensions must be positive");
  }
}

// ---------------------------------------------------------------- boxes

/// Axis-aligned box in corner form; area uses the continuous convention.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x1 >= 0 && y1 >= 0 &&
           x1 <= x2 && y1 <= y2;
  }

  bool operator==(const Box&) const = default;
};

enum class BoxConversion { CornerToXywh, XywhToCorner };

/// Converts between [x1,y1,x2,y2] and [x,y,w,h].
inline std::array<double, 4> convert_box(const std::array<double, 4>& v, BoxConversion direction) {
  for (double c : v)
    if (!std::isfinite(c)) throw Error(ErrorKind::InvalidGeometry, "non-finite coordinate");
  if (direction == BoxConversion::CornerToXywh) {
    if (v[2] < v[0] || v[3] < v[1]) throw Error(ErrorKind::InvalidGeometry, "corner box has x2 < x1 or y2 < y1");
    return {v[0], v[1], v[2] - v[0], v[3] - v[1]};
  }
  if (v[2] < 0 || v[3] < 0) throw Error(ErrorKind::InvalidGeometry, "negative width or height");
  return {v[0], v[1], v[0] + v[2], v[1] + v[3]};
}

inline std::array<double, 4> to_xywh(const Box& b) {
  return convert_box({b.x1, b.y1, b.x2, b.y2}, BoxConversion::CornerToXywh);
}

inline Box from_xywh(const std::array<double, 4>& xywh) {
  auto c = convert_box(xywh, BoxConversion::XywhToCorner);
  return Box{c[0], c[1], c[2], c[3]};
}

/// Tightest box around the true cells of a dense row-major mask. Cell (r, c)
/// covers [c, c+1] x [r, r+1].
template <class Grid>
Box mask_to_box(const Grid& rows) {
  std::size_t row_index = 0;
  bool any = false;
  bool any_cell = false;
  std::size_t min_r = 0, max_r = 0, min_c = 0, max_c = 0;
  for (const auto& row : rows) {
    std::size_t col_index = 0;
    for (const auto& cell : row) {
      any_cell = true;
      if (static_cast<bool>(cell)) {
        if (!any) {
          min_r = max_r = row_index;
          min_c = max_c = col_index;
          any = true;
        } else {
          min_r = std::min(min_r, row_index);
          max_r = std::max(max_r, row_index);
          min_c = std::min(min_c, col_index);
          max_c = std::max(max_c, col_index);
        }
      }
      ++col_index;
    }
    ++row_index;
  }
  if (!any_cell) throw Error(ErrorKind::DomainError, "mask grid is empty");
  if (!any) throw Error(ErrorKind::EmptyMask, "mask has no true cells");
  return Box{static_cast<double>(min_c), static_cast<double>(min_r), static_cast<double>(max_c + 1),
             static_cast<double>(max_r + 1)};
}

// ---------------------------------------------------------------- annotations

struct Distribution {
  std::map<std::string, double> probs;

  double at(const std::string& category) const {
    auto it = probs.find(category);
    if (it == probs.end()) throw Error(ErrorKind::DomainError, "unknown category '" + category + "'");
    return it->second;
  }
  bool operator==(const Distribution&) const = default;
};

struct BoxSet {
  std::vector<Box> boxes;
  bool operator==(const BoxSet&) const = default;
};

using Annotation = std::variant<Distribution, BoxSet>;

inline constexpr double kDistributionSumTolerance = 1e-6;

/// Lists every violated invariant; an empty result means the annotation is
/// well formed for the task. Ground-truth annotations additionally require
/// distributions to sum to one.
inline std::vector<std::string> validate_annotation(const Annotation& a, const TaskKind& task,
                                                    bool ground_truth = false) {
  std::vector<std::string> out;
  if (const auto* dist = std::get_if<Distribution>(&a)) {
    const auto* cls = std::get_if<ClassificationTask>(&task);
    if (!cls) {
      out.emplace_back("variant mismatch: distribution given to a detection task");
      return out;
    }
    std::set<std::string> expected(cls->categories.begin(), cls->categories.end());
    for (const auto& name : cls->categories)
      if (!dist->probs.count(name)) out.push_back("missing category '" + name + "'");
    for (const auto& [name, p] : dist->probs) {
      if (!expected.count(name)) out.push_back("unexpected category '" + name + "'");
      if (!std::isfinite(p) || p < 0.0 || p > 1.0) out.push_back("probability of '" + name + "' outside [0,1]");
    }
    if (ground_truth && out.empty()) {
      double sum = 0;
      for (const auto& [name, p] : dist->probs) sum += p;
      if (std::abs(sum - 1.0) > kDistributionSumTolerance) out.emplace_back("distribution does not sum to 1");
    }
    return out;
  }
  const auto& set = std::get<BoxSet>(a);
  if (!is_detection(task)) {
    out.emplace_back("variant mismatch: box set given to a classification task");
    return out;
  }
  for (std::size_t i = 0; i < set.boxes.size(); ++i) {
    const Box& b = set.boxes[i];
    const std::string tag = "box " + std::to_string(i) + ": ";
    if (!std::isfinite(b.x1) || !std::isfinite(b.y1) || !std::isfinite(b.x2) || !std::isfinite(b.y2)) {
      out.push_back(tag + "non-finite coordinate");
      continue;
    }
    if (b.x1 < 0 || b.y1 < 0) out.push_back(tag + "negative coordinate");
    if (b.x2 < b.x1) out.push_back(tag + "x2 < x1");
    if (b.y2 < b.y1) out.push_back(tag + "y2 < y1");
  }
  if (ground_truth && set.boxes.empty()) out.emplace_back("ground truth has no boxes");
  return out;
}

// ---------------------------------------------------------------- samples & records

struct Sample {
  std::string id;
  std::string image_ref;
  TaskKind task;
  Annotation annotation;
  std::optional<std::string> target_desc;
};

/// Why a composite reward has its value.
enum class RewardReason { Similarity, Leak, Format, Parse };

inline const char* to_string(RewardReason r) {
  switch (r) {
    case RewardReason::Similarity: return "similarity";
    case RewardReason::Leak: return "leak";
    case RewardReason::Format: return "format";
    case RewardReason::Parse: return "parse";
  }
  return "similarity";
}

inline RewardReason reward_reason_from(const std::string& s) {
  if (s == "similarity") return RewardReason::Similarity;
  if (s == "leak") return RewardReason::Leak;
  if (s == "format") return RewardReason::Format;
  if (s == "parse") return RewardReason::Parse;
  throw Error(ErrorKind::DomainError, "unknown reward reason '" + s + "'");
}

struct RewardBreakdown {
  double similarity = 0;
  bool leak_detected = false;
  bool format_ok = false;
  double composite = 0;
  RewardReason reason = RewardReason::Similarity;

  /// composite == similarity when the gates pass, else 0.
  bool gating_consistent() const {
    return (!leak_detected && format_ok) ? composite == similarity : composite == 0.0;
  }
};

/// One row of the reasoning-augmented dataset: best chain of thought for a
/// sample together with its reconstruction and reward.
struct RiseRecord {
  std::string sample_id;
  std::string image_ref;
  Annotation annotation;  // ground truth
  std::optional<std::string> target_desc;
  std::string cot;
  std::optional<Annotation> reconstruction;  // absent when the reconstruction failed to parse
  double reward = 0;
  RewardBreakdown breakdown;
};

}  // namespace rise
