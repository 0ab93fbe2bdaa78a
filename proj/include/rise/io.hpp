#pragma once

// Line-oriented files: one JSON object per line, preceded by a header line
// naming the format, its version and the task.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rise/domain.hpp"
#include "rise/textproto.hpp"

namespace rise {

using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

namespace fmt_name {
inline constexpr const char* kDataset = "rise.dataset";
inline constexpr const char* kRecords = "rise.records";
inline constexpr const char* kSft = "rise.sft";
inline constexpr const char* kGrpo = "rise.grpo";
inline constexpr const char* kPredictions = "rise.predictions";
inline constexpr const char* kFailures = "rise.failures";
}  // namespace fmt_name

// ---------------------------------------------------------------- task / annotation json

inline Json task_to_json(const TaskKind& task) {
  if (const auto* c = std::get_if<ClassificationTask>(&task))
    return Json{{"kind", "classification"}, {"categories", c->categories}};
  const auto& d = std::get<DetectionTask>(task);
  return Json{{"kind", "detection"}, {"image_width", d.image_width}, {"image_height", d.image_height}};
}

inline TaskKind task_from_json(const Json& j) {
  const std::string kind = j.value("kind", "");
  if (kind == "classification") {
    ClassificationTask t{j.at("categories").get<std::vector<std::string>>()};
    check_task(t);
    return t;
  }
  if (kind == "detection") {
    DetectionTask t{j.at("image_width").get<double>(), j.at("image_height").get<double>()};
    check_task(t);
    return t;
  }
  throw Error(ErrorKind::HeaderMismatch, "unknown task kind '" + kind + "'");
}

inline Json box_to_json(const Box& b) { return Json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Box box_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw Error(ErrorKind::ValidationFailure, "box must have 4 numbers");
  for (const auto& v : j)
    if (!v.is_number()) throw Error(ErrorKind::ValidationFailure, "box coordinates must be numbers");
  return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

/// Classification: object in task category order. Detection: list of boxes.
inline Json annotation_to_json(const Annotation& a, const TaskKind& task) {
  if (const auto* d = std::get_if<Distribution>(&a)) {
    Json o = Json::object();
    if (is_classification(task)) {
      for (const auto& c : categories_of(task))
        if (auto it = d->probs.find(c); it != d->probs.end()) o[c] = it->second;
    }
    for (const auto& [k, v] : d->probs)
      if (!o.contains(k)) o[k] = v;
    return o;
  }
  Json arr = Json::array();
  for (const auto& b : std::get<BoxSet>(a).boxes) arr.push_back(box_to_json(b));
  return arr;
}

inline Annotation annotation_from_json(const Json& j, const TaskKind& task) {
  if (is_classification(task)) {
    if (!j.is_object()) throw Error(ErrorKind::ValidationFailure, "classification annotation must be an object");
    Distribution d;
    for (const auto& [k, v] : j.items()) {
      if (!v.is_number()) throw Error(ErrorKind::ValidationFailure, "probability for '" + k + "' is not a number");
      d.probs[k] = v.get<double>();
    }
    return d;
  }
  if (!j.is_array()) throw Error(ErrorKind::ValidationFailure, "detection annotation must be a list of boxes");
  BoxSet s;
  if (j.size() == 4 && j[0].is_number()) {
    s.boxes.push_back(box_from_json(j));
  } else {
    for (const auto& b : j) s.boxes.push_back(box_from_json(b));
  }
  return s;
}

// ---------------------------------------------------------------- headers

inline Json make_header(const char* format, const TaskKind& task) {
  return Json{{"format", format}, {"version", kFormatVersion}, {"task", task_to_json(task)}};
}

struct Header {
  std::string format;
  int version = 0;
  TaskKind task;
};

inline Header parse_header(const std::string& line, const std::filesystem::path& path) {
  auto j = Json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("format") || !j.contains("task"))
    throw Error(ErrorKind::HeaderMismatch, path.string() + ": first line is not a header");
  Header h;
  h.format = j["format"].get<std::string>();
  h.version = j.value("version", 0);
  if (h.version != kFormatVersion)
    throw Error(ErrorKind::HeaderMismatch, path.string() + ": unsupported version " + std::to_string(h.version));
  h.task = task_from_json(j["task"]);
  return h;
}

struct JsonlFile {
  Header header;
  std::vector<std::string> lines;  // body lines, blank lines dropped
  std::vector<std::size_t> line_numbers;
};

inline JsonlFile read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::HeaderMismatch, path.string() + ": empty file");
  JsonlFile f;
  f.header = parse_header(line, path);
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    f.lines.push_back(line);
    f.line_numbers.push_back(n);
  }
  return f;
}

inline JsonlFile read_jsonl(const std::filesystem::path& path, const char* expected_format) {
  auto f = read_jsonl(path);
  if (f.header.format != expected_format)
    throw Error(ErrorKind::HeaderMismatch,
                path.string() + ": expected " + expected_format + ", found " + f.header.format);
  return f;
}

/// Appends lines with a flush after each, so a killed run leaves only whole lines.
class JsonlWriter {
 public:
  JsonlWriter(const std::filesystem::path& path, const Json& header, bool append = false) {
    const bool existing = append && std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | (existing ? std::ios::app : std::ios::trunc));
    if (!out_) throw Error(ErrorKind::MissingFile, "cannot write " + path.string());
    if (!existing) write(header);
  }
  void write(const Json& j) {
    out_ << j.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

// ---------------------------------------------------------------- samples

inline Json sample_to_json(const Sample& s) {
  Json j{{"id", s.id}, {"image_ref", s.image_ref}, {"task", task_tag(s.task)},
         {"annotation", annotation_to_json(s.annotation, s.task)}};
  if (s.target_desc) j["target_desc"] = *s.target_desc;
  return j;
}

inline Sample sample_from_json(const Json& j, const TaskKind& task) {
  if (!j.is_object()) throw Error(ErrorKind::ValidationFailure, "line is not an object");
  for (const char* k : {"id", "image_ref", "annotation"})
    if (!j.contains(k)) throw Error(ErrorKind::ValidationFailure, std::string("missing field '") + k + "'");
  if (j.contains("task") && j["task"] != task_tag(task))
    throw Error(ErrorKind::ValidationFailure, "task '" + j["task"].get<std::string>() + "' does not match header");
  Sample s{j["id"].get<std::string>(), j["image_ref"].get<std::string>(), task,
           annotation_from_json(j["annotation"], task), std::nullopt};
  if (j.contains("target_desc") && !j["target_desc"].is_null()) s.target_desc = j["target_desc"].get<std::string>();
  return s;
}

struct Dataset {
  TaskKind task;
  std::vector<Sample> samples;
  std::vector<std::string> errors;  // invalid lines, when skipped
};

inline void save_dataset(const std::filesystem::path& path, const TaskKind& task, const std::vector<Sample>& samples) {
  JsonlWriter w(path, make_header(fmt_name::kDataset, task));
  for (const auto& s : samples) w.write(sample_to_json(s));
}

/// Loads and validates a dataset file. Invalid lines abort with
/// ValidationFailure listing every problem, unless skip_invalid is set.
inline Dataset load_dataset(const std::filesystem::path& path, const std::optional<TaskKind>& task_hint = std::nullopt,
                            bool skip_invalid = false) {
  auto f = read_jsonl(path, fmt_name::kDataset);
  if (task_hint && !(*task_hint == f.header.task))
    throw Error(ErrorKind::HeaderMismatch, path.string() + ": task in header differs from the expected task");
  Dataset d{f.header.task, {}, {}};
  std::set<std::string> ids;
  for (std::size_t i = 0; i < f.lines.size(); ++i) {
    const std::string where = path.filename().string() + ":" + std::to_string(f.line_numbers[i]) + ": ";
    try {
      auto j = Json::parse(f.lines[i], nullptr, false);
      if (j.is_discarded()) throw Error(ErrorKind::ValidationFailure, "not valid JSON");
      auto s = sample_from_json(j, d.task);
      auto problems = validate_annotation(s.annotation, d.task, true);
      if (!problems.empty()) throw Error(ErrorKind::ValidationFailure, text::join(problems, "; "));
      if (!ids.insert(s.id).second) throw Error(ErrorKind::ValidationFailure, "duplicate id '" + s.id + "'");
      d.samples.push_back(std::move(s));
    } catch (const Error& e) {
      d.errors.push_back(where + e.detail);
    } catch (const nlohmann::json::exception& e) {
      d.errors.push_back(where + e.what());
    }
  }
  if (!d.errors.empty() && !skip_invalid)
    throw Error(ErrorKind::ValidationFailure, std::to_string(d.errors.size()) + " invalid line(s):\n" +
                                                  text::join(d.errors, "\n"));
  return d;
}

// ---------------------------------------------------------------- records

inline Json record_to_json(const RiseRecord& r, const TaskKind& task) {
  Json j{{"sample_id", r.sample_id}, {"image_ref", r.image_ref}, {"annotation", annotation_to_json(r.annotation, task)}};
  if (r.target_desc) j["target_desc"] = *r.target_desc;
  j["cot"] = r.cot;
  j["reconstruction"] = r.reconstruction ? annotation_to_json(*r.reconstruction, task) : Json(nullptr);
  j["reward"] = r.reward;
  j["breakdown"] = Json{{"similarity", r.breakdown.similarity},
                        {"leak", r.breakdown.leak_detected},
                        {"format_ok", r.breakdown.format_ok},
                        {"reason", to_string(r.breakdown.reason)}};
  return j;
}

inline RiseRecord record_from_json(const Json& j, const TaskKind& task) {
  RiseRecord r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.image_ref = j.value("image_ref", "");
  r.annotation = annotation_from_json(j.at("annotation"), task);
  if (j.contains("target_desc") && !j["target_desc"].is_null()) r.target_desc = j["target_desc"].get<std::string>();
  r.cot = j.value("cot", "");
  if (j.contains("reconstruction") && !j["reconstruction"].is_null())
    r.reconstruction = annotation_from_json(j["reconstruction"], task);
  r.reward = j.at("reward").get<double>();
  if (j.contains("breakdown")) {
    const auto& b = j["breakdown"];
    r.breakdown.similarity = b.value("similarity", 0.0);
    r.breakdown.leak_detected = b.value("leak", false);
    r.breakdown.format_ok = b.value("format_ok", false);
    r.breakdown.reason = reward_reason_from(b.value("reason", std::string("similarity")));
  }
  r.breakdown.composite = r.reward;
  return r;
}

struct RecordFile {
  TaskKind task;
  std::vector<RiseRecord> records;
};

inline RecordFile load_records(const std::filesystem::path& path) {
  auto f = read_jsonl(path, fmt_name::kRecords);
  RecordFile out{f.header.task, {}};
  for (std::size_t i = 0; i < f.lines.size(); ++i) {
    auto j = Json::parse(f.lines[i], nullptr, false);
    if (j.is_discarded())
      throw Error(ErrorKind::ValidationFailure,
                  path.string() + ":" + std::to_string(f.line_numbers[i]) + ": not valid JSON");
    out.records.push_back(record_from_json(j, out.task));
  }
  return out;
}

inline void save_records(const std::filesystem::path& path, const TaskKind& task,
                         const std::vector<RiseRecord>& records) {
  JsonlWriter w(path, make_header(fmt_name::kRecords, task));
  for (const auto& r : records) w.write(record_to_json(r, task));
}

// ---------------------------------------------------------------- sft corpus

struct SftExample {
  std::string id;
  std::string image_ref;
  std::string prompt;
  std::string target;
};

inline Json sft_to_json(const SftExample& e) {
  return Json{{"id", e.id}, {"image_ref", e.image_ref}, {"prompt", e.prompt}, {"target", e.target}};
}

inline std::vector<SftExample> load_sft(const std::filesystem::path& path) {
  auto f = read_jsonl(path, fmt_name::kSft);
  std::vector<SftExample> out;
  for (const auto& line : f.lines) {
    auto j = Json::parse(line);
    out.push_back({j.at("id").get<std::string>(), j.at("image_ref").get<std::string>(),
                   j.at("prompt").get<std::string>(), j.at("target").get<std::string>()});
  }
  return out;
}

// ---------------------------------------------------------------- predictions

struct Prediction {
  std::string id;
  std::optional<std::string> output;       // raw model text
  std::optional<Annotation> annotation;    // already-structured prediction
};

/// Reads a predictions file ({"id","output"} lines) or a dataset-format file.
inline std::pair<TaskKind, std::vector<Prediction>> load_predictions(const std::filesystem::path& path) {
  auto f = read_jsonl(path);
  if (f.header.format != fmt_name::kPredictions && f.header.format != fmt_name::kDataset)
    throw Error(ErrorKind::HeaderMismatch, path.string() + ": not a predictions or dataset file");
  std::vector<Prediction> out;
  for (const auto& line : f.lines) {
    auto j = Json::parse(line);
    Prediction p;
    p.id = j.at("id").get<std::string>();
    if (j.contains("output") && j["output"].is_string()) p.output = j["output"].get<std::string>();
    if (j.contains("annotation")) {
      try {
        p.annotation = annotation_from_json(j["annotation"], f.header.task);
      } catch (const Error&) {
        p.annotation.reset();
      }
    }
    out.push_back(std::move(p));
  }
  return {f.header.task, std::move(out)};
}

inline void save_predictions(const std::filesystem::path& path, const TaskKind& task,
                             const std::vector<std::pair<std::string, std::string>>& id_output) {
  JsonlWriter w(path, make_header(fmt_name::kPredictions, task));
  for (const auto& [id, output] : id_output) w.write(Json{{"id", id}, {"output", output}});
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace rise
