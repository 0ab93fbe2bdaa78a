#pragma once

// Converters from raw label files into dataset samples.
//   classification CSV: id,image_ref,<category>...  (one probability column per category)
//   detection CSV:      id,image_ref,x1,y1,x2,y2[,target_desc]
//   mask JSONL:         {"id", "image_ref", "mask": ["0110", ...] or [[0,1,1,0], ...], "target_desc"?}

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rise/io.hpp"

namespace rise {

/// Splits one CSV record; handles double-quoted fields with "" escapes.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::string(text::trim(cur)));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw Error(ErrorKind::ValidationFailure, "unterminated quoted field");
  out.push_back(std::string(text::trim(cur)));
  return out;
}

namespace detail {

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line))
    if (!text::trim(line).empty()) rows.push_back(split_csv_line(line));
  if (rows.empty()) throw Error(ErrorKind::HeaderMismatch, path.string() + ": empty CSV");
  return rows;
}

inline double csv_number(const std::string& cell, const std::string& where) {
  auto v = text::parse_double(cell);
  if (!v) throw Error(ErrorKind::ValidationFailure, where + ": '" + cell + "' is not a number");
  return *v;
}

}  // namespace detail

/// Classification CSV. Categories come from the header after id,image_ref.
inline Dataset ingest_classification_csv(const std::filesystem::path& path) {
  auto rows = detail::read_csv(path);
  const auto& head = rows.front();
  if (head.size() < 4 || head[0] != "id" || head[1] != "image_ref")
    throw Error(ErrorKind::HeaderMismatch, path.string() + ": header must be id,image_ref,<category>,...");
  ClassificationTask task{std::vector<std::string>(head.begin() + 2, head.end())};
  check_task(task);
  Dataset d{task, {}, {}};
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::string where = path.filename().string() + ":" + std::to_string(r + 1);
    const auto& row = rows[r];
    if (row.size() != head.size()) {
      d.errors.push_back(where + ": expected " + std::to_string(head.size()) + " fields");
      continue;
    }
    try {
      Distribution dist;
      for (std::size_t c = 2; c < row.size(); ++c) dist.probs[head[c]] = detail::csv_number(row[c], where);
      Sample s{row[0], row[1], task, dist, std::nullopt};
      auto problems = validate_annotation(s.annotation, task, true);
      if (!problems.empty()) throw Error(ErrorKind::ValidationFailure, where + ": " + text::join(problems, "; "));
      d.samples.push_back(std::move(s));
    } catch (const Error& e) {
      d.errors.push_back(e.detail);
    }
  }
  return d;
}

inline Dataset ingest_detection_csv(const std::filesystem::path& path, double image_width, double image_height) {
  auto rows = detail::read_csv(path);
  const auto& head = rows.front();
  if (head.size() < 6 || head[0] != "id" || head[1] != "image_ref" || head[2] != "x1" || head[5] != "y2")
    throw Error(ErrorKind::HeaderMismatch, path.string() + ": header must be id,image_ref,x1,y1,x2,y2[,target_desc]");
  DetectionTask task{image_width, image_height};
  check_task(task);
  Dataset d{task, {}, {}};
  std::map<std::string, std::size_t> by_id;  // repeated ids add boxes to one sample
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::string where = path.filename().string() + ":" + std::to_string(r + 1);
    const auto& row = rows[r];
    try {
      if (row.size() < 6) throw Error(ErrorKind::ValidationFailure, where + ": expected at least 6 fields");
      Box b{detail::csv_number(row[2], where), detail::csv_number(row[3], where), detail::csv_number(row[4], where),
            detail::csv_number(row[5], where)};
      auto it = by_id.find(row[0]);
      if (it == by_id.end()) {
        std::optional<std::string> desc;
        if (row.size() > 6 && !row[6].empty()) desc = row[6];
        by_id[row[0]] = d.samples.size();
        d.samples.push_back(Sample{row[0], row[1], task, BoxSet{{b}}, desc});
      } else {
        std::get<BoxSet>(d.samples[it->second].annotation).boxes.push_back(b);
      }
    } catch (const Error& e) {
      d.errors.push_back(e.detail);
    }
  }
  std::vector<Sample> ok;
  for (auto& s : d.samples) {
    auto problems = validate_annotation(s.annotation, task, true);
    if (problems.empty())
      ok.push_back(std::move(s));
    else
      d.errors.push_back(s.id + ": " + text::join(problems, "; "));
  }
  d.samples = std::move(ok);
  return d;
}

/// Mask rows given as strings ("0110") or integer arrays.
inline std::vector<std::vector<bool>> mask_from_json(const Json& j) {
  if (!j.is_array()) throw Error(ErrorKind::ValidationFailure, "mask must be a list of rows");
  std::vector<std::vector<bool>> grid;
  for (const auto& row : j) {
    std::vector<bool> cells;
    if (row.is_string()) {
      for (char c : row.get<std::string>()) {
        if (c != '0' && c != '1') throw Error(ErrorKind::ValidationFailure, "mask rows may only contain 0 and 1");
        cells.push_back(c == '1');
      }
    } else if (row.is_array()) {
      for (const auto& v : row) {
        if (!v.is_number()) throw Error(ErrorKind::ValidationFailure, "mask cells must be numbers");
        cells.push_back(v.get<double>() != 0.0);
      }
    } else {
      throw Error(ErrorKind::ValidationFailure, "mask row must be a string or a list");
    }
    grid.push_back(std::move(cells));
  }
  return grid;
}

/// Segmentation masks to tight boxes. Image size defaults to the first
/// mask's grid size when not given.
inline Dataset ingest_masks(const std::filesystem::path& path, std::optional<double> image_width = std::nullopt,
                            std::optional<double> image_height = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  struct Raw {
    std::size_t line;
    Json j;
  };
  std::vector<Raw> raws;
  std::string line;
  std::size_t n = 0;
  std::vector<std::string> errors;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    auto j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      errors.push_back(path.filename().string() + ":" + std::to_string(n) + ": not a JSON object");
      continue;
    }
    raws.push_back({n, std::move(j)});
  }
  double w = image_width.value_or(0), h = image_height.value_or(0);
  if ((!image_width || !image_height) && !raws.empty()) {
    try {
      auto grid = mask_from_json(raws.front().j.at("mask"));
      if (!image_height) h = static_cast<double>(grid.size());
      if (!image_width) w = grid.empty() ? 0.0 : static_cast<double>(grid.front().size());
    } catch (const std::exception&) {
    }
  }
  DetectionTask task{w, h};
  Dataset d{task, {}, std::move(errors)};
  if (raws.empty()) return d;
  check_task(task);
  for (const auto& raw : raws) {
    const std::string where = path.filename().string() + ":" + std::to_string(raw.line) + ": ";
    try {
      for (const char* k : {"id", "image_ref", "mask"})
        if (!raw.j.contains(k)) throw Error(ErrorKind::ValidationFailure, std::string("missing field '") + k + "'");
      Box b = mask_to_box(mask_from_json(raw.j["mask"]));
      std::optional<std::string> desc;
      if (raw.j.contains("target_desc") && raw.j["target_desc"].is_string())
        desc = raw.j["target_desc"].get<std::string>();
      Sample s{raw.j["id"].get<std::string>(), raw.j["image_ref"].get<std::string>(), task, BoxSet{{b}}, desc};
      auto problems = validate_annotation(s.annotation, task, true);
      if (!problems.empty()) throw Error(ErrorKind::ValidationFailure, text::join(problems, "; "));
      d.samples.push_back(std::move(s));
    } catch (const Error& e) {
      d.errors.push_back(where + to_string(e.kind) + ": " + e.detail);
    } catch (const nlohmann::json::exception& e) {
      d.errors.push_back(where + e.what());
    }
  }
  return d;
}

}  // namespace rise
