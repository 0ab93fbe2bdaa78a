#pragma once

// Command-line driver. cli_dispatch() takes the arguments after the program
// name and writes to the given streams, so it can be driven from tests.
//
// exit codes: 0 ok, 1 validation, 2 backend exhaustion, 64 usage

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rise/audit.hpp"
#include "rise/digest.hpp"
#include "rise/ingest.hpp"
#include "rise/io.hpp"
#include "rise/pipeline.hpp"
#include "rise/remote.hpp"

namespace rise::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitBackend = 2;
inline constexpr int kExitUsage = 64;
inline constexpr const char* kVersion = "0.1.0";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// `key = value` lines; '#' starts a comment line.
inline std::map<std::string, std::string> parse_config(std::string_view text_in, const std::string& origin = "config") {
  std::map<std::string, std::string> out;
  std::size_t n = 0;
  for (const auto& raw : text::split(text_in, '\n')) {
    ++n;
    auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw UsageError(origin + ":" + std::to_string(n) + ": expected 'key = value'");
    std::string key(text::trim(line.substr(0, eq)));
    std::string value(text::trim(line.substr(eq + 1)));
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty()) throw UsageError(origin + ":" + std::to_string(n) + ": empty key");
    out[key] = value;
  }
  return out;
}

/// Named string settings with flag > config > default resolution.
class Settings {
 public:
  void add(CLI::App* app, const std::string& name, std::string def, const std::string& help) {
    order_.push_back(name);
    auto& e = entries_[name];
    e.def = std::move(def);
    e.opt = app->add_option("--" + name, e.raw, help + (e.def.empty() ? "" : " [" + e.def + "]"));
  }
  void add_flag(CLI::App* app, const std::string& name, const std::string& help) {
    order_.push_back(name);
    auto& e = entries_[name];
    e.def = "false";
    e.is_flag = true;
    e.opt = app->add_flag("--" + name, e.flag, help);
  }

  void resolve(const std::map<std::string, std::string>& config) {
    for (auto& [name, e] : entries_) {
      if (e.opt->count() > 0) {
        e.value = e.is_flag ? (e.flag ? "true" : "false") : e.raw;
        e.source = "flag";
      } else if (auto it = config.find(name); it != config.end()) {
        e.value = it->second;
        e.source = "config";
      } else {
        e.value = e.def;
        e.source = "default";
      }
    }
  }

  const std::string& str(const std::string& name) const { return entry(name).value; }
  const std::string& source(const std::string& name) const { return entry(name).source; }
  bool has(const std::string& name) const { return !str(name).empty(); }
  const std::string& require(const std::string& name) const {
    if (!has(name)) throw UsageError("--" + name + " is required");
    return str(name);
  }
  double num(const std::string& name) const {
    auto v = text::parse_double(str(name));
    if (!v) throw UsageError("--" + name + " expects a number, got '" + str(name) + "'");
    return *v;
  }
  std::uint64_t u64(const std::string& name) const {
    const double v = num(name);
    if (v < 0 || v != std::floor(v)) throw UsageError("--" + name + " expects a non-negative integer");
    return static_cast<std::uint64_t>(v);
  }
  bool flag(const std::string& name) const {
    const auto v = text::to_lower(str(name));
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off" || v.empty()) return false;
    throw UsageError("--" + name + " expects true or false");
  }

  std::string describe() const {
    std::string out;
    for (const auto& name : order_) {
      const auto& e = entry(name);
      out += "  " + name + " = " + (e.value.empty() ? "(unset)" : e.value) + "  [" + e.source + "]\n";
    }
    return out;
  }
  Json snapshot() const {
    Json j = Json::object();
    for (const auto& name : order_) j[name] = Json{{"value", entry(name).value}, {"source", entry(name).source}};
    return j;
  }

 private:
  struct Entry {
    std::string def, raw, value, source;
    bool is_flag = false;
    bool flag = false;
    CLI::Option* opt = nullptr;
  };
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::logic_error("unknown setting " + name);
    return it->second;
  }
  std::vector<std::string> order_;
  std::map<std::string, Entry> entries_;
};

// ---------------------------------------------------------------- shared option groups

inline void add_task_options(Settings& s, CLI::App* c) {
  s.add(c, "task", "classification", "classification or detection");
  s.add(c, "categories", "", "comma-separated categories (default: the seven emotion categories)");
  s.add(c, "image-width", "640", "image width for detection tasks");
  s.add(c, "image-height", "480", "image height for detection tasks");
}

inline TaskKind task_from_settings(const Settings& s) {
  const auto& kind = s.str("task");
  if (kind == "classification") {
    std::vector<std::string> cats = emotion6_categories();
    if (s.has("categories")) {
      cats.clear();
      for (auto& c : text::split(s.str("categories"), ',')) cats.emplace_back(text::trim(c));
    }
    return ClassificationTask{cats};
  }
  if (kind == "detection") return DetectionTask{s.num("image-width"), s.num("image-height")};
  throw UsageError("--task must be classification or detection");
}

inline void add_backend_options(Settings& s, CLI::App* c) {
  s.add(c, "backend", "synthetic", "synthetic, mock or remote");
  s.add(c, "recon-backend", "", "backend for reconstruction (default: same as --backend)");
  s.add(c, "world-seed", "7", "synthetic world seed");
  s.add(c, "policy", "fidelity", "synthetic policy: full, random or fidelity");
  s.add(c, "fidelity", "0.8", "synthetic fidelity policy: chance of naming each true cue");
  s.add(c, "mock-file", "", "canned responses (JSON lines)");
  s.add(c, "endpoint", "", "chat-completion URL");
  s.add(c, "model", "", "remote model name");
  s.add(c, "auth-env", "", "environment variable holding the API token");
  s.add(c, "max-in-flight", "4", "concurrent remote requests");
  s.add(c, "timeout", "120", "remote request timeout in seconds");
  s.add(c, "traffic-ledger", "", "JSON lines log of remote traffic");
  s.add(c, "temperature", "0.7", "generation temperature");
  s.add(c, "recon-temperature", "0", "reconstruction temperature");
  s.add(c, "max-tokens", "512", "token limit per request");
  s.add(c, "concurrency", "4", "samples processed concurrently");
  s.add(c, "prompts-dir", "", "directory of prompt template overrides");
}

inline PromptStage stage_from_string(const std::string& s) {
  if (s == "reasoning") return PromptStage::Reasoning;
  if (s == "reconstruction") return PromptStage::Reconstruction;
  if (s == "r1") return PromptStage::R1;
  throw Error(ErrorKind::ValidationFailure, "unknown stage '" + s + "'");
}

inline std::shared_ptr<MockBackend> load_mock(const std::filesystem::path& path) {
  auto mock = std::make_shared<MockBackend>();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    auto j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("response"))
      throw Error(ErrorKind::ValidationFailure, path.string() + ":" + std::to_string(n) + ": bad mock entry");
    if (j.contains("prompt"))
      mock->add(j["prompt"].get<std::string>(), j["response"].get<std::string>());
    else
      mock->add_for_sample(j.at("sample_id").get<std::string>(), stage_from_string(j.at("stage").get<std::string>()),
                           j["response"].get<std::string>());
  }
  return mock;
}

inline BackendPtr make_backend(const std::string& kind, const Settings& s, const TaskKind& task) {
  if (kind == "synthetic") {
    SyntheticBackendOptions o;
    const auto& p = s.str("policy");
    if (p == "full")
      o.policy = SyntheticPolicy::Full;
    else if (p == "random")
      o.policy = SyntheticPolicy::Random;
    else if (p == "fidelity")
      o.policy = SyntheticPolicy::Fidelity;
    else
      throw UsageError("--policy must be full, random or fidelity");
    o.fidelity = s.num("fidelity");
    return std::make_shared<SyntheticBackend>(std::make_shared<const SyntheticWorld>(task, s.u64("world-seed")), o);
  }
  if (kind == "mock") return load_mock(s.require("mock-file"));
  if (kind == "remote") {
    RemoteConfig rc;
    rc.endpoint = s.require("endpoint");
    rc.model = s.str("model");
    rc.auth_env = s.str("auth-env");
    rc.max_in_flight = s.u64("max-in-flight");
    rc.timeout = std::chrono::seconds(s.u64("timeout"));
    rc.ledger_path = s.str("traffic-ledger");
    return std::make_shared<RemoteBackend>(rc);
  }
  throw UsageError("unknown backend '" + kind + "'");
}

inline StageOptions stage_options(const Settings& s) {
  StageOptions o;
  o.group_size = s.u64("group-size");
  o.seed = s.u64("seed");
  o.concurrency = s.u64("concurrency");
  o.temperature = s.num("temperature");
  o.reconstruction_temperature = s.num("recon-temperature");
  o.max_tokens = static_cast<int>(s.u64("max-tokens"));
  return o;
}

inline PromptCatalog catalog_from(const Settings& s) {
  return s.has("prompts-dir") ? PromptCatalog::load(s.str("prompts-dir")) : PromptCatalog::builtin();
}

// ---------------------------------------------------------------- manifest

struct RunContext {
  std::string command;
  Settings settings;
  std::string config_path;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
};

inline void write_manifest(const RunContext& ctx, const std::string& primary_output) {
  std::string path = ctx.settings.str("manifest");
  if (path.empty()) {
    if (primary_output.empty()) return;
    path = primary_output + ".manifest.json";
  }
  Json inputs = Json::object();
  for (const auto& in : ctx.inputs)
    if (!in.empty() && std::filesystem::is_regular_file(in)) inputs[in] = sha256_hex(read_text_file(in));
  Json m{{"tool", "rise"},
         {"version", kVersion},
         {"command", ctx.command},
         {"config_file", ctx.config_path.empty() ? Json(nullptr) : Json(ctx.config_path)},
         {"settings", ctx.settings.snapshot()},
         {"inputs", inputs},
         {"outputs", ctx.outputs}};
  if (!ctx.config_path.empty()) m["config_sha256"] = sha256_hex(read_text_file(ctx.config_path));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::MissingFile, "cannot write " + path);
  f << m.dump(2) << '\n';
}

inline std::string pct(std::size_t k, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", n ? 100.0 * static_cast<double>(k) / static_cast<double>(n) : 0.0);
  return buf;
}

inline std::string histogram_lines(const RewardHistogram& h) {
  static const char* labels[4] = {"[0.00, 0.25)", "[0.25, 0.50)", "[0.50, 0.75)", "[0.75, 1.00]"};
  std::string out;
  char line[96];
  for (std::size_t b = 0; b < 4; ++b) {
    std::snprintf(line, sizeof line, "  %s  %6zu  %5.1f%%\n", labels[b], h.counts[b], h.percentages[b]);
    out += line;
  }
  return out;
}

inline std::vector<double> rewards_of(const std::vector<RiseRecord>& records) {
  std::vector<double> r;
  for (const auto& x : records) r.push_back(x.reward);
  return r;
}

inline Dataset load_input_dataset(const Settings& s) {
  return load_dataset(s.require("dataset"), std::nullopt, s.flag("skip-invalid"));
}

// ---------------------------------------------------------------- commands

inline int cmd_ingest(RunContext& ctx) {
  auto& s = ctx.settings;
  auto& out = *ctx.out;
  const std::string output = s.require("output");
  const auto& format = s.str("format");
  Dataset d;
  if (format == "synthetic") {
    const TaskKind task = task_from_settings(s);
    SyntheticWorld world(task, s.u64("world-seed"));
    d.task = task;
    for (const auto& x : world.generate(s.u64("samples"), s.u64("cues"), s.u64("world-seed")))
      d.samples.push_back(world.to_sample(x));
  } else {
    const std::string input = s.require("input");
    ctx.inputs.push_back(input);
    if (format == "csv") {
      d = s.str("task") == "detection" ? ingest_detection_csv(input, s.num("image-width"), s.num("image-height"))
                                       : ingest_classification_csv(input);
    } else if (format == "masks") {
      std::optional<double> w, h;
      // grid size unless given explicitly
      if (s.source("image-width") != "default") w = s.num("image-width");
      if (s.source("image-height") != "default") h = s.num("image-height");
      d = ingest_masks(input, w, h);
    } else {
      throw UsageError("--format must be csv, masks or synthetic");
    }
  }
  for (const auto& e : d.errors) *ctx.err << "invalid: " << e << '\n';
  if (!d.errors.empty() && !s.flag("skip-invalid")) {
    *ctx.err << d.errors.size() << " invalid record(s); nothing written (use --skip-invalid to drop them)\n";
    return kExitValidation;
  }
  save_dataset(output, d.task, d.samples);
  ctx.outputs.push_back(output);
  out << "wrote " << d.samples.size() << " samples to " << output;
  if (!d.errors.empty()) out << " (skipped " << d.errors.size() << ")";
  out << '\n';
  write_manifest(ctx, output);
  return kExitOk;
}

inline int cmd_gen_cot(RunContext& ctx) {
  auto& s = ctx.settings;
  auto& out = *ctx.out;
  ctx.inputs.push_back(s.require("dataset"));
  const std::string records = s.require("records");
  const std::string failures = s.has("failures") ? s.str("failures") : records + ".failures.jsonl";
  auto data = load_input_dataset(s);
  auto reason = make_backend(s.str("backend"), s, data.task);
  auto recon = s.has("recon-backend") ? make_backend(s.str("recon-backend"), s, data.task) : reason;
  if (s.flag("fresh") && std::filesystem::exists(records)) std::filesystem::remove(records);
  auto res = run_rise_cot_stage(data.samples, catalog_from(s), *reason, *recon, stage_options(s), records, failures);
  ctx.outputs = {records, failures};
  const auto hist = reward_histogram(rewards_of(res.records));
  double mean = 0;
  for (const auto& r : res.records) mean += r.reward;
  if (!res.records.empty()) mean /= static_cast<double>(res.records.size());
  char buf[160];
  std::snprintf(buf, sizeof buf, "records %zu (resumed %zu), failures %zu, mean reward %.6f\n", res.records.size(),
                res.resumed, res.failures.size(), mean);
  out << buf << histogram_lines(hist);
  write_manifest(ctx, records);
  if (!res.failures.empty()) {
    *ctx.err << res.failures.size() << " sample(s) failed after retries; see " << failures << '\n';
    return kExitBackend;
  }
  return kExitOk;
}

inline int cmd_filter(RunContext& ctx) {
  auto& s = ctx.settings;
  const std::string in = s.require("records");
  ctx.inputs.push_back(in);
  const double tau = s.num("tau");
  if (!(tau >= 0 && tau <= 1)) throw Error(ErrorKind::ValidationFailure, "tau must be in [0,1]");
  auto rf = load_records(in);
  auto kept = filter_high_subset(rf.records, tau);
  *ctx.out << "kept " << kept.kept.size() << " / " << kept.total << " (" << pct(kept.kept.size(), kept.total)
           << ")\n";
  *ctx.out << histogram_lines(reward_histogram(rewards_of(rf.records)));
  if (s.has("output")) {
    save_records(s.str("output"), rf.task, kept.kept);
    ctx.outputs.push_back(s.str("output"));
    write_manifest(ctx, s.str("output"));
  }
  return kExitOk;
}

inline int cmd_export_sft(RunContext& ctx) {
  auto& s = ctx.settings;
  const std::string in = s.require("records");
  const std::string output = s.require("output");
  ctx.inputs.push_back(in);
  auto rf = load_records(in);
  auto corpus = export_sft_corpus(rf.records, rf.task, catalog_from(s), s.num("tau"));
  save_sft(output, rf.task, corpus);
  ctx.outputs.push_back(output);
  *ctx.out << "exported " << corpus.size() << " / " << rf.records.size() << " records to " << output << '\n';
  write_manifest(ctx, output);
  return kExitOk;
}

inline int cmd_rft_eval(RunContext& ctx) {
  auto& s = ctx.settings;
  ctx.inputs.push_back(s.require("dataset"));
  const std::string output = s.require("output");
  auto data = load_input_dataset(s);
  auto backend = make_backend(s.str("backend"), s, data.task);
  auto res = run_rft_reward_eval(data.samples, catalog_from(s), *backend, stage_options(s), output);
  ctx.outputs.push_back(output);
  char buf[128];
  std::snprintf(buf, sizeof buf, "mean R1 reward %.6f over %zu samples (failures %zu)\n", res.mean_reward,
                res.samples.size(), res.failures.size());
  *ctx.out << buf;
  write_manifest(ctx, output);
  return res.failures.empty() ? kExitOk : kExitBackend;
}

inline void write_curve(const std::string& path, const ToyTrainResult& r, std::size_t window) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::MissingFile, "cannot write " + path);
  const auto sm = smooth_curve(r.curve, window);
  f << "step\tbest_of_group\tmean_member\tsmoothed\n";
  for (std::size_t i = 0; i < r.curve.size(); ++i)
    f << (i + 1) << '\t' << text::fixed(r.curve[i], 6) << '\t' << text::fixed(r.mean_member_reward[i], 6) << '\t'
      << text::fixed(sm[i], 6) << '\n';
}

inline int cmd_train_toy(RunContext& ctx) {
  auto& s = ctx.settings;
  const std::string output = s.require("output");
  const TaskKind task = task_from_settings(s);
  SyntheticWorld world(task, s.u64("world-seed"));
  auto corpus = world.generate(s.u64("samples"), s.u64("cues"), s.u64("world-seed"));
  ToyTrainConfig cfg;
  cfg.steps = s.u64("steps");
  cfg.group_size = s.u64("group-size");
  cfg.seed = s.u64("seed");
  cfg.learning_rate = s.num("learning-rate");
  cfg.vagueness = s.num("vagueness");
  cfg.minibatch = s.u64("minibatch");
  auto r = train_toy_policy(world, corpus, cfg);
  const std::size_t window = s.u64("window");
  write_curve(output, r, window);
  ctx.outputs.push_back(output);
  const auto sm = smooth_curve(r.curve, window);
  char buf[160];
  std::snprintf(buf, sizeof buf, "steps %zu: first %.6f, final %.6f, final smoothed %.6f\n", r.curve.size(),
                r.curve.front(), r.curve.back(), sm.back());
  *ctx.out << buf;
  write_manifest(ctx, output);
  return kExitOk;
}

inline int cmd_eval(RunContext& ctx) {
  auto& s = ctx.settings;
  const std::string pred = s.require("pred"), gt = s.require("gt");
  ctx.inputs = {pred, gt};
  auto truth = load_dataset(gt);
  auto [ptask, preds] = load_predictions(pred);
  if (!(ptask == truth.task)) throw Error(ErrorKind::HeaderMismatch, "prediction task differs from ground truth task");
  std::optional<std::vector<Prediction>> ref;
  if (s.has("reference")) {
    ctx.inputs.push_back(s.str("reference"));
    auto [rtask, r] = load_predictions(s.str("reference"));
    if (!(rtask == truth.task)) throw Error(ErrorKind::HeaderMismatch, "reference task differs from ground truth task");
    ref = std::move(r);
  }
  auto rep = evaluate_predictions(preds, truth.samples, ref ? &*ref : nullptr);
  char buf[160];
  std::snprintf(buf, sizeof buf, "samples %zu, parse failures %zu\n", rep.samples.size(), rep.parse_failures);
  *ctx.out << buf;
  if (is_classification(rep.task)) {
    std::snprintf(buf, sizeof buf, "mean JSD %.6f\naccuracy %.6f\n", rep.mean_jsd, rep.accuracy);
    *ctx.out << buf;
    if (rep.win_rate) {
      std::snprintf(buf, sizeof buf, "win-rate %.6f\n", *rep.win_rate);
      *ctx.out << buf;
    }
  } else {
    std::snprintf(buf, sizeof buf, "detection score (IoU@0.5 hit rate) %.6f\n", rep.detection_score);
    *ctx.out << buf;
  }
  if (s.has("output")) {
    std::ofstream f(s.str("output"), std::ios::binary | std::ios::trunc);
    f << eval_report_to_json(rep).dump(2) << '\n';
    ctx.outputs.push_back(s.str("output"));
    write_manifest(ctx, s.str("output"));
  }
  return kExitOk;
}

inline int cmd_audit(RunContext& ctx) {
  auto& s = ctx.settings;
  const std::string output = s.require("output");
  Dataset data;
  if (s.has("dataset")) {
    ctx.inputs.push_back(s.str("dataset"));
    data = load_input_dataset(s);
  } else {
    data.task = task_from_settings(s);
    SyntheticWorld world(data.task, s.u64("world-seed"));
    for (const auto& x : world.generate(s.u64("samples"), s.u64("cues"), s.u64("world-seed")))
      data.samples.push_back(world.to_sample(x));
  }
  auto reason = make_backend(s.str("backend"), s, data.task);
  auto recon = s.has("recon-backend") ? make_backend(s.str("recon-backend"), s, data.task) : reason;
  const double tau = s.num("tau");
  auto run = run_noise_audit(data.samples, s.num("fraction"), catalog_from(s), *reason, *recon, stage_options(s), tau,
                             s.str("records"));
  const std::string text_report = format_audit_report(run.report);
  {
    std::ofstream f(output, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::MissingFile, "cannot write " + output);
    f << text_report;
  }
  ctx.outputs.push_back(output);
  if (s.has("records")) ctx.outputs.push_back(s.str("records"));
  if (s.has("report-json")) {
    std::ofstream f(s.str("report-json"), std::ios::binary | std::ios::trunc);
    f << audit_report_to_json(run.report).dump(2) << '\n';
    ctx.outputs.push_back(s.str("report-json"));
  }
  if (s.has("corrupted-dataset")) {
    save_dataset(s.str("corrupted-dataset"), data.task, run.dataset);
    ctx.outputs.push_back(s.str("corrupted-dataset"));
  }
  *ctx.out << text_report;
  write_manifest(ctx, output);
  return run.stage.failures.empty() ? kExitOk : kExitBackend;
}

inline std::vector<double> read_curve_column(const std::string& path, std::size_t column) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path);
  std::string line;
  std::getline(in, line);
  std::vector<double> out;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    auto cells = text::split(line, '\t');
    if (cells.size() <= column) throw Error(ErrorKind::ValidationFailure, path + ": short curve row");
    auto v = text::parse_double(cells[column]);
    if (!v) throw Error(ErrorKind::ValidationFailure, path + ": bad number '" + cells[column] + "'");
    out.push_back(*v);
  }
  return out;
}

inline int cmd_report(RunContext& ctx) {
  auto& s = ctx.settings;
  auto& out = *ctx.out;
  if (!s.has("records") && !s.has("curve")) throw UsageError("report needs --records and/or --curve");
  const std::string dir = s.str("output-dir");
  if (!dir.empty()) std::filesystem::create_directories(dir);
  if (s.has("records")) {
    ctx.inputs.push_back(s.str("records"));
    auto rf = load_records(s.str("records"));
    const auto h = reward_histogram(rewards_of(rf.records));
    const auto kept = filter_high_subset(rf.records, s.num("tau"));
    out << "reward histogram (" << h.total << " records)\n" << histogram_lines(h);
    out << "kept " << kept.kept.size() << " / " << kept.total << " (" << pct(kept.kept.size(), kept.total) << ")\n";
    if (!dir.empty()) {
      const auto p = (std::filesystem::path(dir) / "reward_histogram.tsv").string();
      std::ofstream f(p, std::ios::binary | std::ios::trunc);
      f << "bin_low\tbin_high\tcount\tpercent\n";
      const auto& e = RewardConfig{}.histogram_edges;
      for (std::size_t b = 0; b < 4; ++b)
        f << text::fixed(e[b], 2) << '\t' << text::fixed(e[b + 1], 2) << '\t' << h.counts[b] << '\t'
          << text::fixed(h.percentages[b], 1) << '\n';
      ctx.outputs.push_back(p);
    }
  }
  if (s.has("curve")) {
    ctx.inputs.push_back(s.str("curve"));
    const auto curve = read_curve_column(s.str("curve"), 1);
    if (curve.empty()) throw Error(ErrorKind::ValidationFailure, "empty curve");
    const auto sm = smooth_curve(curve, s.u64("window"));
    out << "reward curve (" << curve.size() << " steps, window " << s.str("window") << ")\n";
    out << "  step    reward  smoothed\n";
    const std::size_t stride = std::max<std::size_t>(1, curve.size() / 10);
    char buf[96];
    for (std::size_t i = 0; i < curve.size(); i += stride) {
      std::snprintf(buf, sizeof buf, "  %4zu  %.6f  %.6f\n", i + 1, curve[i], sm[i]);
      out << buf;
    }
    if ((curve.size() - 1) % stride != 0) {
      std::snprintf(buf, sizeof buf, "  %4zu  %.6f  %.6f\n", curve.size(), curve.back(), sm.back());
      out << buf;
    }
    if (!dir.empty()) {
      const auto p = (std::filesystem::path(dir) / "reward_curve.tsv").string();
      std::ofstream f(p, std::ios::binary | std::ios::trunc);
      f << "step\treward\tsmoothed\n";
      for (std::size_t i = 0; i < curve.size(); ++i)
        f << (i + 1) << '\t' << text::fixed(curve[i], 6) << '\t' << text::fixed(sm[i], 6) << '\n';
      ctx.outputs.push_back(p);
    }
  }
  if (!dir.empty()) write_manifest(ctx, (std::filesystem::path(dir) / "report").string());
  return kExitOk;
}

// ---------------------------------------------------------------- dispatch

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::RemoteUnavailable:
    case ErrorKind::AuthFailure:
    case ErrorKind::Timeout:
    case ErrorKind::MockMiss: return kExitBackend;
    default: return kExitValidation;
  }
}

inline int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reasoning-augmented annotation tool: closed-loop CoT generation, filtering, export and evaluation",
               "rise"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  struct Command {
    CLI::App* app;
    Settings settings;
    std::string config;
    int (*run)(RunContext&);
  };
  std::map<std::string, Command> cmds;
  auto add_cmd = [&](const std::string& name, const std::string& help, int (*run)(RunContext&)) -> Command& {
    auto& c = cmds[name];
    c.app = app.add_subcommand(name, help);
    c.run = run;
    c.app->add_option("--config", c.config, "key = value config file");
    c.settings.add(c.app, "manifest", "", "manifest path (default: <output>.manifest.json)");
    return c;
  };

  {
    auto& c = add_cmd("ingest", "convert raw labels (CSV, masks) or a synthetic world into a dataset file", cmd_ingest);
    auto& s = c.settings;
    s.add(c.app, "format", "csv", "csv, masks or synthetic");
    s.add(c.app, "input", "", "raw label file");
    s.add(c.app, "output", "", "dataset file to write");
    add_task_options(s, c.app);
    s.add(c.app, "samples", "50", "synthetic: number of samples");
    s.add(c.app, "cues", "4", "synthetic: cues per sample");
    s.add(c.app, "world-seed", "7", "synthetic world seed");
    s.add_flag(c.app, "skip-invalid", "drop invalid records instead of failing");
  }
  {
    auto& c = add_cmd("gen-cot", "run the closed loop and keep the best chain of thought per sample", cmd_gen_cot);
    auto& s = c.settings;
    s.add(c.app, "dataset", "", "dataset file");
    s.add(c.app, "records", "", "records file (resumed when it exists)");
    s.add(c.app, "failures", "", "failure manifest (default: <records>.failures.jsonl)");
    s.add(c.app, "group-size", "8", "chains of thought per sample");
    s.add(c.app, "seed", "7", "run seed");
    add_backend_options(s, c.app);
    s.add_flag(c.app, "skip-invalid", "drop invalid dataset lines");
    s.add_flag(c.app, "fresh", "discard an existing records file instead of resuming");
  }
  {
    auto& c = add_cmd("filter", "threshold records and print the reward histogram", cmd_filter);
    c.settings.add(c.app, "records", "", "records file");
    c.settings.add(c.app, "tau", "0.75", "reward threshold");
    c.settings.add(c.app, "output", "", "filtered records file");
  }
  {
    auto& c = add_cmd("export-sft", "write think-answer fine-tuning targets for records above tau", cmd_export_sft);
    c.settings.add(c.app, "records", "", "records file");
    c.settings.add(c.app, "tau", "0.75", "reward threshold");
    c.settings.add(c.app, "output", "", "SFT corpus file");
    c.settings.add(c.app, "prompts-dir", "", "directory of prompt template overrides");
  }
  {
    auto& c = add_cmd("rft-eval", "score grouped think-answer outputs and write GRPO bookkeeping", cmd_rft_eval);
    auto& s = c.settings;
    s.add(c.app, "dataset", "", "dataset file");
    s.add(c.app, "output", "", "bookkeeping file");
    s.add(c.app, "group-size", "8", "outputs per sample");
    s.add(c.app, "seed", "7", "run seed");
    add_backend_options(s, c.app);
    s.add_flag(c.app, "skip-invalid", "drop invalid dataset lines");
  }
  {
    auto& c = add_cmd("train-toy", "train the tabular policy on a synthetic world and write the reward curve",
                      cmd_train_toy);
    auto& s = c.settings;
    add_task_options(s, c.app);
    s.add(c.app, "samples", "50", "synthetic samples");
    s.add(c.app, "cues", "4", "cues per sample");
    s.add(c.app, "world-seed", "7", "synthetic world seed");
    s.add(c.app, "group-size", "8", "group size");
    s.add(c.app, "steps", "300", "training steps");
    s.add(c.app, "seed", "7", "training seed");
    s.add(c.app, "learning-rate", "0.5", "learning rate");
    s.add(c.app, "vagueness", "1", "initial logit penalty for naming a cue");
    s.add(c.app, "minibatch", "0", "samples per step (0 = all)");
    s.add(c.app, "window", "20", "smoothing window");
    s.add(c.app, "output", "toy_curve.tsv", "curve file");
  }
  {
    auto& c = add_cmd("eval", "score predictions against ground truth", cmd_eval);
    c.settings.add(c.app, "pred", "", "predictions file (predictions or dataset format)");
    c.settings.add(c.app, "gt", "", "ground-truth dataset file");
    c.settings.add(c.app, "reference", "", "reference predictions for win-rate");
    c.settings.add(c.app, "output", "", "JSON report file");
  }
  {
    auto& c = add_cmd("audit", "corrupt a fraction of labels and compare clean vs corrupted rewards", cmd_audit);
    auto& s = c.settings;
    s.add(c.app, "dataset", "", "dataset file (default: a synthetic world)");
    add_task_options(s, c.app);
    s.add(c.app, "samples", "200", "synthetic samples");
    s.add(c.app, "cues", "4", "cues per sample");
    s.add(c.app, "fraction", "0.3", "fraction of labels to corrupt");
    s.add(c.app, "tau", "0.75", "reward threshold");
    s.add(c.app, "group-size", "8", "chains of thought per sample");
    s.add(c.app, "seed", "7", "run seed");
    add_backend_options(s, c.app);
    s.add(c.app, "output", "audit_report.txt", "text report");
    s.add(c.app, "report-json", "", "JSON report");
    s.add(c.app, "records", "", "records file for the mixed run");
    s.add(c.app, "corrupted-dataset", "", "write the mixed dataset here");
    s.add_flag(c.app, "skip-invalid", "drop invalid dataset lines");
  }
  {
    auto& c = add_cmd("report", "render reward histograms and curves as text tables and plot data", cmd_report);
    c.settings.add(c.app, "records", "", "records file");
    c.settings.add(c.app, "curve", "", "curve file from train-toy");
    c.settings.add(c.app, "tau", "0.75", "reward threshold");
    c.settings.add(c.app, "window", "20", "smoothing window");
    c.settings.add(c.app, "output-dir", "", "directory for plot-data files");
  }

  if (!args.empty() && !args.front().empty() && args.front()[0] != '-' && !cmds.count(args.front())) {
    err << "error: unknown subcommand '" << args.front() << "'\n\n" << app.help();
    return kExitUsage;
  }
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  auto& cmd = cmds.at(name);
  RunContext ctx;
  ctx.command = name;
  ctx.out = &out;
  ctx.err = &err;
  try {
    std::map<std::string, std::string> config;
    if (!cmd.config.empty()) {
      config = parse_config(read_text_file(cmd.config), cmd.config);
      ctx.config_path = cmd.config;
    }
    cmd.settings.resolve(config);
    ctx.settings = cmd.settings;
    out << "rise " << name << " (" << kVersion << ")\n" << ctx.settings.describe();
    return cmd.run(ctx);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n\n" << cmd.app->help();
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << to_string(e.kind) << ": " << e.detail << '\n';
    return exit_code_for(e.kind);
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
}

}  // namespace rise::cli
