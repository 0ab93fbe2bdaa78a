#pragma once

// Stage orchestration: closed-loop CoT generation, threshold filtering, SFT
// export, think-answer reward evaluation and prediction scoring.

#include <filesystem>
#include <functional>
#include <type_traits>
#include <future>
#include <set>
#include <string>
#include <vector>

#include "rise/backends.hpp"
#include "rise/grpo.hpp"
#include "rise/io.hpp"
#include "rise/prompts.hpp"
#include "rise/random.hpp"
#include "rise/reward.hpp"
#include "rise/similarity.hpp"

namespace rise {

struct StageOptions {
  std::size_t group_size = kDefaultGroupSize;
  std::uint64_t seed = 7;
  std::size_t concurrency = 4;
  double temperature = kDefaultGenerationTemperature;
  double reconstruction_temperature = kDefaultReconstructionTemperature;
  int max_tokens = 512;
};

struct StageFailure {
  std::string sample_id;
  std::string kind;
  std::string detail;
};

struct StageResult {
  std::vector<RiseRecord> records;  // dataset order; resumed records first
  std::vector<StageFailure> failures;
  std::size_t resumed = 0;
};

namespace detail {

inline void check_stage_options(const StageOptions& o) {
  if (o.group_size < 1) throw Error(ErrorKind::DomainError, "group size must be >= 1");
  if (o.max_tokens <= 0) throw Error(ErrorKind::DomainError, "max_tokens must be positive");
}

// Runs fn over items in chunks of `width`, keeping results in input order.
template <class T, class Fn, class Sink>
void chunked_map(const std::vector<T>& items, std::size_t width, Fn fn, Sink sink) {
  using R = std::invoke_result_t<Fn, const T&>;
  if (width == 0) width = 1;
  for (std::size_t base = 0; base < items.size(); base += width) {
    const std::size_t end = std::min(items.size(), base + width);
    std::vector<std::future<R>> jobs;
    for (std::size_t i = base; i < end; ++i) {
      if (width == 1)
        jobs.push_back(std::async(std::launch::deferred, fn, std::cref(items[i])));
      else
        jobs.push_back(std::async(std::launch::async, fn, std::cref(items[i])));
    }
    for (std::size_t i = base; i < end; ++i) {
      R r = jobs[i - base].get();
      sink(i, r);
    }
  }
}

struct SampleOutcome {
  std::optional<RiseRecord> record;
  std::optional<StageFailure> failure;
};

inline std::set<std::string> load_done_records(const std::filesystem::path& path, const TaskKind& task,
                                               std::vector<RiseRecord>& done) {
  std::set<std::string> ids;
  if (path.empty() || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0) return ids;
  auto f = read_jsonl(path, fmt_name::kRecords);
  if (!(f.header.task == task))
    throw Error(ErrorKind::HeaderMismatch, path.string() + ": existing records are for a different task");
  for (const auto& line : f.lines) {
    auto j = Json::parse(line, nullptr, false);
    if (j.is_discarded()) break;  // torn tail from an interrupted run
    auto r = record_from_json(j, task);
    if (ids.insert(r.sample_id).second) done.push_back(std::move(r));
  }
  return ids;
}

}  // namespace detail

/// Generates G chains of thought per sample, reconstructs each, scores it and
/// keeps the best of the group. With a records path, finished samples are
/// flushed line by line and an existing file is resumed by sample id.
inline StageResult run_rise_cot_stage(const std::vector<Sample>& dataset, const PromptCatalog& catalog,
                                      const Backend& reason_backend, const Backend& recon_backend,
                                      const StageOptions& opt, const std::filesystem::path& records_path = {},
                                      const std::filesystem::path& failures_path = {}) {
  detail::check_stage_options(opt);
  StageResult result;
  if (dataset.empty()) return result;
  const TaskKind& task = dataset.front().task;

  std::vector<RiseRecord> done;
  const auto done_ids = detail::load_done_records(records_path, task, done);
  result.resumed = done.size();
  std::optional<JsonlWriter> writer;
  if (!records_path.empty()) {
    // rewrite so a torn last line from an interrupted run is dropped
    writer.emplace(records_path, make_header(fmt_name::kRecords, task));
    for (const auto& r : done) writer->write(record_to_json(r, task));
  }
  result.records = std::move(done);

  std::vector<Sample> todo;
  for (const auto& s : dataset)
    if (!done_ids.count(s.id)) todo.push_back(s);

  auto one = [&](const Sample& s) -> detail::SampleOutcome {
    try {
      const std::string reasoning_prompt = build_prompt(catalog, s, PromptStage::Reasoning);
      Group group;
      group.sample_id = s.id;
      for (std::size_t g = 0; g < opt.group_size; ++g) {
        GenerationRequest req{s.id, s.image_ref, reasoning_prompt, PromptStage::Reasoning, opt.temperature,
                              opt.max_tokens, derive_seed(opt.seed, "cot:" + s.id, g)};
        GroupMember m;
        m.cot = reason_backend.generate(req);
        GenerationRequest rec{s.id,
                              s.image_ref,
                              build_prompt(catalog, s, PromptStage::Reconstruction, m.cot),
                              PromptStage::Reconstruction,
                              opt.reconstruction_temperature,
                              opt.max_tokens,
                              derive_seed(opt.seed, "recon:" + s.id, g)};
        m.reconstruction_text = recon_backend.generate(rec);
        m.breakdown = rise_cot_reward(s, m.cot, m.reconstruction_text, &m.reconstruction);
        group.members.push_back(std::move(m));
      }
      if (group.members.size() >= 2) group.advantages = compute_group_advantages(group.rewards());
      return {select_best_of_group(group, s).second, std::nullopt};
    } catch (const Error& e) {
      return {std::nullopt, StageFailure{s.id, to_string(e.kind), e.detail}};
    }
  };
  detail::chunked_map(todo, opt.concurrency, one, [&](std::size_t, detail::SampleOutcome& o) {
    if (o.record) {
      if (writer) writer->write(record_to_json(*o.record, task));
      result.records.push_back(std::move(*o.record));
    } else {
      result.failures.push_back(std::move(*o.failure));
    }
  });

  if (!failures_path.empty()) {
    JsonlWriter fw(failures_path, make_header(fmt_name::kFailures, task));
    for (const auto& f : result.failures)
      fw.write(Json{{"sample_id", f.sample_id}, {"error", f.kind}, {"detail", f.detail}});
  }
  return result;
}

inline Sample sample_of(const RiseRecord& r, const TaskKind& task) {
  return Sample{r.sample_id, r.image_ref, task, r.annotation, r.target_desc};
}

/// Think-answer target for a record: its CoT as the think section and the
/// canonical ground-truth rendering as the answer.
inline std::string sft_target(const RiseRecord& r, const TaskKind& task) {
  return "<think>" + r.cot + "</think><answer>" + render_annotation(r.annotation, task) + "</answer>";
}

inline std::vector<SftExample> export_sft_corpus(const std::vector<RiseRecord>& records, const TaskKind& task,
                                                 const PromptCatalog& catalog, double tau) {
  std::vector<SftExample> out;
  for (const auto& r : filter_high_subset(records, tau).kept) {
    out.push_back(SftExample{r.sample_id, r.image_ref, build_prompt(catalog, sample_of(r, task), PromptStage::R1),
                             sft_target(r, task)});
  }
  return out;
}

inline void save_sft(const std::filesystem::path& path, const TaskKind& task, const std::vector<SftExample>& corpus) {
  JsonlWriter w(path, make_header(fmt_name::kSft, task));
  for (const auto& e : corpus) w.write(sft_to_json(e));
}

struct RftSampleResult {
  std::string sample_id;
  std::vector<std::string> completions;
  std::vector<double> rewards;
  std::vector<double> advantages;
  double mean_reward = 0;
};

struct RftResult {
  std::vector<RftSampleResult> samples;
  std::vector<StageFailure> failures;
  double mean_reward = 0;
};

/// Samples G think-answer outputs per sample from the R1 prompt, scores them
/// and computes group advantages. Writes the bookkeeping an external trainer
/// consumes; no weights are updated here.
inline RftResult run_rft_reward_eval(const std::vector<Sample>& dataset, const PromptCatalog& catalog,
                                     const Backend& r1_backend, const StageOptions& opt,
                                     const std::filesystem::path& bookkeeping_path = {}) {
  detail::check_stage_options(opt);
  if (opt.group_size < 2) throw Error(ErrorKind::DomainError, "group size must be >= 2 for advantages");
  RftResult result;
  if (dataset.empty()) return result;
  const TaskKind& task = dataset.front().task;
  std::optional<JsonlWriter> writer;
  if (!bookkeeping_path.empty()) writer.emplace(bookkeeping_path, make_header(fmt_name::kGrpo, task));

  using Out = std::pair<std::optional<RftSampleResult>, std::optional<StageFailure>>;
  auto one = [&](const Sample& s) -> Out {
    try {
      RftSampleResult r;
      r.sample_id = s.id;
      const std::string prompt = build_prompt(catalog, s, PromptStage::R1);
      for (std::size_t g = 0; g < opt.group_size; ++g) {
        GenerationRequest req{s.id,           s.image_ref,    prompt, PromptStage::R1,
                              opt.temperature, opt.max_tokens, derive_seed(opt.seed, "r1:" + s.id, g)};
        r.completions.push_back(r1_backend.generate(req));
        r.rewards.push_back(rise_r1_reward(s, r.completions.back()).composite);
      }
      r.advantages = compute_group_advantages(r.rewards);
      double sum = 0;
      for (double v : r.rewards) sum += v;
      r.mean_reward = sum / static_cast<double>(r.rewards.size());
      return {std::move(r), std::nullopt};
    } catch (const Error& e) {
      return {std::nullopt, StageFailure{s.id, to_string(e.kind), e.detail}};
    }
  };
  double total = 0;
  detail::chunked_map(dataset, opt.concurrency, one, [&](std::size_t, Out& o) {
    if (!o.first) {
      result.failures.push_back(std::move(*o.second));
      return;
    }
    auto& r = *o.first;
    if (writer)
      writer->write(Json{{"sample_id", r.sample_id},
                         {"completions", r.completions},
                         {"rewards", r.rewards},
                         {"advantages", r.advantages},
                         {"mean_reward", r.mean_reward}});
    total += r.mean_reward;
    result.samples.push_back(std::move(r));
  });
  result.mean_reward = result.samples.empty() ? 0.0 : total / static_cast<double>(result.samples.size());
  return result;
}

// ---------------------------------------------------------------- evaluation

struct SampleEval {
  std::string id;
  bool parse_failed = false;
  double jsd = 0;                      // classification
  bool correct = false;                // classification argmax
  std::optional<double> reference_jsd;
  double hit = 0;                      // detection: fraction of gt boxes matched at IoU >= 0.5
};

struct EvalReport {
  TaskKind task;
  std::vector<SampleEval> samples;
  std::size_t parse_failures = 0;
  double mean_jsd = 0;
  double accuracy = 0;
  std::optional<double> win_rate;
  double detection_score = 0;
};

inline constexpr double kHitIou = 0.5;

/// First category with the largest probability, in task order.
inline std::size_t argmax_category(const Distribution& d, const std::vector<std::string>& categories) {
  std::size_t best = 0;
  double best_v = -1;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const double v = d.at(categories[i]);
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  return best;
}

inline Distribution uniform_distribution(const std::vector<std::string>& categories) {
  Distribution d;
  for (const auto& c : categories) d.probs[c] = 1.0 / static_cast<double>(categories.size());
  return d;
}

/// Structured answer of a prediction: the annotation field, else the answer
/// tag of the raw output, else the raw output itself.
inline std::optional<Annotation> prediction_annotation(const Prediction& p, const TaskKind& task) {
  std::optional<Annotation> a = p.annotation;
  if (!a && p.output) {
    auto parsed = parse_output(*p.output, task);
    if (parsed.answer) {
      a = parsed.answer;
    } else if (auto raw = parse_annotation_answer(*p.output, task)) {
      a = *raw;
    }
  }
  if (a && !validate_annotation(*a, task).empty()) a.reset();
  return a;
}

inline EvalReport evaluate_predictions(const std::vector<Prediction>& predictions, const std::vector<Sample>& truth,
                                       const std::vector<Prediction>* reference = nullptr) {
  if (truth.empty()) throw Error(ErrorKind::DomainError, "empty ground truth");
  EvalReport rep;
  rep.task = truth.front().task;
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : truth) by_id[s.id] = &s;
  std::map<std::string, const Prediction*> ref_by_id;
  if (reference)
    for (const auto& p : *reference) ref_by_id[p.id] = &p;

  auto score_jsd = [&](const Prediction& p, const Sample& s, bool& failed) {
    const auto& cats = categories_of(rep.task);
    auto a = prediction_annotation(p, rep.task);
    failed = !a;
    const Distribution pred = a ? renormalized(std::get<Distribution>(*a)) : uniform_distribution(cats);
    return std::pair{jsd(std::get<Distribution>(s.annotation), pred), pred};
  };

  std::size_t wins_total = 0, wins = 0;
  for (const auto& p : predictions) {
    auto it = by_id.find(p.id);
    if (it == by_id.end()) throw Error(ErrorKind::DomainError, "prediction for unknown id '" + p.id + "'");
    const Sample& s = *it->second;
    SampleEval e;
    e.id = p.id;
    if (is_classification(rep.task)) {
      const auto& cats = categories_of(rep.task);
      auto [j, pred] = score_jsd(p, s, e.parse_failed);
      e.jsd = j;
      e.correct = !e.parse_failed && argmax_category(pred, cats) ==
                                         argmax_category(std::get<Distribution>(s.annotation), cats);
      if (auto r = ref_by_id.find(p.id); r != ref_by_id.end()) {
        bool ref_failed = false;
        e.reference_jsd = score_jsd(*r->second, s, ref_failed).first;
        ++wins_total;
        if (*e.reference_jsd < e.jsd) ++wins;
      }
      rep.mean_jsd += e.jsd;
      rep.accuracy += e.correct ? 1.0 : 0.0;
    } else {
      auto a = prediction_annotation(p, rep.task);
      e.parse_failed = !a;
      const auto& gt = std::get<BoxSet>(s.annotation);
      if (a) {
        const auto m = hungarian_match(gt, std::get<BoxSet>(*a));
        std::size_t hits = 0;
        for (double v : m.per_pair_iou)
          if (v >= kHitIou) ++hits;
        e.hit = static_cast<double>(hits) / static_cast<double>(gt.boxes.size());
      }
      rep.detection_score += e.hit;
    }
    if (e.parse_failed) ++rep.parse_failures;
    rep.samples.push_back(std::move(e));
  }
  const double n = rep.samples.empty() ? 1.0 : static_cast<double>(rep.samples.size());
  rep.mean_jsd /= n;
  rep.accuracy /= n;
  rep.detection_score /= n;
  if (reference && is_classification(rep.task))
    rep.win_rate = wins_total ? static_cast<double>(wins) / static_cast<double>(wins_total) : 0.0;
  return rep;
}

inline Json eval_report_to_json(const EvalReport& r) {
  Json j{{"task", task_to_json(r.task)}, {"count", r.samples.size()}, {"parse_failures", r.parse_failures}};
  Json per = Json::array();
  if (is_classification(r.task)) {
    j["mean_jsd"] = r.mean_jsd;
    j["accuracy"] = r.accuracy;
    j["win_rate"] = r.win_rate ? Json(*r.win_rate) : Json(nullptr);
    for (const auto& e : r.samples) {
      Json x{{"id", e.id}, {"jsd", e.jsd}, {"correct", e.correct}, {"parse_failed", e.parse_failed}};
      if (e.reference_jsd) x["reference_jsd"] = *e.reference_jsd;
      per.push_back(x);
    }
  } else {
    j["detection_score"] = r.detection_score;
    for (const auto& e : r.samples) per.push_back(Json{{"id", e.id}, {"hit", e.hit}, {"parse_failed", e.parse_failed}});
  }
  j["samples"] = per;
  return j;
}

}  // namespace rise
