#pragma once

// Reward functions for the closed loop and for think-answer outputs, plus
// threshold filtering and histogram analytics.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "rise/domain.hpp"
#include "rise/similarity.hpp"
#include "rise/textproto.hpp"

namespace rise {

struct RewardConfig {
  double tau = 0.75;
  std::array<double, 5> histogram_edges{0.0, 0.25, 0.5, 0.75, 1.0};
  double clamp = kProbabilityFloor;
};

/// Reward for a chain of thought and the raw reconstruction text produced from
/// it: similarity gated by leak-freeness and format compliance.
inline RewardBreakdown rise_cot_reward(const Sample& sample, std::string_view cot, std::string_view reconstruction_text,
                                       std::optional<Annotation>* parsed_out = nullptr) {
  RewardBreakdown out;
  std::optional<Annotation> parsed;
  if (auto ta = parse_think_answer(reconstruction_text)) {
    auto ann = parse_annotation_answer(ta->answer_raw, sample.task);
    if (ann && validate_annotation(*ann, sample.task).empty()) parsed = *ann;
  }
  out.leak_detected = detect_leak(cot, sample.task).leak;
  out.format_ok = validate_f_cot(cot, parsed.has_value());
  if (parsed) out.similarity = annotation_similarity(sample.annotation, *parsed);
  if (!parsed)
    out.reason = RewardReason::Parse;
  else if (!out.format_ok)
    out.reason = RewardReason::Format;
  else if (out.leak_detected)
    out.reason = RewardReason::Leak;
  else
    out.reason = RewardReason::Similarity;
  out.composite = (!out.leak_detected && out.format_ok) ? out.similarity : 0.0;
  if (parsed_out) *parsed_out = std::move(parsed);
  return out;
}

/// Reward for a think-answer output: similarity gated by format only.
inline RewardBreakdown rise_r1_reward(const Sample& sample, std::string_view raw_model_output,
                                      std::optional<Annotation>* parsed_out = nullptr) {
  RewardBreakdown out;
  out.format_ok = validate_f_r1(raw_model_output, sample.task);
  std::optional<Annotation> parsed;
  if (auto ta = parse_think_answer(raw_model_output)) {
    auto ann = parse_annotation_answer(ta->answer_raw, sample.task);
    if (ann && validate_annotation(*ann, sample.task).empty()) parsed = *ann;
  }
  if (parsed) out.similarity = annotation_similarity(sample.annotation, *parsed);
  out.reason = !parsed ? RewardReason::Parse : (!out.format_ok ? RewardReason::Format : RewardReason::Similarity);
  out.composite = out.format_ok ? out.similarity : 0.0;
  if (parsed_out) *parsed_out = std::move(parsed);
  return out;
}

struct RewardHistogram {
  std::array<std::size_t, 4> counts{};
  std::array<double, 4> percentages{};
  std::size_t total = 0;
};

/// Bin index under the edge rule: [0,.25) [.25,.5) [.5,.75) [.75,1].
inline std::size_t reward_bin(double r, const RewardConfig& cfg = {}) {
  if (!(r >= cfg.histogram_edges.front() && r <= cfg.histogram_edges.back()))
    throw Error(ErrorKind::DomainError, "reward outside [0,1]: " + std::to_string(r));
  for (std::size_t b = 0; b + 1 < 4; ++b)
    if (r < cfg.histogram_edges[b + 1]) return b;
  return 3;
}

inline RewardHistogram reward_histogram(const std::vector<double>& rewards, const RewardConfig& cfg = {}) {
  RewardHistogram h;
  for (double r : rewards) ++h.counts[reward_bin(r, cfg)];
  h.total = rewards.size();
  for (std::size_t b = 0; b < 4; ++b)
    h.percentages[b] = h.total ? 100.0 * static_cast<double>(h.counts[b]) / static_cast<double>(h.total) : 0.0;
  return h;
}

struct FilterResult {
  std::vector<RiseRecord> kept;
  std::size_t total = 0;
};

/// Keeps records with reward >= tau, in input order.
inline FilterResult filter_high_subset(const std::vector<RiseRecord>& records, double tau) {
  FilterResult out;
  out.total = records.size();
  for (const auto& r : records)
    if (r.reward >= tau) out.kept.push_back(r);
  return out;
}

}  // namespace rise
