#pragma once

// Label-corruption audit: corrupt a fraction of the labels, run the closed
// loop over the mixed set and compare reward distributions.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "rise/pipeline.hpp"

namespace rise {

inline constexpr std::size_t kMaxCorruptionAttempts = 10000;
inline constexpr double kMinCorruptedSide = 0.05;  // of the shorter image side

/// Redraws a Dirichlet(1) distribution until its argmax differs from the original one.
inline Sample corrupt_classification(const Sample& sample, Rng& rng) {
  const auto& cats = categories_of(sample.task);
  if (cats.size() < 2) throw Error(ErrorKind::DomainError, "cannot corrupt a single-category task");
  const std::size_t original = argmax_category(std::get<Distribution>(sample.annotation), cats);
  for (;;) {
    const auto w = rng.dirichlet_uniform(cats.size());
    const auto top = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
    if (top == original) continue;
    Distribution d;
    for (std::size_t i = 0; i < cats.size(); ++i) d.probs[cats[i]] = w[i];
    Sample out = sample;
    out.annotation = std::move(d);
    return out;
  }
}

/// Random integer box (min side 5% of the shorter image side) with zero
/// overlap against every original box.
inline Sample corrupt_detection(const Sample& sample, Rng& rng) {
  const auto& dims = std::get<DetectionTask>(sample.task);
  const auto& originals = std::get<BoxSet>(sample.annotation).boxes;
  const auto W = static_cast<std::uint64_t>(std::floor(dims.image_width));
  const auto H = static_cast<std::uint64_t>(std::floor(dims.image_height));
  const auto side = static_cast<std::uint64_t>(std::ceil(kMinCorruptedSide * static_cast<double>(std::min(W, H))));
  const Box whole{0, 0, static_cast<double>(W), static_cast<double>(H)};
  for (const auto& b : originals)
    if (b.x1 <= 0 && b.y1 <= 0 && b.x2 >= whole.x2 && b.y2 >= whole.y2)
      throw Error(ErrorKind::CorruptionInfeasible, "original box covers the whole image");
  if (side == 0 || side > W || side > H) throw Error(ErrorKind::CorruptionInfeasible, "image too small");
  for (std::size_t attempt = 0; attempt < kMaxCorruptionAttempts; ++attempt) {
    const std::uint64_t x1 = rng.below(W - side + 1);
    const std::uint64_t x2 = x1 + side + rng.below(W - x1 - side + 1);
    const std::uint64_t y1 = rng.below(H - side + 1);
    const std::uint64_t y2 = y1 + side + rng.below(H - y1 - side + 1);
    const Box c{static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x2), static_cast<double>(y2)};
    if (std::all_of(originals.begin(), originals.end(), [&](const Box& o) { return iou(c, o) == 0.0; })) {
      Sample out = sample;
      out.annotation = BoxSet{{c}};
      return out;
    }
  }
  throw Error(ErrorKind::CorruptionInfeasible,
              "no zero-overlap box found in " + std::to_string(kMaxCorruptionAttempts) + " attempts");
}

inline Sample corrupt_sample(const Sample& s, Rng& rng) {
  return is_classification(s.task) ? corrupt_classification(s, rng) : corrupt_detection(s, rng);
}

struct AuditReport {
  std::uint64_t seed = 0;
  double fraction = 0;
  double tau = 0.75;
  std::size_t total = 0;
  RewardHistogram clean;
  RewardHistogram corrupted;
  double corrupted_below_tau = 0;  // fraction of corrupted samples with r < tau
  double clean_at_or_above_tau = 0;
  double mean_clean = 0;
  double mean_corrupted = 0;
  std::size_t failures = 0;
  bool operator==(const AuditReport& o) const {
    return seed == o.seed && fraction == o.fraction && tau == o.tau && total == o.total &&
           clean.counts == o.clean.counts && corrupted.counts == o.corrupted.counts &&
           mean_clean == o.mean_clean && mean_corrupted == o.mean_corrupted && failures == o.failures;
  }
};

struct AuditRun {
  AuditReport report;
  std::vector<Sample> dataset;               // mixed set as scored
  std::vector<std::string> corrupted_ids;    // dataset order
  StageResult stage;
};

/// Indices of floor(fraction * M) samples, chosen uniformly with the seed, ascending.
inline std::vector<std::size_t> choose_corrupted(std::size_t m, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction < 1)) throw Error(ErrorKind::DomainError, "corruption fraction must be in (0,1)");
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(m)));
  std::vector<std::size_t> idx(m);
  for (std::size_t i = 0; i < m; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, "audit-select"));
  rng.shuffle(idx);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline AuditRun run_noise_audit(const std::vector<Sample>& dataset, double fraction, const PromptCatalog& catalog,
                                const Backend& reason_backend, const Backend& recon_backend,
                                const StageOptions& opt, double tau, const std::filesystem::path& records_path = {}) {
  AuditRun run;
  const auto chosen = choose_corrupted(dataset.size(), fraction, opt.seed);
  run.dataset = dataset;
  Rng rng(derive_seed(opt.seed, "audit-corrupt"));
  for (std::size_t i : chosen) {
    run.dataset[i] = corrupt_sample(dataset[i], rng);
    run.corrupted_ids.push_back(dataset[i].id);
  }
  run.stage = run_rise_cot_stage(run.dataset, catalog, reason_backend, recon_backend, opt, records_path);

  const std::set<std::string> bad(run.corrupted_ids.begin(), run.corrupted_ids.end());
  std::vector<double> clean, corrupted;
  for (const auto& r : run.stage.records) (bad.count(r.sample_id) ? corrupted : clean).push_back(r.reward);
  auto& rep = run.report;
  rep.seed = opt.seed;
  rep.fraction = fraction;
  rep.tau = tau;
  rep.total = dataset.size();
  rep.failures = run.stage.failures.size();
  rep.clean = reward_histogram(clean);
  rep.corrupted = reward_histogram(corrupted);
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  rep.mean_clean = mean(clean);
  rep.mean_corrupted = mean(corrupted);
  rep.corrupted_below_tau =
      corrupted.empty() ? 0.0
                        : static_cast<double>(std::count_if(corrupted.begin(), corrupted.end(),
                                                            [&](double r) { return r < tau; })) /
                              static_cast<double>(corrupted.size());
  rep.clean_at_or_above_tau =
      clean.empty() ? 0.0
                    : static_cast<double>(std::count_if(clean.begin(), clean.end(), [&](double r) { return r >= tau; })) /
                          static_cast<double>(clean.size());
  return run;
}

/// Four-bin table, one row per bin, counts and percentages for both populations.
inline std::string histogram_table(const RewardHistogram& clean, const RewardHistogram& corrupted) {
  static const char* labels[4] = {"[0.00, 0.25)", "[0.25, 0.50)", "[0.50, 0.75)", "[0.75, 1.00]"};
  std::string out = "reward bin      clean            corrupted\n";
  char line[128];
  for (std::size_t b = 0; b < 4; ++b) {
    std::snprintf(line, sizeof line, "%-14s  %5zu (%5.1f%%)  %5zu (%5.1f%%)\n", labels[b], clean.counts[b],
                  clean.percentages[b], corrupted.counts[b], corrupted.percentages[b]);
    out += line;
  }
  std::snprintf(line, sizeof line, "%-14s  %5zu           %5zu\n", "total", clean.total, corrupted.total);
  return out + line;
}

inline std::string format_audit_report(const AuditReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "noise audit: seed %llu, corruption fraction %.2f, tau %.2f\n"
                "samples %zu (clean %zu, corrupted %zu, failed %zu)\n"
                "mean reward clean %.6f, corrupted %.6f\n"
                "corrupted below tau: %.1f%%\n"
                "clean at/above tau:  %.1f%%\n",
                static_cast<unsigned long long>(r.seed), r.fraction, r.tau, r.total, r.clean.total,
                r.corrupted.total, r.failures, r.mean_clean, r.mean_corrupted, 100.0 * r.corrupted_below_tau,
                100.0 * r.clean_at_or_above_tau);
  return buf + histogram_table(r.clean, r.corrupted);
}

inline Json audit_report_to_json(const AuditReport& r) {
  auto hist = [](const RewardHistogram& h) {
    return Json{{"counts", h.counts}, {"percentages", h.percentages}, {"total", h.total}};
  };
  return Json{{"seed", r.seed},
              {"fraction", r.fraction},
              {"tau", r.tau},
              {"total", r.total},
              {"failures", r.failures},
              {"clean", hist(r.clean)},
              {"corrupted", hist(r.corrupted)},
              {"corrupted_below_tau", r.corrupted_below_tau},
              {"clean_at_or_above_tau", r.clean_at_or_above_tau},
              {"mean_clean", r.mean_clean},
              {"mean_corrupted", r.mean_corrupted}};
}

}  // namespace rise
