// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include "rise/audit.hpp"
#include "rise/backends.hpp"
#include "rise/cli.hpp"
#include "support/fixtures.hpp"
#include "support/gating_matrix.hpp"
#include "support/oracles.hpp"

using namespace rise;

namespace {

struct Verdict {
  bool ok = true;
  std::string detail;
  void fail(const std::string& why) {
    if (ok) detail = why;
    ok = false;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

std::vector<std::string> random_categories(Rng& rng) {
  const std::size_t k = 2 + rng.below(9);
  std::vector<std::string> c;
  for (std::size_t i = 0; i < k; ++i) c.push_back("c" + std::to_string(i));
  return c;
}

// 1. similarity identities
Verdict similarity_identities() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto cats = random_categories(rng);
    const auto d = fx::dist(cats, fx::random_simplex(rng, cats.size()));
    worst = std::max(worst, std::abs(classification_similarity(d, d) - 1.0));
  }
  if (worst > 1e-9) v.fail(fmt("classification self-similarity off by %.3g", worst));
  for (int i = 0; i < 1000; ++i) {
    BoxSet set;
    const auto n = 1 + rng.below(8);
    for (std::uint64_t k = 0; k < n; ++k) set.boxes.push_back(fx::random_box(rng, 1024, 768, i % 2 == 0));
    if (detection_similarity(set, set) != 1.0) {
      v.fail("detection self-similarity is not exactly 1 on instance " + std::to_string(i));
      break;
    }
  }
  const double t = seconds_since(t0);
  if (t >= 5.0) v.fail(fmt("took %.2f s", t));
  if (v.ok) v.detail = fmt("max |S(A,A)-1| = %.2g over 1000 distributions; 1000 box sets exact; %.2f s", worst, t);
  return v;
}

// 2. Hungarian vs brute force
Verdict hungarian_oracle() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(202);
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    BoxSet g, p;
    const auto ng = 1 + rng.below(6), np = rng.below(7);
    const bool integral = i % 2 == 0;
    // small canvas so boxes overlap often
    for (std::uint64_t k = 0; k < ng; ++k) g.boxes.push_back(fx::random_box(rng, 60, 60, integral));
    for (std::uint64_t k = 0; k < np; ++k) p.boxes.push_back(fx::random_box(rng, 60, 60, integral));
    const double got = hungarian_match(g, p).total_iou();
    const double want = oracle::brute_force_total(g.boxes, p.boxes, [](const Box& a, const Box& b) { return iou(a, b); });
    if (got != want) ++mismatches;
  }
  const double t = seconds_since(t0);
  if (mismatches) v.fail(std::to_string(mismatches) + " of 1000 instances differ from the permutation maximum");
  if (t >= 10.0) v.fail(fmt("took %.2f s", t));
  if (v.ok) v.detail = fmt("1000 instances, all equal to the brute-force maximum; %.2f s", t);
  return v;
}

// 3. reward gating truth table
Verdict reward_gating() {
  Verdict v;
  const auto cases = gating::build();
  if (cases.size() != 60) v.fail("matrix has " + std::to_string(cases.size()) + " cases");
  std::size_t open = 0;
  for (const auto& c : cases) {
    const auto r = rise_cot_reward(c.sample, c.cot, c.reconstruction);
    const double want = c.gate_open ? r.similarity : 0.0;
    if (r.leak_detected != c.expect_leak || r.format_ok != c.expect_format || r.composite != want ||
        std::abs(r.similarity - c.expect_similarity) > 1e-9) {
      v.fail("case " + c.label + " disagrees with the truth table");
      break;
    }
    open += c.gate_open;
  }
  if (v.ok) v.detail = "60/60 cases match (" + std::to_string(open) + " pass-through, " + std::to_string(60 - open) + " gated to 0)";
  return v;
}

// 4. reference histogram fixtures, through the filter command
Verdict histogram_fixtures() {
  Verdict v;
  fx::TempDir tmp("acc4");
  struct Want {
    const fx::HistogramFixture* f;
    std::string line;
  };
  for (const Want& w : {Want{&fx::emotion6_fixture(), "kept 568 / 1386 (41.0%)"},
                        Want{&fx::lisa_fixture(), "kept 231 / 350 (66.0%)"}}) {
    const auto records = fx::fixture_records(*w.f);
    const auto path = tmp / (w.f->name + ".jsonl");
    save_records(path, fx::emotion_task(), records);
    std::ostringstream out, err;
    const int code = cli::cli_dispatch({"filter", "--records", path, "--tau", "0.75"}, out, err);
    if (code != 0 || out.str().find(w.line) == std::string::npos) v.fail(w.f->name + ": filter did not print '" + w.line + "'");
    const auto h = reward_histogram(fx::rewards_of_records(records));
    for (std::size_t b = 0; b < 4; ++b)
      if (std::lround(h.percentages[b]) != w.f->percent[b]) v.fail(w.f->name + ": bin " + std::to_string(b) + " percentage");
    const auto kept = filter_high_subset(records, 0.75);
    if (kept.kept.size() != w.f->counts[3] || kept.total != h.total) v.fail(w.f->name + ": kept count");
  }
  if (v.ok) v.detail = "41% (568/1,386) and 66% (231/350) reproduced, all four bins match the reference percentages";
  return v;
}

// 5. toy closed-loop convergence
Verdict convergence() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticWorld world(fx::emotion_task(), 7);
  const auto corpus = world.generate(50, 4, 7);
  ToyTrainConfig cfg;  // G = 8, 300 steps, seed 7
  const auto r = train_toy_policy(world, corpus, cfg);
  const auto sm = smooth_curve(r.curve, 20);
  const double t = seconds_since(t0);
  if (!(r.curve.front() < 0.35)) v.fail(fmt("step-1 mean reward %.4f", r.curve.front()));
  if (!(sm.back() > 0.75)) v.fail(fmt("final smoothed reward %.4f", sm.back()));
  for (std::size_t i = 1; i < sm.size(); ++i)
    if (sm[i] < sm[i - 1]) {
      v.fail("smoothed curve decreases at step " + std::to_string(i + 1));
      break;
    }
  if (t >= 60.0) v.fail(fmt("took %.2f s", t));
  if (v.ok) v.detail = fmt("step 1 %.4f, final smoothed %.4f, monotone; %.2f s", r.curve.front(), sm.back(), t);
  return v;
}

// 6. noise separation
Verdict noise_separation() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto catalog = PromptCatalog::builtin();
  double worst_corrupted = 1, worst_clean = 1;
  for (const bool det : {false, true}) {
    for (const std::uint64_t seed : {1, 2, 3, 4, 5}) {
      const TaskKind task = det ? fx::det_task() : fx::emotion_task();
      auto world = std::make_shared<const SyntheticWorld>(task, seed);
      std::vector<Sample> ds;
      for (const auto& s : world->generate(200, 4, seed)) ds.push_back(world->to_sample(s));
      SyntheticBackend backend(world, {SyntheticPolicy::Fidelity, 0.8});
      StageOptions o;
      o.seed = seed;
      const auto run = run_noise_audit(ds, 0.3, catalog, backend, backend, o, 0.75);
      worst_corrupted = std::min(worst_corrupted, run.report.corrupted_below_tau);
      worst_clean = std::min(worst_clean, run.report.clean_at_or_above_tau);
      if (run.report.corrupted_below_tau < 0.95 || run.report.clean_at_or_above_tau < 0.60)
        v.fail(std::string(task_tag(task)) + " seed " + std::to_string(seed) +
               fmt(": corrupted below tau %.3f, clean at/above %.3f", run.report.corrupted_below_tau,
                   run.report.clean_at_or_above_tau));
    }
  }
  const double t = seconds_since(t0);
  if (t >= 60.0) v.fail(fmt("took %.2f s", t));
  if (v.ok)
    v.detail = fmt("seeds 1-5, both tasks: worst corrupted below tau %.1f%%, worst clean at/above %.1f%%; %.2f s",
                   100 * worst_corrupted, 100 * worst_clean, t);
  return v;
}

// 7. JSD checks
Verdict jsd_checks() {
  Verdict v;
  Rng rng(707);
  const double ln2 = std::log(2.0);
  double worst_sym = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto cats = random_categories(rng);
    const auto p = fx::dist(cats, fx::random_simplex(rng, cats.size()));
    const auto q = fx::dist(cats, fx::random_simplex(rng, cats.size()));
    const double a = jsd(p, q), b = jsd(q, p);
    worst_sym = std::max(worst_sym, std::abs(a - b));
    if (a < 0 || a > ln2 + 1e-8) v.fail(fmt("jsd %.12f outside [0, ln 2]", a));
    if (a == 0)
      for (const auto& c : cats)
        if (std::abs(p.at(c) - q.at(c)) > 1e-6) v.fail("jsd 0 for distinct distributions");
    // identical pair: zero divergence
    if (jsd(p, p) != 0.0) {
      const double z = jsd(p, p);
      if (z > 1e-15) v.fail(fmt("jsd(p,p) = %.3g", z));
    }
  }
  if (worst_sym > 1e-12) v.fail(fmt("asymmetry %.3g", worst_sym));
  const double disjoint = jsd(fx::dist({"x", "y"}, {1, 0}), fx::dist({"x", "y"}, {0, 1}));
  const double want = oracle::jsd({1, 0}, {0, 1});
  if (std::abs(disjoint - want) > 1e-5 || std::abs(disjoint - 0.693147) > 1e-5)
    v.fail(fmt("disjoint pair %.8f, oracle %.8f", disjoint, want));
  if (v.ok) v.detail = fmt("max asymmetry %.2g; disjoint pair %.6f (oracle %.6f)", worst_sym, disjoint, want);
  return v;
}

// 8. format closure
Verdict format_closure() {
  Verdict v;
  Rng rng(808);
  for (int i = 0; i < 1000 && v.ok; ++i) {
    if (i % 2 == 0) {
      const auto cats = random_categories(rng);
      const TaskKind task = ClassificationTask{cats};
      const auto d = fx::dist(cats, fx::random_simplex(rng, cats.size()));
      const auto back = parse_annotation_answer(render_annotation(d, task), task);
      if (!back) {
        v.fail("classification render did not parse: " + back.error().detail);
        break;
      }
      for (const auto& c : cats)
        if (std::abs(std::get<Distribution>(*back).at(c) - d.at(c)) > 1e-6) v.fail("classification value drift");
    } else {
      const TaskKind task = fx::det_task();
      BoxSet set;
      const auto n = 1 + rng.below(4);
      for (std::uint64_t k = 0; k < n; ++k) set.boxes.push_back(fx::random_box(rng, 640, 480, i % 4 == 1));
      const auto back = parse_annotation_answer(render_annotation(set, task), task);
      if (!back) {
        v.fail("detection render did not parse: " + back.error().detail);
        break;
      }
      const auto& got = std::get<BoxSet>(*back).boxes;
      if (got.size() != set.boxes.size()) v.fail("box count changed");
      for (std::size_t k = 0; k < got.size() && k < set.boxes.size(); ++k)
        if (std::abs(got[k].x1 - set.boxes[k].x1) > 1e-6 || std::abs(got[k].y1 - set.boxes[k].y1) > 1e-6 ||
            std::abs(got[k].x2 - set.boxes[k].x2) > 1e-6 || std::abs(got[k].y2 - set.boxes[k].y2) > 1e-6)
          v.fail("box coordinate drift");
    }
  }
  std::size_t targets = 0;
  const auto catalog = PromptCatalog::builtin();
  for (const TaskKind& task : {fx::emotion_task(), fx::det_task(), TaskKind{ClassificationTask{{"calm", "tense", "odd"}}}}) {
    auto world = std::make_shared<const SyntheticWorld>(task, 8);
    std::vector<Sample> ds;
    for (const auto& s : world->generate(40, 3, 8)) ds.push_back(world->to_sample(s));
    SyntheticBackend backend(world, {SyntheticPolicy::Fidelity, 0.8});
    const auto stage = run_rise_cot_stage(ds, catalog, backend, backend, StageOptions{});
    for (const auto& e : export_sft_corpus(stage.records, task, catalog, 0.0)) {
      ++targets;
      if (!validate_f_r1(e.target, task)) v.fail("SFT target fails think-answer validation: " + e.target);
    }
  }
  if (v.ok) v.detail = "1000 annotations round-trip; " + std::to_string(targets) + " exported SFT targets validate";
  return v;
}

// 9. end-to-end determinism through the command line
Verdict determinism() {
  Verdict v;
  fx::TempDir tmp("acc9");
  auto p = [&](const std::string& n) { return tmp / n; };
  const std::vector<std::vector<std::string>> steps{
      {"ingest", "--format", "synthetic", "--samples", "40", "--world-seed", "7", "--output", p("data.jsonl")},
      {"gen-cot", "--dataset", p("data.jsonl"), "--records", p("records.jsonl"), "--seed", "7", "--fresh",
       "--fidelity", "0.6"},
      {"filter", "--records", p("records.jsonl"), "--output", p("high.jsonl")},
      {"export-sft", "--records", p("records.jsonl"), "--output", p("sft.jsonl")},
      {"audit", "--samples", "60", "--seed", "7", "--output", p("audit.txt"), "--report-json", p("audit.json"),
       "--records", p("audit_records.jsonl"), "--corrupted-dataset", p("mixed.jsonl")},
  };
  auto pass = [&]() {
    std::map<std::string, std::string> files;
    for (const auto& args : steps) {
      std::ostringstream out, err;
      const int code = cli::cli_dispatch(args, out, err);
      if (code != 0) v.fail(args[0] + " exited " + std::to_string(code) + ": " + err.str());
    }
    // the audit resumes an existing records file, so clear it between passes
    for (const auto& e : fx::fs::directory_iterator(tmp.path())) files[e.path().filename().string()] = fx::slurp(e.path());
    fx::fs::remove(p("audit_records.jsonl"));
    return files;
  };
  const auto first = pass();
  const auto second = pass();
  std::size_t bytes = 0;
  if (first.size() != second.size()) v.fail("different file sets");
  for (const auto& [name, body] : first) {
    auto it = second.find(name);
    if (it == second.end() || it->second != body) v.fail(name + " differs between runs");
    bytes += body.size();
  }
  if (v.ok) v.detail = std::to_string(first.size()) + " files, " + std::to_string(bytes) + " bytes, identical across two runs";
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"similarity identities", similarity_identities},
      {"hungarian oracle equivalence", hungarian_oracle},
      {"reward gating truth table", reward_gating},
      {"reference histogram fixtures", histogram_fixtures},
      {"closed-loop convergence", convergence},
      {"noise separation", noise_separation},
      {"JSD metric checks", jsd_checks},
      {"format closure", format_closure},
      {"end-to-end determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.fail(std::string("exception: ") + e.what());
    }
    std::printf("%s %zu %s: %s\n", v.ok ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
    failed += !v.ok;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
