#include <gtest/gtest.h>

#include <memory>

#include "rise/audit.hpp"
#include "rise/backends.hpp"
#include "support/fixtures.hpp"

using namespace rise;

TEST(Corrupt, ClassificationMovesArgmax) {
  const auto task = fx::emotion_task();
  const auto& c = categories_of(task);
  Rng rng(1);
  Sample s{"a", "i", task, fx::dist(c, {0.05, 0.05, 0.05, 0.55, 0.1, 0.1, 0.1}), {}};
  for (int i = 0; i < 200; ++i) {
    auto out = corrupt_classification(s, rng);
    const auto& d = std::get<Distribution>(out.annotation);
    EXPECT_NE(argmax_category(d, c), 3u);
    EXPECT_TRUE(validate_annotation(out.annotation, task, true).empty());
  }
  Sample one{"b", "i", TaskKind{ClassificationTask{{"only"}}}, fx::dist({"only"}, {1.0}), {}};
  EXPECT_THROW(corrupt_classification(one, rng), Error);
}

TEST(Corrupt, DetectionHasNoOverlapAndMinimumSide) {
  const auto task = fx::det_task(200, 100);
  Rng rng(2);
  Sample s{"a", "i", task, BoxSet{{Box{10, 10, 120, 80}, Box{150, 0, 200, 30}}}, {}};
  for (int i = 0; i < 200; ++i) {
    auto out = corrupt_detection(s, rng);
    const auto& b = std::get<BoxSet>(out.annotation).boxes.at(0);
    EXPECT_GE(b.width(), 5.0);
    EXPECT_GE(b.height(), 5.0);
    EXPECT_LE(b.x2, 200.0);
    EXPECT_LE(b.y2, 100.0);
    EXPECT_EQ(b.x1, std::floor(b.x1));
    for (const auto& o : std::get<BoxSet>(s.annotation).boxes) EXPECT_EQ(iou(b, o), 0.0);
  }
}

TEST(Corrupt, InfeasibleCases) {
  Rng rng(3);
  Sample whole{"a", "i", fx::det_task(100, 100), BoxSet{{Box{0, 0, 100, 100}}}, {}};
  try {
    corrupt_detection(whole, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, ErrorKind::CorruptionInfeasible);
  }
  // leaves only slivers thinner than the minimum side
  Sample tight{"b", "i", fx::det_task(100, 100), BoxSet{{Box{2, 2, 98, 98}}}, {}};
  try {
    corrupt_detection(tight, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind, ErrorKind::CorruptionInfeasible);
  }
}

TEST(Select, FloorCountSortedAndSeeded) {
  auto a = choose_corrupted(10, 0.35, 4);
  EXPECT_EQ(a.size(), 3u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(a, choose_corrupted(10, 0.35, 4));
  EXPECT_TRUE(choose_corrupted(3, 0.3, 1).empty());
  EXPECT_THROW(choose_corrupted(10, 0.0, 1), Error);
  EXPECT_THROW(choose_corrupted(10, 1.0, 1), Error);
}

TEST(Audit, SeparatesCorruptedFromClean) {
  auto world = std::make_shared<const SyntheticWorld>(fx::emotion_task(), 7);
  SyntheticBackend b(world, {SyntheticPolicy::Fidelity, 0.8});
  std::vector<Sample> ds;
  for (const auto& s : world->generate(60, 4, 3)) ds.push_back(world->to_sample(s));
  StageOptions o;
  o.seed = 3;
  auto run = run_noise_audit(ds, 0.3, PromptCatalog::builtin(), b, b, o, 0.75);
  EXPECT_EQ(run.corrupted_ids.size(), 18u);
  EXPECT_EQ(run.report.corrupted.total, 18u);
  EXPECT_EQ(run.report.clean.total, 42u);
  EXPECT_GE(run.report.corrupted_below_tau, 0.9);
  EXPECT_GE(run.report.clean_at_or_above_tau, 0.6);
  EXPECT_GT(run.report.mean_clean, run.report.mean_corrupted);
  auto again = run_noise_audit(ds, 0.3, PromptCatalog::builtin(), b, b, o, 0.75);
  EXPECT_TRUE(again.report == run.report);
  const auto text = format_audit_report(run.report);
  EXPECT_NE(text.find("[0.75, 1.00]"), std::string::npos);
  EXPECT_EQ(audit_report_to_json(run.report)["corrupted"]["total"], 18);
}
