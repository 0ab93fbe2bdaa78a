#include <gtest/gtest.h>

#include "rise/reward.hpp"
#include "support/fixtures.hpp"
#include "support/gating_matrix.hpp"

using namespace rise;

TEST(CotReward, GatingMatrix) {
  const auto cases = gating::build();
  ASSERT_EQ(cases.size(), 60u);
  for (const auto& c : cases) {
    auto r = rise_cot_reward(c.sample, c.cot, c.reconstruction);
    EXPECT_EQ(r.leak_detected, c.expect_leak) << c.label;
    EXPECT_EQ(r.format_ok, c.expect_format) << c.label;
    EXPECT_NEAR(r.similarity, c.expect_similarity, 1e-9) << c.label;
    EXPECT_EQ(r.composite, c.gate_open ? r.similarity : 0.0) << c.label;
    EXPECT_TRUE(r.gating_consistent()) << c.label;
  }
}

TEST(CotReward, ReasonCodes) {
  const auto task = fx::emotion_task();
  Sample s{"s", "i", task, fx::dist(categories_of(task), {0.1, 0.1, 0.1, 0.4, 0.1, 0.1, 0.1}), {}};
  const std::string good = "<answer>" + render_annotation(s.annotation, task) + "</answer>";
  const std::string cot = "Children laugh together around a bright fountain in the park.";
  EXPECT_EQ(rise_cot_reward(s, cot, good).reason, RewardReason::Similarity);
  EXPECT_EQ(rise_cot_reward(s, cot, "no tags").reason, RewardReason::Parse);
  EXPECT_EQ(rise_cot_reward(s, "ok", good).reason, RewardReason::Format);
  EXPECT_EQ(rise_cot_reward(s, cot + " joy: 0.4", good).reason, RewardReason::Leak);
  auto miss = rise_cot_reward(s, cot, "<answer>{'joy': 1}</answer>");
  EXPECT_EQ(miss.composite, 0.0);
  EXPECT_FALSE(miss.format_ok);
  std::optional<Annotation> parsed;
  rise_cot_reward(s, cot, good, &parsed);
  EXPECT_TRUE(parsed.has_value());
}

TEST(CotReward, InvalidReconstructionBoxFailsFormat) {
  Sample s{"d", "i", fx::det_task(), BoxSet{{Box{0, 0, 10, 10}}}, {}};
  auto r = rise_cot_reward(s, "The woven strap and metal frame mark the bag.", "<answer>[]</answer>");
  EXPECT_FALSE(r.format_ok);
  EXPECT_EQ(r.composite, 0.0);
}

TEST(R1Reward, FormatOnlyGate) {
  Sample s{"d", "i", fx::det_task(), BoxSet{{Box{0, 0, 10, 10}}}, {}};
  auto ok = rise_r1_reward(s, "<think>The strap sits at [0, 0, 10, 10].</think><answer>[0, 0, 10, 10]</answer>");
  EXPECT_TRUE(ok.format_ok);
  EXPECT_FALSE(ok.leak_detected);  // leakage is not part of the think-answer reward
  EXPECT_DOUBLE_EQ(ok.composite, 1.0);
  auto nothink = rise_r1_reward(s, "<answer>[0, 0, 10, 10]</answer>");
  EXPECT_EQ(nothink.composite, 0.0);
  EXPECT_DOUBLE_EQ(nothink.similarity, 1.0);
  EXPECT_EQ(nothink.reason, RewardReason::Format);
}

TEST(Histogram, EdgeRule) {
  EXPECT_EQ(reward_bin(0.0), 0u);
  EXPECT_EQ(reward_bin(0.25), 1u);
  EXPECT_EQ(reward_bin(0.7499999), 2u);
  EXPECT_EQ(reward_bin(0.75), 3u);
  EXPECT_EQ(reward_bin(1.0), 3u);
  EXPECT_THROW(reward_bin(1.0000001), Error);
  EXPECT_THROW(reward_bin(-0.1), Error);
  EXPECT_THROW(reward_bin(NAN), Error);
}

TEST(Histogram, ReferenceFixtures) {
  for (const auto* f : {&fx::emotion6_fixture(), &fx::lisa_fixture()}) {
    const auto h = reward_histogram(fx::fixture_rewards(*f));
    EXPECT_EQ(h.counts, f->counts) << f->name;
    for (std::size_t b = 0; b < 4; ++b) EXPECT_EQ(std::lround(h.percentages[b]), f->percent[b]) << f->name << b;
    const auto kept = filter_high_subset(fx::fixture_records(*f), 0.75);
    EXPECT_EQ(kept.kept.size(), f->counts[3]);
    EXPECT_EQ(kept.total, h.total);
  }
}

TEST(Filter, PreservesOrderAndThreshold) {
  std::vector<RiseRecord> rs(4);
  const double rewards[4] = {0.9, 0.2, 0.75, 0.7499};
  for (int i = 0; i < 4; ++i) {
    rs[i].sample_id = std::to_string(i);
    rs[i].reward = rewards[i];
  }
  auto f = filter_high_subset(rs, 0.75);
  ASSERT_EQ(f.kept.size(), 2u);
  EXPECT_EQ(f.kept[0].sample_id, "0");
  EXPECT_EQ(f.kept[1].sample_id, "2");
}
