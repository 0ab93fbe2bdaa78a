#pragma once

// Group-relative advantages, best-of-group retention and a tabular softmax
// policy trained against the closed-loop reward on the synthetic world.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rise/domain.hpp"
#include "rise/random.hpp"
#include "rise/reward.hpp"
#include "rise/synthetic.hpp"

namespace rise {

inline constexpr double kAdvantageEpsilon = 1e-8;
inline constexpr std::size_t kDefaultGroupSize = 8;

struct GroupMember {
  std::string cot;
  std::string reconstruction_text;
  std::optional<Annotation> reconstruction;
  RewardBreakdown breakdown;
};

struct Group {
  std::string sample_id;
  std::vector<GroupMember> members;
  std::vector<double> advantages;

  std::vector<double> rewards() const {
    std::vector<double> r;
    r.reserve(members.size());
    for (const auto& m : members) r.push_back(m.breakdown.composite);
    return r;
  }
};

/// (r - mean) / (population std + 1e-8); all zeros for constant rewards.
inline std::vector<double> compute_group_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) throw Error(ErrorKind::DomainError, "group advantages need at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  std::vector<double> out(rewards.size(), 0.0);
  const bool constant = std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards.front(); });
  if (constant) return out;
  const double denom = std::sqrt(var) + kAdvantageEpsilon;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / denom;
  return out;
}

/// Member with the highest composite reward (lowest index on ties).
inline std::size_t best_member_index(const Group& group) {
  if (group.members.empty()) throw Error(ErrorKind::DomainError, "empty group");
  std::size_t best = 0;
  for (std::size_t i = 1; i < group.members.size(); ++i)
    if (group.members[i].breakdown.composite > group.members[best].breakdown.composite) best = i;
  return best;
}

inline std::pair<std::size_t, RiseRecord> select_best_of_group(const Group& group, const Sample& sample) {
  const std::size_t idx = best_member_index(group);
  const auto& m = group.members[idx];
  RiseRecord rec;
  rec.sample_id = sample.id;
  rec.image_ref = sample.image_ref;
  rec.annotation = sample.annotation;
  rec.target_desc = sample.target_desc;
  rec.cot = m.cot;
  rec.reconstruction = m.reconstruction;
  rec.reward = m.breakdown.composite;
  rec.breakdown = m.breakdown;
  return {idx, std::move(rec)};
}

// ---------------------------------------------------------------- toy policy

/// Tabular softmax policy: one logit vector per context bucket.
class ToyPolicy {
 public:
  ToyPolicy(double learning_rate, std::uint64_t seed) : learning_rate_(learning_rate), seed_(seed) {}

  double learning_rate() const { return learning_rate_; }
  std::uint64_t seed() const { return seed_; }

  bool has_bucket(const std::string& bucket) const { return logits_.count(bucket) != 0; }
  void add_bucket(const std::string& bucket, std::vector<double> initial) { logits_[bucket] = std::move(initial); }
  const std::vector<double>& logits(const std::string& bucket) const {
    auto it = logits_.find(bucket);
    if (it == logits_.end()) throw Error(ErrorKind::DomainError, "unknown policy bucket '" + bucket + "'");
    return it->second;
  }
  std::vector<double>& mutable_logits(const std::string& bucket) {
    auto it = logits_.find(bucket);
    if (it == logits_.end()) throw Error(ErrorKind::DomainError, "unknown policy bucket '" + bucket + "'");
    return it->second;
  }

  std::vector<double> probabilities(const std::string& bucket) const {
    const auto& z = logits(bucket);
    const double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0;
    for (std::size_t i = 0; i < z.size(); ++i) sum += (p[i] = std::exp(z[i] - mx));
    for (auto& v : p) v /= sum;
    return p;
  }

  std::size_t sample(const std::string& bucket, Rng& rng) const {
    const auto p = probabilities(bucket);
    double u = rng.uniform(), acc = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) return i;
    }
    return p.size() - 1;
  }

  const std::map<std::string, std::vector<double>>& buckets() const { return logits_; }

 private:
  double learning_rate_;
  std::uint64_t seed_;
  std::map<std::string, std::vector<double>> logits_;
};

/// Score-function ascent on the group surrogate. For each member j with
/// choice c_j and advantage a_j, every logit k in the bucket moves by
/// lr * a_j * ([k == c_j] - p_k), with p taken before the update.
inline ToyPolicy toy_policy_update(ToyPolicy policy, const Group& group, const std::vector<std::size_t>& chosen,
                                   const std::string& bucket) {
  if (chosen.size() != group.members.size() || group.advantages.size() != group.members.size())
    throw Error(ErrorKind::DomainError, "chosen ids, members and advantages must have equal length");
  auto& z = policy.mutable_logits(bucket);
  for (std::size_t c : chosen)
    if (c >= z.size()) throw Error(ErrorKind::DomainError, "invalid choice id " + std::to_string(c));
  const auto p = policy.probabilities(bucket);
  const double lr = policy.learning_rate();
  for (std::size_t j = 0; j < chosen.size(); ++j) {
    const double a = group.advantages[j];
    if (a == 0.0) continue;
    for (std::size_t k = 0; k < z.size(); ++k) z[k] += lr * a * ((k == chosen[j] ? 1.0 : 0.0) - p[k]);
  }
  for (double v : z)
    if (!std::isfinite(v)) throw Error(ErrorKind::DomainError, "policy logits diverged");
  return policy;
}

inline ToyPolicy toy_policy_update(ToyPolicy policy, const Group& group, const std::vector<std::size_t>& chosen) {
  return toy_policy_update(std::move(policy), group, chosen, group.sample_id);
}

/// Factored choice for one sample: a template bucket plus one omit/name
/// bucket per candidate cue.
struct ChoiceSpace {
  std::size_t templates = 0;
  std::size_t pool = 0;

  static std::string template_bucket(const std::string& sample_id) { return sample_id + "/template"; }
  static std::string cue_bucket(const std::string& sample_id, std::size_t i) {
    return sample_id + "/cue" + std::to_string(i);
  }

  PolicyChoice decode(std::size_t template_index, const std::vector<std::size_t>& named,
                      const std::vector<std::string>& candidates) const {
    PolicyChoice c;
    c.template_index = template_index;
    for (std::size_t i = 0; i < pool; ++i)
      if (named[i]) c.cues.push_back(candidates[i]);
    return c;
  }
};

struct ToyTrainConfig {
  std::size_t steps = 300;
  std::size_t group_size = kDefaultGroupSize;
  std::uint64_t seed = 7;
  std::size_t minibatch = 0;  // 0 = every sample each step
  double learning_rate = 0.5;
  // Initial logit penalty per named cue: a fresh policy favors terse, vague narratives.
  double vagueness = 1.0;
};

struct ToyTrainResult {
  std::vector<double> curve;              // per-step mean best-of-group reward
  std::vector<double> mean_member_reward;  // per-step mean over every sampled member
  ToyPolicy policy{0.0, 0};
  std::map<std::string, RiseRecord> best;  // last best-of-group record per sample
};

/// Trailing moving average over at most `window` points.
inline std::vector<double> smooth_curve(const std::vector<double>& curve, std::size_t window) {
  std::vector<double> out(curve.size());
  double sum = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    sum += curve[i];
    if (i >= window) sum -= curve[i - window];
    out[i] = sum / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

inline ToyTrainResult train_toy_policy(const SyntheticWorld& world, const std::vector<SyntheticSample>& corpus,
                                       const ToyTrainConfig& cfg) {
  if (cfg.steps < 1) throw Error(ErrorKind::DomainError, "steps must be >= 1");
  if (cfg.group_size < 2) throw Error(ErrorKind::DomainError, "group size must be >= 2");
  if (corpus.empty()) throw Error(ErrorKind::DomainError, "empty corpus");

  ToyTrainResult result;
  result.policy = ToyPolicy(cfg.learning_rate, cfg.seed);
  Rng rng(derive_seed(cfg.seed, "toy-train"));

  struct Context {
    Sample sample;
    std::vector<std::string> pool;
    ChoiceSpace space;
  };
  std::vector<Context> contexts;
  for (const auto& s : corpus) {
    Context c{world.to_sample(s), {}, {}};
    c.pool = world.candidate_pool(c.sample.image_ref);
    c.space = ChoiceSpace{reasoning_bank_size(world.task()), c.pool.size()};
    result.policy.add_bucket(ChoiceSpace::template_bucket(s.id), std::vector<double>(c.space.templates, 0.0));
    for (std::size_t i = 0; i < c.pool.size(); ++i)
      result.policy.add_bucket(ChoiceSpace::cue_bucket(s.id, i), {0.0, -cfg.vagueness});
    contexts.push_back(std::move(c));
  }

  std::vector<std::size_t> order(contexts.size());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t batch = contexts.size();
    if (cfg.minibatch > 0 && cfg.minibatch < contexts.size()) {
      rng.shuffle(order);
      batch = cfg.minibatch;
      std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(batch));
    }
    double best_sum = 0, member_sum = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      const Context& ctx = contexts[order[b]];
      const auto& synthetic = corpus[order[b]];
      Group group;
      group.sample_id = synthetic.id;
      std::vector<std::size_t> chosen_template;
      std::vector<std::vector<std::size_t>> chosen_cue(ctx.pool.size());
      for (std::size_t g = 0; g < cfg.group_size; ++g) {
        const std::size_t t = result.policy.sample(ChoiceSpace::template_bucket(synthetic.id), rng);
        std::vector<std::size_t> named(ctx.pool.size());
        for (std::size_t i = 0; i < ctx.pool.size(); ++i) {
          named[i] = result.policy.sample(ChoiceSpace::cue_bucket(synthetic.id, i), rng);
          chosen_cue[i].push_back(named[i]);
        }
        chosen_template.push_back(t);
        GroupMember m;
        m.cot = synthetic_reason(synthetic, ctx.space.decode(t, named, ctx.pool));
        m.reconstruction_text = synthetic_reconstruct(world, ctx.sample.image_ref, m.cot);
        m.breakdown = rise_cot_reward(ctx.sample, m.cot, m.reconstruction_text, &m.reconstruction);
        member_sum += m.breakdown.composite;
        group.members.push_back(std::move(m));
      }
      group.advantages = compute_group_advantages(group.rewards());
      auto [idx, record] = select_best_of_group(group, ctx.sample);
      best_sum += record.reward;
      result.best[synthetic.id] = std::move(record);
      result.policy = toy_policy_update(std::move(result.policy), group, chosen_template,
                                        ChoiceSpace::template_bucket(synthetic.id));
      for (std::size_t i = 0; i < ctx.pool.size(); ++i)
        result.policy = toy_policy_update(std::move(result.policy), group, chosen_cue[i],
                                          ChoiceSpace::cue_bucket(synthetic.id, i));
    }
    result.curve.push_back(best_sum / static_cast<double>(batch));
    result.mean_member_reward.push_back(member_sum / static_cast<double>(batch * cfg.group_size));
  }
  return result;
}

}  // namespace rise
