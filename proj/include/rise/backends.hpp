#pragma once

// Text-generation providers behind one interface.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "rise/domain.hpp"
#include "rise/random.hpp"
#include "rise/synthetic.hpp"
#include "rise/textproto.hpp"

namespace rise {

struct GenerationRequest {
  std::string sample_id;
  std::string image_ref;
  std::string prompt;
  PromptStage stage = PromptStage::Reasoning;
  double temperature = 0.7;
  int max_tokens = 512;
  std::optional<std::uint64_t> seed{};
};

inline constexpr double kDefaultGenerationTemperature = 0.7;
inline constexpr double kDefaultReconstructionTemperature = 0.0;

inline void check_request(const GenerationRequest& r) {
  if (r.max_tokens <= 0) throw Error(ErrorKind::DomainError, "max_tokens must be positive");
  if (!(r.temperature >= 0)) throw Error(ErrorKind::DomainError, "temperature must be non-negative");
}

class Backend {
 public:
  virtual ~Backend() = default;
  /// Raw model text for the request. Implementations are safe to call concurrently.
  virtual std::string generate(const GenerationRequest& request) const = 0;
  virtual std::string describe() const = 0;
  /// Whether outputs are reproducible from seeds alone.
  virtual bool deterministic() const { return true; }
};

using BackendPtr = std::shared_ptr<const Backend>;

/// Canned responses looked up by exact prompt, then by (sample id, stage).
class MockBackend final : public Backend {
 public:
  MockBackend& add(std::string prompt, std::string response) {
    by_prompt_[std::move(prompt)] = std::move(response);
    return *this;
  }
  MockBackend& add_for_sample(std::string sample_id, PromptStage stage, std::string response) {
    by_sample_[{std::move(sample_id), stage}] = std::move(response);
    return *this;
  }

  std::string generate(const GenerationRequest& request) const override {
    check_request(request);
    if (auto it = by_prompt_.find(request.prompt); it != by_prompt_.end()) return it->second;
    if (auto it = by_sample_.find({request.sample_id, request.stage}); it != by_sample_.end()) return it->second;
    throw Error(ErrorKind::MockMiss, "no canned response for sample '" + request.sample_id + "' (" +
                                         to_string(request.stage) + ")");
  }
  std::string describe() const override { return "mock"; }

 private:
  std::map<std::string, std::string> by_prompt_;
  std::map<std::pair<std::string, PromptStage>, std::string> by_sample_;
};

enum class SyntheticPolicy {
  Full,      // name every cue the image shows
  Random,    // uniform random subset of the candidate pool
  Fidelity,  // each true cue with probability f, each distractor with (1 - f) / 2
};

struct SyntheticBackendOptions {
  SyntheticPolicy policy = SyntheticPolicy::Full;
  double fidelity = 1.0;
};

/// Synthetic provider: reasoning and think-answer requests draw a policy
/// choice from the request seed; reconstruction requests read cues from the
/// prompt. Outputs depend only on (world seed, request seed, prompt).
class SyntheticBackend final : public Backend {
 public:
  SyntheticBackend(std::shared_ptr<const SyntheticWorld> world, SyntheticBackendOptions options = {})
      : world_(std::move(world)), options_(options) {}

  PolicyChoice choose(const std::string& image_ref, std::uint64_t seed) const {
    Rng rng(derive_seed(world_->seed(), "policy", seed));
    PolicyChoice choice;
    choice.template_index = rng.below(reasoning_bank_size(world_->task()));
    const auto truth = world_->cues_in_image(image_ref);
    const auto pool = world_->candidate_pool(image_ref);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const bool present = i < truth.size();
      bool keep = false;
      switch (options_.policy) {
        case SyntheticPolicy::Full: keep = present; break;
        case SyntheticPolicy::Random: keep = rng.bernoulli(0.5); break;
        case SyntheticPolicy::Fidelity:
          keep = rng.bernoulli(present ? options_.fidelity : (1.0 - options_.fidelity) / 2.0);
          break;
      }
      if (keep) choice.cues.push_back(pool[i]);
    }
    return choice;
  }

  std::string generate(const GenerationRequest& request) const override {
    check_request(request);
    const std::uint64_t seed = request.seed.value_or(0);
    switch (request.stage) {
      case PromptStage::Reconstruction: return synthetic_reconstruct(*world_, request.image_ref, request.prompt);
      case PromptStage::Reasoning: {
        auto sample = world_->sample_from_ref(request.sample_id, request.image_ref);
        return synthetic_reason(sample, choose(request.image_ref, seed));
      }
      case PromptStage::R1: {
        auto sample = world_->sample_from_ref(request.sample_id, request.image_ref);
        auto choice = choose(request.image_ref, seed);
        return "<think>" + synthetic_reason(sample, choice) + "</think><answer>" +
               render_annotation(world_->annotate(choice.cues), world_->task()) + "</answer>";
      }
    }
    return {};
  }

  std::string describe() const override { return "synthetic(world_seed=" + std::to_string(world_->seed()) + ")"; }

  const SyntheticWorld& world() const { return *world_; }

 private:
  std::shared_ptr<const SyntheticWorld> world_;
  SyntheticBackendOptions options_;
};

}  // namespace rise
