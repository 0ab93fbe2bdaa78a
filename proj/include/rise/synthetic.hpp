#pragma once

// Synthetic cue-world: an image is a set of cue tags, and a fixed world rule
// maps any cue set to an annotation. Reasoning names cues, reconstruction
// reads the named cues back and applies the rule, so the closed loop runs
// without a vision model.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "rise/domain.hpp"
#include "rise/random.hpp"
#include "rise/textproto.hpp"

namespace rise {

inline constexpr std::string_view kSyntheticScheme = "synth://";

struct CueDef {
  std::string tag;
  std::size_t category = 0;  // classification: category the cue supports
  Box box;                   // detection: region the cue points at
};

struct SyntheticSample {
  std::string id;
  std::vector<std::string> cue_set;  // hidden ground truth, image order
  TaskKind task;
  Annotation annotation;
};

/// A policy action: which reasoning template to use and which candidate cues to name.
struct PolicyChoice {
  std::size_t template_index = 0;
  std::vector<std::string> cues;
};

struct WorldOptions {
  double base_weight = 0.001;    // mass every cue gives every category
  std::size_t distractors = 2;   // non-present cues in each sample's candidate pool
};

namespace detail {

inline const std::vector<std::string>& classification_cue_tags() {
  static const std::vector<std::string> tags{
      "smiling-faces",  "bright-colors",  "festive-lights", "open-arms",       "warm-sunlight",  "balloons",
      "dancing-figures", "flower-garden", "clenched-fists", "shouting-crowd",  "broken-glass",   "red-flames",
      "stormy-sky",     "dark-shadows",   "eerie-figures",  "empty-corridor",  "rotting-food",   "murky-water",
      "crumpled-trash", "insect-swarm",   "tearful-eyes",   "rainy-window",    "wilted-flowers", "lonely-bench",
      "fireworks-burst", "startled-face", "sudden-splash",  "confetti-shower", "plain-wall",     "office-desk",
      "grey-pavement",  "parked-car",     "foggy-field",    "candle-glow",     "stone-statue",   "wooden-fence",
      "snowy-road",     "city-skyline",   "ocean-waves",    "mountain-trail"};
  return tags;
}

inline const std::vector<std::string>& detection_cue_tags() {
  static const std::vector<std::string> tags{
      "striped-fabric", "tinted-lens",   "metal-frame",    "woven-strap",   "glossy-surface", "rubber-sole",
      "leather-texture", "curved-handle", "plastic-cap",   "round-rim",     "knitted-pattern", "wooden-grain",
      "folded-edge",    "shiny-buckle",  "fuzzy-trim",     "ribbed-collar", "painted-logo",   "rusted-hinge",
      "glass-pane",     "cotton-weave",  "velvet-lining",  "chrome-trim",   "braided-cord",   "ceramic-glaze"};
  return tags;
}

inline const std::vector<std::string>& reasoning_bank(TaskTag task) {
  static const std::vector<std::string> classification{
      "The scene shows {cues}. Together these visual cues shape the overall atmosphere of the image.",
      "Looking closely, one notices {cues}, and these details set the tone of the picture.",
      "Several elements stand out in the image: {cues}. Their combination conveys the mood of the scene.",
      "Key visual evidence includes {cues}; the arrangement and surrounding context reinforce the impression."};
  static const std::vector<std::string> detection{
      "The region contains an object showing {cues}, which matches the described target.",
      "Inside the region one can see {cues}; these features identify the target object.",
      "The object is recognizable by {cues}, consistent with the target description.",
      "Evidence for the target comes from {cues} visible within the region."};
  return task == TaskTag::Classification ? classification : detection;
}

inline std::string cue_phrase(const std::vector<std::string>& cues) {
  if (cues.empty()) return "only general, unremarkable details";
  if (cues.size() == 1) return cues.front();
  std::string out;
  for (std::size_t i = 0; i + 1 < cues.size(); ++i) out += (i ? ", " : "") + cues[i];
  return out + " and " + cues.back();
}

inline bool tag_boundary(std::string_view s, std::size_t pos) {
  return pos >= s.size() || !(text::is_alnum(s[pos]) || s[pos] == '-' || s[pos] == '_');
}

}  // namespace detail

class SyntheticWorld {
 public:
  SyntheticWorld(TaskKind task, std::uint64_t seed, WorldOptions options = {})
      : task_(std::move(task)), seed_(seed), options_(options) {
    check_task(task_);
    Rng rng(derive_seed(seed_, "world"));
    if (is_classification(task_)) {
      auto tags = detail::classification_cue_tags();
      rng.shuffle(tags);
      const std::size_t ncat = categories_of(task_).size();
      for (std::size_t i = 0; i < tags.size(); ++i) vocabulary_.push_back({tags[i], i % ncat, {}});
    } else {
      const auto& det = std::get<DetectionTask>(task_);
      auto tags = detail::detection_cue_tags();
      rng.shuffle(tags);
      for (const auto& tag : tags) {
        const double w = std::round(rng.uniform(0.2, 0.45) * det.image_width);
        const double h = std::round(rng.uniform(0.2, 0.45) * det.image_height);
        const double x = std::round(rng.uniform(0.0, det.image_width - w));
        const double y = std::round(rng.uniform(0.0, det.image_height - h));
        vocabulary_.push_back({tag, 0, Box{x, y, x + w, y + h}});
      }
    }
    for (std::size_t i = 0; i < vocabulary_.size(); ++i) index_[vocabulary_[i].tag] = i;
  }

  const TaskKind& task() const { return task_; }
  std::uint64_t seed() const { return seed_; }
  const WorldOptions& options() const { return options_; }
  const std::vector<CueDef>& vocabulary() const { return vocabulary_; }
  bool knows(const std::string& tag) const { return index_.count(tag) != 0; }

  /// World rule. Classification: normalized sum of cue weight vectors (each
  /// cue gives base mass to every category and unit mass to its own; an empty
  /// set behaves like a single cue for the last category),
  /// quantized to exact 6-decimal values. Detection: coordinate-wise mean of
  /// the cue boxes, rounded to whole pixels. Order of `cues` is irrelevant.
  Annotation annotate(const std::vector<std::string>& cues) const {
    std::vector<std::size_t> ids;
    for (const auto& c : cues) {
      auto it = index_.find(c);
      if (it == index_.end()) throw Error(ErrorKind::DomainError, "unknown cue '" + c + "'");
      ids.push_back(it->second);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (is_classification(task_)) return Annotation{classification_rule(ids)};
    return Annotation{detection_rule(ids)};
  }

  /// Cue tags mentioned anywhere in `text`, in vocabulary order.
  std::vector<std::string> extract_cues(std::string_view text) const {
    std::vector<std::string> out;
    for (const auto& cue : vocabulary_) {
      for (std::size_t p = text.find(cue.tag); p != std::string_view::npos; p = text.find(cue.tag, p + 1)) {
        if ((p == 0 || detail::tag_boundary(text, p - 1)) && detail::tag_boundary(text, p + cue.tag.size())) {
          out.push_back(cue.tag);
          break;
        }
      }
    }
    return out;
  }

  static std::string image_ref_for(const std::vector<std::string>& cues) {
    std::string ref(kSyntheticScheme);
    for (std::size_t i = 0; i < cues.size(); ++i) ref += (i ? "+" : "") + cues[i];
    return ref;
  }

  /// The cues an image reference shows; throws DomainError for non-synthetic refs.
  std::vector<std::string> cues_in_image(std::string_view image_ref) const {
    if (image_ref.substr(0, kSyntheticScheme.size()) != kSyntheticScheme)
      throw Error(ErrorKind::DomainError, "not a synthetic image reference: " + std::string(image_ref));
    std::vector<std::string> cues;
    auto body = image_ref.substr(kSyntheticScheme.size());
    if (body.empty()) return cues;
    for (auto& tag : text::split(body, '+')) {
      if (!knows(tag)) throw Error(ErrorKind::DomainError, "image shows unknown cue '" + tag + "'");
      cues.push_back(tag);
    }
    return cues;
  }

  /// True cues followed by a deterministic set of absent distractor cues.
  std::vector<std::string> candidate_pool(std::string_view image_ref) const {
    auto pool = cues_in_image(image_ref);
    std::set<std::string> present(pool.begin(), pool.end());
    std::vector<std::string> others;
    for (const auto& c : vocabulary_)
      if (!present.count(c.tag)) others.push_back(c.tag);
    Rng rng(derive_seed(seed_, image_ref, 0xD157));
    rng.shuffle(others);
    for (std::size_t i = 0; i < options_.distractors && i < others.size(); ++i) pool.push_back(others[i]);
    return pool;
  }

  SyntheticSample sample_from_ref(std::string id, std::string_view image_ref) const {
    auto cues = cues_in_image(image_ref);
    auto ann = annotate(cues);
    return SyntheticSample{std::move(id), std::move(cues), task_, std::move(ann)};
  }

  /// Draws `count` samples with `cues_per_sample` cues each. Classification
  /// cues come from distinct categories while enough categories exist.
  std::vector<SyntheticSample> generate(std::size_t count, std::size_t cues_per_sample, std::uint64_t seed) const {
    Rng rng(derive_seed(seed, "samples"));
    std::vector<SyntheticSample> out;
    for (std::size_t i = 0; i < count; ++i) {
      std::vector<std::string> cues;
      std::vector<std::size_t> order(vocabulary_.size());
      for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
      rng.shuffle(order);
      std::set<std::size_t> used_categories;
      const bool distinct = is_classification(task_) && categories_of(task_).size() >= cues_per_sample;
      for (std::size_t k : order) {
        if (cues.size() == cues_per_sample) break;
        if (distinct && !used_categories.insert(vocabulary_[k].category).second) continue;
        cues.push_back(vocabulary_[k].tag);
      }
      char id[32];
      std::snprintf(id, sizeof id, "syn-%04zu", i);
      out.push_back(SyntheticSample{id, cues, task_, annotate(cues)});
    }
    return out;
  }

  Sample to_sample(const SyntheticSample& s) const {
    std::optional<std::string> target;
    if (is_detection(task_)) target = "the object described by its distinctive features";
    return Sample{s.id, image_ref_for(s.cue_set), task_, s.annotation, target};
  }

 private:
  Distribution classification_rule(const std::vector<std::size_t>& ids) const {
    const auto& cats = categories_of(task_);
    const std::size_t n = cats.size();
    std::vector<double> mass(n, 0.0);
    if (ids.empty()) {
      // no evidence: the reconstructor falls back to the last category
      for (auto& m : mass) m += options_.base_weight;
      mass[n - 1] += 1.0;
    }
    for (std::size_t id : ids) {
      for (auto& m : mass) m += options_.base_weight;
      mass[vocabulary_[id].category] += 1.0;
    }
    double total = 0;
    for (double m : mass) total += m;
    // exact micro-unit quantization summing to one million
    std::vector<long long> micro(n);
    long long sum = 0;
    std::size_t largest = 0;
    for (std::size_t k = 0; k < n; ++k) {
      micro[k] = std::llround(mass[k] / total * 1e6);
      sum += micro[k];
      if (micro[k] > micro[largest]) largest = k;
    }
    micro[largest] += 1000000 - sum;
    Distribution d;
    for (std::size_t k = 0; k < n; ++k) d.probs[cats[k]] = static_cast<double>(micro[k]) / 1e6;
    return d;
  }

  BoxSet detection_rule(const std::vector<std::size_t>& ids) const {
    const auto& det = std::get<DetectionTask>(task_);
    if (ids.empty()) {
      const double w = det.image_width, h = det.image_height;
      return BoxSet{{Box{std::round(w / 4), std::round(h / 4), std::round(3 * w / 4), std::round(3 * h / 4)}}};
    }
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    for (std::size_t id : ids) {
      const Box& b = vocabulary_[id].box;
      x1 += b.x1;
      y1 += b.y1;
      x2 += b.x2;
      y2 += b.y2;
    }
    const double n = static_cast<double>(ids.size());
    return BoxSet{{Box{std::round(x1 / n), std::round(y1 / n), std::round(x2 / n), std::round(y2 / n)}}};
  }

  TaskKind task_;
  std::uint64_t seed_;
  WorldOptions options_;
  std::vector<CueDef> vocabulary_;
  std::map<std::string, std::size_t> index_;
};

inline std::size_t reasoning_bank_size(const TaskKind& task) { return detail::reasoning_bank(tag_of(task)).size(); }

/// Leak-free narrative naming exactly the chosen cues.
inline std::string synthetic_reason(const SyntheticSample& sample, const PolicyChoice& choice) {
  const auto& bank = detail::reasoning_bank(tag_of(sample.task));
  if (choice.template_index >= bank.size())
    throw Error(ErrorKind::TemplateError, "unknown reasoning template t" + std::to_string(choice.template_index));
  std::string body = bank[choice.template_index];
  const auto pos = body.find("{cues}");
  body.replace(pos, 6, detail::cue_phrase(choice.cues));
  return body;
}

/// Reads the cues named in `cot`, applies the world rule and wraps the
/// canonical rendering in answer tags.
inline std::string synthetic_reconstruct(const SyntheticWorld& world, std::string_view sample_image_ref,
                                         std::string_view cot) {
  world.cues_in_image(sample_image_ref);  // must be a synthetic image; only the named cues are used
  const auto cues = world.extract_cues(cot);
  return "<answer>" + render_annotation(world.annotate(cues), world.task()) + "</answer>";
}

}  // namespace rise
