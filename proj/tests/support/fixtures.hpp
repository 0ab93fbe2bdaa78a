#pragma once

#include <array>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "rise/domain.hpp"
#include "rise/prompts.hpp"
#include "rise/random.hpp"

namespace fx {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    for (;;) {
      path_ = fs::temp_directory_path() /
              ("rise-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
      if (fs::create_directories(path_)) break;
    }
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  out << body;
}

inline rise::TaskKind emotion_task() { return rise::ClassificationTask{rise::emotion6_categories()}; }
inline rise::TaskKind det_task(double w = 640, double h = 480) { return rise::DetectionTask{w, h}; }

inline rise::Distribution dist(const std::vector<std::string>& cats, const std::vector<double>& p) {
  rise::Distribution d;
  for (std::size_t i = 0; i < cats.size(); ++i) d.probs[cats[i]] = p[i];
  return d;
}

inline std::vector<double> values(const rise::Distribution& d, const std::vector<std::string>& cats) {
  std::vector<double> v;
  for (const auto& c : cats) v.push_back(d.probs.at(c));
  return v;
}

// Dirichlet(1) draw, optionally with a few exact zeros.
inline std::vector<double> random_simplex(rise::Rng& rng, std::size_t k, bool allow_zeros = true) {
  auto w = rng.dirichlet_uniform(k);
  if (allow_zeros && rng.bernoulli(0.2)) {
    w[rng.below(k)] = 0.0;
    double s = 0;
    for (double v : w) s += v;
    if (s == 0) w[0] = s = 1;
    for (auto& v : w) v /= s;
  }
  return w;
}

inline rise::Box random_box(rise::Rng& rng, double W, double H, bool integral) {
  double a = rng.uniform(0, W), b = rng.uniform(0, W), c = rng.uniform(0, H), d = rng.uniform(0, H);
  if (integral) {
    a = std::floor(a), b = std::floor(b), c = std::floor(c), d = std::floor(d);
  }
  if (a > b) std::swap(a, b);
  if (c > d) std::swap(c, d);
  if (a == b) b += 1;
  if (c == d) d += 1;
  return rise::Box{a, c, b, d};
}

// Reward histogram fixtures shaped like the published distributions: counts
// per bin [0,.25) [.25,.5) [.5,.75) [.75,1]. Only the top-bin counts appear in
// the source; the lower bins are the integers that round to its percentages.
struct HistogramFixture {
  std::string name;
  std::array<std::size_t, 4> counts;
  std::array<int, 4> percent;  // published, rounded
};

inline const HistogramFixture& emotion6_fixture() {
  static const HistogramFixture f{"emotion6", {28, 111, 679, 568}, {2, 8, 49, 41}};
  return f;
}
inline const HistogramFixture& lisa_fixture() {
  static const HistogramFixture f{"lisa", {35, 38, 46, 231}, {10, 11, 13, 66}};
  return f;
}

// Rewards spread evenly inside each bin, interleaved so bins are not contiguous.
inline std::vector<double> fixture_rewards(const HistogramFixture& f) {
  static const double lo[4] = {0.0, 0.25, 0.5, 0.75};
  std::vector<double> out;
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t k = 0; k < f.counts[b]; ++k)
      out.push_back(lo[b] + 0.25 * static_cast<double>(k) / static_cast<double>(f.counts[b]));
  rise::Rng rng(rise::derive_seed(17, f.name));
  rng.shuffle(out);
  return out;
}

inline std::vector<rise::RiseRecord> fixture_records(const HistogramFixture& f) {
  const auto rewards = fixture_rewards(f);
  const auto cats = rise::emotion6_categories();
  std::vector<rise::RiseRecord> out;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    rise::RiseRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "%s-%04zu", f.name.c_str(), i);
    r.sample_id = id;
    r.image_ref = std::string("img/") + id + ".jpg";
    r.annotation = dist(cats, {0.1, 0.1, 0.1, 0.4, 0.1, 0.1, 0.1});
    r.cot = "The scene shows quiet streets and soft evening colors that set the tone.";
    r.reconstruction = r.annotation;
    r.reward = rewards[i];
    r.breakdown.similarity = rewards[i];
    r.breakdown.format_ok = true;
    r.breakdown.composite = rewards[i];
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace fx

namespace fx {
inline std::vector<double> rewards_of_records(const std::vector<rise::RiseRecord>& rs) {
  std::vector<double> out;
  for (const auto& r : rs) out.push_back(r.reward);
  return out;
}
}  // namespace fx
