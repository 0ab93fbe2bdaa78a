#pragma once

// Independent reference computations. Written directly from the formulas,
// without the library's floor/compensation helpers.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "rise/domain.hpp"

namespace oracle {

inline double floored(double v) { return v < 1e-10 ? 1e-10 : v; }

// KL(p || q), natural log.
inline double kld(const std::vector<double>& p, const std::vector<double>& q) {
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    s += static_cast<long double>(floored(p[i])) * std::log(static_cast<long double>(floored(p[i])) / floored(q[i]));
  return static_cast<double>(s);
}

inline double mse(const std::vector<double>& p, const std::vector<double>& q) {
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (static_cast<long double>(p[i]) - q[i]) * (p[i] - q[i]);
  return static_cast<double>(s / p.size());
}

inline double classification_similarity(const std::vector<double>& truth, const std::vector<double>& recon) {
  long double sum = 0;
  for (double v : recon) sum += v;
  const double reg = std::exp(-std::fabs(std::log(static_cast<double>(sum)) / std::log(10.0)));
  return std::min(1.0, std::exp(-(kld(truth, recon) + mse(truth, recon))) * reg);
}

// Entropy form: H(m) - (H(p) + H(q)) / 2.
inline double jsd(const std::vector<double>& p, const std::vector<double>& q) {
  auto h = [](const std::vector<double>& v) {
    long double s = 0;
    for (double x : v)
      if (x > 0) s -= static_cast<long double>(x) * std::log(static_cast<long double>(x));
    return s;
  };
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return static_cast<double>(h(m) - 0.5L * (h(p) + h(q)));
}

// IoU of integer boxes by counting unit cells.
inline double cell_iou(const rise::Box& a, const rise::Box& b) {
  const int lo_x = static_cast<int>(std::min(a.x1, b.x1)), hi_x = static_cast<int>(std::max(a.x2, b.x2));
  const int lo_y = static_cast<int>(std::min(a.y1, b.y1)), hi_y = static_cast<int>(std::max(a.y2, b.y2));
  long inter = 0, uni = 0;
  for (int y = lo_y; y < hi_y; ++y)
    for (int x = lo_x; x < hi_x; ++x) {
      const bool in_a = x >= a.x1 && x < a.x2 && y >= a.y1 && y < a.y2;
      const bool in_b = x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double plain_iou(const rise::Box& a, const rise::Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0 || h <= 0) return 0.0;
  const double inter = w * h;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni <= 0 ? 0.0 : inter / uni;
}

// Maximum total IoU over every injective pairing, summed in ground-truth
// order so the float result is comparable bit for bit.
template <class IouFn>
double brute_force_total(const std::vector<rise::Box>& gt, const std::vector<rise::Box>& pred, IouFn iou) {
  const std::size_t n = std::max(gt.size(), pred.size());
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0;
  do {
    double total = 0;
    for (std::size_t i = 0; i < gt.size(); ++i)
      if (perm[i] < pred.size()) total += iou(gt[i], pred[perm[i]]);
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace oracle
