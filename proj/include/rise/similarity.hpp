#pragma once

// Annotation similarity and divergences.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "rise/domain.hpp"

namespace rise {

inline constexpr double kProbabilityFloor = 1e-10;

namespace detail {

inline void require_same_categories(const Distribution& p, const Distribution& q) {
  if (p.probs.size() != q.probs.size())
    throw Error(ErrorKind::DomainError, "distributions have different category sets");
  auto it = q.probs.begin();
  for (const auto& [name, v] : p.probs) {
    if (it->first != name) throw Error(ErrorKind::DomainError, "distributions have different category sets");
    ++it;
  }
}

inline double floor_prob(double v) { return std::max(v, kProbabilityFloor); }

// Neumaier compensated sum.
template <class Range>
double stable_sum(const Range& values) {
  double sum = 0, comp = 0;
  for (double v : values) {
    double t = sum + v;
    if (std::abs(sum) >= std::abs(v))
      comp += (sum - t) + v;
    else
      comp += (v - t) + sum;
    sum = t;
  }
  return sum + comp;
}

}  // namespace detail

/// Kullback-Leibler divergence, natural log, operands floored at 1e-10.
inline double kld(const Distribution& p, const Distribution& q) {
  detail::require_same_categories(p, q);
  double sum = 0;
  auto it = q.probs.begin();
  for (const auto& [name, pv] : p.probs) {
    const double a = detail::floor_prob(pv), b = detail::floor_prob(it->second);
    sum += a * std::log(a / b);
    ++it;
  }
  return sum;
}

inline double mse(const Distribution& p, const Distribution& q) {
  detail::require_same_categories(p, q);
  double sum = 0;
  auto it = q.probs.begin();
  for (const auto& [name, pv] : p.probs) {
    const double d = pv - it->second;
    sum += d * d;
    ++it;
  }
  return sum / static_cast<double>(p.probs.size());
}

/// exp(-(KLD + MSE)) times the sum regularizer exp(-|log10 sum(reconstructed)|).
/// The reconstruction is deliberately not renormalized.
inline double classification_similarity(const Distribution& truth, const Distribution& reconstructed) {
  const double phi = std::exp(-(kld(truth, reconstructed) + mse(truth, reconstructed)));
  std::vector<double> values;
  values.reserve(reconstructed.probs.size());
  for (const auto& [name, v] : reconstructed.probs) values.push_back(v);
  const double total = detail::floor_prob(detail::stable_sum(values));
  // over-mass reconstructions (sum > 1) push the raw product past 1; cap it
  return std::min(1.0, phi * std::exp(-std::abs(std::log10(total))));
}

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> assignment;  // (gt index, pred index), gt ascending
  std::vector<double> per_pair_iou;
  std::vector<std::size_t> unmatched_gt;

  double total_iou() const {
    double s = 0;
    for (double v : per_pair_iou) s += v;
    return s;
  }
};

namespace detail {

// Minimum-cost perfect assignment on a square matrix (Kuhn-Munkres with
// potentials, O(n^3)). Returns row -> column.
inline std::vector<std::size_t> solve_assignment(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j]) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

// Best achievable total value of a square value matrix restricted to the
// free rows/columns.
inline double best_total(const std::vector<std::vector<double>>& value, const std::vector<std::size_t>& rows,
                         const std::vector<std::size_t>& cols) {
  const std::size_t n = rows.size();
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) cost[r][c] = -value[rows[r]][cols[c]];
  auto sol = solve_assignment(cost);
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) total += value[rows[r]][cols[sol[r]]];
  return total;
}

}  // namespace detail

/// Injective gt->pred assignment maximizing total IoU. Among optimal
/// assignments the lexicographically smallest (gt, pred) sequence is chosen.
inline MatchResult hungarian_match(const BoxSet& gt, const BoxSet& pred) {
  const std::size_t ng = gt.boxes.size(), np = pred.boxes.size();
  const std::size_t n = std::max(ng, np);
  MatchResult out;
  if (ng == 0) return out;
  if (np == 0) {
    for (std::size_t i = 0; i < ng; ++i) out.unmatched_gt.push_back(i);
    return out;
  }
  // square value matrix, padded with zero-value slots
  std::vector<std::vector<double>> value(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < ng; ++i)
    for (std::size_t j = 0; j < np; ++j) value[i][j] = iou(gt.boxes[i], pred.boxes[j]);

  std::vector<std::size_t> rows(n), cols(n);
  std::iota(rows.begin(), rows.end(), 0);
  std::iota(cols.begin(), cols.end(), 0);
  const double optimum = detail::best_total(value, rows, cols);
  const double eps = 1e-12 * static_cast<double>(n);

  // Fix rows in order, each to the smallest column that keeps the optimum reachable.
  std::vector<std::size_t> chosen(n, n);
  double fixed_total = 0;
  std::vector<std::size_t> free_rows = rows, free_cols = cols;
  for (std::size_t r = 0; r < n; ++r) {
    free_rows.erase(free_rows.begin());
    for (std::size_t k = 0; k < free_cols.size(); ++k) {
      const std::size_t c = free_cols[k];
      std::vector<std::size_t> rest_cols = free_cols;
      rest_cols.erase(rest_cols.begin() + static_cast<std::ptrdiff_t>(k));
      const double total = fixed_total + value[r][c] + detail::best_total(value, free_rows, rest_cols);
      if (total >= optimum - eps || k + 1 == free_cols.size()) {
        chosen[r] = c;
        fixed_total += value[r][c];
        free_cols = std::move(rest_cols);
        break;
      }
    }
  }

  for (std::size_t i = 0; i < ng; ++i) {
    const std::size_t j = chosen[i];
    if (j < np) {
      out.assignment.emplace_back(i, j);
      out.per_pair_iou.push_back(value[i][j]);
    } else {
      out.unmatched_gt.push_back(i);
    }
  }
  return out;
}

/// Mean matched IoU over ground-truth boxes; unmatched ground truth counts 0.
inline double detection_similarity(const BoxSet& truth, const BoxSet& reconstructed) {
  if (truth.boxes.empty()) throw Error(ErrorKind::DomainError, "ground truth has no boxes");
  const auto match = hungarian_match(truth, reconstructed);
  return match.total_iou() / static_cast<double>(truth.boxes.size());
}

/// Jensen-Shannon divergence (natural log, floored operands).
inline double jsd(const Distribution& p, const Distribution& q) {
  detail::require_same_categories(p, q);
  Distribution m;
  auto it = q.probs.begin();
  for (const auto& [name, pv] : p.probs) {
    m.probs.emplace_hint(m.probs.end(), name, 0.5 * (pv + it->second));
    ++it;
  }
  return 0.5 * kld(p, m) + 0.5 * kld(q, m);
}

/// Task-dispatching similarity; throws DomainError on variant mismatch.
inline double annotation_similarity(const Annotation& truth, const Annotation& reconstructed) {
  if (truth.index() != reconstructed.index()) throw Error(ErrorKind::DomainError, "annotation variant mismatch");
  if (const auto* d = std::get_if<Distribution>(&truth))
    return classification_similarity(*d, std::get<Distribution>(reconstructed));
  return detection_similarity(std::get<BoxSet>(truth), std::get<BoxSet>(reconstructed));
}

/// Rescales a distribution to sum to one (uniform when the sum is zero).
inline Distribution renormalized(const Distribution& d) {
  double sum = 0;
  for (const auto& [k, v] : d.probs) sum += v;
  Distribution out;
  for (const auto& [k, v] : d.probs)
    out.probs[k] = sum > 0 ? v / sum : 1.0 / static_cast<double>(d.probs.size());
  return out;
}

}  // namespace rise
