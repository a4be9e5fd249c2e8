#pragma once
// Brute-force metric references: exhaustive pairwise AUROC and threshold
// enumeration. Quadratic, for small N only.

#include <algorithm>
#include <limits>
#include <random>
#include <set>
#include <vector>

#include "lensformer/metrics.hpp"

namespace lensformer::testing {

/// P(s+ > s-) + 0.5 P(s+ = s-) over every positive/negative pair.
inline double pairwise_auroc(const std::vector<ScoredSample>& s) {
  double wins = 0.0, pairs = 0.0;
  for (const auto& p : s) {
    if (p.label != 1) continue;
    for (const auto& n : s) {
      if (n.label != 0) continue;
      pairs += 1.0;
      wins += p.score > n.score ? 1.0 : (p.score == n.score ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

/// Tries every candidate threshold (each observed score and +inf) and keeps
/// the best TPR with at most max_fp false positives.
inline double brute_tpr_at_fp(const std::vector<ScoredSample>& s, std::size_t max_fp) {
  std::set<double> thresholds{std::numeric_limits<double>::infinity()};
  std::size_t pos = 0;
  for (const auto& x : s) {
    thresholds.insert(x.score);
    pos += x.label == 1;
  }
  double best = 0.0;
  for (double t : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (const auto& x : s) {
      if (x.score < t) continue;
      (x.label == 1 ? tp : fp)++;
    }
    if (fp <= max_fp) best = std::max(best, static_cast<double>(tp) / static_cast<double>(pos));
  }
  return best;
}

/// n random samples with both classes present; `levels` > 0 quantises the
/// scores to force ties.
inline std::vector<ScoredSample> random_scores(std::mt19937_64& rng, std::size_t n, int levels = 0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ScoredSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = u(rng);
    if (levels > 0) v = std::floor(v * levels) / levels;
    out[i] = {"s" + std::to_string(i), v, u(rng) < 0.5 + 0.3 * (v - 0.5) ? 1 : 0, {}};
  }
  out[0].label = 1;
  out[1].label = 0;
  return out;
}

}  // namespace lensformer::testing
