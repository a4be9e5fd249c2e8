#pragma once
// Figures of merit for a binary lens classifier: confusion counts, ROC and
// AUROC, TPR at a false-positive budget, weighted f1 and stratified
// breakdowns. A sample is predicted positive when score >= threshold.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lensformer/errors.hpp"

namespace lensformer {

struct ScoredSample {
  std::string id;
  double score = 0.0;
  int label = 0;
  std::map<std::string, double> meta;  // e.g. theta_e, flux_ratio
};

struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double threshold = 0.5;

  std::size_t total() const { return tp + fp + tn + fn; }
  std::size_t positives() const { return tp + fn; }
  std::size_t negatives() const { return tn + fp; }
};

namespace detail {
inline void check_samples(const std::vector<ScoredSample>& s, const char* who) {
  if (s.empty()) throw ContractError(std::string(who) + ": no samples");
  for (const auto& x : s) {
    if (!std::isfinite(x.score) || x.score < 0.0 || x.score > 1.0) throw ContractError(std::string(who) + ": score of '" + x.id + "' is outside [0,1]");
    if (x.label != 0 && x.label != 1) throw ContractError(std::string(who) + ": label of '" + x.id + "' is not 0/1");
  }
}

inline void check_both_classes(const std::vector<ScoredSample>& s, const char* who) {
  check_samples(s, who);
  std::size_t pos = 0;
  for (const auto& x : s) pos += x.label == 1;
  if (pos == 0 || pos == s.size()) throw ContractError(std::string(who) + ": both classes must be present");
}

inline double rate(std::size_t num, std::size_t den) { return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0; }
}  // namespace detail

inline ConfusionMatrix confusion(const std::vector<ScoredSample>& samples, double threshold) {
  detail::check_samples(samples, "confusion");
  ConfusionMatrix cm;
  cm.threshold = threshold;
  for (const auto& s : samples) {
    const bool predicted = s.score >= threshold;
    if (s.label == 1)
      (predicted ? cm.tp : cm.fn)++;
    else
      (predicted ? cm.fp : cm.tn)++;
  }
  return cm;
}

/// (TP + TN) / (TP + FP + TN + FN).
inline double accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ContractError("accuracy: empty confusion matrix");
  return static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
}

inline double true_positive_rate(const ConfusionMatrix& cm) { return detail::rate(cm.tp, cm.positives()); }
inline double false_positive_rate(const ConfusionMatrix& cm) { return detail::rate(cm.fp, cm.negatives()); }
inline double false_negative_rate(const ConfusionMatrix& cm) { return detail::rate(cm.fn, cm.positives()); }

struct RocPoint {
  double threshold = 0.0;  // +inf for the origin
  double fpr = 0.0;
  double tpr = 0.0;
  std::size_t tp = 0, fp = 0;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auroc = 0.0;
};

/// Steps through distinct scores from high to low; equal scores move
/// together, giving a diagonal segment.
inline RocCurve roc_and_auroc(const std::vector<ScoredSample>& samples) {
  detail::check_both_classes(samples, "roc_and_auroc");
  std::vector<const ScoredSample*> order;
  for (const auto& s : samples) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->score > b->score; });
  std::size_t pos = 0;
  for (const auto& s : samples) pos += s.label == 1;
  const std::size_t neg = samples.size() - pos;

  RocCurve roc;
  roc.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0, 0, 0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = order[i]->score;
    for (; i < order.size() && order[i]->score == t; ++i) (order[i]->label == 1 ? tp : fp)++;
    roc.points.push_back({t, detail::rate(fp, neg), detail::rate(tp, pos), tp, fp});
  }
  double area = 0.0;
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto& a = roc.points[i - 1];
    const auto& b = roc.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  roc.auroc = area;
  return roc;
}

/// Highest TPR over thresholds admitting at most `max_fp` false positives.
/// Tied scores are admitted together, so a negative tied with positives
/// counts against them.
inline double tpr_at_fp(const std::vector<ScoredSample>& samples, std::size_t max_fp) {
  const auto roc = roc_and_auroc(samples);
  double best = 0.0;
  for (const auto& p : roc.points)
    if (p.fp <= max_fp) best = std::max(best, p.tpr);
  return best;
}

struct TprOptions {
  std::size_t tpr10_max_fp = 9;  // "fewer than ten"; set 10 for the inclusive reading
};

inline double tpr0(const std::vector<ScoredSample>& s) { return tpr_at_fp(s, 0); }
inline double tpr10(const std::vector<ScoredSample>& s, const TprOptions& o = {}) { return tpr_at_fp(s, o.tpr10_max_fp); }

/// Support-weighted mean of per-class f1 over the classes seen in `truth`
/// or `predicted`.
inline double weighted_f1(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.size() != predicted.size()) throw ContractError("weighted_f1: length mismatch");
  if (truth.empty()) throw ContractError("weighted_f1: no samples");
  std::set<int> classes(truth.begin(), truth.end());
  classes.insert(predicted.begin(), predicted.end());
  double total = 0.0;
  for (int c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      support += truth[i] == c;
      if (predicted[i] == c && truth[i] == c) ++tp;
      if (predicted[i] == c && truth[i] != c) ++fp;
      if (predicted[i] != c && truth[i] == c) ++fn;
    }
    const double p = detail::rate(tp, tp + fp), r = detail::rate(tp, tp + fn);
    const double f1 = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
    total += f1 * static_cast<double>(support) / static_cast<double>(truth.size());
  }
  return total;
}

/// Linear-interpolation quantile (the usual "type 7").
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw ContractError("quantile: no values");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct StratumReport {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  std::size_t n = 0, positives = 0;
  std::vector<ConfusionMatrix> confusions;
  std::optional<double> auroc;  // when both classes are present
};

struct StratifiedReport {
  std::string key;
  std::vector<double> edges;  // interior bin edges
  std::vector<StratumReport> bins;
};

/// Bins by meta[key]: [-inf, e0), [e0, e1), ..., [e_last, +inf]. Empty
/// `edges` defaults to the first and third quartiles of the key.
inline StratifiedReport stratified_report(const std::vector<ScoredSample>& samples, const std::string& key, std::vector<double> edges,
                                          const std::vector<double>& thresholds) {
  detail::check_samples(samples, "stratified_report");
  std::string missing;
  std::size_t n_missing = 0;
  std::vector<double> values;
  for (const auto& s : samples) {
    auto it = s.meta.find(key);
    if (it == s.meta.end()) {
      if (n_missing++ < 20) missing += (missing.empty() ? "" : ", ") + s.id;
    } else {
      values.push_back(it->second);
    }
  }
  if (n_missing) {
    throw ContractError("stratified_report: " + std::to_string(n_missing) + " samples lack '" + key + "': " + missing +
                        (n_missing > 20 ? ", ..." : ""));
  }
  if (edges.empty()) edges = {quantile(values, 0.25), quantile(values, 0.75)};
  if (!std::is_sorted(edges.begin(), edges.end())) throw ContractError("stratified_report: bin edges must be ascending");

  StratifiedReport rep{key, edges, {}};
  std::vector<std::vector<ScoredSample>> groups(edges.size() + 1);
  for (const auto& s : samples) {
    const double v = s.meta.at(key);
    const auto bin = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
    groups[bin].push_back(s);
  }
  for (std::size_t b = 0; b < groups.size(); ++b) {
    StratumReport sr;
    if (b > 0) sr.lo = edges[b - 1];
    if (b < edges.size()) sr.hi = edges[b];
    sr.n = groups[b].size();
    for (const auto& s : groups[b]) sr.positives += s.label == 1;
    if (!groups[b].empty()) {
      for (double t : thresholds) sr.confusions.push_back(confusion(groups[b], t));
      if (sr.positives > 0 && sr.positives < sr.n) sr.auroc = roc_and_auroc(groups[b]).auroc;
    }
    rep.bins.push_back(std::move(sr));
  }
  return rep;
}

struct EvalReport {
  std::size_t n = 0, positives = 0;
  double threshold = 0.5;
  double accuracy = 0.0;
  double auroc = 0.0;
  double tpr0 = 0.0;
  double tpr10 = 0.0;
  RocCurve roc;
  std::vector<ConfusionMatrix> confusions;
  std::vector<StratifiedReport> strata;
};

inline const std::vector<double>& default_thresholds() {
  static const std::vector<double> t{0.5, 0.8, 0.95, 0.999};
  return t;
}

inline EvalReport evaluate(const std::vector<ScoredSample>& samples, double threshold = 0.5,
                           const std::vector<double>& thresholds = default_thresholds(), const TprOptions& tpr = {}) {
  EvalReport r;
  r.n = samples.size();
  for (const auto& s : samples) r.positives += s.label == 1;
  r.threshold = threshold;
  r.accuracy = accuracy(confusion(samples, threshold));
  r.roc = roc_and_auroc(samples);
  r.auroc = r.roc.auroc;
  r.tpr0 = tpr_at_fp(samples, 0);
  r.tpr10 = tpr_at_fp(samples, tpr.tpr10_max_fp);
  for (double t : thresholds) r.confusions.push_back(confusion(samples, t));
  return r;
}

}  // namespace lensformer
