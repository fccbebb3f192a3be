#pragma once

// Ranking metrics for multi-label predictions: per-class average precision,
// balanced mAP, ROC-AUC and d-prime.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/erf.hpp>

#include "aapool/errors.hpp"
#include "aapool/tensor.hpp"

namespace aapool::metrics {

struct PredictionSet {
  std::vector<std::string> clip_ids;
  Tensor scores;   // [M, C]
  Tensor targets;  // [M, C], 0/1

  std::size_t size() const { return scores.rank() == 2 ? scores.dim(0) : 0; }
  std::size_t classes() const { return scores.rank() == 2 ? scores.dim(1) : 0; }
  std::vector<float> column(const Tensor& t, std::size_t c) const {
    std::vector<float> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = t[i * classes() + c];
    return out;
  }
};

inline void check(const PredictionSet& p) {
  if (p.scores.rank() != 2 || p.targets.shape() != p.scores.shape()) {
    throw DimensionError("prediction set: scores " + shape_str(p.scores.shape()) + " and targets " +
                         shape_str(p.targets.shape()) + " must both be [M, C]");
  }
  if (!p.clip_ids.empty() && p.clip_ids.size() != p.size()) {
    throw DimensionError("prediction set: " + std::to_string(p.clip_ids.size()) + " clip ids for " +
                         std::to_string(p.size()) + " rows");
  }
  for (float s : p.scores.data()) {
    if (!std::isfinite(s) || s < 0.0f || s > 1.0f) throw ArgumentError("prediction set: scores must lie in [0, 1]");
  }
  for (float t : p.targets.data()) {
    if (t != 0.0f && t != 1.0f) throw ArgumentError("prediction set: targets must be 0 or 1");
  }
}

// Descending by score; equal scores keep their input order.
inline std::vector<std::size_t> rank_order(std::span<const float> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// Mean over positives of the precision at each positive's rank. Empty when
// there are no positives.
inline std::optional<double> average_precision(std::span<const float> scores, std::span<const float> targets) {
  if (scores.size() != targets.size()) throw DimensionError("average_precision: scores and targets differ in length");
  std::size_t positives = 0;
  for (float t : targets) positives += t > 0.5f;
  if (positives == 0) return std::nullopt;
  double sum = 0.0;
  std::size_t hits = 0, rank = 0;
  for (std::size_t i : rank_order(scores)) {
    ++rank;
    if (targets[i] > 0.5f) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank);
    }
  }
  return sum / static_cast<double>(positives);
}

struct MapResult {
  double value = 0.0;
  std::vector<std::optional<double>> per_class;
  std::vector<std::size_t> skipped;  // classes without positives
};

// Unweighted mean of per-class AP over classes that have at least one positive.
inline MapResult mean_ap(const PredictionSet& p) {
  check(p);
  MapResult r;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < p.classes(); ++c) {
    const auto s = p.column(p.scores, c), t = p.column(p.targets, c);
    auto ap = average_precision(s, t);
    r.per_class.push_back(ap);
    if (ap) {
      sum += *ap;
      ++used;
    } else {
      r.skipped.push_back(c);
    }
  }
  if (used == 0) throw ArgumentError("mean_ap: no class has a positive example");
  r.value = sum / static_cast<double>(used);
  return r;
}

// Probability that a random positive outscores a random negative (ties count half).
inline std::optional<double> roc_auc(std::span<const float> scores, std::span<const float> targets) {
  if (scores.size() != targets.size()) throw DimensionError("roc_auc: scores and targets differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // average 1-based rank of the tie group
    for (std::size_t k = i; k < j; ++k) {
      if (targets[order[k]] > 0.5f) {
        pos_rank_sum += mid;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double u = pos_rank_sum - static_cast<double>(pos) * static_cast<double>(pos + 1) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

inline double d_prime_from_auc(double auc) {
  const double a = std::clamp(auc, 1e-6, 1.0 - 1e-6);
  return 2.0 * boost::math::erf_inv(2.0 * a - 1.0);  // sqrt(2) * probit(a)
}

struct DPrimeResult {
  double value = 0.0;
  double mean_auc = 0.0;
};

inline DPrimeResult d_prime(const PredictionSet& p) {
  check(p);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < p.classes(); ++c) {
    const auto s = p.column(p.scores, c), t = p.column(p.targets, c);
    if (auto auc = roc_auc(s, t)) {
      sum += *auc;
      ++used;
    }
  }
  if (used == 0) throw ArgumentError("d_prime: no class has both positives and negatives");
  const double mean_auc = sum / static_cast<double>(used);
  return {d_prime_from_auc(mean_auc), mean_auc};
}

// Fraction of rows whose arg-max score hits a positive target.
inline double top1_accuracy(const PredictionSet& p) {
  check(p);
  if (p.size() == 0) throw ArgumentError("top1_accuracy: empty prediction set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < p.classes(); ++c) {
      if (p.scores[i * p.classes() + c] > p.scores[i * p.classes() + best]) best = c;
    }
    hits += p.targets[i * p.classes() + best] > 0.5f;
  }
  return static_cast<double>(hits) / static_cast<double>(p.size());
}

// Reference values for full-scale training, kept for reports only.
inline constexpr double kReferenceBaselineMap = 0.434;

}  // namespace aapool::metrics
