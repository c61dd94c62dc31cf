#ifndef CAD_METRICS_HPP
#define CAD_METRICS_HPP

// Ranking and threshold metrics on (score, label) pairs, as percentages.
// Label true marks a fake (positive) clip.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "cad/errors.hpp"

namespace cad::metrics {

namespace detail {
inline void check_sizes(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw ArgumentError("metric: scores and labels differ in length");
}

/// Indices sorted by descending score.
inline std::vector<std::size_t> order_desc(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}
}  // namespace detail

/// Area under the ROC curve: the share of (positive, negative) pairs where the
/// positive scores higher, ties counting one half.
inline double auc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  detail::check_sizes(scores, labels);
  const auto idx = detail::order_desc(scores);
  std::uint64_t pos = 0, neg = 0;
  for (bool l : labels) (l ? pos : neg)++;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("AUC needs at least one fake and one real clip");
  // Walk groups of equal score from the top; count wins and ties exactly.
  std::uint64_t wins2 = 0;  // twice the credited pair count
  std::uint64_t neg_below = neg;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::uint64_t gp = 0, gn = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? gp : gn)++;
      ++j;
    }
    neg_below -= gn;
    wins2 += 2 * gp * neg_below + gp * gn;
    i = j;
  }
  return 100.0 * double(wins2) / (2.0 * double(pos) * double(neg));
}

/// Step-interpolated average precision: the mean, over positives, of the
/// precision among all clips scoring at least as high as that positive.
inline double average_precision(const std::vector<double>& scores, const std::vector<bool>& labels) {
  detail::check_sizes(scores, labels);
  const auto idx = detail::order_desc(scores);
  std::uint64_t pos = 0;
  for (bool l : labels) pos += l ? 1 : 0;
  if (pos == 0) throw UndefinedMetricError("AP needs at least one fake clip");
  double acc = 0.0;
  std::uint64_t tp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::uint64_t gp = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      gp += labels[idx[j]] ? 1 : 0;
      ++j;
    }
    tp += gp;
    const double precision = double(tp) / double(j);
    for (std::uint64_t k = 0; k < gp; ++k) acc += precision;
    i = j;
  }
  return 100.0 * acc / double(pos);
}

/// Accuracy of "fake iff sigmoid(logit) >= 0.5", i.e. logit >= 0.
inline double accuracy_from_logits(const std::vector<double>& logits, const std::vector<bool>& labels) {
  detail::check_sizes(logits, labels);
  if (logits.empty()) throw UndefinedMetricError("accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) correct += ((logits[i] >= 0.0) == labels[i]) ? 1 : 0;
  return 100.0 * double(correct) / double(logits.size());
}

}  // namespace cad::metrics

#endif  // CAD_METRICS_HPP
