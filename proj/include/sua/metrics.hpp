// Copyright 2026 The SUA Workbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Scalar evaluation metrics. Failure scores are oriented so that larger
// means "more likely wrong" everywhere.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "sua/prob.hpp"

namespace sua {

inline double accuracy(const std::vector<bool>& correct) {
  require(!correct.empty(), "accuracy needs at least one prediction");
  return static_cast<double>(std::count(correct.begin(), correct.end(), true)) / static_cast<double>(correct.size());
}

struct ReliabilityBin {
  int count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

/// Equal-width bins on [0, 1]; bin b holds [b/B, (b+1)/B), the last bin also
/// holds 1.
inline std::size_t confidence_bin(double confidence, int bins) {
  const auto b = static_cast<std::size_t>(std::floor(confidence * bins));
  return std::min(b, static_cast<std::size_t>(bins - 1));
}

inline std::vector<ReliabilityBin> reliability_bins(std::span<const double> confidences, const std::vector<bool>& correct,
                                                    int bins = 15) {
  require(!confidences.empty(), "calibration needs at least one prediction");
  require(confidences.size() == correct.size(), "confidences and outcomes differ in length");
  require(bins >= 1, "need at least one bin");
  std::vector<ReliabilityBin> out(static_cast<std::size_t>(bins));
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    require(c >= 0.0 && c <= 1.0, "confidence outside [0, 1]");
    ReliabilityBin& b = out[confidence_bin(c, bins)];
    ++b.count;
    b.mean_confidence += c;
    b.accuracy += correct[i] ? 1.0 : 0.0;
  }
  for (ReliabilityBin& b : out) {
    if (b.count > 0) {
      b.mean_confidence /= b.count;
      b.accuracy /= b.count;
    }
  }
  return out;
}

inline double ece(std::span<const double> confidences, const std::vector<bool>& correct, int bins = 15) {
  const auto table = reliability_bins(confidences, correct, bins);
  const double n = static_cast<double>(confidences.size());
  double total = 0.0;
  for (const ReliabilityBin& b : table) total += (b.count / n) * std::abs(b.accuracy - b.mean_confidence);
  return std::clamp(total, 0.0, 1.0);
}

/// Average ranks (1-based); tied values share the mean of their positions.
inline std::vector<double> midranks(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

/// P(score of a random failure > score of a random success), ties count one
/// half. Empty when only one class is present.
inline std::optional<double> auroc(std::span<const double> scores, const std::vector<bool>& is_failure) {
  require(scores.size() == is_failure.size(), "scores and labels differ in length");
  const auto pos = static_cast<double>(std::count(is_failure.begin(), is_failure.end(), true));
  const double neg = static_cast<double>(scores.size()) - pos;
  if (pos == 0.0 || neg == 0.0) return std::nullopt;
  const auto ranks = midranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (is_failure[i]) rank_sum += ranks[i];
  }
  return std::clamp((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg), 0.0, 1.0);
}

namespace detail {

inline std::size_t covered_count(std::size_t n, double coverage) {
  const auto m = static_cast<std::size_t>(std::ceil(coverage * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(m, 1, n);
}

}  // namespace detail

/// Accuracy over the ceil(c n) inputs with the lowest scores (ties keep input order).
inline double selective_accuracy(std::span<const double> scores, const std::vector<bool>& correct, double coverage) {
  require(!scores.empty(), "selective accuracy needs at least one prediction");
  require(scores.size() == correct.size(), "scores and outcomes differ in length");
  require(coverage > 0.0 && coverage <= 1.0, "coverage must lie in (0, 1]");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  const std::size_t m = detail::covered_count(scores.size(), coverage);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m; ++i) hits += correct[idx[i]] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(m);
}

/// Lower empirical quantile: answering when score <= tau covers ceil(c n) inputs
/// (more if the cutoff value is tied).
inline double calibrate_tau(std::span<const double> scores, double coverage) {
  require(!scores.empty(), "threshold calibration needs scores");
  require(coverage > 0.0 && coverage < 1.0, "target coverage must lie in (0, 1)");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted[detail::covered_count(sorted.size(), coverage) - 1];
}

/// Fraction of scores at or below tau.
inline double coverage_at(std::span<const double> scores, double tau) {
  require(!scores.empty(), "coverage needs scores");
  const auto n = std::count_if(scores.begin(), scores.end(), [&](double s) { return s <= tau; });
  return static_cast<double>(n) / static_cast<double>(scores.size());
}

/// Spearman rank correlation with average ranks; 0 when either side is constant.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, "spearman needs two equal-length samples");
  const auto ra = midranks(a);
  const auto rb = midranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - mean) * (rb[i] - mean);
    saa += (ra[i] - mean) * (ra[i] - mean);
    sbb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline double mean(std::span<const double> v) {
  require(!v.empty(), "mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace sua
