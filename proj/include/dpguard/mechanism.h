// Copyright 2026 The dpguard Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPGUARD_MECHANISM_H_
#define DPGUARD_MECHANISM_H_

// Two-phase confidence-vector perturbation.
//
// Phase one splits [0, 1) into k sub-ranges whose boundaries are midpoints of
// consecutive sorted scores, so the i-th smallest score owns the i-th
// sub-range. Each sub-range is discretized into m evenly spaced candidates and
// one candidate is drawn with the exponential mechanism, using a utility that
// grows as the candidate approaches the original score. The result y' keeps
// the order of y.
//
// Phase two maps y' back onto the simplex with an exponential weighting,
// z_i = exp(eps * y'_i / 2) / sum_j exp(eps * y'_j / 2), which is strictly
// increasing in y'_i. Together the phases never change the predicted label.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_format.h"
#include "dpguard/confidence_vector.h"
#include "dpguard/rng.h"
#include "dpguard/status_macros.h"

namespace dpguard {

struct MechanismConfig {
  // Budget for every per-sub-range selection and for the normalization.
  double epsilon = 1.0;
  // Candidates per sub-range.
  int m = 5;
  // Utility distance floor, as a fraction of the candidate spacing.
  double utility_floor_fraction = 0.1;
  uint64_t rng_seed = 0;

  absl::Status Validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
      return absl::InvalidArgumentError("epsilon must be positive and finite");
    }
    if (m < 1) return absl::InvalidArgumentError("m must be at least 1");
    if (!(utility_floor_fraction > 0.0 && utility_floor_fraction <= 1.0)) {
      return absl::InvalidArgumentError(
          "utility_floor_fraction must be in (0, 1]");
    }
    return absl::OkStatus();
  }
};

// The k sub-ranges [boundaries[i], boundaries[i + 1]) induced by a vector,
// indexed by sorted position (0-based).
struct RangePartition {
  // k + 1 non-decreasing values, front() == 0 and back() == 1.
  std::vector<double> boundaries;
  // order[i] is the original index of the i-th smallest score (stable).
  std::vector<size_t> order;
  std::vector<double> sorted_scores;

  size_t size() const { return order.size(); }
  double start(size_t i) const { return boundaries[i]; }
  double end(size_t i) const { return boundaries[i + 1]; }
  double width(size_t i) const { return end(i) - start(i); }

  // rank[j] is the sorted position of original index j.
  std::vector<size_t> Ranks() const {
    std::vector<size_t> rank(order.size());
    for (size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;
    return rank;
  }

  // True when sorted position i shares its score with a neighbour. Tied
  // positions all report the tied score as their modified value.
  bool IsTied(size_t i) const {
    return (i > 0 && sorted_scores[i] == sorted_scores[i - 1]) ||
           (i + 1 < size() && sorted_scores[i] == sorted_scores[i + 1]);
  }
};

inline RangePartition Partition(const ConfidenceVector& y) {
  const size_t k = y.size();
  RangePartition p;
  p.order.resize(k);
  std::iota(p.order.begin(), p.order.end(), size_t{0});
  std::stable_sort(p.order.begin(), p.order.end(),
                   [&](size_t a, size_t b) { return y[a] < y[b]; });
  p.sorted_scores.reserve(k);
  for (size_t idx : p.order) p.sorted_scores.push_back(y[idx]);

  p.boundaries.resize(k + 1);
  p.boundaries.front() = 0.0;
  p.boundaries.back() = 1.0;
  for (size_t i = 1; i < k; ++i) {
    p.boundaries[i] = 0.5 * (p.sorted_scores[i - 1] + p.sorted_scores[i]);
  }
  return p;
}

// The m candidates start, start + rho, ..., start + (m - 1) rho of sub-range
// i, with rho = width / m. A zero-width sub-range yields m copies of start.
inline absl::StatusOr<std::vector<double>> Discretize(
    const RangePartition& partition, size_t i, int m) {
  if (i >= partition.size()) {
    return absl::OutOfRangeError(absl::StrFormat(
        "sub-range index %d out of range for k = %d", i, partition.size()));
  }
  if (m < 1) return absl::InvalidArgumentError("m must be at least 1");
  const double start = partition.start(i);
  const double end = partition.end(i);
  const double rho = (end - start) / m;
  // Largest representable value inside the half-open range.
  const double last_inside =
      end > start ? std::nextafter(end, start) : start;
  std::vector<double> candidates(static_cast<size_t>(m));
  for (int j = 0; j < m; ++j) {
    candidates[j] = std::min(start + j * rho, last_inside);
  }
  return candidates;
}

// Exact output distribution of one exponential-mechanism selection.
struct SelectionTable {
  std::vector<double> candidates;
  // Rescaled utilities in (0, 1]; the sensitivity of the selection is 1.
  std::vector<double> utilities;
  std::vector<double> probabilities;
};

// Numerically stable softmax of `logits`.
inline std::vector<double> StableSoftmax(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

// Selection distribution for replacing `score` with one of `candidates`
// (evenly spaced, as produced by Discretize).
//
// Raw utility is 1 / max(|score - c|, delta) with delta = floor_fraction *
// rho; dividing by the largest raw utility puts every utility in (0, 1], so
// P(c) is proportional to exp(epsilon * u(c) / 2) with unit sensitivity.
inline absl::StatusOr<SelectionTable> BuildSelectionTable(
    double score, std::span<const double> candidates, double epsilon,
    double utility_floor_fraction) {
  if (candidates.empty()) {
    return absl::InvalidArgumentError("candidate set is empty");
  }
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    return absl::InvalidArgumentError("epsilon must be positive and finite");
  }
  if (!(utility_floor_fraction > 0.0 && utility_floor_fraction <= 1.0)) {
    return absl::InvalidArgumentError(
        "utility_floor_fraction must be in (0, 1]");
  }
  const size_t m = candidates.size();
  SelectionTable table;
  table.candidates.assign(candidates.begin(), candidates.end());
  const double rho =
      m > 1 ? (candidates.back() - candidates.front()) / (m - 1) : 0.0;
  if (!(rho > 0.0)) {
    // One candidate, or m copies of a zero-width sub-range's start.
    table.utilities.assign(m, 1.0);
    table.probabilities.assign(m, 1.0 / m);
    return table;
  }
  const double delta = utility_floor_fraction * rho;
  table.utilities.resize(m);
  for (size_t j = 0; j < m; ++j) {
    table.utilities[j] = 1.0 / std::max(std::abs(score - candidates[j]), delta);
  }
  const double top =
      *std::max_element(table.utilities.begin(), table.utilities.end());
  std::vector<double> logits(m);
  for (size_t j = 0; j < m; ++j) {
    table.utilities[j] /= top;
    logits[j] = 0.5 * epsilon * table.utilities[j];
  }
  table.probabilities = StableSoftmax(logits);
  return table;
}

// Output of phase one, in original class order.
struct ModifiedVector {
  std::vector<double> scores;
  // Sorted position (sub-range index) each score was drawn from.
  std::vector<size_t> sub_range;

  size_t size() const { return scores.size(); }
  double operator[](size_t i) const { return scores[i]; }
};

// Phase one. Draws one candidate per sub-range with an Rng seeded from
// (cfg.rng_seed, nonce); identical arguments give identical output.
inline absl::StatusOr<ModifiedVector> Modify(const ConfidenceVector& y,
                                             const MechanismConfig& cfg,
                                             uint64_t nonce = 0) {
  DPGUARD_RETURN_IF_ERROR(cfg.Validate());
  const RangePartition partition = Partition(y);
  const size_t k = y.size();
  Rng rng(cfg.rng_seed, nonce);

  ModifiedVector out;
  out.scores.resize(k);
  out.sub_range.resize(k);
  for (size_t i = 0; i < k; ++i) {
    const size_t original = partition.order[i];
    out.sub_range[original] = i;
    if (partition.IsTied(i)) {
      out.scores[original] = partition.sorted_scores[i];
      continue;
    }
    DPGUARD_ASSIGN_OR_RETURN(std::vector<double> candidates,
                             Discretize(partition, i, cfg.m));
    DPGUARD_ASSIGN_OR_RETURN(
        SelectionTable table,
        BuildSelectionTable(partition.sorted_scores[i], candidates,
                            cfg.epsilon, cfg.utility_floor_fraction));
    out.scores[original] = candidates[SampleIndex(table.probabilities, rng)];
  }
  return out;
}

// Phase two: z_i proportional to exp(epsilon * y'_i / 2), evaluated after
// subtracting the largest exponent.
inline absl::StatusOr<ConfidenceVector> Normalize(
    std::span<const double> y_prime, double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    return absl::InvalidArgumentError("epsilon must be positive and finite");
  }
  if (y_prime.size() < 2) {
    return absl::InvalidArgumentError("need at least 2 scores to normalize");
  }
  std::vector<double> logits(y_prime.size());
  for (size_t i = 0; i < y_prime.size(); ++i) {
    if (!std::isfinite(y_prime[i])) {
      return absl::InvalidArgumentError("modified scores must be finite");
    }
    logits[i] = 0.5 * epsilon * y_prime[i];
  }
  return MakeNormalizedVector(StableSoftmax(logits));
}

inline absl::StatusOr<ConfidenceVector> Normalize(const ModifiedVector& y_prime,
                                                  double epsilon) {
  return Normalize(y_prime.scores, epsilon);
}

// Both phases with the same epsilon.
inline absl::StatusOr<ConfidenceVector> Defend(const ConfidenceVector& y,
                                               const MechanismConfig& cfg,
                                               uint64_t nonce = 0) {
  DPGUARD_ASSIGN_OR_RETURN(ModifiedVector y_prime, Modify(y, cfg, nonce));
  return Normalize(y_prime, cfg.epsilon);
}

struct DpRatioReport {
  // Largest of P(c | y) / P(c | y_hat) and its inverse, per sub-range.
  std::vector<double> per_sub_range;
  double max_ratio = 1.0;
};

inline constexpr double kNeighborTolerance = 1e-9;

// Exact privacy-loss check for one pair of neighbouring vectors: both must
// induce the same sub-ranges (so the candidate sets coincide) and lie within
// L1 distance 1. Compares the closed-form selection tables sub-range by
// sub-range; the exponential mechanism bounds every ratio by exp(epsilon).
inline absl::StatusOr<DpRatioReport> DpRatioCheck(const ConfidenceVector& y,
                                                  const ConfidenceVector& y_hat,
                                                  const MechanismConfig& cfg) {
  DPGUARD_RETURN_IF_ERROR(cfg.Validate());
  if (y.size() != y_hat.size()) {
    return absl::FailedPreconditionError(
        "not neighboring: vectors differ in length");
  }
  const RangePartition a = Partition(y);
  const RangePartition b = Partition(y_hat);
  for (size_t i = 0; i < a.boundaries.size(); ++i) {
    if (std::abs(a.boundaries[i] - b.boundaries[i]) > kNeighborTolerance) {
      return absl::FailedPreconditionError(
          "not neighboring: sub-range partitions differ");
    }
  }
  double l1 = 0.0;
  for (size_t i = 0; i < y.size(); ++i) l1 += std::abs(y[i] - y_hat[i]);
  if (l1 > 1.0 + kNeighborTolerance) {
    return absl::FailedPreconditionError(
        "not neighboring: L1 distance exceeds 1");
  }

  DpRatioReport report;
  for (size_t i = 0; i < a.size(); ++i) {
    DPGUARD_ASSIGN_OR_RETURN(std::vector<double> candidates,
                             Discretize(a, i, cfg.m));
    DPGUARD_ASSIGN_OR_RETURN(
        SelectionTable pa,
        BuildSelectionTable(a.sorted_scores[i], candidates, cfg.epsilon,
                            cfg.utility_floor_fraction));
    DPGUARD_ASSIGN_OR_RETURN(
        SelectionTable pb,
        BuildSelectionTable(b.sorted_scores[i], candidates, cfg.epsilon,
                            cfg.utility_floor_fraction));
    double worst = 1.0;
    for (size_t j = 0; j < candidates.size(); ++j) {
      const double r = pa.probabilities[j] / pb.probabilities[j];
      worst = std::max({worst, r, 1.0 / r});
    }
    report.per_sub_range.push_back(worst);
    report.max_ratio = std::max(report.max_ratio, worst);
  }
  return report;
}

}  // namespace dpguard

#endif  // DPGUARD_MECHANISM_H_
