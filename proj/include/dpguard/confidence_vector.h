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

#ifndef DPGUARD_CONFIDENCE_VECTOR_H_
#define DPGUARD_CONFIDENCE_VECTOR_H_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"

namespace dpguard {

// Inputs whose scores sum to within this distance of 1 are rescaled to sum to
// exactly 1; anything further off is rejected.
inline constexpr double kSumTolerance = 1e-6;

// A probability vector of k >= 2 class scores, each in [0, 1], summing to 1.
//
// Instances are only produced through Create() (or by the mechanism itself),
// so holding one means the invariants hold. Validation messages never contain
// score values: callers forward them to untrusted clients.
class ConfidenceVector {
 public:
  static absl::StatusOr<ConfidenceVector> Create(std::vector<double> scores) {
    if (scores.size() < 2) {
      return absl::InvalidArgumentError(
          "confidence vector needs at least 2 scores");
    }
    double sum = 0.0;
    for (double s : scores) {
      if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
        return absl::InvalidArgumentError(
            "every score must be a finite number in [0, 1]");
      }
      sum += s;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
      return absl::InvalidArgumentError("scores must sum to 1");
    }
    if (sum != 1.0) {
      for (double& s : scores) s = std::min(1.0, s / sum);
    }
    return ConfidenceVector(std::move(scores));
  }

  static absl::StatusOr<ConfidenceVector> Create(std::span<const double> s) {
    return Create(std::vector<double>(s.begin(), s.end()));
  }

  size_t size() const { return scores_.size(); }
  double operator[](size_t i) const { return scores_[i]; }
  std::span<const double> scores() const { return scores_; }
  auto begin() const { return scores_.begin(); }
  auto end() const { return scores_.end(); }

  double max() const { return *std::max_element(begin(), end()); }
  double min() const { return *std::min_element(begin(), end()); }

  friend bool operator==(const ConfidenceVector&,
                         const ConfidenceVector&) = default;

 private:
  friend ConfidenceVector MakeNormalizedVector(std::vector<double>);

  explicit ConfidenceVector(std::vector<double> scores)
      : scores_(std::move(scores)) {}

  std::vector<double> scores_;
};

// For vectors the library computed itself (softmax outputs).
inline ConfidenceVector MakeNormalizedVector(std::vector<double> scores) {
  return ConfidenceVector(std::move(scores));
}

// Index of the first maximal entry.
inline size_t ArgMax(std::span<const double> v) {
  return static_cast<size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Indices of every entry equal to the maximum.
inline std::vector<size_t> ArgMaxSet(std::span<const double> v) {
  const double top = *std::max_element(v.begin(), v.end());
  std::vector<size_t> out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (v[i] == top) out.push_back(i);
  }
  return out;
}

}  // namespace dpguard

#endif  // DPGUARD_CONFIDENCE_VECTOR_H_
