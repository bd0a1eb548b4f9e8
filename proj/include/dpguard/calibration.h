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

#ifndef DPGUARD_CALIBRATION_H_
#define DPGUARD_CALIBRATION_H_

// Choosing the normalization budget.
//
// For a pair (y, y') there is a budget eps* at which normalizing y'
// reproduces y. Normalizing with eps > eps* exaggerates the gap between the
// top and bottom scores (the output looks more confident than the model
// was); eps < eps* flattens it. The distance ||z(eps) - y||_1 grows
// monotonically as eps moves away from eps* in either direction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_format.h"
#include "dpguard/confidence_vector.h"
#include "dpguard/mechanism.h"
#include "dpguard/status_macros.h"

namespace dpguard {

struct EpsilonStar {
  double value = 0.0;
  // ||normalize(y', value) - y||_1.
  double residual = 0.0;
  // 2 (ln y_max - ln y_min) / (y'_max - y'_min).
  double pair_seed = 0.0;
};

// ||normalize(y_prime, epsilon) - y||_1, without validation.
inline double NormalizationResidual(std::span<const double> y,
                                    std::span<const double> y_prime,
                                    double epsilon) {
  std::vector<double> logits(y_prime.size());
  for (size_t i = 0; i < y_prime.size(); ++i) {
    logits[i] = 0.5 * epsilon * y_prime[i];
  }
  const std::vector<double> z = StableSoftmax(logits);
  double l1 = 0.0;
  for (size_t i = 0; i < y.size(); ++i) l1 += std::abs(z[i] - y[i]);
  return l1;
}

inline constexpr int kEpsilonStarMaxIterations = 200;
inline constexpr double kEpsilonStarTolerance = 1e-10;

// Solves for the budget at which normalize(y', eps) == y.
//
// The k equations are over-determined for an arbitrary pair, so the result is
// the minimizer of the L1 residual. The max/min pair formula gives the exact
// answer whenever one exists and seeds a golden-section search on
// [seed / 10, seed * 10]; the better of the two is returned.
inline absl::StatusOr<EpsilonStar> SolveEpsilonStar(
    std::span<const double> y, std::span<const double> y_prime) {
  if (y.size() != y_prime.size() || y.size() < 2) {
    return absl::InvalidArgumentError(
        "y and y' must have the same length k >= 2");
  }
  for (double v : y) {
    if (!(v > 0.0)) {
      return absl::InvalidArgumentError(
          "non-positive score: eps* needs strictly positive scores");
    }
  }
  const auto [yp_min, yp_max] = std::minmax_element(y_prime.begin(),
                                                    y_prime.end());
  if (!(*yp_max > *yp_min)) {
    return absl::FailedPreconditionError("degenerate: y' is constant");
  }
  const auto [y_min, y_max] = std::minmax_element(y.begin(), y.end());
  EpsilonStar out;
  out.pair_seed = 2.0 * (std::log(*y_max) - std::log(*y_min)) /
                  (*yp_max - *yp_min);
  if (!(out.pair_seed > 0.0) || !std::isfinite(out.pair_seed)) {
    return absl::FailedPreconditionError(
        "degenerate: y is uniform, no positive eps* exists");
  }

  auto residual = [&](double eps) {
    return NormalizationResidual(y, y_prime, eps);
  };
  constexpr double kInvPhi = 0.6180339887498949;
  double lo = out.pair_seed / 10.0;
  double hi = out.pair_seed * 10.0;
  double x1 = hi - kInvPhi * (hi - lo);
  double x2 = lo + kInvPhi * (hi - lo);
  double f1 = residual(x1);
  double f2 = residual(x2);
  for (int it = 0; it < kEpsilonStarMaxIterations &&
                   hi - lo > kEpsilonStarTolerance;
       ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kInvPhi * (hi - lo);
      f1 = residual(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kInvPhi * (hi - lo);
      f2 = residual(x2);
    }
  }
  const double searched = 0.5 * (lo + hi);
  const double searched_residual = residual(searched);
  const double seed_residual = residual(out.pair_seed);
  if (seed_residual <= searched_residual) {
    out.value = out.pair_seed;
    out.residual = seed_residual;
  } else {
    out.value = searched;
    out.residual = searched_residual;
  }
  return out;
}

inline absl::StatusOr<EpsilonStar> SolveEpsilonStar(
    const ConfidenceVector& y, const ModifiedVector& y_prime) {
  return SolveEpsilonStar(y.scores(), y_prime.scores);
}

// Operator-supplied confidence policy. Outputs whose top score exceeds `tau`
// are deflated (eps_confident < eps*); the rest are inflated
// (eps_unconfident > eps*), narrowing the gap an attacker can exploit.
struct DefensePolicy {
  double tau = 0.8;
  double eps_confident = 0.1;
  double eps_unconfident = 5.0;

  absl::Status Validate() const {
    if (!(tau > 0.0 && tau < 1.0)) {
      return absl::InvalidArgumentError("tau must be in (0, 1)");
    }
    if (!(eps_confident > 0.0) || !std::isfinite(eps_confident) ||
        !(eps_unconfident > 0.0) || !std::isfinite(eps_unconfident)) {
      return absl::InvalidArgumentError(
          "policy epsilons must be positive and finite");
    }
    return absl::OkStatus();
  }

  bool IsConfident(const ConfidenceVector& y) const { return y.max() > tau; }

  // Budget of the branch `y` falls in, before any eps* correction.
  double BranchEpsilon(const ConfidenceVector& y) const {
    return IsConfident(y) ? eps_confident : eps_unconfident;
  }
};

struct EpsilonChoice {
  double epsilon = 0.0;
  bool clamped = false;
  std::string warning;
};

inline constexpr double kDeflateClamp = 0.9;
inline constexpr double kInflateClamp = 1.1;

// Picks the policy branch for `y` and moves it to 0.9 eps* (confident) or
// 1.1 eps* (unconfident) when it sits on the wrong side of eps*.
inline EpsilonChoice ChooseEpsilon(const ConfidenceVector& y,
                                   const DefensePolicy& policy,
                                   const EpsilonStar& eps_star) {
  EpsilonChoice choice;
  if (policy.IsConfident(y)) {
    choice.epsilon = policy.eps_confident;
    if (!(choice.epsilon < eps_star.value)) {
      choice.epsilon = kDeflateClamp * eps_star.value;
      choice.clamped = true;
      choice.warning = absl::StrFormat(
          "eps_confident %g is not below eps* %g; clamped to %g",
          policy.eps_confident, eps_star.value, choice.epsilon);
    }
  } else {
    choice.epsilon = policy.eps_unconfident;
    if (!(choice.epsilon > eps_star.value)) {
      choice.epsilon = kInflateClamp * eps_star.value;
      choice.clamped = true;
      choice.warning = absl::StrFormat(
          "eps_unconfident %g is not above eps* %g; clamped to %g",
          policy.eps_unconfident, eps_star.value, choice.epsilon);
    }
  }
  return choice;
}

struct Distortion {
  double l1 = 0.0;
  double l2 = 0.0;
};

inline absl::StatusOr<Distortion> ComputeDistortion(std::span<const double> y,
                                                    std::span<const double> z) {
  if (y.size() != z.size()) {
    return absl::InvalidArgumentError("length mismatch");
  }
  Distortion d;
  double sq = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    const double diff = z[i] - y[i];
    d.l1 += std::abs(diff);
    sq += diff * diff;
  }
  d.l2 = std::sqrt(sq);
  return d;
}

inline absl::StatusOr<Distortion> ComputeDistortion(const ConfidenceVector& y,
                                                    const ConfidenceVector& z) {
  return ComputeDistortion(y.scores(), z.scores());
}

enum class EpsilonSide { kAbove, kBelow };

inline constexpr double kDistortionTolerance = 1e-4;

// Finds eps on the requested side of eps* whose normalization lies at L1
// distance `target_l1` from y. Relies on the distance growing monotonically
// away from eps*. Fails with OutOfRange when the target is beyond the
// supremum reachable on that side (the eps -> infinity or eps -> 0 limit).
inline absl::StatusOr<double> EpsilonForDistortion(
    std::span<const double> y, std::span<const double> y_prime,
    double target_l1, EpsilonSide side) {
  if (!(target_l1 >= 0.0) || !std::isfinite(target_l1)) {
    return absl::InvalidArgumentError("target distance must be >= 0");
  }
  if (target_l1 > 2.0) {
    return absl::OutOfRangeError(
        "unachievable: L1 distance between distributions is at most 2");
  }
  DPGUARD_ASSIGN_OR_RETURN(EpsilonStar star, SolveEpsilonStar(y, y_prime));
  if (target_l1 <= star.residual) {
    if (star.residual - target_l1 <= kDistortionTolerance) return star.value;
    return absl::OutOfRangeError(
        "unachievable: target is below the residual at eps*");
  }

  const size_t k = y.size();
  std::vector<double> limit(k, 0.0);
  if (side == EpsilonSide::kAbove) {
    // eps -> infinity puts all mass evenly on the largest entries of y'.
    const double top = *std::max_element(y_prime.begin(), y_prime.end());
    const double ties = static_cast<double>(
        std::count(y_prime.begin(), y_prime.end(), top));
    for (size_t i = 0; i < k; ++i) {
      if (y_prime[i] == top) limit[i] = 1.0 / ties;
    }
  } else {
    std::fill(limit.begin(), limit.end(), 1.0 / static_cast<double>(k));
  }
  double supremum = 0.0;
  for (size_t i = 0; i < k; ++i) supremum += std::abs(limit[i] - y[i]);
  if (target_l1 >= supremum) {
    return absl::OutOfRangeError(absl::StrFormat(
        "unachievable: target exceeds the supremum distance %.6g on this "
        "side of eps*",
        supremum));
  }

  auto distance = [&](double eps) {
    return NormalizationResidual(y, y_prime, eps);
  };
  // `near` is the eps* end of the bracket, `far` the end with larger distance.
  double near = star.value;
  double far = 0.0;
  if (side == EpsilonSide::kAbove) {
    far = 2.0 * star.value;
    while (distance(far) < target_l1) {
      far *= 2.0;
      if (!std::isfinite(far) || far > 1e300) {
        return absl::OutOfRangeError("unachievable: bracket exhausted");
      }
    }
  }
  double best = near;
  double best_gap = std::abs(distance(near) - target_l1);
  for (int it = 0; it < kEpsilonStarMaxIterations; ++it) {
    const double mid = 0.5 * (near + far);
    const double d = distance(mid);
    const double gap = std::abs(d - target_l1);
    if (gap < best_gap) {
      best = mid;
      best_gap = gap;
    }
    if (gap <= kDistortionTolerance) break;
    if (d < target_l1) {
      near = mid;
    } else {
      far = mid;
    }
  }
  return best;
}

inline absl::StatusOr<double> EpsilonForDistortion(
    const ConfidenceVector& y, const ModifiedVector& y_prime,
    double target_l1, EpsilonSide side) {
  return EpsilonForDistortion(y.scores(), y_prime.scores, target_l1, side);
}

// Result of defending one vector under a policy.
struct PolicyOutcome {
  ConfidenceVector z;
  double epsilon_used = 0.0;
  EpsilonChoice choice;
};

// Smallest score used when solving eps* for vectors with exact zeros.
inline constexpr double kScoreFloor = 1e-12;

// Phase one runs at the policy branch budget (which depends only on whether
// y_max exceeds tau). eps* is then solved for (y, y') and the normalization
// budget is corrected onto the policy's side of it. When eps* does not exist
// (y' constant, e.g. a fully tied input) the branch budget is used as is.
inline absl::StatusOr<PolicyOutcome> DefendWithPolicy(
    const ConfidenceVector& y, const MechanismConfig& cfg,
    const DefensePolicy& policy, uint64_t nonce = 0) {
  DPGUARD_RETURN_IF_ERROR(policy.Validate());
  MechanismConfig branch = cfg;
  branch.epsilon = policy.BranchEpsilon(y);
  DPGUARD_ASSIGN_OR_RETURN(ModifiedVector y_prime, Modify(y, branch, nonce));

  std::vector<double> floored(y.begin(), y.end());
  double sum = 0.0;
  for (double& v : floored) {
    v = std::max(v, kScoreFloor);
    sum += v;
  }
  for (double& v : floored) v /= sum;

  EpsilonChoice choice{branch.epsilon, false, ""};
  absl::StatusOr<EpsilonStar> star = SolveEpsilonStar(floored, y_prime.scores);
  if (star.ok()) {
    choice = ChooseEpsilon(y, policy, *star);
  } else if (!absl::IsFailedPrecondition(star.status())) {
    return star.status();
  }
  DPGUARD_ASSIGN_OR_RETURN(ConfidenceVector z,
                           Normalize(y_prime, choice.epsilon));
  return PolicyOutcome{std::move(z), choice.epsilon, std::move(choice)};
}

}  // namespace dpguard

#endif  // DPGUARD_CALIBRATION_H_
