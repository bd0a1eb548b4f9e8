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

#ifndef DPGUARD_ATTACK_SIM_H_
#define DPGUARD_ATTACK_SIM_H_

// Desk-scale membership-inference evaluation.
//
// Target-model outputs are replaced by synthetic cohorts: members get more
// peaked confidence vectors than non-members, the overfitting signal that
// membership attacks exploit. Two attackers are run on the raw vectors and
// again (re-fitted) on defended vectors:
//   - a threshold sweep on the top score, and
//   - logistic regression on the standardized, descending-sorted scores.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_format.h"
#include "dpguard/calibration.h"
#include "dpguard/confidence_vector.h"
#include "dpguard/format.h"
#include "dpguard/mechanism.h"
#include "dpguard/rng.h"
#include "dpguard/status_macros.h"
#include "nlohmann/json.hpp"

namespace dpguard {

// Concentrations are expected top-class scores, in (1/k, 1).
struct CohortSpec {
  int k = 10;
  int n_members = 1000;
  int n_nonmembers = 1000;
  double member_concentration = 0.999;
  double nonmember_concentration = 0.99;
  uint64_t rng_seed = 0;

  absl::Status Validate() const {
    if (k < 2) return absl::InvalidArgumentError("k must be at least 2");
    if (n_members < 1 || n_nonmembers < 1) {
      return absl::InvalidArgumentError("cohort sizes must be positive");
    }
    const double floor = 1.0 / k;
    for (double c : {member_concentration, nonmember_concentration}) {
      if (!(c > floor && c < 1.0)) {
        return absl::InvalidArgumentError(
            "concentrations must lie strictly between 1/k and 1");
      }
    }
    if (nonmember_concentration > member_concentration) {
      return absl::InvalidArgumentError(
          "non-members must not be more concentrated than members");
    }
    return absl::OkStatus();
  }
};

struct Cohorts {
  std::vector<ConfidenceVector> members;
  std::vector<ConfidenceVector> nonmembers;
};

namespace internal {

// One peaked vector: a uniformly chosen class keeps 1 - r, and the residual
// r = (1 - 1/k) B with B ~ Beta(1, beta) is spread over the remaining classes
// as a uniform point on the simplex. beta is set so E[1 - r] = concentration.
inline ConfidenceVector PeakedVector(int k, double concentration, Rng& rng) {
  const double spread = 1.0 - 1.0 / k;
  const double mean_b = (1.0 - concentration) / spread;
  const double beta = 1.0 / mean_b - 1.0;
  const double b = 1.0 - std::pow(rng.UniformPositive(), 1.0 / beta);
  const double residual = spread * b;

  std::vector<double> rest(static_cast<size_t>(k - 1));
  double total = 0.0;
  for (double& v : rest) {
    v = rng.Exponential();
    total += v;
  }
  const size_t top = rng.UniformIndex(static_cast<uint64_t>(k));
  std::vector<double> scores;
  scores.reserve(static_cast<size_t>(k));
  for (size_t i = 0, r = 0; i < static_cast<size_t>(k); ++i) {
    scores.push_back(i == top ? 1.0 - residual : residual * rest[r++] / total);
  }
  // Rounding keeps the sum within a few ulps of 1, so this cannot fail.
  return *ConfidenceVector::Create(std::move(scores));
}

}  // namespace internal

inline absl::StatusOr<Cohorts> GenerateCohorts(const CohortSpec& spec) {
  DPGUARD_RETURN_IF_ERROR(spec.Validate());
  Cohorts out;
  Rng member_rng(spec.rng_seed, 1);
  Rng nonmember_rng(spec.rng_seed, 2);
  out.members.reserve(spec.n_members);
  out.nonmembers.reserve(spec.n_nonmembers);
  for (int i = 0; i < spec.n_members; ++i) {
    out.members.push_back(
        internal::PeakedVector(spec.k, spec.member_concentration, member_rng));
  }
  for (int i = 0; i < spec.n_nonmembers; ++i) {
    out.nonmembers.push_back(internal::PeakedVector(
        spec.k, spec.nonmember_concentration, nonmember_rng));
  }
  return out;
}

struct ThresholdResult {
  // Predict "member" iff feature > threshold. -inf means "always member".
  double threshold = -std::numeric_limits<double>::infinity();
  // Balanced accuracy, (TPR + TNR) / 2.
  double accuracy = 0.5;
};

// Sweeps every observed feature value as the threshold and keeps the one with
// the highest balanced accuracy.
inline absl::StatusOr<ThresholdResult> ThresholdAttack(
    std::span<const double> member_feature,
    std::span<const double> nonmember_feature) {
  if (member_feature.empty() || nonmember_feature.empty()) {
    return absl::InvalidArgumentError("both cohorts must be non-empty");
  }
  std::vector<std::pair<double, bool>> points;
  points.reserve(member_feature.size() + nonmember_feature.size());
  for (double v : member_feature) points.emplace_back(v, true);
  for (double v : nonmember_feature) points.emplace_back(v, false);
  std::sort(points.begin(), points.end());

  const double n_members = static_cast<double>(member_feature.size());
  const double n_nonmembers = static_cast<double>(nonmember_feature.size());
  ThresholdResult best;
  size_t members_below = 0;
  size_t nonmembers_below = 0;
  for (size_t i = 0; i < points.size();) {
    const double value = points[i].first;
    for (; i < points.size() && points[i].first == value; ++i) {
      (points[i].second ? members_below : nonmembers_below)++;
    }
    const double tpr = 1.0 - members_below / n_members;
    const double tnr = nonmembers_below / n_nonmembers;
    const double accuracy = 0.5 * (tpr + tnr);
    if (accuracy > best.accuracy) {
      best.accuracy = accuracy;
      best.threshold = value;
    }
  }
  return best;
}

inline absl::StatusOr<ThresholdResult> ThresholdAttack(
    std::span<const ConfidenceVector> members,
    std::span<const ConfidenceVector> nonmembers) {
  std::vector<double> a, b;
  a.reserve(members.size());
  b.reserve(nonmembers.size());
  for (const auto& v : members) a.push_back(v.max());
  for (const auto& v : nonmembers) b.push_back(v.max());
  return ThresholdAttack(a, b);
}

// Row-major dense matrix of attack features.
struct FeatureMatrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(size_t i) const {
    return std::span<const double>(data).subspan(i * cols, cols);
  }
  std::span<double> row(size_t i) {
    return std::span<double>(data).subspan(i * cols, cols);
  }
};

// Scores sorted in descending order, so the attacker is blind to class order.
inline std::vector<double> AttackFeatures(const ConfidenceVector& v) {
  std::vector<double> f(v.begin(), v.end());
  std::sort(f.begin(), f.end(), std::greater<>());
  return f;
}

inline FeatureMatrix BuildFeatures(std::span<const ConfidenceVector> vectors) {
  FeatureMatrix x;
  x.rows = vectors.size();
  x.cols = vectors.empty() ? 0 : vectors.front().size();
  x.data.reserve(x.rows * x.cols);
  for (const auto& v : vectors) {
    const std::vector<double> f = AttackFeatures(v);
    x.data.insert(x.data.end(), f.begin(), f.end());
  }
  return x;
}

namespace internal {

// log(1 + e^t) without overflow.
inline double Softplus(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

inline double Sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double Margin(std::span<const double> weights, double bias,
                     std::span<const double> x) {
  double s = bias;
  for (size_t j = 0; j < x.size(); ++j) s += weights[j] * x[j];
  return s;
}

}  // namespace internal

// Mean negative log-likelihood of labels (1 = member) under
// P(member | x) = sigmoid(w . x + b).
inline double LogisticLoss(std::span<const double> weights, double bias,
                           const FeatureMatrix& x,
                           std::span<const int> labels) {
  double total = 0.0;
  for (size_t i = 0; i < x.rows; ++i) {
    const double s = internal::Margin(weights, bias, x.row(i));
    total += labels[i] ? internal::Softplus(-s) : internal::Softplus(s);
  }
  return total / static_cast<double>(x.rows);
}

// Gradient of LogisticLoss; the last entry is d/d bias.
inline std::vector<double> LogisticGradient(std::span<const double> weights,
                                            double bias,
                                            const FeatureMatrix& x,
                                            std::span<const int> labels) {
  std::vector<double> grad(x.cols + 1, 0.0);
  for (size_t i = 0; i < x.rows; ++i) {
    const auto row = x.row(i);
    const double residual =
        internal::Sigmoid(internal::Margin(weights, bias, row)) - labels[i];
    for (size_t j = 0; j < x.cols; ++j) grad[j] += residual * row[j];
    grad[x.cols] += residual;
  }
  for (double& g : grad) g /= static_cast<double>(x.rows);
  return grad;
}

struct LogisticOptions {
  int epochs = 2000;
  double learning_rate = 0.5;
  // Training stops once an epoch lowers the loss by less than this.
  double tolerance = 1e-6;
};

struct LogisticModel {
  std::vector<double> weights;
  double bias = 0.0;
  // Per-feature standardization fitted on the training set.
  std::vector<double> mean;
  std::vector<double> scale;
  int epochs_run = 0;
  double final_loss = 0.0;

  double Probability(std::span<const double> features) const {
    double s = bias;
    for (size_t j = 0; j < weights.size(); ++j) {
      s += weights[j] * (features[j] - mean[j]) / scale[j];
    }
    return internal::Sigmoid(s);
  }

  double Accuracy(const FeatureMatrix& x, std::span<const int> labels) const {
    size_t correct = 0;
    for (size_t i = 0; i < x.rows; ++i) {
      const int predicted = Probability(x.row(i)) > 0.5 ? 1 : 0;
      correct += predicted == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(x.rows);
  }
};

namespace internal {

inline absl::Status CheckLabelled(const FeatureMatrix& x,
                                  std::span<const int> labels) {
  if (x.rows == 0 || x.cols == 0) {
    return absl::InvalidArgumentError("feature matrix is empty");
  }
  if (labels.size() != x.rows) {
    return absl::InvalidArgumentError("one label per row required");
  }
  long positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) return absl::InvalidArgumentError("labels are 0/1");
    positives += l;
  }
  const long negatives = static_cast<long>(x.rows) - positives;
  if (std::abs(positives - negatives) > 0.1 * static_cast<double>(x.rows)) {
    return absl::InvalidArgumentError("labels must be balanced within 10%");
  }
  return absl::OkStatus();
}

}  // namespace internal

// Full-batch gradient descent on standardized features.
inline absl::StatusOr<LogisticModel> TrainLogistic(
    const FeatureMatrix& x, std::span<const int> labels,
    const LogisticOptions& options) {
  DPGUARD_RETURN_IF_ERROR(internal::CheckLabelled(x, labels));
  if (!(options.learning_rate > 0.0) || options.epochs < 1) {
    return absl::InvalidArgumentError("need a positive rate and epoch cap");
  }
  LogisticModel model;
  model.mean.assign(x.cols, 0.0);
  model.scale.assign(x.cols, 0.0);
  for (size_t i = 0; i < x.rows; ++i) {
    for (size_t j = 0; j < x.cols; ++j) model.mean[j] += x.row(i)[j];
  }
  for (double& m : model.mean) m /= static_cast<double>(x.rows);
  for (size_t i = 0; i < x.rows; ++i) {
    for (size_t j = 0; j < x.cols; ++j) {
      const double d = x.row(i)[j] - model.mean[j];
      model.scale[j] += d * d;
    }
  }
  for (double& s : model.scale) {
    s = std::sqrt(s / static_cast<double>(x.rows));
    // Constant features contribute nothing; keep them finite.
    if (!(s > 0.0)) s = 1.0;
  }
  FeatureMatrix standardized = x;
  for (size_t i = 0; i < x.rows; ++i) {
    auto row = standardized.row(i);
    for (size_t j = 0; j < x.cols; ++j) {
      row[j] = (row[j] - model.mean[j]) / model.scale[j];
    }
  }

  model.weights.assign(x.cols, 0.0);
  const double initial = LogisticLoss(model.weights, model.bias, standardized,
                                      labels);
  double previous = initial;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const std::vector<double> grad =
        LogisticGradient(model.weights, model.bias, standardized, labels);
    for (size_t j = 0; j < x.cols; ++j) {
      model.weights[j] -= options.learning_rate * grad[j];
    }
    model.bias -= options.learning_rate * grad[x.cols];
    const double loss =
        LogisticLoss(model.weights, model.bias, standardized, labels);
    model.epochs_run = epoch + 1;
    model.final_loss = loss;
    if (!std::isfinite(loss) || loss > 2.0 * initial + 1.0) {
      return absl::AbortedError(
          "logistic attack diverged; lower the learning rate");
    }
    if (std::abs(previous - loss) < options.tolerance) break;
    previous = loss;
  }
  return model;
}

// Trains on one split and reports accuracy on the other.
inline absl::StatusOr<double> LogisticAttack(const FeatureMatrix& train_x,
                                             std::span<const int> train_labels,
                                             const FeatureMatrix& test_x,
                                             std::span<const int> test_labels,
                                             const LogisticOptions& options) {
  DPGUARD_RETURN_IF_ERROR(internal::CheckLabelled(test_x, test_labels));
  if (train_x.cols != test_x.cols) {
    return absl::InvalidArgumentError("train and test widths differ");
  }
  DPGUARD_ASSIGN_OR_RETURN(LogisticModel model,
                           TrainLogistic(train_x, train_labels, options));
  return model.Accuracy(test_x, test_labels);
}

struct EvalReport {
  double epsilon = 0.0;
  // Threshold attack, in-sample balanced accuracy.
  double attack_accuracy_before = 0.0;
  double attack_accuracy_after = 0.0;
  // Logistic attack, held-out accuracy.
  double logistic_accuracy_before = 0.0;
  double logistic_accuracy_after = 0.0;
  double mean_l1_distortion = 0.0;
  double mean_l2_distortion = 0.0;
  double argmax_preservation_rate = 0.0;
  // Vectors whose policy budget was moved to the correct side of eps*.
  int clamped = 0;
  int n_members = 0;
  int n_nonmembers = 0;

  nlohmann::json ToJson() const {
    return nlohmann::json{
        {"epsilon", epsilon},
        {"attack_accuracy_before", attack_accuracy_before},
        {"attack_accuracy_after", attack_accuracy_after},
        {"logistic_accuracy_before", logistic_accuracy_before},
        {"logistic_accuracy_after", logistic_accuracy_after},
        {"mean_l1_distortion", mean_l1_distortion},
        {"mean_l2_distortion", mean_l2_distortion},
        {"argmax_preservation_rate", argmax_preservation_rate},
        {"clamped", clamped},
        {"n_members", n_members},
        {"n_nonmembers", n_nonmembers},
    };
  }

  // One "key=value" line per metric.
  std::string ToKeyValue() const {
    const nlohmann::json fields = ToJson();
    std::string out;
    for (const auto& [key, value] : fields.items()) {
      out += key;
      out += '=';
      out += value.is_number_float() ? FormatDouble(value.get<double>())
                                     : value.dump();
      out += '\n';
    }
    return out;
  }
};

struct EvalOptions {
  LogisticOptions logistic;
};

namespace internal {

// Members first, then non-members; the first half of each cohort trains the
// logistic attacker and the second half tests it.
inline void SplitForLogistic(std::span<const ConfidenceVector> members,
                             std::span<const ConfidenceVector> nonmembers,
                             FeatureMatrix& train_x, std::vector<int>& train_y,
                             FeatureMatrix& test_x, std::vector<int>& test_y) {
  std::vector<ConfidenceVector> train, test;
  train_y.clear();
  test_y.clear();
  auto split = [&](std::span<const ConfidenceVector> cohort, int label) {
    const size_t half = cohort.size() / 2;
    for (size_t i = 0; i < cohort.size(); ++i) {
      (i < half ? train : test).push_back(cohort[i]);
      (i < half ? train_y : test_y).push_back(label);
    }
  };
  split(members, 1);
  split(nonmembers, 0);
  train_x = BuildFeatures(train);
  test_x = BuildFeatures(test);
}

inline absl::StatusOr<double> LogisticOnCohorts(
    std::span<const ConfidenceVector> members,
    std::span<const ConfidenceVector> nonmembers,
    const LogisticOptions& options) {
  FeatureMatrix train_x, test_x;
  std::vector<int> train_y, test_y;
  SplitForLogistic(members, nonmembers, train_x, train_y, test_x, test_y);
  return LogisticAttack(train_x, train_y, test_x, test_y, options);
}

}  // namespace internal

// Runs both attackers on the raw cohorts, defends every vector (vector i uses
// nonce i; with a policy, its budget is chosen per vector), re-fits and
// re-runs both attackers on the defended cohorts, and aggregates distortion
// and label preservation.
inline absl::StatusOr<EvalReport> EvaluateDefense(
    const CohortSpec& spec, const MechanismConfig& cfg,
    const std::optional<DefensePolicy>& policy,
    const EvalOptions& options = {}) {
  DPGUARD_RETURN_IF_ERROR(cfg.Validate());
  if (policy) DPGUARD_RETURN_IF_ERROR(policy->Validate());
  DPGUARD_ASSIGN_OR_RETURN(Cohorts raw, GenerateCohorts(spec));

  EvalReport report;
  report.epsilon = cfg.epsilon;
  report.n_members = spec.n_members;
  report.n_nonmembers = spec.n_nonmembers;
  DPGUARD_ASSIGN_OR_RETURN(ThresholdResult before,
                           ThresholdAttack(raw.members, raw.nonmembers));
  report.attack_accuracy_before = before.accuracy;
  DPGUARD_ASSIGN_OR_RETURN(
      report.logistic_accuracy_before,
      internal::LogisticOnCohorts(raw.members, raw.nonmembers,
                                  options.logistic));

  Cohorts defended;
  uint64_t nonce = 0;
  size_t preserved = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  auto defend_all = [&](const std::vector<ConfidenceVector>& in,
                        std::vector<ConfidenceVector>& out) -> absl::Status {
    out.reserve(in.size());
    for (const ConfidenceVector& y : in) {
      std::optional<ConfidenceVector> z;
      if (policy) {
        DPGUARD_ASSIGN_OR_RETURN(PolicyOutcome outcome,
                                 DefendWithPolicy(y, cfg, *policy, nonce));
        report.clamped += outcome.choice.clamped;
        z = std::move(outcome.z);
      } else {
        DPGUARD_ASSIGN_OR_RETURN(z, Defend(y, cfg, nonce));
      }
      ++nonce;
      preserved += ArgMaxSet(z->scores()) == ArgMaxSet(y.scores());
      DPGUARD_ASSIGN_OR_RETURN(Distortion d, ComputeDistortion(y, *z));
      l1 += d.l1;
      l2 += d.l2;
      out.push_back(std::move(*z));
    }
    return absl::OkStatus();
  };
  DPGUARD_RETURN_IF_ERROR(defend_all(raw.members, defended.members));
  DPGUARD_RETURN_IF_ERROR(defend_all(raw.nonmembers, defended.nonmembers));

  const double total = static_cast<double>(spec.n_members + spec.n_nonmembers);
  report.mean_l1_distortion = l1 / total;
  report.mean_l2_distortion = l2 / total;
  report.argmax_preservation_rate = static_cast<double>(preserved) / total;

  DPGUARD_ASSIGN_OR_RETURN(
      ThresholdResult after,
      ThresholdAttack(defended.members, defended.nonmembers));
  report.attack_accuracy_after = after.accuracy;
  DPGUARD_ASSIGN_OR_RETURN(
      report.logistic_accuracy_after,
      internal::LogisticOnCohorts(defended.members, defended.nonmembers,
                                  options.logistic));
  return report;
}

}  // namespace dpguard

#endif  // DPGUARD_ATTACK_SIM_H_
