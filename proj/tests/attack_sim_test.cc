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


#include "dpguard/attack_sim.h"

#include <cmath>
#include <random>
#include <vector>

#include "absl/status/status.h"
#include "gtest/gtest.h"

namespace dpguard {
namespace {

double MeanMax(const std::vector<ConfidenceVector>& v) {
  double total = 0.0;
  for (const auto& y : v) total += y.max();
  return total / v.size();
}

TEST(CohortTest, SameSeedSameCohorts) {
  CohortSpec spec;
  spec.n_members = 200;
  spec.n_nonmembers = 200;
  spec.rng_seed = 17;
  const Cohorts a = *GenerateCohorts(spec);
  const Cohorts b = *GenerateCohorts(spec);
  ASSERT_EQ(a.members.size(), 200u);
  for (size_t i = 0; i < 200; ++i) {
    ASSERT_EQ(a.members[i], b.members[i]);
    ASSERT_EQ(a.nonmembers[i], b.nonmembers[i]);
  }
  spec.rng_seed = 18;
  EXPECT_FALSE(GenerateCohorts(spec)->members[0] == a.members[0]);
}

TEST(CohortTest, ConcentrationIsTheMeanTopScore) {
  CohortSpec spec;
  spec.n_members = 20000;
  spec.n_nonmembers = 20000;
  spec.member_concentration = 0.99;
  spec.nonmember_concentration = 0.6;
  const Cohorts c = *GenerateCohorts(spec);
  EXPECT_NEAR(MeanMax(c.members), 0.99, 0.005);
  // The planted class is not always the largest score when it is low.
  EXPECT_GE(MeanMax(c.nonmembers), 0.59);
  EXPECT_LE(MeanMax(c.nonmembers), 0.66);
  EXPECT_GT(MeanMax(c.members), MeanMax(c.nonmembers));
  for (const auto& y : c.nonmembers) ASSERT_EQ(y.size(), 10u);
}

TEST(CohortTest, RejectsBadSpecs) {
  CohortSpec spec;
  spec.k = 1;
  EXPECT_FALSE(GenerateCohorts(spec).ok());
  spec = CohortSpec{};
  spec.member_concentration = 1.0;
  EXPECT_FALSE(GenerateCohorts(spec).ok());
  spec = CohortSpec{};
  spec.nonmember_concentration = 0.05;
  EXPECT_FALSE(GenerateCohorts(spec).ok());
  spec = CohortSpec{};
  spec.member_concentration = 0.5;
  spec.nonmember_concentration = 0.9;
  EXPECT_FALSE(GenerateCohorts(spec).ok());
  spec = CohortSpec{};
  spec.n_members = 0;
  EXPECT_FALSE(GenerateCohorts(spec).ok());
}

TEST(ThresholdAttackTest, SeparatedFeaturesGiveFullAccuracy) {
  const std::vector<double> members = {0.9, 0.95, 0.99};
  const std::vector<double> nonmembers = {0.5, 0.6, 0.7};
  const ThresholdResult r = *ThresholdAttack(members, nonmembers);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.threshold, 0.7);
}

TEST(ThresholdAttackTest, IdenticalCohortsStayNearChance) {
  CohortSpec spec;
  spec.n_members = 10000;
  spec.n_nonmembers = 10000;
  spec.member_concentration = 0.9;
  spec.nonmember_concentration = 0.9;
  const Cohorts c = *GenerateCohorts(spec);
  const ThresholdResult r = *ThresholdAttack(c.members, c.nonmembers);
  EXPECT_LE(r.accuracy, 0.5 + 3.0 / std::sqrt(10000.0));
  EXPECT_GE(r.accuracy, 0.5);
}

TEST(ThresholdAttackTest, StrongSignalIsDetected) {
  CohortSpec spec;
  spec.n_members = 5000;
  spec.n_nonmembers = 5000;
  spec.member_concentration = 0.99;
  spec.nonmember_concentration = 0.6;
  const Cohorts c = *GenerateCohorts(spec);
  EXPECT_GE(ThresholdAttack(c.members, c.nonmembers)->accuracy, 0.65);
}

TEST(ThresholdAttackTest, EmptyCohortIsAnError) {
  const std::vector<double> some = {0.5};
  EXPECT_FALSE(ThresholdAttack(some, std::vector<double>{}).ok());
}

FeatureMatrix RandomMatrix(size_t rows, size_t cols, std::mt19937_64& gen) {
  std::normal_distribution<double> normal(0.0, 1.0);
  FeatureMatrix x;
  x.rows = rows;
  x.cols = cols;
  x.data.resize(rows * cols);
  for (double& v : x.data) v = normal(gen);
  return x;
}

TEST(LogisticTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(31);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t cols = 1 + gen() % 8;
    const FeatureMatrix x = RandomMatrix(64, cols, gen);
    std::vector<int> labels(64);
    for (int& l : labels) l = static_cast<int>(gen() % 2);
    std::vector<double> w(cols);
    for (double& v : w) v = normal(gen);
    const double bias = normal(gen);
    const std::vector<double> grad = LogisticGradient(w, bias, x, labels);
    const double h = 1e-5;
    for (size_t j = 0; j <= cols; ++j) {
      std::vector<double> wp = w, wm = w;
      double bp = bias, bm = bias;
      if (j < cols) {
        wp[j] += h;
        wm[j] -= h;
      } else {
        bp += h;
        bm -= h;
      }
      const double numeric =
          (LogisticLoss(wp, bp, x, labels) - LogisticLoss(wm, bm, x, labels)) /
          (2 * h);
      ASSERT_NEAR(grad[j], numeric, 1e-6 * std::max(1.0, std::abs(numeric)))
          << "coordinate " << j;
    }
  }
}

TEST(LogisticTest, NoSignalIsNearChance) {
  CohortSpec spec;
  spec.n_members = 4000;
  spec.n_nonmembers = 4000;
  spec.member_concentration = 0.9;
  spec.nonmember_concentration = 0.9;
  const Cohorts c = *GenerateCohorts(spec);
  const double acc =
      *internal::LogisticOnCohorts(c.members, c.nonmembers, LogisticOptions{});
  EXPECT_NEAR(acc, 0.5, 0.03);
}

TEST(LogisticTest, StrongSignalMatchesThresholdAttack) {
  CohortSpec spec;
  spec.n_members = 4000;
  spec.n_nonmembers = 4000;
  spec.member_concentration = 0.99;
  spec.nonmember_concentration = 0.6;
  const Cohorts c = *GenerateCohorts(spec);
  const double logistic =
      *internal::LogisticOnCohorts(c.members, c.nonmembers, LogisticOptions{});
  const double threshold = ThresholdAttack(c.members, c.nonmembers)->accuracy;
  EXPECT_GE(logistic, threshold - 0.02);
}

TEST(LogisticTest, HugeLearningRateReportsDivergence) {
  std::mt19937_64 gen(32);
  const FeatureMatrix x = RandomMatrix(200, 3, gen);
  std::vector<int> labels(200);
  for (size_t i = 0; i < 200; ++i) labels[i] = static_cast<int>(i % 2);
  LogisticOptions options;
  options.learning_rate = 1e6;
  EXPECT_EQ(TrainLogistic(x, labels, options).status().code(),
            absl::StatusCode::kAborted);
}

TEST(LogisticTest, RejectsBadInputs) {
  std::mt19937_64 gen(33);
  const FeatureMatrix x = RandomMatrix(10, 2, gen);
  const std::vector<int> unbalanced(10, 1);
  EXPECT_FALSE(TrainLogistic(x, unbalanced, LogisticOptions{}).ok());
  const std::vector<int> short_labels = {0, 1};
  EXPECT_FALSE(TrainLogistic(x, short_labels, LogisticOptions{}).ok());
  std::vector<int> labels(10);
  for (size_t i = 0; i < 10; ++i) labels[i] = static_cast<int>(i % 2);
  LogisticOptions bad;
  bad.learning_rate = 0.0;
  EXPECT_FALSE(TrainLogistic(x, labels, bad).ok());
}

TEST(AttackFeaturesTest, SortedDescending) {
  const ConfidenceVector y = *ConfidenceVector::Create({0.2, 0.5, 0.3});
  EXPECT_EQ(AttackFeatures(y), (std::vector<double>{0.5, 0.3, 0.2}));
}

TEST(EvaluateDefenseTest, KeepsLabelsAndHidesMembership) {
  CohortSpec spec;
  spec.n_members = 2000;
  spec.n_nonmembers = 2000;
  spec.member_concentration = 0.99;
  spec.nonmember_concentration = 0.6;
  MechanismConfig cfg;
  cfg.epsilon = 0.1;
  const EvalReport r = *EvaluateDefense(spec, cfg, DefensePolicy{});
  EXPECT_EQ(r.argmax_preservation_rate, 1.0);
  EXPECT_GE(r.attack_accuracy_before, 0.65);
  EXPECT_LE(r.attack_accuracy_after, 0.55);
  EXPECT_GT(r.mean_l1_distortion, 0.0);
  EXPECT_EQ(r.n_members, 2000);
}

TEST(EvaluateDefenseTest, NoSignalStaysNoSignal) {
  CohortSpec spec;
  spec.n_members = 10000;
  spec.n_nonmembers = 10000;
  spec.member_concentration = 0.95;
  spec.nonmember_concentration = 0.95;
  MechanismConfig cfg;
  cfg.epsilon = 1.0;
  const EvalReport r = *EvaluateDefense(spec, cfg, std::nullopt);
  EXPECT_GE(r.attack_accuracy_after, 0.45);
  EXPECT_LE(r.attack_accuracy_after, 0.55);
  EXPECT_EQ(r.argmax_preservation_rate, 1.0);
}

TEST(EvaluateDefenseTest, ReportFormats) {
  CohortSpec spec;
  spec.n_members = 100;
  spec.n_nonmembers = 100;
  const EvalReport r = *EvaluateDefense(spec, MechanismConfig{}, std::nullopt);
  const nlohmann::json j = r.ToJson();
  EXPECT_EQ(j["n_members"], 100);
  EXPECT_DOUBLE_EQ(j["attack_accuracy_after"].get<double>(),
                   r.attack_accuracy_after);
  const std::string kv = r.ToKeyValue();
  EXPECT_NE(kv.find("argmax_preservation_rate=1\n"), std::string::npos);
  EXPECT_NE(kv.find("n_members=100\n"), std::string::npos);
}

}  // namespace
}  // namespace dpguard
