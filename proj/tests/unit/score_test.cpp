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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "sua/metrics.hpp"
#include "sua/score.hpp"
#include "sua/train.hpp"
#include "support/generators.hpp"

namespace sua {
namespace {

using testing::random_params;
using testing::small_spec;

// Output depends on nothing but the output bias.
ModelParams constant_model(const World& world, std::vector<double> bias) {
  ModelParams params{ParamVector(ModelShape{world.vocab_size(), 3, 3, world.num_labels()}), 1.0};
  for (int y = 0; y < world.num_labels(); ++y) params.weights.out_bias(y) = bias[static_cast<std::size_t>(y)];
  return params;
}

class ScoreTest : public ::testing::Test {
 protected:
  World world_ = build_world(small_spec(TaskFamily::ambiguous), 41);
  Rng rng_ = make_stream(41, "score.test");
  PerturbConfig perturb_;
};

TEST(SuaScoreTest, WorkedExamples) {
  EXPECT_NEAR(sua_score(0.34, 0.02, 1.0), 0.32, 1e-12);
  EXPECT_NEAR(sua_score(0.11, 0.14, 1.0), -0.03, 1e-12);
  EXPECT_NEAR(sua_score(0.11, 0.14, 1e-12), 0.11, 1e-12);
  EXPECT_THROW(sua_score(0.1, 0.1, 0.0), ContractViolation);
}

TEST(SuaScoreTest, StrictlyDecreasingInLambda) {
  Rng rng = make_stream(42, "lambda.mono");
  for (int t = 0; t < 10000; ++t) {
    const double s = uniform01(rng);
    const double h = 1e-6 + uniform01(rng);
    const double l1 = 1e-3 + 5.0 * uniform01(rng);
    const double l2 = l1 * (1.0 + 1e-3 + uniform01(rng));
    ASSERT_LT(sua_score(s, h, l2), sua_score(s, h, l1));
  }
}

TEST(SuaRiskTest, PositivePartMean) {
  EXPECT_DOUBLE_EQ(sua_risk(std::vector<double>{-0.1, -0.5, 0.0}), 0.0);
  EXPECT_NEAR(sua_risk(std::vector<double>{0.2, -0.1}), 0.1, 1e-15);
  EXPECT_THROW(sua_risk(std::vector<double>{}), ContractViolation);
  Rng rng = make_stream(43, "risk");
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(static_cast<std::size_t>(uniform_int(rng, 1, 50)));
    double brute = 0.0;
    for (double& v : s) {
      v = uniform01(rng) - 0.5;
      brute += v > 0.0 ? v : 0.0;
    }
    ASSERT_NEAR(sua_risk(s), brute / static_cast<double>(s.size()), 1e-15);
  }
}

TEST_F(ScoreTest, ConstantModelHasZeroSensitivity) {
  const ModelParams params = constant_model(world_, {0.3, -0.2, 0.5, 0.0});
  const TokenSeq x = sample_tokens(world_, rng_, false);
  const auto ps = sample_perturbations(world_, params, x, perturb_, rng_, 8);
  EXPECT_EQ(sensitivity_hat(params, x, ps, DivergenceKind::js).first, 0.0);
}

TEST_F(ScoreTest, SensitivityMatchesExplicitLoop) {
  const ModelParams params = random_params(world_, rng_, 2.0);
  for (int i = 0; i < 100; ++i) {
    const TokenSeq x = sample_tokens(world_, rng_, false);
    const auto ps = sample_perturbations(world_, params, x, perturb_, rng_, uniform_int(rng_, 1, 8));
    for (DivergenceKind kind : {DivergenceKind::kl, DivergenceKind::js, DivergenceKind::tv}) {
      const auto [s, divs] = sensitivity_hat(params, x, ps, kind);
      double total = 0.0;
      for (std::size_t k = 0; k < ps.size(); ++k) {
        const double d = divergence(kind, predict(params, x), predict(params, ps[k].tokens));
        ASSERT_EQ(divs[k], d);
        total += d;
      }
      ASSERT_NEAR(s, total / static_cast<double>(ps.size()), 1e-15);
      if (ps.size() == 1) {
        ASSERT_EQ(s, divs[0]);
      }
    }
  }
  EXPECT_THROW(sensitivity_hat(params, sample_tokens(world_, rng_, false), std::vector<Perturbation>{}, DivergenceKind::js),
               ContractViolation);
}

TEST_F(ScoreTest, EstimateFieldsAreConsistent) {
  const ModelParams params = random_params(world_, rng_, 2.0);
  SuaConfig config;
  config.lambda = 0.7;
  config.K = 6;
  for (int i = 0; i < 100; ++i) {
    const SuaEstimate e = estimate_sua(params, world_, sample_tokens(world_, rng_, false), config, perturb_, rng_);
    ASSERT_EQ(e.k_used, 6);
    ASSERT_EQ(e.divergences.size(), 6u);
    double mean = 0.0;
    for (double d : e.divergences) mean += d / 6.0;
    ASSERT_NEAR(e.sensitivity_hat, mean, 1e-15);
    ASSERT_NEAR(e.score, e.sensitivity_hat - 0.7 * e.entropy, 1e-12);
  }
}

// Monte Carlo stabilization on a briefly trained model.
TEST_F(ScoreTest, LargeKEstimatesAgree) {
  TaskSpec spec = small_spec(TaskFamily::ambiguous, 400);
  const World world = build_world(spec, 44);
  TrainConfig tc;
  tc.method = Method::standard;
  tc.learning_rate = 1.0;
  tc.epochs = 20;
  const ModelParams params = train(world, sample_dataset(world), tc).params;
  SuaConfig k64;
  k64.K = 64;
  SuaConfig k256;
  k256.K = 256;
  double gap = 0.0;
  for (int i = 0; i < 100; ++i) {
    const TokenSeq x = sample_tokens(world, rng_, false);
    gap += std::abs(estimate_sua(params, world, x, k64, perturb_, rng_).sensitivity_hat -
                    estimate_sua(params, world, x, k256, perturb_, rng_).sensitivity_hat);
  }
  EXPECT_LT(gap / 100.0, 0.01);
}

TEST_F(ScoreTest, ResampleProxyOfDeterministicModelIsZero) {
  const ModelParams params = constant_model(world_, {60.0, 0.0, 0.0, 0.0});
  EXPECT_EQ(ambiguity_proxy(params, world_, sample_tokens(world_, rng_, false), 64, rng_, ProxyMode::resample), 0.0);
}

TEST(AmbiguityProxyTest, UniformBinaryModelApproachesLn2) {
  TaskSpec spec = small_spec(TaskFamily::factual);
  spec.num_labels = 2;
  spec.num_readings = 2;
  const World world = build_world(spec, 3);
  Rng rng = make_stream(3, "proxy.uniform");
  const ModelParams params = constant_model(world, {0.0, 0.0});
  EXPECT_NEAR(ambiguity_proxy(params, world, sample_tokens(world, rng, false), 1000, rng, ProxyMode::resample),
              std::numbers::ln2, 0.05);
  EXPECT_THROW(ambiguity_proxy(params, world, sample_tokens(world, rng, false), 1, rng), ContractViolation);
}

// A collapsed model that reads surface forms: even-numbered forms of a word
// push toward label 0, odd-numbered forms toward label 1.
TEST_F(ScoreTest, ParaphraseProxySeesWhatResamplingMisses) {
  ModelParams params{ParamVector(ModelShape{world_.vocab_size(), 1, 1, world_.num_labels()}), 1.0};
  for (int t = 0; t < world_.vocab_size(); ++t) {
    if (!world_.is_content(t)) continue;
    const auto members = world_.class_members(world_.token(t).equivalence_class);
    const auto form = std::find(members.begin(), members.end(), t) - members.begin();
    params.weights.embedding(t)[0] = form % 2 == 0 ? 1.0 : -1.0;
  }
  params.weights.hidden_weight(0, 0) = 20.0;
  params.weights.out_weight(0, 0) = 60.0;
  params.weights.out_weight(0, 1) = -60.0;

  const int cue = world_.ambiguous_cues()[0];
  const int noise = world_.noise_tokens()[0];
  const TokenSeq x{cue, world_.content_token(0, 0, 0), noise, noise};
  ASSERT_GT(ground_truth(world_, x).ambiguity, 0.5);
  ASSERT_LT(entropy(predict(params, x)), 1e-6);
  perturb_.epsilon = 1;
  EXPECT_EQ(ambiguity_proxy(params, world_, x, 32, rng_, ProxyMode::resample, perturb_), 0.0);
  EXPECT_GT(ambiguity_proxy(params, world_, x, 32, rng_, ProxyMode::paraphrase, perturb_), 0.1);
}

TEST_F(ScoreTest, ThresholdLimits) {
  const ModelParams params = random_params(world_, rng_, 2.0);
  SuaConfig config;
  for (int i = 0; i < 50; ++i) {
    const TokenSeq x = sample_tokens(world_, rng_, false);
    config.tau = std::numeric_limits<double>::infinity();
    const AbstentionOutcome answer = infer_with_abstention(params, world_, x, config, perturb_, rng_);
    ASSERT_FALSE(answer.abstain);
    ASSERT_EQ(answer.label, predict_label(predict(params, x)));
    config.tau = -std::numeric_limits<double>::infinity();
    const AbstentionOutcome refuse = infer_with_abstention(params, world_, x, config, perturb_, rng_);
    ASSERT_TRUE(refuse.abstain);
    ASSERT_EQ(refuse.label, -1);
    ASSERT_EQ(refuse.diagnostics.k_used, config.K);
  }
}

TEST_F(ScoreTest, ConstantModelAnswersAtZeroThreshold) {
  const ModelParams params = constant_model(world_, {0.4, 0.1, -0.3, 0.0});
  SuaConfig config;
  config.tau = 0.0;
  for (int i = 0; i < 50; ++i) {
    const AbstentionOutcome o = infer_with_abstention(params, world_, sample_tokens(world_, rng_, false), config, perturb_, rng_);
    ASSERT_LE(o.diagnostics.score, 0.0);
    ASSERT_FALSE(o.abstain);
  }
}

TEST_F(ScoreTest, CoverageShrinksAsThresholdDrops) {
  const ModelParams params = random_params(world_, rng_, 2.0);
  std::vector<double> scores;
  SuaConfig config;
  for (int i = 0; i < 200; ++i) scores.push_back(estimate_sua(params, world_, sample_tokens(world_, rng_, false), config, perturb_, rng_).score);
  double previous = 1.0;
  for (double tau = 1.0; tau >= -2.0; tau -= 0.01) {
    const double c = coverage_at(scores, tau);
    ASSERT_LE(c, previous);
    previous = c;
  }
}

TEST(ScoreCsvTest, RowFormat) {
  std::ostringstream os;
  write_score_csv_header(os);
  SuaEstimate e;
  e.sensitivity_hat = 0.25;
  e.entropy = 0.5;
  e.score = -0.25;
  write_score_csv_row(os, ScoreRow{"test-0", e, 2});
  write_score_csv_row(os, ScoreRow{"test-1", e, std::nullopt});
  EXPECT_EQ(os.str(),
            "input_id,sensitivity,entropy,score,decision\n"
            "test-0,0.25,0.5,-0.25,answer:2\n"
            "test-1,0.25,0.5,-0.25,abstain\n");
}

TEST(SuaConfigTest, ValidationAndJson) {
  SuaConfig c;
  c.lambda = 0.5;
  c.divergence = DivergenceKind::tv;
  c.K = 3;
  c.tau = -0.2;
  nlohmann::json j = c;
  const SuaConfig back = j.get<SuaConfig>();
  EXPECT_EQ(back.lambda, 0.5);
  EXPECT_EQ(back.divergence, DivergenceKind::tv);
  EXPECT_EQ(back.K, 3);
  EXPECT_EQ(back.tau, -0.2);
  c.K = 0;
  EXPECT_THROW(c.validate(), ContractViolation);
  c = SuaConfig{};
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), ContractViolation);
}

}  // namespace
}  // namespace sua
