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

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "sua/score.hpp"
#include "sua/train.hpp"
#include "support/audit.hpp"
#include "support/generators.hpp"

namespace sua {
namespace {

using testing::AuditedLoss;
using testing::audit_loss;
using testing::random_batch;
using testing::random_params;
using testing::small_spec;

TEST(TrainConfigTest, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.alpha = -1.0;
  EXPECT_THROW(c.validate(), ContractViolation);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ContractViolation);
  c = TrainConfig{};
  c.stop_gradient_in_alignment = false;
  c.divergence = DivergenceKind::kl;
  EXPECT_THROW(c.validate(), ContractViolation);
}

TEST(TrainConfigTest, MethodsZeroTheirTerms) {
  TrainConfig c;
  c.alpha = 0.7;
  c.beta = 0.3;
  c.method = Method::standard;
  EXPECT_EQ(c.effective_alpha(), 0.0);
  EXPECT_EQ(c.effective_beta(), 0.0);
  c.method = Method::sua_tr_minus_ent;
  EXPECT_EQ(c.effective_alpha(), 0.7);
  EXPECT_EQ(c.effective_beta(), 0.0);
  c.method = Method::sua_tr_minus_cons;
  EXPECT_EQ(c.effective_alpha(), 0.0);
  EXPECT_EQ(c.effective_beta(), 0.3);
  for (Method m : kAllMethods) EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("pgd"), ContractViolation);
}

class LossTest : public ::testing::Test {
 protected:
  World world_ = build_world(small_spec(TaskFamily::ambiguous), 51);
  Rng rng_ = make_stream(51, "loss.test");

  PerturbedBatch perturb_batch(const ModelParams& params, const std::vector<Example>& batch, int k) {
    std::vector<std::vector<TokenSeq>> rows;
    for (const Example& ex : batch) {
      std::vector<TokenSeq> row;
      for (Perturbation& p : sample_perturbations(world_, params, ex.tokens, PerturbConfig{}, rng_, k)) row.push_back(p.tokens);
      rows.push_back(std::move(row));
    }
    return perturbed_outputs(params, std::move(rows));
  }

  ModelParams constant_model(double bias0) {
    ModelParams params{ParamVector(ModelShape{world_.vocab_size(), 3, 3, world_.num_labels()}), 1.0};
    params.weights.out_bias(0) = bias0;
    return params;
  }
};

TEST_F(LossTest, TaskLossKnownValues) {
  const auto batch = random_batch(world_, rng_, 8);
  EXPECT_NEAR(loss_task(constant_model(0.0), batch).total, std::log(4.0), 1e-12);
  std::vector<Example> zero = batch;
  for (Example& ex : zero) ex.label_y = 0;
  EXPECT_NEAR(loss_task(constant_model(800.0), zero).total, 0.0, 1e-300);
}

TEST_F(LossTest, ConstantModelHasNoConsistencyLoss) {
  const ModelParams params = constant_model(1.3);
  const auto batch = random_batch(world_, rng_, 6);
  const LossBreakdown l = loss_cons(params, batch, perturb_batch(params, batch, 4));
  EXPECT_EQ(l.total, 0.0);
  for (double g : l.grad.values()) ASSERT_EQ(g, 0.0);
}

TEST_F(LossTest, ConsistencyMatchesSensitivityEstimate) {
  const ModelParams params = random_params(world_, rng_, 2.0);
  const auto batch = random_batch(world_, rng_, 6);
  std::vector<std::vector<Perturbation>> draws;
  std::vector<std::vector<TokenSeq>> rows;
  for (const Example& ex : batch) {
    draws.push_back(sample_perturbations(world_, params, ex.tokens, PerturbConfig{}, rng_, 4));
    std::vector<TokenSeq> row;
    for (const Perturbation& p : draws.back()) row.push_back(p.tokens);
    rows.push_back(row);
  }
  const LossBreakdown l = loss_cons(params, batch, perturbed_outputs(params, rows));
  double expected = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    expected += sensitivity_hat(params, batch[i].tokens, draws[i], DivergenceKind::js).first / static_cast<double>(batch.size());
  }
  EXPECT_NEAR(l.total, expected, 1e-14);
}

// Embeddings of tokens that occur only on the perturbed side get nothing.
TEST_F(LossTest, StopGradientLeavesPerturbedOnlyTokensAlone) {
  const ModelParams params = random_params(world_, rng_, 2.0);
  const auto batch = random_batch(world_, rng_, 4);
  const PerturbedBatch pb = perturb_batch(params, batch, 4);
  std::vector<bool> in_base(static_cast<std::size_t>(world_.vocab_size()), false);
  for (const Example& ex : batch) {
    for (int t : ex.tokens) in_base[static_cast<std::size_t>(t)] = true;
  }
  for (const LossBreakdown& l : {loss_cons(params, batch, pb), loss_ent(params, batch, pb, 0.01)}) {
    for (int t = 0; t < world_.vocab_size(); ++t) {
      if (in_base[static_cast<std::size_t>(t)]) continue;
      for (double g : l.grad.embedding(t)) ASSERT_EQ(g, 0.0);
    }
  }
}

TEST_F(LossTest, AlignmentLossVanishesBelowTheKink) {
  const ModelParams params = random_params(world_, rng_, 1.0);
  const auto batch = random_batch(world_, rng_, 8);
  const PerturbedBatch pb = perturb_batch(params, batch, 4);
  const LossBreakdown l = loss_ent(params, batch, pb, 1e3);
  EXPECT_EQ(l.total, 0.0);
  for (double g : l.grad.values()) ASSERT_EQ(g, 0.0);
}

TEST_F(LossTest, CompositeIsTheWeightedSum) {
  const ModelParams params = random_params(world_, rng_, 2.0);
  const auto batch = random_batch(world_, rng_, 5);
  const PerturbedBatch pb = perturb_batch(params, batch, 3);
  const LossWeights w{1.0, 0.6, 0.4};
  const LossBreakdown all = composite_loss(params, batch, &pb, w, LossOptions{0.1});
  const LossBreakdown t = loss_task(params, batch);
  const LossBreakdown c = loss_cons(params, batch, pb);
  const LossBreakdown e = loss_ent(params, batch, pb, 0.1);
  EXPECT_NEAR(all.total, t.total + 0.6 * c.total + 0.4 * e.total, 1e-12);
  for (std::size_t i = 0; i < all.grad.values().size(); ++i) {
    ASSERT_NEAR(all.grad.values()[i],
                t.grad.values()[i] + 0.6 * c.grad.values()[i] + 0.4 * e.grad.values()[i], 1e-12);
  }
}

TEST_F(LossTest, EmptyBatchOrMissingPerturbationsThrow) {
  const ModelParams params = random_params(world_, rng_);
  EXPECT_THROW(loss_task(params, std::vector<Example>{}), ContractViolation);
  EXPECT_THROW(composite_loss(params, random_batch(world_, rng_, 2), nullptr, LossWeights{1.0, 1.0, 0.0}, LossOptions{}),
               ContractViolation);
}

TEST(GradientAuditTest, TaskLoss) {
  const auto r = audit_loss(AuditedLoss::task, 50, 1);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
}

TEST(GradientAuditTest, ConsistencyLossJs) {
  const auto r = audit_loss(AuditedLoss::cons, 50, 2);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
}

TEST(GradientAuditTest, ConsistencyLossKl) {
  const auto r = audit_loss(AuditedLoss::cons, 20, 3, DivergenceKind::kl);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
}

TEST(GradientAuditTest, AlignmentLoss) {
  const auto r = audit_loss(AuditedLoss::ent, 50, 4);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
}

TEST(GradientAuditTest, CompositeLoss) {
  const auto r = audit_loss(AuditedLoss::composite, 50, 5);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
}

TEST(GradientAuditTest, AlignmentLossWithoutStopGradient) {
  const auto r = audit_loss(AuditedLoss::ent, 20, 6, DivergenceKind::js, false);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
}

class TrainTest : public ::testing::Test {
 protected:
  World world_ = build_world(small_spec(TaskFamily::factual, 200), 61);
  std::vector<Example> data_ = sample_dataset(world_);

  TrainConfig config(Method m, int epochs = 5) const {
    TrainConfig c;
    c.method = m;
    c.epochs = epochs;
    c.learning_rate = 0.5;
    c.seed = 3;
    c.d_emb = 8;
    c.d_hid = 8;
    return c;
  }
};

TEST_F(TrainTest, StandardEqualsZeroWeightSuaTr) {
  TrainConfig zeroed = config(Method::sua_tr);
  zeroed.alpha = 0.0;
  zeroed.beta = 0.0;
  EXPECT_EQ(train(world_, data_, config(Method::standard)).params, train(world_, data_, zeroed).params);
}

TEST_F(TrainTest, SameSeedSameParams) {
  const TrainResult a = train(world_, data_, config(Method::sua_tr, 3));
  const TrainResult b = train(world_, data_, config(Method::sua_tr, 3));
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.history.to_csv(), b.history.to_csv());
  TrainConfig other = config(Method::sua_tr, 3);
  other.seed = 4;
  EXPECT_NE(train(world_, data_, other).params, a.params);
}

TEST_F(TrainTest, TotalLossFallsOverTheFirstEpochs) {
  const TrainResult r = train(world_, data_, config(Method::sua_tr, 5));
  ASSERT_EQ(r.history.epochs.size(), 5u);
  EXPECT_LT(r.history.epochs.back().total_loss, r.history.epochs.front().total_loss);
}

TEST_F(TrainTest, AblationTrajectoryMatchesZeroBeta) {
  TrainConfig full = config(Method::sua_tr, 4);
  full.beta = 0.0;
  const TrainResult a = train(world_, data_, config(Method::sua_tr_minus_ent, 4));
  const TrainResult b = train(world_, data_, full);
  ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
  for (std::size_t e = 0; e < a.history.epochs.size(); ++e) EXPECT_EQ(a.history.epochs[e].cons_loss, b.history.epochs[e].cons_loss);
}

TEST_F(TrainTest, DivergenceAborts) {
  TrainConfig c = config(Method::standard, 50);
  c.learning_rate = 1e300;
  EXPECT_THROW(train(world_, data_, c), TrainingDiverged);
}

TEST_F(TrainTest, CheckpointHookSeesEveryEpoch) {
  std::vector<int> seen;
  train(world_, data_, config(Method::standard, 4), PerturbConfig{}, [&](int epoch, const ModelParams&) { seen.push_back(epoch); });
  EXPECT_EQ(seen, (std::vector<int>{1, 2, 3, 4}));
}

TEST_F(TrainTest, HistoryCsvHasOneRowPerEpoch) {
  const std::string csv = train(world_, data_, config(Method::standard, 3)).history.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,task_loss,cons_loss,ent_loss,total_loss,train_accuracy");
}

TEST_F(TrainTest, AdversarialBudgetOneTrainsOnRandomEdits) {
  TrainConfig c = config(Method::adversarial, 2);
  PerturbConfig pc;
  pc.adv_search_budget = 1;
  const TrainResult r = adversarial_train(world_, data_, c, pc);
  EXPECT_EQ(r.history.epochs.size(), 2u);
  EXPECT_TRUE(r.params.weights.all_finite());
  EXPECT_THROW(train(world_, data_, c), ContractViolation);
  EXPECT_EQ(train_method(world_, data_, c, pc).params, r.params);
}

TEST(TemperatureTest, CalibratedLogitsKeepUnitTemperature) {
  // Logits equal to true log-probabilities, labels drawn from them.
  Rng rng = make_stream(71, "temp.calibrated");
  std::vector<std::vector<double>> logits;
  std::vector<int> labels;
  for (int i = 0; i < 20000; ++i) {
    const Dist p = testing::full_support_dist(rng, 4);
    std::vector<double> z;
    for (double v : p) z.push_back(std::log(v));
    logits.push_back(z);
    labels.push_back(detail::sample_index(p, rng));
  }
  EXPECT_NEAR(fit_temperature(logits, labels).temperature, 1.0, 0.05);
}

TEST(TemperatureTest, OverconfidentLogitsGetWarmer) {
  Rng rng = make_stream(72, "temp.hot");
  std::vector<std::vector<double>> logits;
  std::vector<int> labels;
  for (int i = 0; i < 5000; ++i) {
    const Dist p = testing::full_support_dist(rng, 4);
    std::vector<double> z;
    for (double v : p) z.push_back(3.0 * std::log(v));
    logits.push_back(z);
    labels.push_back(detail::sample_index(p, rng));
  }
  const double t = fit_temperature(logits, labels).temperature;
  EXPECT_NEAR(t, 3.0, 0.2);
  EXPECT_LE(temperature_nll(logits, labels, t), temperature_nll(logits, labels, 1.0));
}

TEST_F(TrainTest, TemperatureScalingKeepsEveryLabel) {
  const ModelParams params = train(world_, data_, config(Method::standard, 10)).params;
  const auto valid = filter_split(data_, Split::valid);
  const TempScaler scaler = fit_temperature(params, valid);
  const ModelParams scaled = scaler.apply(params);
  EXPECT_GT(scaler.temperature, 0.0);
  for (const Example& ex : valid) {
    ASSERT_EQ(predict_label(predict(params, ex.tokens)), predict_label(predict(scaled, ex.tokens)));
  }
  EXPECT_EQ(scaled.weights, params.weights);
}

}  // namespace
}  // namespace sua
