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
#include <vector>

#include <gtest/gtest.h>

#include "sua/commands.hpp"
#include "sua/evaluate.hpp"
#include "support/generators.hpp"

namespace sua {
namespace {

using testing::random_params;
using testing::small_spec;

ModelParams constant_model(const World& world, std::vector<double> bias) {
  ModelParams params{ParamVector(ModelShape{world.vocab_size(), 3, 3, world.num_labels()}), 1.0};
  for (int y = 0; y < world.num_labels(); ++y) params.weights.out_bias(y) = bias[static_cast<std::size_t>(y)];
  return params;
}

class EvaluateTest : public ::testing::Test {
 protected:
  World world_ = build_world(small_spec(TaskFamily::ambiguous), 51);
  std::vector<Example> examples_ = filter_split(sample_dataset(world_), Split::test);
  PerturbConfig perturb_;
};

TEST_F(EvaluateTest, RobustAccuracyOfAConstantModelIsItsAccuracy) {
  const ModelParams params = constant_model(world_, {0.0, 2.0, 0.0, 0.0});
  int hits = 0;
  for (const Example& ex : examples_) hits += ex.label_y == 1 ? 1 : 0;
  Rng rng = make_stream(51, "robust");
  EXPECT_DOUBLE_EQ(robust_accuracy(params, world_, examples_, perturb_, rng),
                   static_cast<double>(hits) / static_cast<double>(examples_.size()));
}

TEST_F(EvaluateTest, RobustAccuracyIsDeterministic) {
  Rng init = make_stream(52, "params");
  const ModelParams params = random_params(world_, init, 1.0);
  Rng a = make_stream(52, "robust");
  Rng b = make_stream(52, "robust");
  EXPECT_EQ(robust_accuracy(params, world_, examples_, perturb_, a), robust_accuracy(params, world_, examples_, perturb_, b));
}

TEST(AgreementTest, PointMassAndUniform) {
  Rng rng = make_stream(53, "agree");
  EXPECT_EQ(agreement_rate(Dist({0.0, 1.0, 0.0}), 50, rng), 1.0);
  EXPECT_NEAR(agreement_rate(Dist({0.25, 0.25, 0.25, 0.25}), 100000, rng), 0.25, 0.01);
  EXPECT_THROW(agreement_rate(Dist({1.0}), 0, rng), ContractViolation);
}

TEST_F(EvaluateTest, DeterministicModelHasNoInconsistency) {
  const ModelParams params = constant_model(world_, {60.0, 0.0, 0.0, 0.0});
  Rng rng = make_stream(54, "baselines");
  const auto s = baseline_scores(params, world_, examples_.front().tokens, TempScaler{}, SuaConfig{}, perturb_, rng);
  EXPECT_EQ(s.self_consistency, 0.0);
  EXPECT_LT(s.entropy, 1e-20);
  EXPECT_LT(s.temp_scaled_conf, 1e-20);
  EXPECT_NEAR(s.sua, -s.entropy, 1e-15);
}

TEST_F(EvaluateTest, ScoredRecordsAndSummariesStayInRange) {
  Rng init = make_stream(55, "params");
  const ModelParams params = random_params(world_, init, 1.5);
  ScoringOptions options;
  options.consistency_samples = 20;
  const auto records = score_examples(params, world_, examples_, options, 55);
  ASSERT_EQ(records.size(), examples_.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const InputRecord& r = records[i];
    EXPECT_EQ(r.label, examples_[i].label_y);
    EXPECT_EQ(r.correct, r.predicted == r.label);
    EXPECT_EQ(r.ambiguous, has_ambiguous_cue(world_, examples_[i].tokens));
    EXPECT_GE(r.confidence, 1.0 / world_.num_labels() - 1e-12);
    EXPECT_LE(r.confidence, 1.0);
    EXPECT_GE(r.scores.self_consistency, 0.0);
    EXPECT_LE(r.scores.self_consistency, 1.0);
    EXPECT_NEAR(r.scores.sua, r.sua.score, 1e-15);
  }
  const auto again = score_examples(params, world_, examples_, options, 55);
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(again[i].scores.sua, records[i].scores.sua);
    EXPECT_EQ(again[i].robust_correct, records[i].robust_correct);
  }
  for (ScoreKind kind : {ScoreKind::entropy, ScoreKind::temp_scaled, ScoreKind::self_consistency, ScoreKind::sua}) {
    const MetricsReport m = summarize(records, "ambiguous", "standard", kind);
    EXPECT_EQ(m.score, to_string(kind));
    EXPECT_EQ(m.n, static_cast<int>(records.size()));
    EXPECT_EQ(m.ece.has_value(), kind != ScoreKind::self_consistency);
    for (double v : {m.accuracy, m.robust_accuracy, m.ece.value_or(0.0), m.auroc.value_or(0.0)}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    ASSERT_EQ(m.selective_accuracy.size(), 3u);
    EXPECT_DOUBLE_EQ(m.selective_accuracy.at(0.7), selective_accuracy(columns(records, kind, false).scores,
                                                                        columns(records, kind, false).correct, 0.7));
  }
}

TEST(BoundHelpersTest, PsiAndConfidenceMap) {
  EXPECT_EQ(BoundConfig::psi(0.0), 0.0);
  for (double h = 0.01; h < 3.0; h += 0.01) {
    ASSERT_LT(BoundConfig::psi(h), h);
    ASSERT_GT(BoundConfig::psi(h), BoundConfig::psi(h - 0.01));
  }
  const ConfidenceMap g;
  EXPECT_EQ(g(0.0), 1.0);
  EXPECT_NEAR(g(std::log(4.0)), 0.0, 1e-15);
  EXPECT_EQ(g(5.0), 0.0);
  EXPECT_NEAR(g(0.5 * std::log(4.0)), 0.5, 1e-15);
}

TEST_F(EvaluateTest, ConstantModelSlackIsKappaMinusLambdaEntropy) {
  // Perturbations cannot move a constant model, so the risk gap is zero and
  // the bound's slack reduces to kappa - lambda * H, which can be negative.
  const ModelParams params = constant_model(world_, {0.9, 0.2, -0.4, 0.1});
  for (double lambda : {0.25, 1.0, 2.0}) {
    BoundConfig bounds;
    bounds.lambda = lambda;
    const auto probes = probe_all(params, world_, examples_, bounds, perturb_, 56);
    const auto reports = verify_risk_bounds(probes, bounds);
    ASSERT_EQ(reports.pointwise.rows.size(), probes.size());
    for (std::size_t i = 0; i < probes.size(); ++i) {
      const RiskProbe& p = probes[i];
      ASSERT_EQ(p.sensitivity, 0.0);
      ASSERT_EQ(p.worst_risk, p.risk);
      ASSERT_NEAR(reports.pointwise.rows[i].slack(), p.kappa - lambda * p.entropy, 1e-12);
    }
  }
}

TEST_F(EvaluateTest, ProbesAreDeterministic) {
  Rng init = make_stream(57, "params");
  const ModelParams params = random_params(world_, init, 1.5);
  const auto a = probe_all(params, world_, examples_, BoundConfig{}, perturb_, 57);
  const auto b = probe_all(params, world_, examples_, BoundConfig{}, perturb_, 57);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].worst_risk, b[i].worst_risk);
    EXPECT_EQ(a[i].sua, b[i].sua);
    EXPECT_GE(a[i].worst_risk, 0.0);
    EXPECT_GE(a[i].sup_divergence, a[i].sensitivity - 1e-15);
  }
}

RiskProbe probe(double risk, double worst, double sua, double kappa) {
  RiskProbe p;
  p.risk = risk;
  p.worst_risk = worst;
  p.sua = sua;
  p.kappa = kappa;
  return p;
}

TEST(SelectiveBoundTest, InfiniteThresholdUsesThePopulationBound) {
  const std::vector<RiskProbe> probes{probe(0.2, 0.3, 0.1, 0.0), probe(0.4, 0.4, -0.2, 0.1), probe(0.0, 0.5, 0.3, 0.0)};
  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<double> taus{0.0, 0.1, inf};
  const BoundReport r = verify_selective_bound(probes, taus, BoundConfig{});
  ASSERT_EQ(r.rows.size(), 3u);
  // tau = 0 covers only the second probe.
  EXPECT_NEAR(r.rows[0].lhs, 0.4, 1e-15);
  EXPECT_NEAR(r.rows[0].rhs, 0.2 + 0.0 + 0.1, 1e-15);
  EXPECT_NEAR(r.rows[1].lhs, 0.35, 1e-15);
  EXPECT_NEAR(r.rows[1].rhs, 0.2 + 0.1 + 0.05, 1e-15);
  EXPECT_NEAR(r.rows[2].lhs, 0.4, 1e-15);
  EXPECT_NEAR(r.rows[2].rhs, 0.2 + (0.1 + 0.3) / 3.0 + 0.1 / 3.0, 1e-15);
  const auto& grid = r.extra["grid"];
  double last = 0.0;
  for (const auto& row : grid) {
    EXPECT_GE(row["coverage"].get<double>(), last);
    last = row["coverage"].get<double>();
  }
  EXPECT_EQ(last, 1.0);
}

TEST(SelectiveBoundTest, EmptyCoverageIsExcluded) {
  const std::vector<RiskProbe> probes{probe(0.2, 0.3, 0.1, 0.0)};
  const std::vector<double> taus{-1.0};
  const BoundReport r = verify_selective_bound(probes, taus, BoundConfig{});
  EXPECT_TRUE(r.rows[0].excluded);
  EXPECT_EQ(r.counted, 0);
}

TEST(SelectiveBoundTest, GridIsMonotone) {
  Rng rng = make_stream(58, "grid");
  std::vector<RiskProbe> probes;
  for (int i = 0; i < 100; ++i) probes.push_back(probe(0.1, 0.2, uniform01(rng) - 0.5, 0.0));
  const auto taus = tau_grid(probes);
  ASSERT_EQ(taus.size(), 5u);
  for (std::size_t i = 1; i < taus.size(); ++i) EXPECT_LE(taus[i - 1], taus[i]);
}

TEST_F(EvaluateTest, CollapseGapIsVacuousForAnUnsureModel) {
  const ModelParams params = constant_model(world_, {0.0, 0.0, 0.0, 0.0});
  const BoundReport r = verify_collapse_gap(world_, params, CollapseThresholds{}, examples_);
  EXPECT_EQ(r.counted, 0);
  EXPECT_TRUE(r.passed);
}

TEST_F(EvaluateTest, CollapseGapHoldsForACollapsedModel) {
  const ModelParams params = constant_model(world_, {25.0, 0.0, 0.0, 0.0});
  const BoundReport r = verify_collapse_gap(world_, params, CollapseThresholds{}, examples_);
  EXPECT_GT(r.counted, 0);
  EXPECT_EQ(r.hard_violations, 0);
  EXPECT_TRUE(r.passed);
  EXPECT_THROW(verify_collapse_gap(world_, params, CollapseThresholds{0.1, 0.2}, examples_), ContractViolation);
}

TEST(SmoothingTensionTest, HoldsIncludingEndpoints) {
  Rng rng = make_stream(59, "smoothing");
  const BoundReport r = verify_smoothing_tension(rng, 2000);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.counted, 2000);
  EXPECT_EQ(r.extra["risk_failures"].get<int>(), 0);
  EXPECT_LE(r.rows[1].lhs, 1e-15);  // full smoothing leaves nothing to diverge
  // The squared factor is only reported; it is exceeded on some pairs.
  EXPECT_TRUE(std::isfinite(r.extra["max_ratio_to_squared_factor"].get<double>()));
}

TEST(CalibrationBoundTest, InsensitiveModelHasZeroBound) {
  const std::vector<double> s(6, 0.0);
  const std::vector<double> h{0.0, 0.1, 0.5, 0.5, 1.0, 1.3};
  const std::vector<bool> correct{true, true, false, true, false, false};
  const ConfidenceMap g;
  const auto r = verify_calibration_bound(s, h, correct, g, 1.0);
  EXPECT_EQ(r.bound, 0.0);
  ASSERT_EQ(r.bins.size(), 15u);
  int total = 0;
  for (const auto& b : r.bins) total += b.count;
  EXPECT_EQ(total, 6);
  std::vector<double> conf;
  for (double v : h) conf.push_back(g(v));
  EXPECT_DOUBLE_EQ(r.ece, ece(conf, correct, 15));
  const std::string csv = r.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 16);
}

TEST(CalibrationBoundTest, BoundAveragesPositiveBinTerms) {
  // Both inputs share the top bin: S - H = 0.3 there.
  const auto r = verify_calibration_bound(std::vector<double>{0.4, 0.2}, std::vector<double>{0.0, 0.0}, {true, false},
                                 ConfidenceMap{}, 1.0);
  EXPECT_NEAR(r.bins[14].bound_term, 0.3, 1e-15);
  EXPECT_NEAR(r.bound, 0.3 / 15.0, 1e-15);
  EXPECT_NEAR(r.bins[14].residual, 0.5 - 0.3, 1e-15);
}

MetricsReport row(std::string seed, double acc, std::optional<double> e, std::optional<double> a) {
  MetricsReport m;
  m.task = "factual";
  m.method = "sua_tr";
  m.score = "sua";
  m.seed = std::move(seed);
  m.n = 10;
  m.accuracy = acc;
  m.robust_accuracy = acc / 2.0;
  m.ece = e;
  m.auroc = a;
  for (double c : kCoverageGrid) m.selective_accuracy[c] = acc + c / 10.0;
  return m;
}

TEST(AverageReportsTest, OptionalColumnsAverageWhatIsPresent) {
  const std::vector<MetricsReport> rows{row("0", 0.5, 0.1, std::nullopt), row("1", 0.7, 0.3, 0.6)};
  const MetricsReport m = average_reports(rows);
  EXPECT_EQ(m.seed, "mean");
  EXPECT_EQ(m.n, 20);
  EXPECT_NEAR(m.accuracy, 0.6, 1e-15);
  EXPECT_NEAR(m.robust_accuracy, 0.3, 1e-15);
  EXPECT_NEAR(*m.ece, 0.2, 1e-15);
  EXPECT_NEAR(*m.auroc, 0.6, 1e-15);
  EXPECT_NEAR(m.selective_accuracy.at(0.9), 0.69, 1e-15);
  EXPECT_THROW(average_reports(std::vector<MetricsReport>{}), ContractViolation);
}

TEST(MetricsCsvTest, RoundTrips) {
  const std::vector<MetricsReport> rows{row("0", 0.5, std::nullopt, 0.25), row("1", 0.125, 0.0625, std::nullopt)};
  std::string text = metrics_csv_header();
  for (const auto& r : rows) text += metrics_csv_row(r);
  const auto back = parse_metrics_csv(text);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].seed, rows[i].seed);
    EXPECT_EQ(back[i].n, rows[i].n);
    EXPECT_EQ(back[i].accuracy, rows[i].accuracy);
    EXPECT_EQ(back[i].ece, rows[i].ece);
    EXPECT_EQ(back[i].auroc, rows[i].auroc);
    for (double c : kCoverageGrid) EXPECT_NEAR(back[i].selective_accuracy.at(c), rows[i].selective_accuracy.at(c), 1e-10);
  }
  EXPECT_THROW(parse_metrics_csv("not,a,header\n"), IoError);
}

}  // namespace
}  // namespace sua
