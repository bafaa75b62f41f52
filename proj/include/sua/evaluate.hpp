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

// Evaluation: per-input scoring, the metrics table, baseline failure scores
// and empirical checks of the risk, calibration and abstention bounds.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sua/io.hpp"
#include "sua/metrics.hpp"
#include "sua/model.hpp"
#include "sua/perturb.hpp"
#include "sua/prob.hpp"
#include "sua/score.hpp"
#include "sua/train.hpp"
#include "sua/world.hpp"

namespace sua {

/// Eval population for a task family: the shifted family also includes the
/// held-out-form split.
inline std::vector<Example> eval_split(std::span<const Example> dataset, TaskFamily family) {
  std::vector<Example> out = filter_split(dataset, Split::test);
  if (family == TaskFamily::shifted) {
    const auto extra = filter_split(dataset, Split::shifted_test);
    out.insert(out.end(), extra.begin(), extra.end());
  }
  return out;
}

inline bool has_ambiguous_cue(const World& world, std::span<const int> tokens) {
  const auto cues = world.ambiguous_cues();
  return std::find(cues.begin(), cues.end(), tokens.front()) != cues.end();
}

/// One perturbation per example from the mixture; accuracy on the perturbed inputs.
inline double robust_accuracy(const ModelParams& params, const World& world, std::span<const Example> examples,
                              const PerturbConfig& perturb, Rng& rng) {
  require(!examples.empty(), "robust accuracy needs examples");
  int hits = 0;
  for (const Example& ex : examples) {
    const auto ps = sample_perturbations(world, params, ex.tokens, perturb, rng, 1);
    hits += predict_label(predict(params, ps.front().tokens)) == ex.label_y ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

/// Failure scores for one input; all oriented so larger means more suspect.
struct BaselineScores {
  double entropy = 0.0;
  double self_consistency = 0.0;  // 1 - agreement with the sampled mode
  double temp_scaled_conf = 0.0;  // 1 - max softmax(logits / T)
  double sua = 0.0;
};

/// Share of `samples` labels drawn from p that agree with their mode.
inline double agreement_rate(const Dist& p, int samples, Rng& rng) {
  require(samples >= 1, "agreement needs at least one sample");
  std::vector<int> counts(p.size(), 0);
  for (int i = 0; i < samples; ++i) ++counts[static_cast<std::size_t>(detail::sample_index(p, rng))];
  return static_cast<double>(*std::max_element(counts.begin(), counts.end())) / samples;
}

inline BaselineScores baseline_scores(const ModelParams& params, const World& world, std::span<const int> tokens,
                                      const TempScaler& scaler, const SuaConfig& sua, const PerturbConfig& perturb,
                                      Rng& rng, int consistency_samples = kDefaultProxySamples) {
  const ForwardTrace trace = forward_trace(params, tokens);
  BaselineScores out;
  out.entropy = entropy(trace.output);
  out.self_consistency = 1.0 - agreement_rate(trace.output, consistency_samples, rng);
  const Dist scaled = softmax(trace.logits, scaler.temperature);
  out.temp_scaled_conf = 1.0 - scaled[static_cast<std::size_t>(predict_label(scaled))];
  out.sua = estimate_sua(params, world, tokens, sua, perturb, rng).score;
  return out;
}

/// Everything measured on one eval input.
struct InputRecord {
  int label = 0;
  int predicted = 0;
  bool correct = false;
  bool robust_correct = false;
  bool ambiguous = false;
  double confidence = 0.0;
  double temp_confidence = 0.0;
  BaselineScores scores;
  SuaEstimate sua;
};

struct ScoringOptions {
  SuaConfig sua;
  PerturbConfig perturb;
  TempScaler scaler;
  int consistency_samples = kDefaultProxySamples;
};

/// Scores every example with streams derived from `seed` so that records do
/// not depend on evaluation order elsewhere.
inline std::vector<InputRecord> score_examples(const ModelParams& params, const World& world, std::span<const Example> examples,
                                               const ScoringOptions& options, std::uint64_t seed) {
  std::vector<InputRecord> out;
  out.reserve(examples.size());
  Rng robust_rng = make_stream(seed, "eval.robust");
  Rng score_rng = make_stream(seed, "eval.scores");
  Rng sc_rng = make_stream(seed, "eval.consistency");
  for (const Example& ex : examples) {
    InputRecord r;
    const ForwardTrace trace = forward_trace(params, ex.tokens);
    r.label = ex.label_y;
    r.predicted = predict_label(trace.output);
    r.correct = r.predicted == ex.label_y;
    r.confidence = trace.output[static_cast<std::size_t>(r.predicted)];
    r.ambiguous = has_ambiguous_cue(world, ex.tokens);
    const auto ps = sample_perturbations(world, params, ex.tokens, options.perturb, robust_rng, 1);
    r.robust_correct = predict_label(predict(params, ps.front().tokens)) == ex.label_y;
    r.sua = estimate_sua(params, world, ex.tokens, options.sua, options.perturb, score_rng);
    r.scores.entropy = entropy(trace.output);
    r.scores.sua = r.sua.score;
    r.scores.self_consistency = 1.0 - agreement_rate(trace.output, options.consistency_samples, sc_rng);
    const Dist scaled = softmax(trace.logits, options.scaler.temperature);
    r.temp_confidence = scaled[static_cast<std::size_t>(predict_label(scaled))];
    r.scores.temp_scaled_conf = 1.0 - r.temp_confidence;
    out.push_back(std::move(r));
  }
  return out;
}

/// Which score and confidence a metrics row uses.
enum class ScoreKind { entropy, temp_scaled, self_consistency, sua };

inline std::string_view to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::entropy: return "entropy";
    case ScoreKind::temp_scaled: return "temp_scaled_conf";
    case ScoreKind::self_consistency: return "self_consistency";
    case ScoreKind::sua: return "sua";
  }
  return "entropy";
}

inline double failure_score(const InputRecord& r, ScoreKind k) {
  switch (k) {
    case ScoreKind::entropy: return r.scores.entropy;
    case ScoreKind::temp_scaled: return r.scores.temp_scaled_conf;
    case ScoreKind::self_consistency: return r.scores.self_consistency;
    case ScoreKind::sua: return r.scores.sua;
  }
  return r.scores.entropy;
}

inline constexpr double kCoverageGrid[] = {0.7, 0.8, 0.9};

struct MetricsReport {
  std::string task;
  std::string method;
  std::string score;
  std::string subset = "all";  // "all" or "ambiguous"
  std::string seed;            // a seed, or "mean" for seed-averaged rows
  int n = 0;
  double accuracy = 0.0;
  double robust_accuracy = 0.0;
  std::optional<double> ece;  // empty for scores that are not confidences
  std::optional<double> auroc;
  std::map<double, double> selective_accuracy;  // coverage -> accuracy
};

struct RecordColumns {
  std::vector<double> scores;
  std::vector<bool> correct;
  std::vector<double> confidence;
};

inline RecordColumns columns(std::span<const InputRecord> records, ScoreKind kind, bool temp_confidence) {
  RecordColumns c;
  for (const InputRecord& r : records) {
    c.scores.push_back(failure_score(r, kind));
    c.correct.push_back(r.correct);
    c.confidence.push_back(temp_confidence ? r.temp_confidence : r.confidence);
  }
  return c;
}

inline std::optional<double> failure_auroc(std::span<const InputRecord> records, ScoreKind kind) {
  const RecordColumns c = columns(records, kind, false);
  std::vector<bool> failure(c.correct.size());
  for (std::size_t i = 0; i < failure.size(); ++i) failure[i] = !c.correct[i];
  return auroc(c.scores, failure);
}

inline MetricsReport summarize(std::span<const InputRecord> records, std::string task, std::string method, ScoreKind kind) {
  require(!records.empty(), "no records to summarize");
  MetricsReport m;
  m.task = std::move(task);
  m.method = std::move(method);
  m.score = std::string(to_string(kind));
  m.n = static_cast<int>(records.size());
  const RecordColumns c = columns(records, kind, kind == ScoreKind::temp_scaled);
  m.accuracy = accuracy(c.correct);
  std::vector<bool> robust;
  for (const InputRecord& r : records) robust.push_back(r.robust_correct);
  m.robust_accuracy = accuracy(robust);
  if (kind != ScoreKind::self_consistency) m.ece = ece(c.confidence, c.correct, 15);
  m.auroc = failure_auroc(records, kind);
  for (double cov : kCoverageGrid) m.selective_accuracy[cov] = selective_accuracy(c.scores, c.correct, cov);
  return m;
}

/// Seed average of rows that share task, method, score and subset. Optional
/// columns average over the rows that have them.
inline MetricsReport average_reports(std::span<const MetricsReport> rows) {
  require(!rows.empty(), "nothing to average");
  MetricsReport m;
  m.task = rows.front().task;
  m.method = rows.front().method;
  m.score = rows.front().score;
  m.subset = rows.front().subset;
  m.seed = "mean";
  const double n = static_cast<double>(rows.size());
  double ece_sum = 0.0;
  double auroc_sum = 0.0;
  int ece_count = 0;
  int auroc_count = 0;
  for (const MetricsReport& r : rows) {
    m.n += r.n;
    m.accuracy += r.accuracy / n;
    m.robust_accuracy += r.robust_accuracy / n;
    if (r.ece) {
      ece_sum += *r.ece;
      ++ece_count;
    }
    if (r.auroc) {
      auroc_sum += *r.auroc;
      ++auroc_count;
    }
    for (const auto& [cov, acc] : r.selective_accuracy) m.selective_accuracy[cov] += acc / n;
  }
  if (ece_count > 0) m.ece = ece_sum / ece_count;
  if (auroc_count > 0) m.auroc = auroc_sum / auroc_count;
  return m;
}

inline std::string metrics_csv_header() {
  return "task,method,score,subset,seed,n,accuracy,robust_accuracy,ece,auroc,selective_accuracy_70,"
         "selective_accuracy_80,selective_accuracy_90\n";
}

inline std::string metrics_csv_row(const MetricsReport& m) {
  std::ostringstream os;
  os << m.task << ',' << m.method << ',' << m.score << ',' << m.subset << ',' << m.seed << ',' << m.n << ',' << fmt_num(m.accuracy) << ','
     << fmt_num(m.robust_accuracy) << ',' << fmt_num(m.ece) << ',' << fmt_num(m.auroc);
  for (double cov : kCoverageGrid) os << ',' << fmt_num(m.selective_accuracy.at(cov));
  os << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Bound checks

struct BoundConfig {
  double lipschitz = 1.0;  // 0-1 loss against total variation
  double lambda = 1.0;
  double slack_tolerance = 1e-6;
  double logged_excess = 0.05;  // smaller excesses are attributed to the finite search and logged
  double max_violation_rate = 0.01;

  static double psi(double h) { return 1.0 - std::exp(-h); }
};

struct BoundRow {
  int index = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  bool excluded = false;
  [[nodiscard]] double slack() const { return rhs - lhs; }
};

struct BoundReport {
  std::string name;
  bool asserted = true;
  std::vector<BoundRow> rows;
  int counted = 0;
  int excluded = 0;
  int raw_violations = 0;     // slack < -tolerance
  int logged_violations = 0;  // excess below the logging cutoff
  int hard_violations = 0;
  double violation_rate = 0.0;  // hard violations / counted
  double raw_violation_rate = 0.0;
  bool passed = true;
  nlohmann::json extra = nlohmann::json::object();

  [[nodiscard]] std::string to_csv() const {
    std::ostringstream os;
    os << "check,index,lhs,rhs,slack,excluded\n";
    for (const BoundRow& r : rows) {
      os << name << ',' << r.index << ',' << fmt_num(r.lhs) << ',' << fmt_num(r.rhs) << ',' << fmt_num(r.slack()) << ','
         << (r.excluded ? 1 : 0) << '\n';
    }
    return os.str();
  }

  [[nodiscard]] nlohmann::json summary() const {
    return {{"check", name},
            {"asserted", asserted},
            {"counted", counted},
            {"excluded", excluded},
            {"raw_violations", raw_violations},
            {"logged_violations", logged_violations},
            {"hard_violations", hard_violations},
            {"violation_rate", violation_rate},
            {"raw_violation_rate", raw_violation_rate},
            {"passed", passed},
            {"extra", extra}};
  }
};

/// Tallies rows under the tolerance/logging policy. `max_rate` < 0 means
/// violations are reported but never fail the check.
inline void tally(BoundReport& report, const BoundConfig& config, double max_rate) {
  report.counted = report.excluded = report.raw_violations = report.logged_violations = report.hard_violations = 0;
  for (const BoundRow& r : report.rows) {
    if (r.excluded) {
      ++report.excluded;
      continue;
    }
    ++report.counted;
    const double excess = -r.slack();
    if (excess > config.slack_tolerance) {
      ++report.raw_violations;
      if (excess < config.logged_excess) ++report.logged_violations;
      else ++report.hard_violations;
    }
  }
  const double n = std::max(report.counted, 1);
  report.violation_rate = report.hard_violations / n;
  report.raw_violation_rate = report.raw_violations / n;
  report.asserted = max_rate >= 0.0;
  report.passed = !report.asserted || report.violation_rate <= max_rate;
}

/// Per-input quantities shared by the pointwise and selective risk bounds.
struct RiskProbe {
  double risk = 0.0;           // R(x), 0-1 loss under the model's own distribution
  double worst_risk = 0.0;     // max R(x') over the searched candidates
  double entropy = 0.0;
  double sensitivity = 0.0;    // mean TV over the K sampled perturbations
  double sup_divergence = 0.0; // max TV over every candidate examined
  double sua = 0.0;            // sensitivity - lambda * entropy
  double kappa = 0.0;
  bool lambda_ok = true;       // lambda * H >= psi(H)
};

inline RiskProbe probe_risk(const ModelParams& params, const World& world, std::span<const int> tokens,
                            const BoundConfig& bounds, const PerturbConfig& perturb, Rng& rng) {
  RiskProbe p;
  const Dist base = predict(params, tokens);
  p.risk = model_risk(base);
  p.entropy = entropy(base);
  p.kappa = kappa(ground_truth(world, tokens), p.risk);
  p.lambda_ok = bounds.lambda * p.entropy >= BoundConfig::psi(p.entropy) - 1e-15;

  const auto ps = sample_perturbations(world, params, tokens, perturb, rng);
  double total = 0.0;
  p.worst_risk = 0.0;
  for (const Perturbation& q : ps) {
    const Dist out = predict(params, q.tokens);
    const double d = tv(base, out);
    total += d;
    p.sup_divergence = std::max(p.sup_divergence, d);
    p.worst_risk = std::max(p.worst_risk, model_risk(out));
  }
  p.sensitivity = total / static_cast<double>(ps.size());
  p.sua = p.sensitivity - bounds.lambda * p.entropy;

  adversarial_search(world, tokens, perturb, perturb.adv_search_budget, rng, [&](const TokenSeq& cand) {
    const Dist out = predict(params, cand);
    p.sup_divergence = std::max(p.sup_divergence, tv(base, out));
    const double r = model_risk(out);
    p.worst_risk = std::max(p.worst_risk, r);
    return r;
  });
  return p;
}

inline std::vector<RiskProbe> probe_all(const ModelParams& params, const World& world, std::span<const Example> examples,
                                        const BoundConfig& bounds, const PerturbConfig& perturb, std::uint64_t seed) {
  Rng rng = make_stream(seed, "eval.bounds");
  std::vector<RiskProbe> out;
  out.reserve(examples.size());
  for (const Example& ex : examples) out.push_back(probe_risk(params, world, ex.tokens, bounds, perturb, rng));
  return out;
}

struct RiskBoundReports {
  BoundReport pointwise;      // worst risk <= R + L * SUA + kappa
  BoundReport pointwise_sup;  // worst risk <= R + L * sup D - psi(H) + kappa
  BoundReport population;     // E worst risk <= E R + L * E SUA_+ + E kappa
};

inline RiskBoundReports verify_risk_bounds(std::span<const RiskProbe> probes, const BoundConfig& bounds) {
  RiskBoundReports out;
  out.pointwise.name = "risk_bound_sua";
  out.pointwise_sup.name = "risk_bound_sup";
  out.population.name = "risk_bound_population";
  double sum_worst = 0.0;
  double sum_risk = 0.0;
  double sum_sua_pos = 0.0;
  double sum_kappa = 0.0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const RiskProbe& p = probes[i];
    BoundRow row{static_cast<int>(i), p.worst_risk, p.risk + bounds.lipschitz * p.sua + p.kappa, !p.lambda_ok};
    out.pointwise.rows.push_back(row);
    row.rhs = p.risk + bounds.lipschitz * p.sup_divergence - BoundConfig::psi(p.entropy) + p.kappa;
    out.pointwise_sup.rows.push_back(row);
    sum_worst += p.worst_risk;
    sum_risk += p.risk;
    sum_sua_pos += std::max(p.sua, 0.0);
    sum_kappa += p.kappa;
  }
  tally(out.pointwise, bounds, bounds.max_violation_rate);
  tally(out.pointwise_sup, bounds, -1.0);
  const double n = std::max<double>(static_cast<double>(probes.size()), 1.0);
  out.population.rows.push_back(
      BoundRow{0, sum_worst / n, sum_risk / n + bounds.lipschitz * sum_sua_pos / n + sum_kappa / n, false});
  tally(out.population, bounds, -1.0);
  return out;
}

/// Selective-risk bound across thresholds. The +inf threshold uses the
/// population bound (L times the SUA risk) in place of L * tau.
inline BoundReport verify_selective_bound(std::span<const RiskProbe> probes, std::span<const double> taus, const BoundConfig& bounds) {
  require(!probes.empty(), "selective bound needs probes");
  BoundReport report;
  report.name = "selective_risk_bound";
  double mean_risk = 0.0;
  double sua_risk_sum = 0.0;
  for (const RiskProbe& p : probes) {
    mean_risk += p.risk;
    sua_risk_sum += std::max(p.sua, 0.0);
  }
  mean_risk /= static_cast<double>(probes.size());
  const double sua_risk_value = sua_risk_sum / static_cast<double>(probes.size());
  nlohmann::json grid = nlohmann::json::array();
  for (std::size_t t = 0; t < taus.size(); ++t) {
    const double tau = taus[t];
    double worst = 0.0;
    double kap = 0.0;
    int covered = 0;
    for (const RiskProbe& p : probes) {
      if (!p.lambda_ok || p.sua > tau) continue;
      ++covered;
      worst += p.worst_risk;
      kap += p.kappa;
    }
    BoundRow row{static_cast<int>(t), 0.0, 0.0, covered == 0};
    if (covered > 0) {
      row.lhs = worst / covered;
      const double spread = std::isinf(tau) ? sua_risk_value : tau;
      row.rhs = mean_risk + bounds.lipschitz * spread + kap / covered;
    }
    report.rows.push_back(row);
    grid.push_back({{"tau", tau}, {"coverage", static_cast<double>(covered) / static_cast<double>(probes.size())},
                    {"selective_risk", row.lhs}, {"bound", row.rhs}});
  }
  tally(report, bounds, bounds.max_violation_rate);
  report.extra["grid"] = grid;
  return report;
}

/// Threshold grid: five evenly spaced lower quantiles of the scores.
inline std::vector<double> tau_grid(std::span<const RiskProbe> probes) {
  std::vector<double> scores;
  for (const RiskProbe& p : probes) scores.push_back(p.sua);
  std::vector<double> taus;
  for (double c : {0.1, 0.3, 0.5, 0.7, 0.9}) taus.push_back(calibrate_tau(scores, c));
  return taus;
}

struct CollapseThresholds {
  double alpha = 0.69;
  double beta = 0.1;

  void validate() const { require(alpha > beta && beta >= 0.0, "collapse thresholds need alpha > beta >= 0"); }
};

/// On inputs with A(x) > alpha and H < beta: |H - U*| >= alpha - beta - eta.
inline BoundReport verify_collapse_gap(const World& world, const ModelParams& params, const CollapseThresholds& thresholds,
                                 std::span<const Example> examples) {
  thresholds.validate();
  BoundReport report;
  report.name = "collapse_gap";
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const GroundTruth gt = ground_truth(world, examples[i].tokens);
    const double h = entropy(predict(params, examples[i].tokens));
    const bool qualifies = gt.ambiguity > thresholds.alpha && h < thresholds.beta;
    report.rows.push_back(BoundRow{static_cast<int>(i), thresholds.alpha - thresholds.beta - gt.eta - 1e-9,
                                   std::abs(h - gt.true_uncertainty), !qualifies});
  }
  BoundConfig exact;
  exact.slack_tolerance = 0.0;
  exact.logged_excess = 0.0;
  tally(report, exact, 0.0);
  return report;
}

/// Uniform-smoothing checks on random (p, q, gamma) triples.
inline BoundReport verify_smoothing_tension(Rng& rng, int trials = 10000) {
  BoundReport report;
  report.name = "smoothing_tension";
  double max_ratio = 0.0;
  int risk_failures = 0;
  auto random_dist = [&](int k) {
    std::vector<double> w(static_cast<std::size_t>(k));
    for (double& v : w) v = uniform01(rng) < 0.2 ? 0.0 : -std::log(1.0 - uniform01(rng));
    if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) w[0] = 1.0;
    return Dist::from_weights(std::move(w));
  };
  for (int t = 0; t < trials; ++t) {
    const int k = uniform_int(rng, 2, 6);
    const Dist p = random_dist(k);
    const Dist q = random_dist(k);
    const double gamma = t == 0 ? 0.0 : t == 1 ? 1.0 : uniform01(rng);
    const Dist sp = smooth(p, gamma);
    const Dist sq = smooth(q, gamma);
    const double before = js(p, q);
    const double after = js(sp, sq);
    report.rows.push_back(BoundRow{t, after, (1.0 - gamma) * before + 1e-12, false});
    if (model_risk(sp) < model_risk(p) - 1e-12) ++risk_failures;
    if (before > 1e-12 && gamma < 1.0) max_ratio = std::max(max_ratio, after / ((1.0 - gamma) * (1.0 - gamma) * before));
  }
  BoundConfig exact;
  exact.slack_tolerance = 0.0;
  exact.logged_excess = 0.0;
  tally(report, exact, 0.0);
  report.extra["risk_failures"] = risk_failures;
  report.extra["max_ratio_to_squared_factor"] = max_ratio;
  report.passed = report.passed && risk_failures == 0;
  return report;
}

/// Confidence from entropy: g(h) = 1 - h / ln k.
struct ConfidenceMap {
  double h_max = std::log(4.0);

  [[nodiscard]] double operator()(double h) const { return std::clamp(1.0 - h / h_max, 0.0, 1.0); }
};

struct CalibrationBin {
  int count = 0;
  double mean_sensitivity = 0.0;
  double mean_entropy = 0.0;
  double accuracy = 0.0;
  double confidence = 0.0;
  double bound_term = 0.0;  // (S_b - lambda H_b)_+
  double residual = 0.0;    // |acc - conf| - bound_term
};

struct CalibrationBoundReport {
  double ece = 0.0;
  double bound = 0.0;
  std::vector<CalibrationBin> bins;

  [[nodiscard]] std::string to_csv() const {
    std::ostringstream os;
    os << "bin,count,mean_sensitivity,mean_entropy,accuracy,confidence,bound_term,residual\n";
    for (std::size_t b = 0; b < bins.size(); ++b) {
      const CalibrationBin& c = bins[b];
      os << b << ',' << c.count << ',' << fmt_num(c.mean_sensitivity) << ',' << fmt_num(c.mean_entropy) << ','
         << fmt_num(c.accuracy) << ',' << fmt_num(c.confidence) << ',' << fmt_num(c.bound_term) << ','
         << fmt_num(c.residual) << '\n';
    }
    return os.str();
  }
};

/// Reporting harness only: the per-bin slack has no constructive definition.
inline CalibrationBoundReport verify_calibration_bound(std::span<const double> sensitivities, std::span<const double> entropies,
                                              const std::vector<bool>& correct, const ConfidenceMap& map, double lambda,
                                              int bins = 15) {
  require(sensitivities.size() == entropies.size() && entropies.size() == correct.size() && !correct.empty(),
          "calibration bound inputs differ in length");
  CalibrationBoundReport out;
  out.bins.assign(static_cast<std::size_t>(bins), CalibrationBin{});
  std::vector<double> conf(entropies.size());
  for (std::size_t i = 0; i < entropies.size(); ++i) {
    conf[i] = map(entropies[i]);
    CalibrationBin& b = out.bins[confidence_bin(conf[i], bins)];
    ++b.count;
    b.mean_sensitivity += sensitivities[i];
    b.mean_entropy += entropies[i];
    b.accuracy += correct[i] ? 1.0 : 0.0;
    b.confidence += conf[i];
  }
  for (CalibrationBin& b : out.bins) {
    if (b.count == 0) continue;
    b.mean_sensitivity /= b.count;
    b.mean_entropy /= b.count;
    b.accuracy /= b.count;
    b.confidence /= b.count;
    b.bound_term = std::max(b.mean_sensitivity - lambda * b.mean_entropy, 0.0);
    b.residual = std::abs(b.accuracy - b.confidence) - b.bound_term;
    out.bound += b.bound_term / bins;
  }
  out.ece = ece(conf, correct, bins);
  return out;
}

}  // namespace sua
