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

// Experiment pipeline: worlds, training cells, evaluation rows, ablations
// and bound verification. The command-line verbs only add file output.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sua/config.hpp"
#include "sua/evaluate.hpp"
#include "sua/metrics.hpp"
#include "sua/model.hpp"
#include "sua/perturb.hpp"
#include "sua/rng.hpp"
#include "sua/score.hpp"
#include "sua/train.hpp"
#include "sua/world.hpp"

namespace sua {

inline constexpr TaskFamily kAllFamilies[] = {TaskFamily::factual, TaskFamily::ambiguous, TaskFamily::shifted};
inline constexpr ScoreKind kAllScoreKinds[] = {ScoreKind::entropy, ScoreKind::temp_scaled, ScoreKind::self_consistency,
                                               ScoreKind::sua};

struct TaskData {
  World world;
  std::vector<Example> examples;
};

/// The configured spec for its own family; for another family the
/// family-specific mixing rates are swapped in and everything else is kept.
inline TaskSpec task_for(const RunConfig& c, TaskFamily family) {
  if (family == c.task.family) return c.task;
  const TaskSpec defaults = TaskSpec::for_family(family);
  TaskSpec spec = c.task;
  spec.family = family;
  spec.ambiguous_fraction = defaults.ambiguous_fraction;
  spec.emission_noise = defaults.emission_noise;
  return spec;
}

inline TaskData make_task_data(const TaskSpec& spec, std::uint64_t seed) {
  World world = build_world(spec, seed);
  std::vector<Example> examples = sample_dataset(world);
  return {std::move(world), std::move(examples)};
}

inline std::vector<TaskFamily> selected_tasks(const RunConfig& c) {
  if (c.task_filter == "all") return {std::begin(kAllFamilies), std::end(kAllFamilies)};
  return {c.task.family};
}

inline std::vector<Method> selected_methods(const RunConfig& c) {
  if (c.method_filter == "all") return {std::begin(kAllMethods), std::end(kAllMethods)};
  if (!c.method_filter.empty()) return {parse_method(c.method_filter)};
  return {c.train.method};
}

inline TrainConfig train_config_for(const RunConfig& c, Method method, std::uint64_t seed) {
  TrainConfig t = c.train;
  t.method = method;
  t.seed = seed;
  return t;
}

inline TrainResult train_cell(const RunConfig& c, const TaskData& data, Method method, std::uint64_t seed,
                              const CheckpointHook& hook = {}) {
  return train_method(data.world, data.examples, train_config_for(c, method, seed), c.perturb, hook);
}

struct CellEvaluation {
  TempScaler scaler;
  std::vector<InputRecord> records;
  std::vector<MetricsReport> rows;  // every score kind, full set and ambiguous subset
};

inline ScoringOptions scoring_options(const RunConfig& c, const TempScaler& scaler) {
  ScoringOptions o;
  o.sua = c.sua;
  o.perturb = c.perturb;
  o.scaler = scaler;
  return o;
}

inline CellEvaluation evaluate_cell(const RunConfig& c, const TaskData& data, const ModelParams& params,
                                    std::string_view method, std::uint64_t seed) {
  CellEvaluation out;
  out.scaler = fit_temperature(params, filter_split(data.examples, Split::valid));
  const TaskFamily family = data.world.spec().family;
  const std::vector<Example> eval = eval_split(data.examples, family);
  out.records = score_examples(params, data.world, eval, scoring_options(c, out.scaler), seed);
  std::vector<InputRecord> ambiguous;
  std::copy_if(out.records.begin(), out.records.end(), std::back_inserter(ambiguous),
               [](const InputRecord& r) { return r.ambiguous; });
  const std::string task(to_string(family));
  for (ScoreKind kind : kAllScoreKinds) {
    MetricsReport all = summarize(out.records, task, std::string(method), kind);
    all.seed = std::to_string(seed);
    out.rows.push_back(std::move(all));
    if (!ambiguous.empty()) {
      MetricsReport sub = summarize(ambiguous, task, std::string(method), kind);
      sub.subset = "ambiguous";
      sub.seed = std::to_string(seed);
      out.rows.push_back(std::move(sub));
    }
  }
  return out;
}

/// Seed-mean rows for every (task, method, score, subset) group, in first-seen order.
inline std::vector<MetricsReport> seed_means(std::span<const MetricsReport> rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<MetricsReport>> groups;
  for (const MetricsReport& r : rows) {
    if (r.seed == "mean") continue;
    const std::string key = r.task + '|' + r.method + '|' + r.score + '|' + r.subset;
    if (!groups.contains(key)) order.push_back(key);
    groups[key].push_back(r);
  }
  std::vector<MetricsReport> out;
  for (const std::string& key : order) out.push_back(average_reports(groups[key]));
  return out;
}

// ---------------------------------------------------------------------------
// Summary-table layout: which trained model and which failure score make each row.

struct SummaryEntry {
  std::string label;
  Method model;
  ScoreKind score;
};

inline std::vector<SummaryEntry> summary_layout() {
  return {{"standard", Method::standard, ScoreKind::entropy},
          {"temp_scale", Method::standard, ScoreKind::temp_scaled},
          {"self_consistency", Method::standard, ScoreKind::self_consistency},
          {"adversarial", Method::adversarial, ScoreKind::entropy},
          {"sua_tr", Method::sua_tr, ScoreKind::sua},
          {"sua_tr_minus_ent", Method::sua_tr_minus_ent, ScoreKind::sua},
          {"sua_tr_minus_cons", Method::sua_tr_minus_cons, ScoreKind::sua}};
}

/// Finds the seed-mean row for a model/score/subset; empty when absent.
inline std::optional<MetricsReport> find_mean(std::span<const MetricsReport> means, std::string_view task,
                                              std::string_view method, ScoreKind score, std::string_view subset = "all") {
  for (const MetricsReport& r : means) {
    if (r.seed == "mean" && r.task == task && r.method == method && r.score == to_string(score) && r.subset == subset) {
      return r;
    }
  }
  return std::nullopt;
}

/// Summary-table rows (seed means over the full eval split) for one task.
inline std::vector<MetricsReport> summary_rows(std::span<const MetricsReport> means, std::string_view task) {
  std::vector<MetricsReport> out;
  for (const SummaryEntry& e : summary_layout()) {
    if (auto r = find_mean(means, task, to_string(e.model), e.score)) {
      r->method = e.label;
      out.push_back(*r);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full method matrix.

struct MatrixResult {
  std::vector<MetricsReport> rows;   // per seed
  std::vector<MetricsReport> means;  // seed means
  std::map<std::string, ModelParams> models;  // "task/method/seed" -> trained weights
};

inline std::string cell_key(TaskFamily family, Method method, std::uint64_t seed) {
  return std::string(to_string(family)) + "/" + std::string(to_string(method)) + "/" + std::to_string(seed);
}

/// Trains and evaluates every (task, method, seed) cell. `on_cell` sees each
/// finished cell (for logging or writing artifacts).
template <typename OnCell>
MatrixResult run_matrix(const RunConfig& c, std::span<const TaskFamily> tasks, std::span<const Method> methods,
                        OnCell&& on_cell) {
  MatrixResult out;
  for (TaskFamily family : tasks) {
    const TaskSpec spec = task_for(c, family);
    for (std::uint64_t seed : c.seeds) {
      const TaskData data = make_task_data(spec, seed);
      for (Method method : methods) {
        TrainResult trained = train_cell(c, data, method, seed);
        CellEvaluation eval = evaluate_cell(c, data, trained.params, to_string(method), seed);
        out.rows.insert(out.rows.end(), eval.rows.begin(), eval.rows.end());
        on_cell(family, method, seed, trained, eval);
        out.models.emplace(cell_key(family, method, seed), std::move(trained.params));
      }
    }
  }
  out.means = seed_means(out.rows);
  return out;
}

// ---------------------------------------------------------------------------
// Ablations: each row is one training variant of SUA-TR, scored by SUA.

struct AblationRow {
  std::string sweep;    // lambda, k, mixture, terms
  std::string setting;  // e.g. "0.5", "paraphrase_only", "minus_ent"
  MetricsReport metrics;
};

inline std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = "sweep,setting," + metrics_csv_header();
  for (const AblationRow& r : rows) out += r.sweep + ',' + r.setting + ',' + metrics_csv_row(r.metrics);
  return out;
}

struct AblationVariant {
  std::string sweep;
  std::string setting;
  RunConfig config;  // train/perturb/sua values for this variant
  Method method = Method::sua_tr;
};

inline std::vector<AblationVariant> ablation_variants(const RunConfig& base) {
  std::vector<AblationVariant> out;
  for (double lambda : {0.1, 0.5, 1.0, 2.0, 5.0}) {
    RunConfig c = base;
    c.train.lambda = lambda;
    c.sua.lambda = lambda;
    out.push_back({"lambda", fmt_num(lambda), c, Method::sua_tr});
  }
  for (int k : {1, 4, 8}) {
    RunConfig c = base;
    c.train.K = k;
    out.push_back({"k", std::to_string(k), c, Method::sua_tr});
  }
  const std::pair<const char*, std::array<double, 3>> mixes[] = {
      {"default", base.perturb.weights}, {"paraphrase_only", {1.0, 0.0, 0.0}}, {"adversarial_only", {0.0, 0.0, 1.0}}};
  for (const auto& [name, weights] : mixes) {
    RunConfig c = base;
    c.perturb.weights = weights;
    out.push_back({"mixture", name, c, Method::sua_tr});
  }
  out.push_back({"terms", "full", base, Method::sua_tr});
  out.push_back({"terms", "minus_ent", base, Method::sua_tr_minus_ent});
  out.push_back({"terms", "minus_cons", base, Method::sua_tr_minus_cons});
  return out;
}

/// Runs every ablation variant on one task across the configured seeds.
/// Mixture variants change the training mixture only; evaluation always uses
/// the base perturbation config so robust accuracy stays comparable.
inline std::vector<AblationRow> run_ablations(const RunConfig& base, TaskFamily family) {
  const TaskSpec spec = task_for(base, family);
  std::vector<AblationRow> out;
  std::map<std::string, MetricsReport> cache;
  std::vector<TaskData> data;
  for (std::uint64_t seed : base.seeds) data.push_back(make_task_data(spec, seed));
  for (const AblationVariant& v : ablation_variants(base)) {
    nlohmann::json key = {{"train", train_config_for(v.config, v.method, 0)},
                          {"perturb", v.config.perturb},
                          {"sua", v.config.sua}};
    const std::string k = key.dump();
    if (!cache.contains(k)) {
      std::vector<MetricsReport> rows;
      for (std::size_t i = 0; i < base.seeds.size(); ++i) {
        const std::uint64_t seed = base.seeds[i];
        const TrainResult trained =
            train_method(data[i].world, data[i].examples, train_config_for(v.config, v.method, seed), v.config.perturb);
        RunConfig eval_config = v.config;
        eval_config.perturb = base.perturb;
        const CellEvaluation e = evaluate_cell(eval_config, data[i], trained.params, to_string(v.method), seed);
        for (const MetricsReport& r : e.rows) {
          if (r.subset == "all" && r.score == to_string(ScoreKind::sua)) rows.push_back(r);
        }
      }
      cache[k] = average_reports(rows);
    }
    out.push_back({v.sweep, v.setting, cache[k]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling-error study for K.

struct KSpearmanRow {
  int K = 0;
  int replicates = 0;
  double score_mean = 0.0;  // Spearman of SUA scores against the oracle
  double score_min = 0.0;
  double score_max = 0.0;
  double sensitivity_mean = 0.0;  // same for the sensitivity term alone
};

inline std::vector<KSpearmanRow> k_spearman_sweep(const ModelParams& params, const World& world,
                                                  std::span<const Example> inputs, const SuaConfig& sua,
                                                  const PerturbConfig& perturb, std::uint64_t seed,
                                                  std::span<const int> ks, int oracle_k = 64, int replicates = 5) {
  require(!inputs.empty() && replicates >= 1, "K sweep needs inputs and replicates");
  auto run = [&](int k, Rng& rng, std::vector<double>& scores, std::vector<double>& sens) {
    SuaConfig cfg = sua;
    cfg.K = k;
    scores.clear();
    sens.clear();
    for (const Example& ex : inputs) {
      const SuaEstimate e = estimate_sua(params, world, ex.tokens, cfg, perturb, rng);
      scores.push_back(e.score);
      sens.push_back(e.sensitivity_hat);
    }
  };
  std::vector<double> oracle_scores;
  std::vector<double> oracle_sens;
  Rng oracle_rng = make_stream(seed, "verify.k_oracle");
  run(oracle_k, oracle_rng, oracle_scores, oracle_sens);
  std::vector<KSpearmanRow> out;
  std::vector<double> scores;
  std::vector<double> sens;
  for (int k : ks) {
    KSpearmanRow row;
    row.K = k;
    row.replicates = replicates;
    row.score_min = std::numeric_limits<double>::infinity();
    row.score_max = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < replicates; ++r) {
      Rng rng = make_stream(seed, "verify.k", static_cast<std::uint64_t>(k) * 1000 + static_cast<std::uint64_t>(r));
      run(k, rng, scores, sens);
      const double rho = spearman(scores, oracle_scores);
      row.score_mean += rho / replicates;
      row.score_min = std::min(row.score_min, rho);
      row.score_max = std::max(row.score_max, rho);
      row.sensitivity_mean += spearman(sens, oracle_sens) / replicates;
    }
    out.push_back(row);
  }
  return out;
}

inline std::string k_spearman_csv(std::span<const KSpearmanRow> rows) {
  std::string out = "K,replicates,spearman_mean,spearman_min,spearman_max,sensitivity_spearman_mean\n";
  for (const KSpearmanRow& r : rows) {
    out += std::to_string(r.K) + ',' + std::to_string(r.replicates) + ',' + fmt_num(r.score_mean) + ',' +
           fmt_num(r.score_min) + ',' + fmt_num(r.score_max) + ',' + fmt_num(r.sensitivity_mean) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bound verification.

/// Deterministic-emission world where every input carries an ambiguous cue,
/// plus a model whose output bias forces near-zero entropy everywhere.
struct CollapseSetup {
  World world;
  std::vector<Example> inputs;
  ModelParams model;
};

inline CollapseSetup collapse_setup(const RunConfig& c, std::uint64_t seed, int num_inputs = 1000) {
  TaskSpec spec = task_for(c, TaskFamily::ambiguous);
  spec.ambiguous_fraction = 1.0;
  spec.emission_noise = 0.0;
  spec.sizes.test = num_inputs;
  World world = build_world(spec, seed);
  std::vector<Example> inputs = filter_split(sample_dataset(world), Split::test);
  Rng rng = make_stream(seed, "verify.collapse");
  ModelParams model = init_params(ModelShape{world.vocab_size(), c.train.d_emb, c.train.d_hid, world.num_labels()}, rng,
                                  c.train.init_scale);
  model.weights.out_bias(0) = 25.0;
  return {std::move(world), std::move(inputs), std::move(model)};
}

struct VerifyOutcome {
  std::vector<BoundReport> reports;  // asserted and reported checks
  CalibrationBoundReport calibration;
  std::vector<KSpearmanRow> k_sweep;
  std::vector<double> taus;

  [[nodiscard]] bool passed() const {
    return std::all_of(reports.begin(), reports.end(), [](const BoundReport& r) { return r.passed; });
  }

  [[nodiscard]] nlohmann::json summary() const {
    nlohmann::json j;
    j["checks"] = nlohmann::json::array();
    for (const BoundReport& r : reports) j["checks"].push_back(r.summary());
    j["calibration"] = {{"ece", calibration.ece}, {"bound", calibration.bound}};
    j["k_sweep"] = nlohmann::json::array();
    for (const KSpearmanRow& r : k_sweep) {
      j["k_sweep"].push_back({{"K", r.K}, {"spearman_mean", r.score_mean}, {"sensitivity_spearman_mean", r.sensitivity_mean}});
    }
    j["taus"] = taus;
    j["passed"] = passed();
    return j;
  }
};

/// All bound checks against one trained model on the eval split of `data`.
inline VerifyOutcome verify_all(const RunConfig& c, const TaskData& data, const ModelParams& params, std::uint64_t seed,
                                bool with_k_sweep = true) {
  VerifyOutcome out;
  Rng smoothing_rng = make_stream(seed, "verify.smoothing");
  out.reports.push_back(verify_smoothing_tension(smoothing_rng));

  const CollapseSetup collapse = collapse_setup(c, seed);
  out.reports.push_back(verify_collapse_gap(collapse.world, collapse.model, CollapseThresholds{}, collapse.inputs));

  const std::vector<Example> eval = eval_split(data.examples, data.world.spec().family);
  const std::vector<RiskProbe> probes = probe_all(params, data.world, eval, c.bounds, c.perturb, seed);
  RiskBoundReports risk = verify_risk_bounds(probes, c.bounds);
  out.taus = tau_grid(probes);
  BoundReport selective = verify_selective_bound(probes, out.taus, c.bounds);
  out.reports.push_back(std::move(risk.pointwise));
  out.reports.push_back(std::move(risk.pointwise_sup));
  out.reports.push_back(std::move(risk.population));
  out.reports.push_back(std::move(selective));

  std::vector<double> sens;
  std::vector<double> ent;
  std::vector<bool> correct;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    sens.push_back(probes[i].sensitivity);
    ent.push_back(probes[i].entropy);
    correct.push_back(predict_label(predict(params, eval[i].tokens)) == eval[i].label_y);
  }
  out.calibration = verify_calibration_bound(sens, ent, correct, ConfidenceMap{std::log(static_cast<double>(data.world.num_labels()))},
                                    c.bounds.lambda, 15);
  if (with_k_sweep) {
    const int ks[] = {1, 2, 4, 8};
    out.k_sweep = k_spearman_sweep(params, data.world, eval, c.sua, c.perturb, seed, ks);
  }
  return out;
}

}  // namespace sua
