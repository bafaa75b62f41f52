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

// Command verbs. Every verb writes under <out>/<run_id>/, never replaces an
// existing file (a numeric suffix is added instead) and finishes with a
// manifest listing what it wrote.
//
// Layout:
//   <task>/data/seed<N>/{world.json,train.jsonl,valid.jsonl,test.jsonl,shifted_test.jsonl}
//   <task>/<method>/seed<N>/{checkpoint.json,history.csv,scores.csv,scores.jsonl,abstain.json,abstain.jsonl}
//   <task>/<method>/metrics.csv
//   verify/<task>/..., ablate/<task>/..., report/...
//   manifest_<verb>.json, run.log

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sua/config.hpp"
#include "sua/experiment.hpp"
#include "sua/io.hpp"

namespace sua {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvariant = 1;
inline constexpr int kExitConfig = 2;

/// `path` if free, else `stem.1.ext`, `stem.2.ext`, ...
inline std::filesystem::path fresh_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return path;
  for (int i = 1;; ++i) {
    std::filesystem::path candidate = path.parent_path() / (path.stem().string() + "." + std::to_string(i) +
                                                            path.extension().string());
    if (!std::filesystem::exists(candidate)) return candidate;
  }
}

/// Writes artifacts below a run directory and remembers their paths.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path root) : root_(std::move(root)) {}

  [[nodiscard]] const std::filesystem::path& root() const { return root_; }
  [[nodiscard]] const std::vector<std::string>& written() const { return written_; }

  std::filesystem::path write(const std::filesystem::path& relative, std::string_view content) {
    const std::filesystem::path target = fresh_file(root_ / relative);
    write_new_file(target, content);
    written_.push_back(std::filesystem::relative(target, root_).generic_string());
    return target;
  }

  std::filesystem::path write_json(const std::filesystem::path& relative, const nlohmann::json& j) {
    return write(relative, j.dump(2) + "\n");
  }

 private:
  std::filesystem::path root_;
  std::vector<std::string> written_;
};

struct CommandContext {
  RunConfig config;
  std::ostream& log;
  std::string verb;
};

namespace detail {

inline std::filesystem::path run_root(const RunConfig& c) { return c.out / effective_run_id(c); }

inline std::string seed_dir(std::uint64_t seed) { return "seed" + std::to_string(seed); }

inline std::filesystem::path cell_dir(TaskFamily family, std::string_view method, std::uint64_t seed) {
  return std::filesystem::path(std::string(to_string(family))) / std::string(method) / seed_dir(seed);
}

inline std::string examples_jsonl(std::span<const Example> examples) {
  std::string out;
  for (const Example& ex : examples) out += example_to_json(ex).dump() + "\n";
  return out;
}

/// Loads the cell's checkpoint when an earlier `train` left one, otherwise
/// trains and stores it (with its history).
inline ModelParams load_or_train(ArtifactWriter& writer, const RunConfig& c, const TaskData& data, Method method,
                                 std::uint64_t seed, std::ostream& log) {
  const TaskFamily family = data.world.spec().family;
  const std::filesystem::path dir = cell_dir(family, to_string(method), seed);
  const std::filesystem::path ckpt = writer.root() / dir / "checkpoint.json";
  if (std::filesystem::exists(ckpt)) {
    log << "loading " << (dir / "checkpoint.json").generic_string() << "\n";
    try {
      return params_from_json(nlohmann::json::parse(read_file(ckpt)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("corrupt checkpoint " + ckpt.string() + ": " + e.what());
    }
  }
  log << "training " << dir.generic_string() << "\n";
  TrainResult r = train_cell(c, data, method, seed);
  writer.write_json(dir / "checkpoint.json", to_json(r.params));
  writer.write(dir / "history.csv", r.history.to_csv());
  return std::move(r.params);
}

inline std::string metrics_csv(std::span<const MetricsReport> rows) {
  std::string out = metrics_csv_header();
  for (const MetricsReport& r : rows) out += metrics_csv_row(r);
  return out;
}

}  // namespace detail

/// Parses a metrics CSV written by `eval` back into rows.
inline std::vector<MetricsReport> parse_metrics_csv(std::string_view text) {
  std::vector<MetricsReport> out;
  std::istringstream is{std::string(text)};
  std::string line;
  std::getline(is, line);
  if (line + "\n" != metrics_csv_header()) throw IoError("unexpected metrics header: " + line);
  auto number = [](const std::string& cell) -> std::optional<double> {
    if (cell.empty()) return std::nullopt;
    return std::stod(cell);
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() != 13) throw IoError("malformed metrics row: " + line);
    MetricsReport m;
    m.task = cells[0];
    m.method = cells[1];
    m.score = cells[2];
    m.subset = cells[3];
    m.seed = cells[4];
    m.n = std::stoi(cells[5]);
    m.accuracy = std::stod(cells[6]);
    m.robust_accuracy = std::stod(cells[7]);
    m.ece = number(cells[8]);
    m.auroc = number(cells[9]);
    for (std::size_t i = 0; i < 3; ++i) m.selective_accuracy[kCoverageGrid[i]] = std::stod(cells[10 + i]);
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------

inline int cmd_gen_data(CommandContext& ctx, ArtifactWriter& writer) {
  const RunConfig& c = ctx.config;
  for (TaskFamily family : selected_tasks(c)) {
    const TaskSpec spec = task_for(c, family);
    for (std::uint64_t seed : c.seeds) {
      const TaskData data = make_task_data(spec, seed);
      const std::filesystem::path dir = std::filesystem::path(std::string(to_string(family))) / "data" / detail::seed_dir(seed);
      writer.write_json(dir / "world.json", data.world.to_json());
      for (Split split : {Split::train, Split::valid, Split::test, Split::shifted_test}) {
        writer.write(dir / (std::string(to_string(split)) + ".jsonl"), detail::examples_jsonl(filter_split(data.examples, split)));
      }
      ctx.log << "wrote " << dir.generic_string() << "\n";
    }
  }
  return kExitOk;
}

inline int cmd_train(CommandContext& ctx, ArtifactWriter& writer) {
  const RunConfig& c = ctx.config;
  for (TaskFamily family : selected_tasks(c)) {
    const TaskSpec spec = task_for(c, family);
    for (std::uint64_t seed : c.seeds) {
      const TaskData data = make_task_data(spec, seed);
      for (Method method : selected_methods(c)) {
        const std::filesystem::path dir = detail::cell_dir(family, to_string(method), seed);
        ctx.log << "training " << dir.generic_string() << "\n";
        CheckpointHook hook;
        if (c.checkpoint_every > 0) {
          hook = [&](int epoch, const ModelParams& params) {
            if (epoch % c.checkpoint_every == 0 && epoch < c.train.epochs) {
              writer.write_json(dir / ("checkpoint_epoch" + std::to_string(epoch) + ".json"), to_json(params));
            }
          };
        }
        const TrainResult r = train_cell(c, data, method, seed, hook);
        writer.write_json(dir / "checkpoint.json", to_json(r.params));
        writer.write(dir / "history.csv", r.history.to_csv());
      }
    }
  }
  return kExitOk;
}

inline int cmd_eval(CommandContext& ctx, ArtifactWriter& writer) {
  const RunConfig& c = ctx.config;
  for (TaskFamily family : selected_tasks(c)) {
    const TaskSpec spec = task_for(c, family);
    std::map<Method, std::vector<MetricsReport>> rows;
    for (std::uint64_t seed : c.seeds) {
      const TaskData data = make_task_data(spec, seed);
      for (Method method : selected_methods(c)) {
        const ModelParams params = detail::load_or_train(writer, c, data, method, seed, ctx.log);
        const CellEvaluation e = evaluate_cell(c, data, params, to_string(method), seed);
        rows[method].insert(rows[method].end(), e.rows.begin(), e.rows.end());
      }
    }
    for (auto& [method, per_seed] : rows) {
      std::vector<MetricsReport> all = per_seed;
      const std::vector<MetricsReport> means = seed_means(per_seed);
      all.insert(all.end(), means.begin(), means.end());
      const std::filesystem::path path =
          std::filesystem::path(std::string(to_string(family))) / std::string(to_string(method)) / "metrics.csv";
      writer.write(path, detail::metrics_csv(all));
      ctx.log << "wrote " << path.generic_string() << "\n";
    }
  }
  return kExitOk;
}

namespace detail {

struct ScoredInput {
  std::string input_id;
  const Example* example = nullptr;
  SuaEstimate estimate;
  int predicted = 0;
  bool abstain = false;
};

/// Threshold from the command line or config, else the validation quantile
/// that answers on the target coverage.
inline double resolve_tau(const RunConfig& c, const TaskData& data, const ModelParams& params, std::uint64_t seed) {
  if (c.tau_given) return c.sua.tau;
  Rng rng = make_stream(seed, "score.calibrate");
  std::vector<double> scores;
  for (const Example& ex : filter_split(data.examples, Split::valid)) {
    scores.push_back(estimate_sua(params, data.world, ex.tokens, c.sua, c.perturb, rng).score);
  }
  return calibrate_tau(scores, c.coverage);
}

inline std::vector<ScoredInput> score_split(const RunConfig& c, const TaskData& data, const std::vector<Example>& eval,
                                            const ModelParams& params, double tau, std::uint64_t seed) {
  Rng rng = make_stream(seed, "score.inputs");
  std::vector<ScoredInput> out;
  std::map<Split, int> counters;
  for (const Example& ex : eval) {
    ScoredInput s;
    s.input_id = std::string(to_string(ex.split)) + "-" + std::to_string(counters[ex.split]++);
    s.example = &ex;
    s.estimate = estimate_sua(params, data.world, ex.tokens, c.sua, c.perturb, rng);
    s.predicted = predict_label(predict(params, ex.tokens));
    s.abstain = s.estimate.score > tau;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

inline int cmd_score(CommandContext& ctx, ArtifactWriter& writer) {
  const RunConfig& c = ctx.config;
  for (TaskFamily family : selected_tasks(c)) {
    const TaskSpec spec = task_for(c, family);
    for (std::uint64_t seed : c.seeds) {
      const TaskData data = make_task_data(spec, seed);
      const std::vector<Example> eval = eval_split(data.examples, family);
      for (Method method : selected_methods(c)) {
        const ModelParams params = detail::load_or_train(writer, c, data, method, seed, ctx.log);
        const double tau = detail::resolve_tau(c, data, params, seed);
        const auto scored = detail::score_split(c, data, eval, params, tau, seed);
        std::ostringstream csv;
        write_score_csv_header(csv);
        std::string jsonl;
        for (const auto& s : scored) {
          write_score_csv_row(csv, ScoreRow{s.input_id, s.estimate,
                                            s.abstain ? std::nullopt : std::optional<int>(s.predicted)});
          jsonl += nlohmann::json{{"input_id", s.input_id},
                                  {"tokens", s.example->tokens},
                                  {"label", s.example->label_y},
                                  {"predicted", s.predicted},
                                  {"sensitivity", s.estimate.sensitivity_hat},
                                  {"entropy", s.estimate.entropy},
                                  {"score", s.estimate.score},
                                  {"divergences", s.estimate.divergences},
                                  {"tau", tau},
                                  {"abstain", s.abstain}}
                       .dump() +
                   "\n";
        }
        const std::filesystem::path dir = detail::cell_dir(family, to_string(method), seed);
        writer.write(dir / "scores.csv", csv.str());
        writer.write(dir / "scores.jsonl", jsonl);
        ctx.log << "scored " << scored.size() << " inputs in " << dir.generic_string() << " (tau " << fmt_num(tau) << ")\n";
      }
    }
  }
  return kExitOk;
}

/// Failure signature of one input in the sensitivity/entropy plane.
enum class Signature { stable, sensitivity_failure, epistemic, collapse_candidate };

inline std::string_view to_string(Signature s) {
  switch (s) {
    case Signature::stable: return "stable";
    case Signature::sensitivity_failure: return "sensitivity_failure";
    case Signature::epistemic: return "epistemic";
    case Signature::collapse_candidate: return "collapse_candidate";
  }
  return "stable";
}

inline constexpr double kLowEntropy = 0.1;     // nats
inline constexpr double kHighAmbiguity = 0.5;  // nats of the paraphrase-label histogram

/// High/low sensitivity and entropy are split at the medians of the scored set.
inline Signature classify_signature(double sensitivity, double entropy_nats, double ambiguity, double median_sensitivity,
                                    double median_entropy) {
  const bool sensitive = sensitivity > median_sensitivity;
  const bool uncertain = entropy_nats > median_entropy;
  if (sensitive && !uncertain) return Signature::sensitivity_failure;
  if (!sensitive && uncertain) return Signature::epistemic;
  if (entropy_nats < kLowEntropy && ambiguity >= kHighAmbiguity) return Signature::collapse_candidate;
  return Signature::stable;
}

inline int cmd_abstain(CommandContext& ctx, ArtifactWriter& writer) {
  const RunConfig& c = ctx.config;
  for (TaskFamily family : selected_tasks(c)) {
    const TaskSpec spec = task_for(c, family);
    for (std::uint64_t seed : c.seeds) {
      const TaskData data = make_task_data(spec, seed);
      const std::vector<Example> eval = eval_split(data.examples, family);
      for (Method method : selected_methods(c)) {
        const ModelParams params = detail::load_or_train(writer, c, data, method, seed, ctx.log);
        const double tau = detail::resolve_tau(c, data, params, seed);
        const auto scored = detail::score_split(c, data, eval, params, tau, seed);

        std::vector<double> sens;
        std::vector<double> ent;
        for (const auto& s : scored) {
          sens.push_back(s.estimate.sensitivity_hat);
          ent.push_back(s.estimate.entropy);
        }
        auto median = [](std::vector<double> v) {
          std::sort(v.begin(), v.end());
          return v[(v.size() - 1) / 2];
        };
        const double med_s = median(sens);
        const double med_h = median(ent);

        Rng proxy_rng = make_stream(seed, "abstain.proxy");
        std::string jsonl;
        int answered = 0;
        int answered_correct = 0;
        int correct = 0;
        std::map<std::string, int> signature_counts;
        std::map<std::string, int> signature_abstained;
        for (const auto& s : scored) {
          const bool ok = s.predicted == s.example->label_y;
          correct += ok ? 1 : 0;
          if (!s.abstain) {
            ++answered;
            answered_correct += ok ? 1 : 0;
          }
          const double amb = ambiguity_proxy(params, data.world, s.example->tokens, kDefaultProxySamples, proxy_rng,
                                             ProxyMode::paraphrase, c.perturb);
          const std::string sig(
              to_string(classify_signature(s.estimate.sensitivity_hat, s.estimate.entropy, amb, med_s, med_h)));
          ++signature_counts[sig];
          signature_abstained[sig] += s.abstain ? 1 : 0;
          jsonl += nlohmann::json{{"input_id", s.input_id},
                                  {"abstain", s.abstain},
                                  {"label", s.abstain ? -1 : s.predicted},
                                  {"score", s.estimate.score},
                                  {"ambiguity_proxy", amb},
                                  {"signature", sig}}
                       .dump() +
                   "\n";
        }
        const double n = static_cast<double>(scored.size());
        nlohmann::json summary = {
            {"task", to_string(family)},
            {"method", to_string(method)},
            {"seed", seed},
            {"tau", tau},
            {"tau_source", c.tau_given ? "given" : "validation_quantile"},
            {"target_coverage", c.coverage},
            {"inputs", scored.size()},
            {"coverage", answered / n},
            {"accuracy", correct / n},
            {"selective_accuracy", answered > 0 ? nlohmann::json(static_cast<double>(answered_correct) / answered)
                                                : nlohmann::json(nullptr)},
            {"signatures", signature_counts},
            {"signature_abstentions", signature_abstained}};
        const std::filesystem::path dir = detail::cell_dir(family, to_string(method), seed);
        writer.write_json(dir / "abstain.json", summary);
        writer.write(dir / "abstain.jsonl", jsonl);
        ctx.log << "abstain " << dir.generic_string() << ": coverage " << fmt_num(answered / n) << "\n";
      }
    }
  }
  return kExitOk;
}

inline int cmd_verify(CommandContext& ctx, ArtifactWriter& writer) {
  const RunConfig& c = ctx.config;
  bool passed = true;
  const std::uint64_t seed = c.seeds.front();
  const Method method = c.method_filter.empty() || c.method_filter == "all" ? Method::sua_tr : parse_method(c.method_filter);
  for (TaskFamily family : selected_tasks(c)) {
    const TaskData data = make_task_data(task_for(c, family), seed);
    const ModelParams params = detail::load_or_train(writer, c, data, method, seed, ctx.log);
    const VerifyOutcome v = verify_all(c, data, params, seed);
    const std::filesystem::path dir = std::filesystem::path("verify") / std::string(to_string(family));
    for (const BoundReport& r : v.reports) {
      writer.write(dir / ("bound_" + r.name + ".csv"), r.to_csv());
      ctx.log << (r.asserted ? (r.passed ? "PASS " : "FAIL ") : "LOG  ") << r.name << ": counted " << r.counted
              << ", hard violations " << r.hard_violations << ", logged " << r.logged_violations << ", rate "
              << fmt_num(r.violation_rate) << "\n";
    }
    writer.write(dir / "calibration_bins.csv", v.calibration.to_csv());
    writer.write(dir / "k_spearman.csv", k_spearman_csv(v.k_sweep));
    nlohmann::json summary = v.summary();
    summary["task"] = to_string(family);
    summary["method"] = to_string(method);
    summary["seed"] = seed;
    writer.write_json(dir / "summary.json", summary);
    passed = passed && v.passed();
  }
  return passed ? kExitOk : kExitInvariant;
}

inline int cmd_ablate(CommandContext& ctx, ArtifactWriter& writer) {
  const RunConfig& c = ctx.config;
  for (TaskFamily family : selected_tasks(c)) {
    ctx.log << "ablating " << to_string(family) << "\n";
    const std::vector<AblationRow> rows = run_ablations(c, family);
    std::map<std::string, std::vector<AblationRow>> by_sweep;
    for (const AblationRow& r : rows) by_sweep[r.sweep].push_back(r);
    for (const auto& [sweep, group] : by_sweep) {
      writer.write(std::filesystem::path("ablate") / std::string(to_string(family)) / (sweep + ".csv"), ablation_csv(group));
    }
  }
  return kExitOk;
}

/// Gathers `eval` outputs into the summary-table layout, the coverage sweep and
/// the ambiguous-subset comparison.
inline int cmd_report(CommandContext& ctx, ArtifactWriter& writer) {
  const RunConfig& c = ctx.config;
  std::vector<MetricsReport> means;
  for (TaskFamily family : selected_tasks(c)) {
    for (Method method : kAllMethods) {
      const std::filesystem::path path =
          writer.root() / std::string(to_string(family)) / std::string(to_string(method)) / "metrics.csv";
      if (!std::filesystem::exists(path)) continue;
      for (MetricsReport& r : parse_metrics_csv(read_file(path))) {
        if (r.seed == "mean") means.push_back(std::move(r));
      }
    }
  }
  if (means.empty()) throw ConfigError("no metrics found under " + writer.root().string() + "; run eval first");

  std::string table = metrics_csv_header();
  std::string coverage = "task,method,score,coverage,selective_accuracy\n";
  std::string ambiguous = "task,method,score,auroc\n";
  for (TaskFamily family : selected_tasks(c)) {
    const std::string task(to_string(family));
    for (const MetricsReport& r : summary_rows(means, task)) {
      table += metrics_csv_row(r);
      for (const auto& [cov, acc] : r.selective_accuracy) {
        coverage += task + ',' + r.method + ',' + r.score + ',' + fmt_num(cov) + ',' + fmt_num(acc) + '\n';
      }
    }
    for (const MetricsReport& r : means) {
      if (r.task == task && r.subset == "ambiguous") {
        ambiguous += task + ',' + r.method + ',' + r.score + ',' + fmt_num(r.auroc) + '\n';
      }
    }
  }
  writer.write("report/summary.csv", table);
  writer.write("report/coverage.csv", coverage);
  writer.write("report/ambiguous_subset.csv", ambiguous);
  ctx.log << "wrote report/summary.csv, report/coverage.csv, report/ambiguous_subset.csv\n";
  return kExitOk;
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"gen-data", "train", "eval", "score", "abstain", "verify", "ablate", "report"};
  return names;
}

namespace detail {

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void append_run_log(const std::filesystem::path& root, const std::string& line) {
  std::filesystem::create_directories(root);
  std::ofstream os(root / "run.log", std::ios::app);
  os << line << "\n";
}

}  // namespace detail

/// Runs one verb and writes its manifest. Wall-clock time goes to run.log
/// only, so that the JSON outputs stay byte-identical across re-runs.
/// Throws ConfigError / IoError / ContractViolation; the caller maps them to
/// exit codes.
inline int run_command(std::string_view verb, const RunConfig& config, std::ostream& log) {
  config.validate();
  CommandContext ctx{config, log, std::string(verb)};
  ArtifactWriter writer(detail::run_root(config));
  const auto start = std::chrono::steady_clock::now();
  const std::string started = detail::utc_timestamp();
  int code = kExitOk;
  if (verb == "gen-data") code = cmd_gen_data(ctx, writer);
  else if (verb == "train") code = cmd_train(ctx, writer);
  else if (verb == "eval") code = cmd_eval(ctx, writer);
  else if (verb == "score") code = cmd_score(ctx, writer);
  else if (verb == "abstain") code = cmd_abstain(ctx, writer);
  else if (verb == "verify") code = cmd_verify(ctx, writer);
  else if (verb == "ablate") code = cmd_ablate(ctx, writer);
  else if (verb == "report") code = cmd_report(ctx, writer);
  else throw ConfigError("unknown command '" + std::string(verb) + "'");

  const nlohmann::json manifest = {{"run_id", effective_run_id(config)},
                                   {"command", verb},
                                   {"config_hash", config_hash(config)},
                                   {"config", canonical_json(config)},
                                   {"seeds", config.seeds},
                                   {"exit_code", code},
                                   {"artifacts", writer.written()}};
  const std::filesystem::path manifest_path = writer.write_json("manifest_" + std::string(verb) + ".json", manifest);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  detail::append_run_log(writer.root(), started + " " + std::string(verb) + " exit=" + std::to_string(code) +
                                            " wall_seconds=" + fmt_num(seconds) + " manifest=" +
                                            manifest_path.filename().string());
  return code;
}

}  // namespace sua
