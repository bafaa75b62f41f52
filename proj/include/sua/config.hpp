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

// Run configuration: TOML file with [task], [train], [perturb], [sua] and
// [bounds] tables plus a few top-level keys, then command-line overrides.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <tomlplusplus/toml.hpp>

#include "sua/evaluate.hpp"
#include "sua/perturb.hpp"
#include "sua/rng.hpp"
#include "sua/score.hpp"
#include "sua/train.hpp"
#include "sua/world.hpp"

namespace sua {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  TaskSpec task = TaskSpec::for_family(TaskFamily::factual);
  TrainConfig train;
  PerturbConfig perturb;
  SuaConfig sua;
  BoundConfig bounds;
  double coverage = 0.8;  // target coverage when tau is calibrated
  bool tau_given = false; // tau came from the file or the command line
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out = "runs";
  std::string run_id;  // empty: derived from the config hash
  std::string method_filter;  // "all" or one method name
  std::string task_filter;    // "all" or one family name
  int checkpoint_every = 0;   // epochs between intermediate checkpoints; 0 keeps only the final one

  void validate() const {
    try {
      task.validate();
      train.validate();
      perturb.validate();
      sua.validate();
    } catch (const ContractViolation& e) {
      throw ConfigError(e.what());
    }
    if (!(coverage > 0.0 && coverage < 1.0)) throw ConfigError("coverage must lie in (0, 1)");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
    if (bounds.lipschitz <= 0.0 || bounds.lambda <= 0.0) throw ConfigError("bounds need positive lipschitz and lambda");
    if (bounds.max_violation_rate < 0.0 || bounds.max_violation_rate > 1.0) {
      throw ConfigError("bounds.max_violation_rate must lie in [0, 1]");
    }
  }
};

/// Canonical JSON of everything that influences outputs (no paths).
inline nlohmann::json canonical_json(const RunConfig& c) {
  nlohmann::json j;
  j["task"] = c.task;
  j["train"] = c.train;
  j["perturb"] = c.perturb;
  j["sua"] = c.sua;
  j["bounds"] = {{"lipschitz", c.bounds.lipschitz},
                 {"lambda", c.bounds.lambda},
                 {"slack_tolerance", c.bounds.slack_tolerance},
                 {"logged_excess", c.bounds.logged_excess},
                 {"max_violation_rate", c.bounds.max_violation_rate}};
  j["coverage"] = c.coverage;
  j["tau_given"] = c.tau_given;
  j["seeds"] = c.seeds;
  return j;
}

inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical_json(c).dump())));
  return buf;
}

inline std::string effective_run_id(const RunConfig& c) {
  return c.run_id.empty() ? "run-" + config_hash(c).substr(0, 8) : c.run_id;
}

namespace detail {

// Reads typed values out of one table and rejects keys nobody asked for.
class TableReader {
 public:
  TableReader(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  template <typename T>
  void get(std::string_view key, T& target) {
    seen_.insert(std::string(key));
    if (table_ == nullptr) return;
    const toml::node* node = table_->get(key);
    if (node == nullptr) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (auto v = node->value_exact<bool>()) {
        target = *v;
        return;
      }
    } else if constexpr (std::is_integral_v<T>) {
      if (auto v = node->value_exact<std::int64_t>()) {
        if constexpr (std::is_unsigned_v<T>) {
          if (*v < 0) fail(key, "must be non-negative");
        }
        target = static_cast<T>(*v);
        return;
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (auto v = node->value<double>()) {
        target = *v;
        return;
      }
    } else {
      if (auto v = node->value_exact<std::string>()) {
        target = *v;
        return;
      }
    }
    fail(key, "has the wrong type");
  }

  [[nodiscard]] std::optional<std::string> string(std::string_view key) {
    std::optional<std::string> out;
    std::string v;
    seen_.insert(std::string(key));
    if (table_ != nullptr && table_->get(key) != nullptr) {
      get(key, v);
      out = v;
    }
    return out;
  }

  void finish() const {
    if (table_ == nullptr) return;
    for (const auto& [key, node] : *table_) {
      if (!seen_.contains(std::string(key.str()))) {
        throw ConfigError("unknown key '" + std::string(key.str()) + "' in " + name_);
      }
    }
  }

  [[noreturn]] void fail(std::string_view key, std::string_view what) const {
    throw ConfigError(name_ + "." + std::string(key) + " " + std::string(what));
  }

 private:
  const toml::table* table_;
  std::string name_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto translate(Fn&& fn) {
  try {
    return fn();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
}

inline void read_task(const toml::table* t, TaskSpec& spec) {
  TableReader r(t, "[task]");
  if (auto family = r.string("family")) spec = TaskSpec::for_family(translate([&] { return parse_family(*family); }));
  r.get("train_size", spec.sizes.train);
  r.get("valid_size", spec.sizes.valid);
  r.get("test_size", spec.sizes.test);
  r.get("shifted_test_size", spec.sizes.shifted_test);
  r.get("ambiguous_fraction", spec.ambiguous_fraction);
  r.get("ambiguity_level", spec.ambiguity_level);
  r.get("emission_noise", spec.emission_noise);
  r.get("seq_len", spec.seq_len);
  r.get("num_labels", spec.num_labels);
  r.get("num_topics", spec.num_topics);
  r.get("num_readings", spec.num_readings);
  r.get("words_per_topic", spec.words_per_topic);
  r.get("forms_per_word", spec.forms_per_word);
  r.get("heldout_forms_per_word", spec.heldout_forms_per_word);
  r.get("num_noise_tokens", spec.num_noise_tokens);
  r.get("cues_per_reading", spec.cues_per_reading);
  r.get("num_ambiguous_cues", spec.num_ambiguous_cues);
  r.get("max_topic_words", spec.max_topic_words);
  r.get("distractor_prob", spec.distractor_prob);
  r.finish();
}

inline void read_train(const toml::table* t, TrainConfig& c, int& checkpoint_every) {
  TableReader r(t, "[train]");
  if (auto m = r.string("method")) c.method = translate([&] { return parse_method(*m); });
  r.get("alpha", c.alpha);
  r.get("beta", c.beta);
  r.get("lambda", c.lambda);
  r.get("K", c.K);
  r.get("learning_rate", c.learning_rate);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  if (auto d = r.string("divergence")) c.divergence = translate([&] { return parse_divergence(*d); });
  r.get("stop_gradient_in_alignment", c.stop_gradient_in_alignment);
  r.get("d_emb", c.d_emb);
  r.get("d_hid", c.d_hid);
  r.get("init_scale", c.init_scale);
  r.get("checkpoint_every", checkpoint_every);
  r.finish();
}

inline void read_perturb(const toml::table* t, PerturbConfig& c) {
  TableReader r(t, "[perturb]");
  r.get("epsilon", c.epsilon);
  r.get("weight_paraphrase", c.weights[0]);
  r.get("weight_token_edit", c.weights[1]);
  r.get("weight_adversarial", c.weights[2]);
  r.get("K", c.K);
  r.get("semantic_tv_threshold", c.semantic_tv_threshold);
  r.get("adv_search_budget", c.adv_search_budget);
  r.finish();
}

inline void read_sua(const toml::table* t, SuaConfig& c, double& coverage, bool& tau_given) {
  TableReader r(t, "[sua]");
  r.get("lambda", c.lambda);
  if (auto d = r.string("divergence")) c.divergence = translate([&] { return parse_divergence(*d); });
  r.get("K", c.K);
  if (t != nullptr && t->get("tau") != nullptr) tau_given = true;
  r.get("tau", c.tau);
  r.get("coverage", coverage);
  r.finish();
}

inline void read_bounds(const toml::table* t, BoundConfig& c) {
  TableReader r(t, "[bounds]");
  r.get("lipschitz", c.lipschitz);
  r.get("lambda", c.lambda);
  r.get("slack_tolerance", c.slack_tolerance);
  r.get("logged_excess", c.logged_excess);
  r.get("max_violation_rate", c.max_violation_rate);
  r.finish();
}

}  // namespace detail

/// Applies a parsed TOML document on top of `base`.
inline RunConfig apply_toml(const toml::table& doc, RunConfig base) {
  static const std::set<std::string> kTables{"task", "train", "perturb", "sua", "bounds"};
  static const std::set<std::string> kTopLevel{"seeds", "out", "run_id", "method", "task_family"};
  for (const auto& [key, node] : doc) {
    const std::string k(key.str());
    if (kTables.contains(k)) {
      if (!node.is_table()) throw ConfigError("'" + k + "' must be a table");
    } else if (!kTopLevel.contains(k)) {
      throw ConfigError("unknown top-level key '" + k + "'");
    }
  }
  detail::read_task(doc["task"].as_table(), base.task);
  detail::read_train(doc["train"].as_table(), base.train, base.checkpoint_every);
  detail::read_perturb(doc["perturb"].as_table(), base.perturb);
  detail::read_sua(doc["sua"].as_table(), base.sua, base.coverage, base.tau_given);
  detail::read_bounds(doc["bounds"].as_table(), base.bounds);

  if (const toml::node* seeds = doc.get("seeds")) {
    const toml::array* arr = seeds->as_array();
    if (arr == nullptr) throw ConfigError("seeds must be an array of integers");
    base.seeds.clear();
    for (const toml::node& s : *arr) {
      auto v = s.value_exact<std::int64_t>();
      if (!v || *v < 0) throw ConfigError("seeds must be non-negative integers");
      base.seeds.push_back(static_cast<std::uint64_t>(*v));
    }
  }
  if (auto v = doc["out"].value_exact<std::string>()) base.out = *v;
  if (auto v = doc["run_id"].value_exact<std::string>()) base.run_id = *v;
  if (auto v = doc["method"].value_exact<std::string>()) base.method_filter = *v;
  if (auto v = doc["task_family"].value_exact<std::string>()) base.task_filter = *v;
  return base;
}

inline RunConfig parse_config_text(std::string_view text, RunConfig base = {}) {
  try {
    return apply_toml(toml::parse(text), std::move(base));
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string("TOML parse error: ") + std::string(e.description()));
  }
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  try {
    return apply_toml(toml::parse_file(path.string()), std::move(base));
  } catch (const toml::parse_error& e) {
    throw ConfigError("TOML parse error in " + path.string() + ": " + std::string(e.description()));
  }
}

/// Command-line values; unset fields leave the file values alone.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> method;
  std::optional<std::string> task;
  std::optional<double> coverage;
  std::optional<double> tau;
  std::optional<int> k;
  std::optional<double> lambda;
};

/// `--lambda` and `--k` set both the training and the scoring values.
inline RunConfig apply_overrides(RunConfig c, const Overrides& o) {
  if (o.seed) c.seeds = {*o.seed};
  if (o.out) c.out = *o.out;
  if (o.method) {
    if (*o.method != "all") detail::translate([&] { return parse_method(*o.method); });
    c.method_filter = *o.method;
  }
  if (o.task) {
    if (*o.task != "all") {
      const TaskFamily family = detail::translate([&] { return parse_family(*o.task); });
      if (family != c.task.family) {
        const SplitSizes sizes = c.task.sizes;
        c.task = TaskSpec::for_family(family);
        c.task.sizes = sizes;
      }
    }
    c.task_filter = *o.task;
  }
  if (o.coverage) c.coverage = *o.coverage;
  if (o.tau) {
    c.sua.tau = *o.tau;
    c.tau_given = true;
  }
  if (o.k) {
    c.sua.K = *o.k;
    c.train.K = *o.k;
    c.perturb.K = *o.k;
  }
  if (o.lambda) {
    c.sua.lambda = *o.lambda;
    c.train.lambda = *o.lambda;
  }
  c.validate();
  return c;
}

}  // namespace sua
