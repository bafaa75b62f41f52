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

// Sensitivity-uncertainty alignment scores and thresholded abstention.
//
// score(x) = sensitivity(x) - lambda * H(p(.|x)), where sensitivity is the
// mean divergence D(p(.|x) || p(.|x'_k)) over K sampled perturbations.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sua/io.hpp"
#include "sua/model.hpp"
#include "sua/perturb.hpp"
#include "sua/prob.hpp"
#include "sua/world.hpp"

namespace sua {

struct SuaConfig {
  double lambda = 1.0;
  DivergenceKind divergence = DivergenceKind::js;
  int K = 4;
  double tau = 0.0;

  void validate() const {
    require(lambda > 0.0 && std::isfinite(lambda), "lambda must be positive");
    require(K >= 1, "K must be at least 1");
    require(!std::isnan(tau), "tau must not be NaN");
  }
};

inline void to_json(nlohmann::json& j, const SuaConfig& c) {
  j = {{"lambda", c.lambda}, {"divergence", to_string(c.divergence)}, {"K", c.K}, {"tau", c.tau}};
}

inline void from_json(const nlohmann::json& j, SuaConfig& c) {
  j.at("lambda").get_to(c.lambda);
  c.divergence = parse_divergence(j.at("divergence").get<std::string>());
  j.at("K").get_to(c.K);
  j.at("tau").get_to(c.tau);
}

struct SuaEstimate {
  double sensitivity_hat = 0.0;
  double entropy = 0.0;
  double score = 0.0;
  int k_used = 0;
  std::vector<double> divergences;
};

struct AbstentionOutcome {
  bool abstain = false;
  int label = -1;  // -1 when abstaining
  SuaEstimate diagnostics;
};

/// Mean of D(base || p(.|x'_k)); the per-perturbation values come back too.
inline std::pair<double, std::vector<double>> sensitivity_hat(const ModelParams& params, std::span<const int> tokens,
                                                              std::span<const Perturbation> perturbations,
                                                              DivergenceKind kind) {
  require(!perturbations.empty(), "sensitivity needs at least one perturbation");
  const Dist base = predict(params, tokens);
  std::vector<double> divs;
  divs.reserve(perturbations.size());
  double total = 0.0;
  for (const Perturbation& p : perturbations) {
    divs.push_back(divergence(kind, base, predict(params, p.tokens)));
    total += divs.back();
  }
  return {total / static_cast<double>(perturbations.size()), std::move(divs)};
}

inline double sua_score(double sensitivity, double entropy_nats, double lambda) {
  require(lambda > 0.0, "lambda must be positive");
  return sensitivity - lambda * entropy_nats;
}

/// Mean positive part of the scores.
inline double sua_risk(std::span<const double> scores) {
  require(!scores.empty(), "SUA risk needs at least one score");
  double total = 0.0;
  for (double s : scores) total += std::max(s, 0.0);
  return total / static_cast<double>(scores.size());
}

inline SuaEstimate estimate_from(const ModelParams& params, std::span<const int> tokens,
                                 std::span<const Perturbation> perturbations, const SuaConfig& config) {
  auto [sens, divs] = sensitivity_hat(params, tokens, perturbations, config.divergence);
  SuaEstimate est;
  est.sensitivity_hat = sens;
  est.entropy = entropy(predict(params, tokens));
  est.score = sua_score(sens, est.entropy, config.lambda);
  est.k_used = static_cast<int>(perturbations.size());
  est.divergences = std::move(divs);
  return est;
}

/// Draws `config.K` perturbations and scores the input.
inline SuaEstimate estimate_sua(const ModelParams& params, const World& world, std::span<const int> tokens,
                                const SuaConfig& config, const PerturbConfig& perturb, Rng& rng) {
  config.validate();
  const auto ps = sample_perturbations(world, params, tokens, perturb, rng, config.K);
  return estimate_from(params, tokens, ps, config);
}

enum class ProxyMode { resample, paraphrase };

inline ProxyMode parse_proxy_mode(std::string_view name) {
  if (name == "resample") return ProxyMode::resample;
  if (name == "paraphrase") return ProxyMode::paraphrase;
  throw ContractViolation("unknown ambiguity proxy mode '" + std::string(name) + "'");
}

inline constexpr int kDefaultProxySamples = 16;

namespace detail {

inline double histogram_entropy(std::span<const int> counts) {
  double n = 0.0;
  for (int c : counts) n += c;
  double h = 0.0;
  for (int c : counts) {
    if (c > 0) {
      const double p = c / n;
      h -= p * std::log(p);
    }
  }
  return std::max(h, 0.0);
}

}  // namespace detail

/// Entropy of the empirical label histogram over `samples` draws: labels
/// sampled from the model (resample) or argmax labels of paraphrases.
inline double ambiguity_proxy(const ModelParams& params, const World& world, std::span<const int> tokens, int samples,
                              Rng& rng, ProxyMode mode = ProxyMode::paraphrase, const PerturbConfig& perturb = {}) {
  require(samples >= 2, "ambiguity proxy needs at least two samples");
  std::vector<int> counts(static_cast<std::size_t>(params.shape().num_labels), 0);
  if (mode == ProxyMode::resample) {
    const Dist p = predict(params, tokens);
    for (int i = 0; i < samples; ++i) ++counts[static_cast<std::size_t>(detail::sample_index(p, rng))];
  } else {
    for (int i = 0; i < samples; ++i) {
      const Perturbation para = gen_paraphrase(world, tokens, perturb, rng);
      ++counts[static_cast<std::size_t>(predict_label(predict(params, para.tokens)))];
    }
  }
  return detail::histogram_entropy(counts);
}

/// Scores the input and abstains iff score > tau.
inline AbstentionOutcome infer_with_abstention(const ModelParams& params, const World& world, std::span<const int> tokens,
                                               const SuaConfig& config, const PerturbConfig& perturb, Rng& rng) {
  AbstentionOutcome out;
  out.diagnostics = estimate_sua(params, world, tokens, config, perturb, rng);
  out.abstain = out.diagnostics.score > config.tau;
  out.label = out.abstain ? -1 : predict_label(predict(params, tokens));
  return out;
}

struct ScoreRow {
  std::string input_id;
  SuaEstimate estimate;
  std::optional<int> label;  // empty means abstain
};

inline void write_score_csv_header(std::ostream& os) { os << "input_id,sensitivity,entropy,score,decision\n"; }

inline void write_score_csv_row(std::ostream& os, const ScoreRow& row) {
  os << row.input_id << ',' << fmt_num(row.estimate.sensitivity_hat) << ',' << fmt_num(row.estimate.entropy) << ','
     << fmt_num(row.estimate.score) << ',' << (row.label ? "answer:" + std::to_string(*row.label) : std::string("abstain"))
     << '\n';
}

}  // namespace sua
