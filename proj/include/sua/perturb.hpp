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

// Semantics-preserving input perturbations. The neighbourhood of x is a
// Hamming ball: at most `epsilon` positions are substituted, length never
// changes, and the cue at position 0 is never touched. Every candidate is
// checked exactly against the world: TV(p(z|x'), p(z|x)) must not exceed the
// configured threshold.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sua/model.hpp"
#include "sua/prob.hpp"
#include "sua/rng.hpp"
#include "sua/world.hpp"

namespace sua {

struct PerturbConfig {
  int epsilon = 2;
  std::array<double, 3> weights{0.5, 0.3, 0.2};  // paraphrase, token edit, adversarial
  int K = 4;
  double semantic_tv_threshold = 0.01;
  int adv_search_budget = 32;

  void validate() const {
    require(epsilon >= 1, "perturbation epsilon must be at least 1");
    require(K >= 1, "perturbation K must be at least 1");
    require(adv_search_budget >= 1, "adversarial search budget must be at least 1");
    require(semantic_tv_threshold >= 0.0 && semantic_tv_threshold <= 1.0, "semantic TV threshold must lie in [0, 1]");
    double total = 0.0;
    for (double w : weights) {
      require(std::isfinite(w) && w >= 0.0, "mixture weights must be non-negative");
      total += w;
    }
    require(std::abs(total - 1.0) <= 1e-9, "mixture weights must sum to 1");
  }
};

inline void to_json(nlohmann::json& j, const PerturbConfig& c) {
  j = {{"epsilon", c.epsilon},
       {"weights", c.weights},
       {"K", c.K},
       {"semantic_tv_threshold", c.semantic_tv_threshold},
       {"adv_search_budget", c.adv_search_budget}};
}

inline void from_json(const nlohmann::json& j, PerturbConfig& c) {
  j.at("epsilon").get_to(c.epsilon);
  j.at("weights").get_to(c.weights);
  j.at("K").get_to(c.K);
  j.at("semantic_tv_threshold").get_to(c.semantic_tv_threshold);
  j.at("adv_search_budget").get_to(c.adv_search_budget);
}

enum class Strategy { paraphrase, token_edit, adversarial };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::paraphrase: return "paraphrase";
    case Strategy::token_edit: return "token_edit";
    case Strategy::adversarial: return "adversarial";
  }
  return "paraphrase";
}

struct Perturbation {
  TokenSeq tokens;
  Strategy strategy = Strategy::paraphrase;
  double semantic_tv = 0.0;
  bool fallback = false;  // identity (or token-edit) stand-in: nothing eligible passed
};

inline int edit_distance(std::span<const int> a, std::span<const int> b) {
  require(a.size() == b.size(), "substitution distance needs equal lengths");
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i] ? 1 : 0;
  return d;
}

inline double semantic_tv(const World& world, std::span<const int> source, std::span<const int> edited) {
  return tv(world.interpretation_prior(edited), world.interpretation_prior(source));
}

inline double semantic_tv(const World& world, const Dist& source_prior, std::span<const int> edited) {
  return tv(world.interpretation_prior(edited), source_prior);
}

inline nlohmann::json perturbation_to_json(const Perturbation& p) {
  return {{"tokens", p.tokens}, {"strategy", to_string(p.strategy)}, {"semantic_tv", p.semantic_tv}, {"fallback", p.fallback}};
}

namespace detail {

inline Perturbation identity_perturbation(std::span<const int> tokens, Strategy strategy) {
  return Perturbation{TokenSeq(tokens.begin(), tokens.end()), strategy, 0.0, true};
}

// Picks `count` distinct entries of `pool` in random order.
inline std::vector<int> choose_positions(std::vector<int> pool, int count, Rng& rng) {
  for (int i = 0; i < count; ++i) {
    const int j = uniform_int(rng, i, static_cast<int>(pool.size()) - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

inline std::vector<int> editable_positions(const World& world, std::span<const int> tokens) {
  std::vector<int> out;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    if (!world.is_cue(tokens[i])) out.push_back(static_cast<int>(i));
  }
  return out;
}

// Uniform over `pool` minus `current`.
inline int pick_other(std::span<const int> pool, int current, Rng& rng) {
  const bool member = std::find(pool.begin(), pool.end(), current) != pool.end();
  if (!member) return pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(pool.size()) - 1))];
  if (pool.size() < 2) return current;
  const int t = pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(pool.size()) - 2))];
  return t == current ? pool.back() : t;
}

// Random substitutions at up to `epsilon` of the given positions.
template <typename Draw>
TokenSeq random_edit(std::span<const int> tokens, const std::vector<int>& positions, int epsilon, Rng& rng, Draw&& draw) {
  TokenSeq out(tokens.begin(), tokens.end());
  const int count = uniform_int(rng, 1, std::min(epsilon, static_cast<int>(positions.size())));
  for (int pos : choose_positions(positions, count, rng)) {
    out[static_cast<std::size_t>(pos)] = draw(out[static_cast<std::size_t>(pos)]);
  }
  return out;
}

inline constexpr int kEditAttempts = 8;

}  // namespace detail

/// Swaps up to epsilon content words for other surface forms of the same word.
inline Perturbation gen_paraphrase(const World& world, std::span<const int> tokens, const PerturbConfig& config, Rng& rng) {
  world.check_tokens(tokens);
  std::vector<int> eligible;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const int t = tokens[i];
    if (world.is_content(t) && world.class_members(world.token(t).equivalence_class).size() >= 2) {
      eligible.push_back(static_cast<int>(i));
    }
  }
  if (eligible.empty()) return detail::identity_perturbation(tokens, Strategy::paraphrase);
  for (int attempt = 0; attempt < detail::kEditAttempts; ++attempt) {
    TokenSeq out = detail::random_edit(tokens, eligible, config.epsilon, rng, [&](int current) {
      return detail::pick_other(world.class_members(world.token(current).equivalence_class), current, rng);
    });
    const double d = semantic_tv(world, tokens, out);
    if (d <= config.semantic_tv_threshold) return Perturbation{std::move(out), Strategy::paraphrase, d, false};
  }
  return detail::identity_perturbation(tokens, Strategy::paraphrase);
}

/// Overwrites up to epsilon non-cue positions with noise tokens.
inline Perturbation gen_token_edit(const World& world, std::span<const int> tokens, const PerturbConfig& config, Rng& rng) {
  world.check_tokens(tokens);
  const std::vector<int> eligible = detail::editable_positions(world, tokens);
  if (eligible.empty()) return detail::identity_perturbation(tokens, Strategy::token_edit);
  const auto noise = world.noise_tokens();
  for (int attempt = 0; attempt < detail::kEditAttempts; ++attempt) {
    TokenSeq out = detail::random_edit(tokens, eligible, config.epsilon, rng,
                                       [&](int current) { return detail::pick_other(noise, current, rng); });
    const double d = semantic_tv(world, tokens, out);
    if (d <= config.semantic_tv_threshold) return Perturbation{std::move(out), Strategy::token_edit, d, false};
  }
  return detail::identity_perturbation(tokens, Strategy::token_edit);
}

struct SearchResult {
  bool found = false;
  TokenSeq tokens;
  double objective = 0.0;
  double semantic_tv = 0.0;
  int evaluated = 0;  // candidates that passed the semantic check
};

/// Random search over `budget` in-ball candidates drawn from all non-cue
/// tokens; keeps the admissible candidate with the largest objective (first
/// one wins ties).
template <typename Objective>
SearchResult adversarial_search(const World& world, std::span<const int> tokens, const PerturbConfig& config, int budget,
                                Rng& rng, Objective&& objective) {
  world.check_tokens(tokens);
  SearchResult best;
  const std::vector<int> eligible = detail::editable_positions(world, tokens);
  if (eligible.empty()) return best;
  std::vector<int> pool;
  for (int t = 0; t < world.vocab_size(); ++t) {
    if (!world.is_cue(t)) pool.push_back(t);
  }
  const Dist source_prior = world.interpretation_prior(tokens);
  for (int i = 0; i < budget; ++i) {
    TokenSeq cand = detail::random_edit(tokens, eligible, config.epsilon, rng,
                                        [&](int current) { return detail::pick_other(pool, current, rng); });
    const double d = semantic_tv(world, source_prior, cand);
    if (d > config.semantic_tv_threshold) continue;
    ++best.evaluated;
    const double value = objective(cand);
    if (!best.found || value > best.objective) {
      best.found = true;
      best.objective = value;
      best.semantic_tv = d;
      best.tokens = std::move(cand);
    }
  }
  return best;
}

/// The admissible candidate that moves the model's output furthest in JS.
inline Perturbation gen_adversarial(const World& world, const ModelParams& params, std::span<const int> tokens,
                                    const PerturbConfig& config, Rng& rng) {
  const Dist base = predict(params, tokens);
  SearchResult r = adversarial_search(world, tokens, config, config.adv_search_budget, rng,
                                      [&](const TokenSeq& cand) { return js(base, predict(params, cand)); });
  if (r.found) return Perturbation{std::move(r.tokens), Strategy::adversarial, r.semantic_tv, false};
  Perturbation p = gen_token_edit(world, tokens, config, rng);
  p.strategy = Strategy::adversarial;
  p.fallback = true;
  return p;
}

inline Strategy draw_strategy(const PerturbConfig& config, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  int last = 0;
  for (int i = 0; i < 3; ++i) {
    if (config.weights[static_cast<std::size_t>(i)] <= 0.0) continue;
    last = i;
    acc += config.weights[static_cast<std::size_t>(i)];
    if (u < acc) return static_cast<Strategy>(i);
  }
  return static_cast<Strategy>(last);
}

inline Perturbation generate(Strategy strategy, const World& world, const ModelParams& params, std::span<const int> tokens,
                             const PerturbConfig& config, Rng& rng) {
  switch (strategy) {
    case Strategy::paraphrase: return gen_paraphrase(world, tokens, config, rng);
    case Strategy::token_edit: return gen_token_edit(world, tokens, config, rng);
    case Strategy::adversarial: return gen_adversarial(world, params, tokens, config, rng);
  }
  throw ContractViolation("unknown perturbation strategy");
}

/// K independent draws from the strategy mixture.
inline std::vector<Perturbation> sample_perturbations(const World& world, const ModelParams& params,
                                                      std::span<const int> tokens, const PerturbConfig& config, Rng& rng,
                                                      int count = -1) {
  config.validate();
  const int k = count < 0 ? config.K : count;
  require(k >= 1, "at least one perturbation must be requested");
  std::vector<Perturbation> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out.push_back(generate(draw_strategy(config, rng), world, params, tokens, config, rng));
  return out;
}

}  // namespace sua
