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

// Synthetic latent-interpretation worlds.
//
// An input is a short token sequence. Position 0 holds a cue token whose
// table entry is a distribution over "readings"; the remaining positions
// hold content words (each tied to a topic) and noise tokens. The
// interpretation is z = (topic, reading): the topic is the majority topic of
// the content words (ties split the mass evenly) and the reading comes from
// the cue. Labels are emitted from a per-(topic, reading) lookup table, so
// p(y|x) = sum_z p(y|z,x) p(z|x) can be enumerated exactly.
//
// Every content word has several surface forms forming one equivalence
// class. The first `forms_per_word` forms are the in-domain region; the rest
// are held out and only ever appear in the shifted_test split.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sua/prob.hpp"
#include "sua/rng.hpp"

namespace sua {

using TokenSeq = std::vector<int>;

enum class TaskFamily { factual, ambiguous, shifted };
enum class Split { train, valid, test, shifted_test };

inline std::string_view to_string(TaskFamily family) {
  switch (family) {
    case TaskFamily::factual: return "factual";
    case TaskFamily::ambiguous: return "ambiguous";
    case TaskFamily::shifted: return "shifted";
  }
  return "factual";
}

inline TaskFamily parse_family(std::string_view name) {
  if (name == "factual") return TaskFamily::factual;
  if (name == "ambiguous") return TaskFamily::ambiguous;
  if (name == "shifted") return TaskFamily::shifted;
  throw ContractViolation("unknown task family '" + std::string(name) + "'");
}

inline std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
    case Split::shifted_test: return "shifted_test";
  }
  return "train";
}

inline Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "valid") return Split::valid;
  if (name == "test") return Split::test;
  if (name == "shifted_test") return Split::shifted_test;
  throw ContractViolation("unknown split '" + std::string(name) + "'");
}

struct SplitSizes {
  int train = 1000;
  int valid = 200;
  int test = 200;
  int shifted_test = 200;

  [[nodiscard]] int of(Split split) const {
    switch (split) {
      case Split::train: return train;
      case Split::valid: return valid;
      case Split::test: return test;
      case Split::shifted_test: return shifted_test;
    }
    return 0;
  }
};

struct TaskSpec {
  TaskFamily family = TaskFamily::factual;
  SplitSizes sizes;
  double ambiguous_fraction = 0.0;           // rho: share of inputs drawn with an ambiguous cue
  double ambiguity_level = std::numbers::ln2;  // target A(x) for ambiguous cues, nats
  double emission_noise = 0.0;               // mass spread uniformly over labels by p(y|z,x)
  int seq_len = 8;
  int num_labels = 4;
  int num_topics = 6;
  int num_readings = 4;
  int words_per_topic = 3;
  int forms_per_word = 2;
  int heldout_forms_per_word = 2;
  int num_noise_tokens = 8;
  int cues_per_reading = 2;
  int num_ambiguous_cues = 4;
  int max_topic_words = 0;  // 0: up to seq_len - 1
  double distractor_prob = 0.3;

  static TaskSpec for_family(TaskFamily family) {
    TaskSpec spec;
    spec.family = family;
    switch (family) {
      case TaskFamily::factual:
        spec.emission_noise = 0.1;
        break;
      case TaskFamily::ambiguous:
        spec.ambiguous_fraction = 0.3;
        break;
      case TaskFamily::shifted:
        spec.ambiguous_fraction = 0.1;
        spec.emission_noise = 0.05;
        break;
    }
    return spec;
  }

  [[nodiscard]] int topic_word_cap() const { return max_topic_words > 0 ? max_topic_words : seq_len - 1; }

  void validate() const {
    require(sizes.train >= 1 && sizes.valid >= 1 && sizes.test >= 1 && sizes.shifted_test >= 1,
            "every split size must be at least 1");
    require(ambiguous_fraction >= 0.0 && ambiguous_fraction <= 1.0, "ambiguous_fraction must lie in [0, 1]");
    require(ambiguity_level > 0.0 && ambiguity_level <= std::log(static_cast<double>(num_readings)) + 1e-12,
            "ambiguity_level must lie in (0, ln num_readings]");
    require(emission_noise >= 0.0 && emission_noise <= 1.0, "emission_noise must lie in [0, 1]");
    require(seq_len >= 4 && seq_len <= 32, "seq_len must lie in [4, 32]");
    require(num_labels >= 2, "num_labels must be at least 2");
    require(num_topics >= 2, "num_topics must be at least 2");
    require(num_readings >= 2, "num_readings must be at least 2");
    require(words_per_topic >= 1 && forms_per_word >= 1 && heldout_forms_per_word >= 1,
            "word and form counts must be positive");
    require(num_noise_tokens >= 2, "num_noise_tokens must be at least 2");
    require(cues_per_reading >= 1 && num_ambiguous_cues >= 1, "cue counts must be positive");
    require(max_topic_words >= 0 && max_topic_words <= seq_len - 1, "max_topic_words must lie in [0, seq_len - 1]");
    require(distractor_prob >= 0.0 && distractor_prob <= 1.0, "distractor_prob must lie in [0, 1]");
  }
};

inline void to_json(nlohmann::json& j, const TaskSpec& s) {
  j = nlohmann::json{{"family", to_string(s.family)},
                     {"sizes",
                      {{"train", s.sizes.train},
                       {"valid", s.sizes.valid},
                       {"test", s.sizes.test},
                       {"shifted_test", s.sizes.shifted_test}}},
                     {"ambiguous_fraction", s.ambiguous_fraction},
                     {"ambiguity_level", s.ambiguity_level},
                     {"emission_noise", s.emission_noise},
                     {"seq_len", s.seq_len},
                     {"num_labels", s.num_labels},
                     {"num_topics", s.num_topics},
                     {"num_readings", s.num_readings},
                     {"words_per_topic", s.words_per_topic},
                     {"forms_per_word", s.forms_per_word},
                     {"heldout_forms_per_word", s.heldout_forms_per_word},
                     {"num_noise_tokens", s.num_noise_tokens},
                     {"cues_per_reading", s.cues_per_reading},
                     {"num_ambiguous_cues", s.num_ambiguous_cues},
                     {"max_topic_words", s.max_topic_words},
                     {"distractor_prob", s.distractor_prob}};
}

inline void from_json(const nlohmann::json& j, TaskSpec& s) {
  s.family = parse_family(j.at("family").get<std::string>());
  const auto& sizes = j.at("sizes");
  s.sizes = {sizes.at("train").get<int>(), sizes.at("valid").get<int>(), sizes.at("test").get<int>(),
             sizes.at("shifted_test").get<int>()};
  j.at("ambiguous_fraction").get_to(s.ambiguous_fraction);
  j.at("ambiguity_level").get_to(s.ambiguity_level);
  j.at("emission_noise").get_to(s.emission_noise);
  j.at("seq_len").get_to(s.seq_len);
  j.at("num_labels").get_to(s.num_labels);
  j.at("num_topics").get_to(s.num_topics);
  j.at("num_readings").get_to(s.num_readings);
  j.at("words_per_topic").get_to(s.words_per_topic);
  j.at("forms_per_word").get_to(s.forms_per_word);
  j.at("heldout_forms_per_word").get_to(s.heldout_forms_per_word);
  j.at("num_noise_tokens").get_to(s.num_noise_tokens);
  j.at("cues_per_reading").get_to(s.cues_per_reading);
  j.at("num_ambiguous_cues").get_to(s.num_ambiguous_cues);
  j.at("max_topic_words").get_to(s.max_topic_words);
  j.at("distractor_prob").get_to(s.distractor_prob);
}

enum class TokenRole { noise, cue, content };

struct TokenInfo {
  TokenRole role = TokenRole::noise;
  int topic = -1;
  int equivalence_class = 0;
  bool heldout = false;
};

struct Example {
  TokenSeq tokens;
  int latent_z = 0;
  int label_y = 0;
  Split split = Split::train;
};

struct GroundTruth {
  Dist p_z_given_x;
  Dist p_y_given_x;
  double ambiguity = 0.0;         // A(x) = H(Z | x)
  double true_uncertainty = 0.0;  // U*(x) = H(Y | x)
  double eta = 0.0;               // |U*(x) - A(x)|
  double bayes_risk = 0.0;        // 1 - max_y p(y | x), 0-1 loss
};

class World;
World build_world(const TaskSpec& spec, std::uint64_t seed);

class World {
 public:
  [[nodiscard]] const TaskSpec& spec() const { return spec_; }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] int vocab_size() const { return static_cast<int>(tokens_.size()); }
  [[nodiscard]] int num_interpretations() const { return spec_.num_topics * spec_.num_readings; }
  [[nodiscard]] int num_labels() const { return spec_.num_labels; }
  [[nodiscard]] bool in_vocab(int token) const { return token >= 0 && token < vocab_size(); }

  [[nodiscard]] const TokenInfo& token(int id) const {
    require(in_vocab(id), "token " + std::to_string(id) + " is out of vocabulary");
    return tokens_[static_cast<std::size_t>(id)];
  }
  [[nodiscard]] bool is_cue(int id) const { return token(id).role == TokenRole::cue; }
  [[nodiscard]] bool is_noise(int id) const { return token(id).role == TokenRole::noise; }
  [[nodiscard]] bool is_content(int id) const { return token(id).role == TokenRole::content; }

  [[nodiscard]] int num_classes() const { return static_cast<int>(classes_.size()); }
  [[nodiscard]] std::span<const int> class_members(int cls) const { return classes_.at(static_cast<std::size_t>(cls)); }
  [[nodiscard]] std::span<const int> noise_tokens() const { return classes_.front(); }
  [[nodiscard]] std::span<const int> unambiguous_cues() const { return unambiguous_cues_; }
  [[nodiscard]] std::span<const int> ambiguous_cues() const { return ambiguous_cues_; }

  [[nodiscard]] const Dist& cue_reading(int cue) const {
    require(is_cue(cue), "token is not a cue");
    return cue_readings_[static_cast<std::size_t>(cue - cue_base_)];
  }

  [[nodiscard]] int label_for(int topic, int reading) const {
    return label_table_.at(static_cast<std::size_t>(topic)).at(static_cast<std::size_t>(reading));
  }

  [[nodiscard]] int topic_of(int z) const { return z / spec_.num_readings; }
  [[nodiscard]] int reading_of(int z) const { return z % spec_.num_readings; }

  // In-domain forms then held-out forms of content word (topic, word).
  [[nodiscard]] int content_token(int topic, int word, int form) const {
    const int forms = spec_.forms_per_word + spec_.heldout_forms_per_word;
    return content_base_ + (topic * spec_.words_per_topic + word) * forms + form;
  }

  void check_tokens(std::span<const int> tokens) const {
    require(!tokens.empty(), "token sequence is empty");
    for (int t : tokens) require(in_vocab(t), "token " + std::to_string(t) + " is out of vocabulary");
  }

  /// p(z | x) over the topics x readings interpretation space.
  [[nodiscard]] Dist interpretation_prior(std::span<const int> tokens) const {
    check_tokens(tokens);
    const int front = tokens.front();
    const Dist readings = is_cue(front) ? cue_reading(front) : Dist::uniform(static_cast<std::size_t>(spec_.num_readings));
    std::vector<int> counts(static_cast<std::size_t>(spec_.num_topics), 0);
    for (int t : tokens) {
      const TokenInfo& info = tokens_[static_cast<std::size_t>(t)];
      if (info.role == TokenRole::content) ++counts[static_cast<std::size_t>(info.topic)];
    }
    const int top = *std::max_element(counts.begin(), counts.end());
    const auto winners = static_cast<double>(std::count(counts.begin(), counts.end(), top));
    std::vector<double> pz(static_cast<std::size_t>(num_interpretations()), 0.0);
    for (int topic = 0; topic < spec_.num_topics; ++topic) {
      if (counts[static_cast<std::size_t>(topic)] != top) continue;
      for (int r = 0; r < spec_.num_readings; ++r) {
        pz[static_cast<std::size_t>(topic * spec_.num_readings + r)] = readings[static_cast<std::size_t>(r)] / winners;
      }
    }
    return Dist::from_weights(std::move(pz));
  }

  /// p(y | z, x); the table is keyed by z alone.
  [[nodiscard]] Dist emission(int z, std::span<const int> tokens) const {
    check_tokens(tokens);
    require(z >= 0 && z < num_interpretations(), "interpretation index out of range");
    const auto k = static_cast<std::size_t>(spec_.num_labels);
    std::vector<double> py(k, spec_.emission_noise / static_cast<double>(k));
    py[static_cast<std::size_t>(label_for(topic_of(z), reading_of(z)))] += 1.0 - spec_.emission_noise;
    return Dist::from_weights(std::move(py));
  }

  /// p(y | x) = sum_z p(y | z, x) p(z | x).
  [[nodiscard]] Dist label_distribution(std::span<const int> tokens) const {
    const Dist pz = interpretation_prior(tokens);
    std::vector<double> py(static_cast<std::size_t>(spec_.num_labels), 0.0);
    for (int z = 0; z < num_interpretations(); ++z) {
      const double w = pz[static_cast<std::size_t>(z)];
      if (w == 0.0) continue;
      const Dist e = emission(z, tokens);
      for (std::size_t y = 0; y < py.size(); ++y) py[y] += w * e[y];
    }
    return Dist::from_weights(std::move(py));
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json readings = nlohmann::json::array();
    for (const Dist& d : cue_readings_) readings.push_back(std::vector<double>(d.begin(), d.end()));
    std::vector<std::string> roles;
    for (const TokenInfo& info : tokens_) {
      roles.emplace_back(info.role == TokenRole::cue ? "cue" : info.role == TokenRole::noise ? "noise" : "content");
    }
    return {{"spec", spec_},
            {"seed", seed_},
            {"vocab_size", vocab_size()},
            {"num_interpretations", num_interpretations()},
            {"num_labels", num_labels()},
            {"cue_base", cue_base_},
            {"content_base", content_base_},
            {"cue_readings", readings},
            {"label_table", label_table_},
            {"equivalence_classes", classes_},
            {"token_roles", roles}};
  }

  // Rebuilds from (spec, seed) and checks the embedded tables agree.
  static World from_json(const nlohmann::json& j) {
    World world = build_world(j.at("spec").get<TaskSpec>(), j.at("seed").get<std::uint64_t>());
    require(world.to_json() == j, "world document tables disagree with its (spec, seed)");
    return world;
  }

 private:
  friend World build_world(const TaskSpec& spec, std::uint64_t seed);

  TaskSpec spec_;
  std::uint64_t seed_ = 0;
  int cue_base_ = 0;
  int content_base_ = 0;
  std::vector<TokenInfo> tokens_;
  std::vector<std::vector<int>> classes_;  // classes_[0] is the noise class
  std::vector<int> unambiguous_cues_;
  std::vector<int> ambiguous_cues_;
  std::vector<Dist> cue_readings_;
  std::vector<std::vector<int>> label_table_;
};

namespace detail {

// Distribution over n outcomes of the form (w, s, ..., s) with entropy equal
// to `level`, for level in (0, ln n].
inline Dist reading_dist_with_entropy(int n, double level) {
  const auto size = static_cast<std::size_t>(n);
  if (level >= std::log(static_cast<double>(n)) - 1e-12) return Dist::uniform(size);
  auto make = [&](double w) {
    std::vector<double> v(size, (1.0 - w) / static_cast<double>(n - 1));
    v[0] = w;
    return Dist::from_weights(std::move(v));
  };
  double lo = 1.0 / n;
  double hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (entropy(make(mid)) > level) lo = mid;
    else hi = mid;
  }
  return make(0.5 * (lo + hi));
}

}  // namespace detail

inline World build_world(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  World w;
  w.spec_ = spec;
  w.seed_ = seed;
  Rng rng = make_stream(seed, "world");

  w.classes_.emplace_back();
  for (int i = 0; i < spec.num_noise_tokens; ++i) {
    w.tokens_.push_back({TokenRole::noise, -1, 0, false});
    w.classes_[0].push_back(i);
  }

  const int readings = spec.num_readings;
  w.cue_base_ = w.vocab_size();
  auto add_cue = [&](Dist reading) {
    const int id = w.vocab_size();
    w.tokens_.push_back({TokenRole::cue, -1, static_cast<int>(w.classes_.size()), false});
    w.classes_.push_back({id});
    w.cue_readings_.push_back(std::move(reading));
    return id;
  };
  for (int r = 0; r < readings; ++r) {
    for (int c = 0; c < spec.cues_per_reading; ++c) {
      w.unambiguous_cues_.push_back(add_cue(Dist::point_mass(static_cast<std::size_t>(readings), static_cast<std::size_t>(r))));
    }
  }
  const int support = std::clamp(static_cast<int>(std::ceil(std::exp(spec.ambiguity_level) - 1e-9)), 2, readings);
  const Dist shape = detail::reading_dist_with_entropy(support, spec.ambiguity_level);
  for (int c = 0; c < spec.num_ambiguous_cues; ++c) {
    std::vector<int> order(static_cast<std::size_t>(readings));
    for (int r = 0; r < readings; ++r) order[static_cast<std::size_t>(r)] = r;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> reading(static_cast<std::size_t>(readings), 0.0);
    for (int i = 0; i < support; ++i) reading[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = shape[static_cast<std::size_t>(i)];
    w.ambiguous_cues_.push_back(add_cue(Dist::from_weights(std::move(reading))));
  }

  w.content_base_ = w.vocab_size();
  const int forms = spec.forms_per_word + spec.heldout_forms_per_word;
  for (int topic = 0; topic < spec.num_topics; ++topic) {
    for (int word = 0; word < spec.words_per_topic; ++word) {
      const int cls = static_cast<int>(w.classes_.size());
      w.classes_.emplace_back();
      for (int f = 0; f < forms; ++f) {
        w.classes_.back().push_back(w.vocab_size());
        w.tokens_.push_back({TokenRole::content, topic, cls, f >= spec.forms_per_word});
      }
    }
  }

  // Distinct readings of a topic map to distinct labels while readings <= labels.
  for (int topic = 0; topic < spec.num_topics; ++topic) {
    std::vector<int> perm(static_cast<std::size_t>(spec.num_labels));
    for (int y = 0; y < spec.num_labels; ++y) perm[static_cast<std::size_t>(y)] = y;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> row(static_cast<std::size_t>(readings));
    for (int r = 0; r < readings; ++r) row[static_cast<std::size_t>(r)] = perm[static_cast<std::size_t>(r % spec.num_labels)];
    w.label_table_.push_back(std::move(row));
  }
  return w;
}

inline GroundTruth ground_truth(const World& world, std::span<const int> tokens) {
  Dist pz = world.interpretation_prior(tokens);
  Dist py = world.label_distribution(tokens);
  const double a = entropy(pz);
  const double u = entropy(py);
  const double risk = 1.0 - *std::max_element(py.begin(), py.end());
  return GroundTruth{std::move(pz), std::move(py), a, u, std::abs(u - a), std::max(risk, 0.0)};
}

/// Interpretation-collapse gap: (R*(x) - R_theta(x))_+.
inline double kappa(const GroundTruth& ground, double model_risk) {
  require(model_risk >= 0.0 && model_risk <= 1.0, "model risk must lie in [0, 1]");
  return std::max(ground.bayes_risk - model_risk, 0.0);
}

/// Draws one input. `heldout` selects the held-out surface forms.
inline TokenSeq sample_tokens(const World& world, Rng& rng, bool heldout) {
  const TaskSpec& s = world.spec();
  TokenSeq tokens;
  tokens.reserve(static_cast<std::size_t>(s.seq_len));
  const bool ambiguous = uniform01(rng) < s.ambiguous_fraction;
  const auto cues = ambiguous ? world.ambiguous_cues() : world.unambiguous_cues();
  tokens.push_back(cues[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(cues.size()) - 1))]);

  const int topic = uniform_int(rng, 0, s.num_topics - 1);
  const int slots = s.seq_len - 1;
  const int informative = uniform_int(rng, 1, s.topic_word_cap());
  auto pick_form = [&](int t) {
    const int word = uniform_int(rng, 0, s.words_per_topic - 1);
    const int form = heldout ? s.forms_per_word + uniform_int(rng, 0, s.heldout_forms_per_word - 1)
                             : uniform_int(rng, 0, s.forms_per_word - 1);
    return world.content_token(t, word, form);
  };
  TokenSeq body;
  for (int i = 0; i < informative; ++i) body.push_back(pick_form(topic));
  if (informative >= 2 && informative < slots && uniform01(rng) < s.distractor_prob) {
    int other = uniform_int(rng, 0, s.num_topics - 2);
    if (other >= topic) ++other;
    body.push_back(pick_form(other));
  }
  const auto noise = world.noise_tokens();
  while (static_cast<int>(body.size()) < slots) {
    body.push_back(noise[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(noise.size()) - 1))]);
  }
  std::shuffle(body.begin(), body.end(), rng);
  tokens.insert(tokens.end(), body.begin(), body.end());
  return tokens;
}

namespace detail {

inline int sample_index(const Dist& d, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    acc += d[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding left u above the running total: take the last supported index.
  for (std::size_t i = d.size(); i-- > 0;) {
    if (d[i] > 0.0) return static_cast<int>(i);
  }
  return 0;
}

}  // namespace detail

inline Example sample_example(const World& world, Split split, Rng& rng) {
  Example ex;
  ex.split = split;
  ex.tokens = sample_tokens(world, rng, split == Split::shifted_test);
  ex.latent_z = detail::sample_index(world.interpretation_prior(ex.tokens), rng);
  ex.label_y = detail::sample_index(world.emission(ex.latent_z, ex.tokens), rng);
  return ex;
}

/// All four splits, in order train, valid, test, shifted_test.
inline std::vector<Example> sample_dataset(const World& world, Rng& rng) {
  std::vector<Example> out;
  for (Split split : {Split::train, Split::valid, Split::test, Split::shifted_test}) {
    const int n = world.spec().sizes.of(split);
    for (int i = 0; i < n; ++i) out.push_back(sample_example(world, split, rng));
  }
  return out;
}

inline std::vector<Example> sample_dataset(const World& world) {
  Rng rng = make_stream(world.seed(), "data");
  return sample_dataset(world, rng);
}

inline std::vector<Example> filter_split(std::span<const Example> data, Split split) {
  std::vector<Example> out;
  for (const Example& ex : data) {
    if (ex.split == split) out.push_back(ex);
  }
  return out;
}

inline nlohmann::json example_to_json(const Example& ex) {
  return {{"tokens", ex.tokens}, {"z", ex.latent_z}, {"y", ex.label_y}, {"split", to_string(ex.split)}};
}

inline Example example_from_json(const nlohmann::json& j) {
  return Example{j.at("tokens").get<TokenSeq>(), j.at("z").get<int>(), j.at("y").get<int>(),
                 parse_split(j.at("split").get<std::string>())};
}

}  // namespace sua
