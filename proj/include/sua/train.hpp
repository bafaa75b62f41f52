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

// Training: loss = task + alpha * consistency + beta * alignment, optimized
// with plain minibatch gradient descent.
//
//   task         mean NLL of the observed label
//   consistency  mean_i (1/K) sum_k D(p(.|x_i) || sg[p(.|x'_ik)])
//   alignment    mean_i (sens_i - lambda * H(p(.|x_i)))_+
//
// `sg` marks a branch treated as a constant. The perturbed-side outputs are
// computed with `predict`, which keeps no trace. The alignment term can
// optionally differentiate through the perturbed side as well (JS/TV only).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sua/io.hpp"
#include "sua/model.hpp"
#include "sua/perturb.hpp"
#include "sua/prob.hpp"
#include "sua/rng.hpp"
#include "sua/world.hpp"

namespace sua {

enum class Method { standard, adversarial, sua_tr, sua_tr_minus_ent, sua_tr_minus_cons };

inline constexpr Method kAllMethods[] = {Method::standard, Method::adversarial, Method::sua_tr, Method::sua_tr_minus_ent,
                                         Method::sua_tr_minus_cons};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::standard: return "standard";
    case Method::adversarial: return "adversarial";
    case Method::sua_tr: return "sua_tr";
    case Method::sua_tr_minus_ent: return "sua_tr_minus_ent";
    case Method::sua_tr_minus_cons: return "sua_tr_minus_cons";
  }
  return "standard";
}

inline Method parse_method(std::string_view name) {
  for (Method m : kAllMethods) {
    if (to_string(m) == name) return m;
  }
  throw ContractViolation("unknown training method '" + std::string(name) + "'");
}

struct TrainConfig {
  Method method = Method::sua_tr;
  double alpha = 1.0;
  double beta = 1.0;
  double lambda = 1.0;
  int K = 4;
  double learning_rate = 0.05;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 0;
  DivergenceKind divergence = DivergenceKind::js;
  bool stop_gradient_in_alignment = true;
  int d_emb = 16;
  int d_hid = 32;
  double init_scale = 0.1;

  void validate() const {
    require(alpha >= 0.0 && beta >= 0.0, "alpha and beta must be non-negative");
    require(lambda > 0.0, "lambda must be positive");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
    require(K >= 1, "K must be at least 1");
    require(epochs >= 0, "epochs must be non-negative");
    require(batch_size >= 1, "batch_size must be at least 1");
    require(init_scale > 0.0, "init_scale must be positive");
    require(stop_gradient_in_alignment || divergence != DivergenceKind::kl,
            "differentiating through the perturbed side needs JS or TV");
  }

  /// Weights after the method has zeroed its disabled terms.
  [[nodiscard]] double effective_alpha() const {
    return method == Method::standard || method == Method::adversarial || method == Method::sua_tr_minus_cons ? 0.0 : alpha;
  }
  [[nodiscard]] double effective_beta() const {
    return method == Method::standard || method == Method::adversarial || method == Method::sua_tr_minus_ent ? 0.0 : beta;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"method", to_string(c.method)},
       {"alpha", c.alpha},
       {"beta", c.beta},
       {"lambda", c.lambda},
       {"K", c.K},
       {"learning_rate", c.learning_rate},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"divergence", to_string(c.divergence)},
       {"stop_gradient_in_alignment", c.stop_gradient_in_alignment},
       {"d_emb", c.d_emb},
       {"d_hid", c.d_hid},
       {"init_scale", c.init_scale}};
}

struct LossWeights {
  double task = 1.0;
  double cons = 0.0;
  double ent = 0.0;
};

struct LossBreakdown {
  double task = 0.0;
  double cons = 0.0;
  double ent = 0.0;
  double total = 0.0;
  GradientVector grad;
};

struct LossOptions {
  double lambda = 1.0;
  DivergenceKind divergence = DivergenceKind::js;
  bool stop_gradient = true;
};

/// Perturbed inputs of a batch and the model outputs on them (constants
/// under stop-gradient).
struct PerturbedBatch {
  std::vector<std::vector<TokenSeq>> tokens;
  std::vector<std::vector<Dist>> outputs;
};

inline PerturbedBatch perturbed_outputs(const ModelParams& params, std::vector<std::vector<TokenSeq>> tokens) {
  PerturbedBatch out;
  out.outputs.reserve(tokens.size());
  for (const auto& row : tokens) {
    std::vector<Dist> ds;
    ds.reserve(row.size());
    for (const TokenSeq& t : row) ds.push_back(predict(params, t));
    out.outputs.push_back(std::move(ds));
  }
  out.tokens = std::move(tokens);
  return out;
}

inline double nll_from_logits(std::span<const double> logits, double temperature, int label) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp((z - top) / temperature);
  return std::log(sum) + (top - logits[static_cast<std::size_t>(label)]) / temperature;
}

/// Weighted composite of the three losses (batch means) with its exact
/// gradient. `perturbed` may be empty when the cons and ent weights are 0.
inline LossBreakdown composite_loss(const ModelParams& params, std::span<const Example> batch, const PerturbedBatch* perturbed,
                                    const LossWeights& weights, const LossOptions& options) {
  require(!batch.empty(), "loss needs a non-empty batch");
  const bool need_perturbed = weights.cons != 0.0 || weights.ent != 0.0;
  require(!need_perturbed || (perturbed != nullptr && perturbed->tokens.size() == batch.size() &&
                              perturbed->outputs.size() == batch.size()),
          "perturbations must be supplied for every batch example");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const std::size_t k = static_cast<std::size_t>(params.shape().num_labels);
  LossBreakdown out;
  out.grad = GradientVector(params.shape());

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Example& ex = batch[i];
    require(ex.label_y >= 0 && static_cast<std::size_t>(ex.label_y) < k, "label outside the model's label space");
    const ForwardTrace trace = forward_trace(params, ex.tokens);
    const Dist& p = trace.output;

    const double nll = nll_from_logits(trace.logits, trace.temperature, ex.label_y);
    out.task += nll * inv_b;

    std::vector<double> dprobs(k, 0.0);
    double sens = 0.0;
    double h = 0.0;
    bool active = false;
    if (perturbed != nullptr && !perturbed->outputs.empty()) {
      const auto& qs = perturbed->outputs[i];
      require(!qs.empty(), "each example needs at least one perturbation");
      const double inv_k = 1.0 / static_cast<double>(qs.size());
      std::vector<double> dsens(k, 0.0);
      for (const Dist& q : qs) {
        sens += divergence(options.divergence, p, q) * inv_k;
        if (need_perturbed) {
          const auto g = divergence_grad_first(options.divergence, p, q);
          for (std::size_t y = 0; y < k; ++y) dsens[y] += g[y] * inv_k;
        }
      }
      h = entropy(p);
      const double score = sens - options.lambda * h;
      active = score > 0.0;
      out.cons += sens * inv_b;
      out.ent += std::max(score, 0.0) * inv_b;
      if (need_perturbed) {
        const auto dh = entropy_grad(p);
        for (std::size_t y = 0; y < k; ++y) {
          dprobs[y] += weights.cons * dsens[y];
          if (active) dprobs[y] += weights.ent * (dsens[y] - options.lambda * dh[y]);
        }
      }
    }

    // d(nll)/d(raw logits) = (p - onehot) / T, plus the probability-space terms.
    double inner = 0.0;
    for (std::size_t y = 0; y < k; ++y) inner += p[y] * dprobs[y];
    std::vector<double> dlogits(k);
    for (std::size_t y = 0; y < k; ++y) {
      const double onehot = static_cast<int>(y) == ex.label_y ? 1.0 : 0.0;
      dlogits[y] = inv_b * (weights.task * (p[y] - onehot) + p[y] * (dprobs[y] - inner)) / trace.temperature;
    }
    backward_logits_accumulate(params, trace, dlogits, out.grad);

    if (!options.stop_gradient && active && weights.ent != 0.0) {
      const auto& qs = perturbed->tokens[i];
      const double inv_k = 1.0 / static_cast<double>(qs.size());
      for (const TokenSeq& t : qs) {
        const ForwardTrace qt = forward_trace(params, t);
        const auto g = divergence_grad_second(options.divergence, p, qt.output);
        backward_accumulate(params, qt, g, out.grad, weights.ent * inv_k * inv_b);
      }
    }
  }
  out.total = weights.task * out.task + weights.cons * out.cons + weights.ent * out.ent;
  return out;
}

/// Mean NLL and its gradient.
inline LossBreakdown loss_task(const ModelParams& params, std::span<const Example> batch) {
  return composite_loss(params, batch, nullptr, LossWeights{1.0, 0.0, 0.0}, LossOptions{});
}

/// Mean divergence to the (constant) perturbed outputs; the reported total is
/// the consistency term alone.
inline LossBreakdown loss_cons(const ModelParams& params, std::span<const Example> batch, const PerturbedBatch& perturbed,
                               DivergenceKind kind = DivergenceKind::js) {
  return composite_loss(params, batch, &perturbed, LossWeights{0.0, 1.0, 0.0}, LossOptions{1.0, kind, true});
}

inline LossBreakdown loss_ent(const ModelParams& params, std::span<const Example> batch, const PerturbedBatch& perturbed,
                              double lambda, DivergenceKind kind = DivergenceKind::js, bool stop_gradient = true) {
  return composite_loss(params, batch, &perturbed, LossWeights{0.0, 0.0, 1.0}, LossOptions{lambda, kind, stop_gradient});
}

struct EpochRecord {
  double task_loss = 0.0;
  double cons_loss = 0.0;
  double ent_loss = 0.0;
  double total_loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  [[nodiscard]] std::string to_csv() const {
    std::ostringstream os;
    os << "epoch,task_loss,cons_loss,ent_loss,total_loss,train_accuracy\n";
    for (std::size_t e = 0; e < epochs.size(); ++e) {
      const EpochRecord& r = epochs[e];
      os << e + 1 << ',' << fmt_num(r.task_loss) << ',' << fmt_num(r.cons_loss) << ',' << fmt_num(r.ent_loss) << ','
         << fmt_num(r.total_loss) << ',' << fmt_num(r.train_accuracy) << '\n';
    }
    return os.str();
  }
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using CheckpointHook = std::function<void(int epoch, const ModelParams&)>;

namespace detail {

inline ModelParams initial_params(const World& world, const TrainConfig& config) {
  Rng init = make_stream(config.seed, "init");
  return init_params(ModelShape{world.vocab_size(), config.d_emb, config.d_hid, world.num_labels()}, init,
                     config.init_scale);
}

inline void sgd_step(ModelParams& params, const GradientVector& grad, double lr, int epoch) {
  params.weights.add_scaled(grad, -lr);
  if (!params.weights.all_finite()) {
    throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch + 1) + ": weights are not finite");
  }
}

inline void check_finite(const LossBreakdown& loss, int epoch) {
  if (!std::isfinite(loss.total) || !loss.grad.all_finite()) {
    throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch + 1) + ": task=" + fmt_num(loss.task) +
                           " cons=" + fmt_num(loss.cons) + " ent=" + fmt_num(loss.ent));
  }
}

// Runs the epoch/batch loop; `step` performs one update and returns the
// loss breakdown of the batch together with the batch's correct count.
template <typename Step>
TrainHistory run_epochs(const std::vector<Example>& train_set, const TrainConfig& config, ModelParams& params,
                        const CheckpointHook& hook, Step&& step) {
  require(!train_set.empty(), "training split is empty");
  TrainHistory history;
  Rng order_rng = make_stream(config.seed, "order");
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Example> batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochRecord rec;
    int correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t j = start; j < end; ++j) batch.push_back(train_set[order[j]]);
      auto result = [&] {
        try {
          return step(batch, epoch);
        } catch (const NonFiniteLogits&) {
          throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch + 1) + ": logits overflowed");
        }
      }();
      const auto& [loss, batch_correct] = result;
      const double w = static_cast<double>(batch.size());
      rec.task_loss += loss.task * w;
      rec.cons_loss += loss.cons * w;
      rec.ent_loss += loss.ent * w;
      rec.total_loss += loss.total * w;
      correct += batch_correct;
    }
    const double n = static_cast<double>(train_set.size());
    rec.task_loss /= n;
    rec.cons_loss /= n;
    rec.ent_loss /= n;
    rec.total_loss /= n;
    rec.train_accuracy = correct / n;
    history.epochs.push_back(rec);
    if (hook) hook(epoch + 1, params);
  }
  return history;
}

inline int count_correct(const ModelParams& params, std::span<const Example> batch) {
  int c = 0;
  for (const Example& ex : batch) c += predict_label(predict(params, ex.tokens)) == ex.label_y ? 1 : 0;
  return c;
}

}  // namespace detail

/// Plain-SGD training of the composite objective on the train split.
/// Perturbations are redrawn for every batch against the current weights.
inline TrainResult train(const World& world, std::span<const Example> dataset, const TrainConfig& config,
                         const PerturbConfig& perturb = {}, const CheckpointHook& hook = {}) {
  config.validate();
  perturb.validate();
  require(config.method != Method::adversarial, "use adversarial_train for the adversarial method");
  const std::vector<Example> train_set = filter_split(dataset, Split::train);
  ModelParams params = detail::initial_params(world, config);
  const double alpha = config.effective_alpha();
  const double beta = config.effective_beta();
  const bool perturbing = alpha > 0.0 || beta > 0.0;
  Rng perturb_rng = make_stream(config.seed, "perturb");
  const LossWeights weights{1.0, alpha, beta};
  const LossOptions options{config.lambda, config.divergence, config.stop_gradient_in_alignment};

  TrainHistory history = detail::run_epochs(train_set, config, params, hook, [&](const std::vector<Example>& batch, int epoch) {
    const int correct = detail::count_correct(params, batch);
    LossBreakdown loss;
    if (perturbing) {
      std::vector<std::vector<TokenSeq>> rows;
      rows.reserve(batch.size());
      for (const Example& ex : batch) {
        std::vector<TokenSeq> row;
        for (Perturbation& p : sample_perturbations(world, params, ex.tokens, perturb, perturb_rng, config.K)) {
          row.push_back(std::move(p.tokens));
        }
        rows.push_back(std::move(row));
      }
      const PerturbedBatch pb = perturbed_outputs(params, std::move(rows));
      loss = composite_loss(params, batch, &pb, weights, options);
    } else {
      loss = composite_loss(params, batch, nullptr, weights, options);
    }
    detail::check_finite(loss, epoch);
    detail::sgd_step(params, loss.grad, config.learning_rate, epoch);
    return std::pair<LossBreakdown, int>(std::move(loss), correct);
  });
  return {std::move(params), std::move(history)};
}

/// Worst-of-budget training: each example is replaced by the admissible
/// in-ball perturbation with the highest NLL under the current weights.
inline TrainResult adversarial_train(const World& world, std::span<const Example> dataset, const TrainConfig& config,
                                     const PerturbConfig& perturb = {}, const CheckpointHook& hook = {}) {
  config.validate();
  perturb.validate();
  const std::vector<Example> train_set = filter_split(dataset, Split::train);
  ModelParams params = detail::initial_params(world, config);
  Rng perturb_rng = make_stream(config.seed, "perturb");

  TrainHistory history = detail::run_epochs(train_set, config, params, hook, [&](const std::vector<Example>& batch, int epoch) {
    const int correct = detail::count_correct(params, batch);
    std::vector<Example> hard = batch;
    for (Example& ex : hard) {
      SearchResult r = adversarial_search(world, ex.tokens, perturb, perturb.adv_search_budget, perturb_rng,
                                          [&](const TokenSeq& cand) {
                                            const ForwardTrace t = forward_trace(params, cand);
                                            return nll_from_logits(t.logits, t.temperature, ex.label_y);
                                          });
      if (r.found) ex.tokens = std::move(r.tokens);
    }
    LossBreakdown loss = loss_task(params, hard);
    detail::check_finite(loss, epoch);
    detail::sgd_step(params, loss.grad, config.learning_rate, epoch);
    return std::pair<LossBreakdown, int>(std::move(loss), correct);
  });
  return {std::move(params), std::move(history)};
}

/// Dispatches on the configured method.
inline TrainResult train_method(const World& world, std::span<const Example> dataset, const TrainConfig& config,
                                const PerturbConfig& perturb = {}, const CheckpointHook& hook = {}) {
  if (config.method == Method::adversarial) return adversarial_train(world, dataset, config, perturb, hook);
  return train(world, dataset, config, perturb, hook);
}

struct TempScaler {
  double temperature = 1.0;

  [[nodiscard]] ModelParams apply(ModelParams params) const {
    require(temperature > 0.0, "temperature must be positive");
    params.temperature = temperature;
    return params;
  }
};

/// Mean NLL of softmax(logits / T).
inline double temperature_nll(std::span<const std::vector<double>> logits, std::span<const int> labels, double temperature) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += nll_from_logits(logits[i], temperature, labels[i]);
  return total / static_cast<double>(logits.size());
}

/// Golden-section search for T on log T in [-3, 3]; T = 1 is kept unless the
/// search found something strictly better.
inline TempScaler fit_temperature(std::span<const std::vector<double>> logits, std::span<const int> labels) {
  require(!logits.empty() && logits.size() == labels.size(), "temperature fitting needs matching non-empty inputs");
  auto f = [&](double log_t) { return temperature_nll(logits, labels, std::exp(log_t)); };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = -3.0;
  double b = 3.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  for (int it = 0; it < 80; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double best = 0.5 * (a + b);
  return TempScaler{f(best) < f(0.0) ? std::exp(best) : 1.0};
}

/// Fits T on raw logits of the validation examples; weights are untouched.
inline TempScaler fit_temperature(const ModelParams& params, std::span<const Example> valid) {
  require(!valid.empty(), "temperature fitting needs a non-empty validation split");
  std::vector<std::vector<double>> logits;
  std::vector<int> labels;
  for (const Example& ex : valid) {
    logits.push_back(forward_trace(params, ex.tokens).logits);
    labels.push_back(ex.label_y);
  }
  return fit_temperature(logits, labels);
}

}  // namespace sua
