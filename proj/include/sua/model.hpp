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

// Bag-of-embeddings classifier: mean-pooled token embeddings, one tanh hidden
// layer, softmax(logits / temperature). All weights live in one flat
// row-major buffer so gradients, SGD and finite differences can treat the
// model as a single vector.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sua/prob.hpp"
#include "sua/rng.hpp"

namespace sua {

struct ModelShape {
  int vocab_size = 0;
  int d_emb = 16;
  int d_hid = 32;
  int num_labels = 0;

  [[nodiscard]] std::size_t embeddings_offset() const { return 0; }
  [[nodiscard]] std::size_t hidden_weights_offset() const {
    return static_cast<std::size_t>(vocab_size) * static_cast<std::size_t>(d_emb);
  }
  [[nodiscard]] std::size_t hidden_bias_offset() const {
    return hidden_weights_offset() + static_cast<std::size_t>(d_emb) * static_cast<std::size_t>(d_hid);
  }
  [[nodiscard]] std::size_t out_weights_offset() const { return hidden_bias_offset() + static_cast<std::size_t>(d_hid); }
  [[nodiscard]] std::size_t out_bias_offset() const {
    return out_weights_offset() + static_cast<std::size_t>(d_hid) * static_cast<std::size_t>(num_labels);
  }
  [[nodiscard]] std::size_t total() const { return out_bias_offset() + static_cast<std::size_t>(num_labels); }

  void validate() const {
    require(vocab_size >= 1 && d_emb >= 1 && d_hid >= 1 && num_labels >= 2, "invalid model shape");
  }

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Flat parameter buffer plus typed views; used for both weights and gradients.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(ModelShape shape) : shape_(shape), values_(shape.total(), 0.0) { shape.validate(); }

  [[nodiscard]] const ModelShape& shape() const { return shape_; }
  [[nodiscard]] std::span<double> values() { return values_; }
  [[nodiscard]] std::span<const double> values() const { return values_; }

  [[nodiscard]] std::span<double> embedding(int token) {
    return {values_.data() + shape_.embeddings_offset() + static_cast<std::size_t>(token) * static_cast<std::size_t>(shape_.d_emb),
            static_cast<std::size_t>(shape_.d_emb)};
  }
  [[nodiscard]] std::span<const double> embedding(int token) const {
    return {values_.data() + shape_.embeddings_offset() + static_cast<std::size_t>(token) * static_cast<std::size_t>(shape_.d_emb),
            static_cast<std::size_t>(shape_.d_emb)};
  }
  // Row-major d_emb x d_hid.
  [[nodiscard]] double& hidden_weight(int e, int h) {
    return values_[shape_.hidden_weights_offset() + static_cast<std::size_t>(e * shape_.d_hid + h)];
  }
  [[nodiscard]] double hidden_weight(int e, int h) const {
    return values_[shape_.hidden_weights_offset() + static_cast<std::size_t>(e * shape_.d_hid + h)];
  }
  [[nodiscard]] double& hidden_bias(int h) { return values_[shape_.hidden_bias_offset() + static_cast<std::size_t>(h)]; }
  [[nodiscard]] double hidden_bias(int h) const { return values_[shape_.hidden_bias_offset() + static_cast<std::size_t>(h)]; }
  // Row-major d_hid x num_labels.
  [[nodiscard]] double& out_weight(int h, int y) {
    return values_[shape_.out_weights_offset() + static_cast<std::size_t>(h * shape_.num_labels + y)];
  }
  [[nodiscard]] double out_weight(int h, int y) const {
    return values_[shape_.out_weights_offset() + static_cast<std::size_t>(h * shape_.num_labels + y)];
  }
  [[nodiscard]] double& out_bias(int y) { return values_[shape_.out_bias_offset() + static_cast<std::size_t>(y)]; }
  [[nodiscard]] double out_bias(int y) const { return values_[shape_.out_bias_offset() + static_cast<std::size_t>(y)]; }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  // this += scale * other
  void add_scaled(const ParamVector& other, double scale) {
    require(other.shape_ == shape_, "parameter shape mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
  }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  ModelShape shape_;
  std::vector<double> values_;
};

using GradientVector = ParamVector;

struct ModelParams {
  ParamVector weights;
  double temperature = 1.0;

  [[nodiscard]] const ModelShape& shape() const { return weights.shape(); }

  void validate() const {
    require(temperature > 0.0 && std::isfinite(temperature), "temperature must be positive");
    require(weights.all_finite(), "model weights must be finite");
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Uniform(-scale, scale) initialization of every weight and bias.
inline ModelParams init_params(const ModelShape& shape, Rng& rng, double scale = 0.1) {
  ModelParams params{ParamVector(shape), 1.0};
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (double& v : params.weights.values()) v = dist(rng);
  return params;
}

/// Raised when weights have grown until the logits overflow.
class NonFiniteLogits : public ContractViolation {
 public:
  using ContractViolation::ContractViolation;
};

struct ForwardTrace {
  std::vector<int> tokens;
  std::vector<double> pooled;
  std::vector<double> pre_activation;
  std::vector<double> post_activation;
  std::vector<double> logits;  // before temperature
  double temperature = 1.0;
  Dist output = Dist::uniform(2);
};

inline Dist softmax(std::span<const double> logits, double temperature = 1.0) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> e(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) e[i] = std::exp((logits[i] - top) / temperature);
  return Dist::from_weights(std::move(e));
}

namespace detail {

inline void check_input(const ModelParams& params, std::span<const int> tokens) {
  require(!tokens.empty(), "model input is empty");
  for (int t : tokens) require(t >= 0 && t < params.shape().vocab_size, "token out of model vocabulary");
}

}  // namespace detail

inline ForwardTrace forward_trace(const ModelParams& params, std::span<const int> tokens) {
  detail::check_input(params, tokens);
  const ModelShape& s = params.shape();
  const ParamVector& w = params.weights;
  ForwardTrace trace;
  trace.tokens.assign(tokens.begin(), tokens.end());
  trace.temperature = params.temperature;

  trace.pooled.assign(static_cast<std::size_t>(s.d_emb), 0.0);
  for (int t : tokens) {
    const auto e = w.embedding(t);
    for (int i = 0; i < s.d_emb; ++i) trace.pooled[static_cast<std::size_t>(i)] += e[static_cast<std::size_t>(i)];
  }
  const double inv_len = 1.0 / static_cast<double>(tokens.size());
  for (double& v : trace.pooled) v *= inv_len;

  trace.pre_activation.assign(static_cast<std::size_t>(s.d_hid), 0.0);
  trace.post_activation.assign(static_cast<std::size_t>(s.d_hid), 0.0);
  for (int h = 0; h < s.d_hid; ++h) {
    double a = w.hidden_bias(h);
    for (int e = 0; e < s.d_emb; ++e) a += trace.pooled[static_cast<std::size_t>(e)] * w.hidden_weight(e, h);
    trace.pre_activation[static_cast<std::size_t>(h)] = a;
    trace.post_activation[static_cast<std::size_t>(h)] = std::tanh(a);
  }

  trace.logits.assign(static_cast<std::size_t>(s.num_labels), 0.0);
  for (int y = 0; y < s.num_labels; ++y) {
    double z = w.out_bias(y);
    for (int h = 0; h < s.d_hid; ++h) z += trace.post_activation[static_cast<std::size_t>(h)] * w.out_weight(h, y);
    trace.logits[static_cast<std::size_t>(y)] = z;
  }
  for (double z : trace.logits) {
    if (!std::isfinite(z)) throw NonFiniteLogits("model logits are not finite");
  }
  trace.output = softmax(trace.logits, params.temperature);
  return trace;
}

inline std::pair<Dist, ForwardTrace> forward(const ModelParams& params, std::span<const int> tokens) {
  ForwardTrace trace = forward_trace(params, tokens);
  Dist out = trace.output;
  return {std::move(out), std::move(trace)};
}

/// Output distribution only; no trace is kept, so nothing can flow back
/// through this call (the stop-gradient side of the consistency losses).
inline Dist predict(const ModelParams& params, std::span<const int> tokens) {
  return forward_trace(params, tokens).output;
}

/// Accumulates d(loss)/d(params) into `grad`, given d(loss)/d(raw logits),
/// i.e. the logits before division by the temperature.
inline void backward_logits_accumulate(const ModelParams& params, const ForwardTrace& trace,
                                       std::span<const double> dlogits, GradientVector& grad) {
  const ModelShape& s = params.shape();
  require(grad.shape() == s, "gradient shape does not match the model");
  require(dlogits.size() == static_cast<std::size_t>(s.num_labels), "logit gradient has the wrong dimension");
  require(trace.logits.size() == static_cast<std::size_t>(s.num_labels) &&
              trace.pooled.size() == static_cast<std::size_t>(s.d_emb),
          "trace does not match the model");
  const ParamVector& w = params.weights;

  std::vector<double> dpost(static_cast<std::size_t>(s.d_hid), 0.0);
  for (int h = 0; h < s.d_hid; ++h) {
    const double a = trace.post_activation[static_cast<std::size_t>(h)];
    double acc = 0.0;
    for (int y = 0; y < s.num_labels; ++y) {
      const double dz = dlogits[static_cast<std::size_t>(y)];
      grad.out_weight(h, y) += a * dz;
      acc += w.out_weight(h, y) * dz;
    }
    dpost[static_cast<std::size_t>(h)] = acc;
  }
  for (int y = 0; y < s.num_labels; ++y) grad.out_bias(y) += dlogits[static_cast<std::size_t>(y)];

  std::vector<double> dpre(static_cast<std::size_t>(s.d_hid));
  for (int h = 0; h < s.d_hid; ++h) {
    const double a = trace.post_activation[static_cast<std::size_t>(h)];
    dpre[static_cast<std::size_t>(h)] = dpost[static_cast<std::size_t>(h)] * (1.0 - a * a);
    grad.hidden_bias(h) += dpre[static_cast<std::size_t>(h)];
  }

  std::vector<double> dpooled(static_cast<std::size_t>(s.d_emb), 0.0);
  for (int e = 0; e < s.d_emb; ++e) {
    const double x = trace.pooled[static_cast<std::size_t>(e)];
    double acc = 0.0;
    for (int h = 0; h < s.d_hid; ++h) {
      grad.hidden_weight(e, h) += x * dpre[static_cast<std::size_t>(h)];
      acc += w.hidden_weight(e, h) * dpre[static_cast<std::size_t>(h)];
    }
    dpooled[static_cast<std::size_t>(e)] = acc;
  }

  const double inv_len = 1.0 / static_cast<double>(trace.tokens.size());
  for (int t : trace.tokens) {
    auto g = grad.embedding(t);
    for (int e = 0; e < s.d_emb; ++e) g[static_cast<std::size_t>(e)] += dpooled[static_cast<std::size_t>(e)] * inv_len;
  }
}

/// Accumulates scale * d(loss)/d(params), where d(loss)/d(output probs) is
/// `dloss_dprobs`. Temperature is held fixed.
inline void backward_accumulate(const ModelParams& params, const ForwardTrace& trace,
                                std::span<const double> dloss_dprobs, GradientVector& grad, double scale = 1.0) {
  const Dist& p = trace.output;
  require(dloss_dprobs.size() == p.size(), "loss gradient has the wrong dimension");
  double inner = 0.0;
  for (std::size_t y = 0; y < p.size(); ++y) inner += p[y] * dloss_dprobs[y];
  std::vector<double> dlogits(p.size());
  for (std::size_t y = 0; y < p.size(); ++y) dlogits[y] = scale * p[y] * (dloss_dprobs[y] - inner) / trace.temperature;
  backward_logits_accumulate(params, trace, dlogits, grad);
}

inline GradientVector backward(const ModelParams& params, const ForwardTrace& trace, std::span<const double> dloss_dprobs) {
  GradientVector grad(params.shape());
  backward_accumulate(params, trace, dloss_dprobs, grad);
  return grad;
}

/// argmax_y p(y); ties go to the lowest label.
inline int predict_label(const Dist& d) { return static_cast<int>(argmax(d.probs())); }

/// 0-1 risk of the argmax prediction under the model's own distribution.
inline double model_risk(const Dist& d) { return std::max(0.0, 1.0 - d[static_cast<std::size_t>(predict_label(d))]); }

inline nlohmann::json to_json(const ModelParams& params) {
  const ModelShape& s = params.shape();
  const auto v = params.weights.values();
  auto slice = [&](std::size_t from, std::size_t to) { return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(from), v.begin() + static_cast<std::ptrdiff_t>(to)); };
  return {{"shape", {{"vocab_size", s.vocab_size}, {"d_emb", s.d_emb}, {"d_hid", s.d_hid}, {"num_labels", s.num_labels}}},
          {"temperature", params.temperature},
          {"embeddings", slice(s.embeddings_offset(), s.hidden_weights_offset())},
          {"hidden_weights", slice(s.hidden_weights_offset(), s.hidden_bias_offset())},
          {"hidden_bias", slice(s.hidden_bias_offset(), s.out_weights_offset())},
          {"out_weights", slice(s.out_weights_offset(), s.out_bias_offset())},
          {"out_bias", slice(s.out_bias_offset(), s.total())}};
}

inline ModelParams params_from_json(const nlohmann::json& j) {
  const auto& js = j.at("shape");
  ModelShape shape{js.at("vocab_size").get<int>(), js.at("d_emb").get<int>(), js.at("d_hid").get<int>(),
                   js.at("num_labels").get<int>()};
  ModelParams params{ParamVector(shape), j.at("temperature").get<double>()};
  auto v = params.weights.values();
  auto load = [&](const char* key, std::size_t from, std::size_t to) {
    const auto block = j.at(key).get<std::vector<double>>();
    require(block.size() == to - from, std::string("block '") + key + "' has the wrong size");
    std::copy(block.begin(), block.end(), v.begin() + static_cast<std::ptrdiff_t>(from));
  };
  load("embeddings", shape.embeddings_offset(), shape.hidden_weights_offset());
  load("hidden_weights", shape.hidden_weights_offset(), shape.hidden_bias_offset());
  load("hidden_bias", shape.hidden_bias_offset(), shape.out_weights_offset());
  load("out_weights", shape.out_weights_offset(), shape.out_bias_offset());
  load("out_bias", shape.out_bias_offset(), shape.total());
  params.validate();
  return params;
}

}  // namespace sua
