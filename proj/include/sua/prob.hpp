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

// Finite-distribution arithmetic. All logarithms are natural, so every
// entropy and divergence here is in nats.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sua {

/// Raised when a caller breaks a documented precondition.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

inline constexpr double kDistTolerance = 1e-9;

/// A normalized probability vector over a label space of size k >= 2.
class Dist {
 public:
  explicit Dist(std::vector<double> probs) : probs_(std::move(probs)) {
    require(probs_.size() >= 2, "Dist needs at least two outcomes");
    double total = 0.0;
    for (double v : probs_) {
      require(std::isfinite(v) && v >= 0.0, "Dist entries must be finite and non-negative");
      total += v;
    }
    require(std::abs(total - 1.0) <= kDistTolerance, "Dist entries must sum to 1");
  }

  static Dist uniform(std::size_t k) { return Dist(std::vector<double>(k, 1.0 / static_cast<double>(k))); }

  static Dist point_mass(std::size_t k, std::size_t at) {
    require(at < k, "point mass outside label space");
    std::vector<double> v(k, 0.0);
    v[at] = 1.0;
    return Dist(std::move(v));
  }

  // Normalizes non-negative weights; they must not all be zero.
  static Dist from_weights(std::vector<double> weights) {
    double total = 0.0;
    for (double w : weights) {
      require(std::isfinite(w) && w >= 0.0, "weights must be finite and non-negative");
      total += w;
    }
    require(total > 0.0, "weights must not all be zero");
    for (double& w : weights) w /= total;
    return Dist(std::move(weights));
  }

  [[nodiscard]] std::size_t size() const { return probs_.size(); }
  [[nodiscard]] double operator[](std::size_t i) const { return probs_[i]; }
  [[nodiscard]] std::span<const double> probs() const { return probs_; }
  [[nodiscard]] auto begin() const { return probs_.begin(); }
  [[nodiscard]] auto end() const { return probs_.end(); }

  friend bool operator==(const Dist&, const Dist&) = default;

 private:
  std::vector<double> probs_;
};

enum class DivergenceKind { kl, js, tv };

inline std::string_view to_string(DivergenceKind kind) {
  switch (kind) {
    case DivergenceKind::kl: return "kl";
    case DivergenceKind::js: return "js";
    case DivergenceKind::tv: return "tv";
  }
  return "js";
}

inline DivergenceKind parse_divergence(std::string_view name) {
  if (name == "kl" || name == "KL") return DivergenceKind::kl;
  if (name == "js" || name == "JS") return DivergenceKind::js;
  if (name == "tv" || name == "TV") return DivergenceKind::tv;
  throw ContractViolation("unknown divergence '" + std::string(name) + "'");
}

/// Mass floor applied to the second KL argument before taking logs.
struct SmoothingPolicy {
  double floor = 1e-10;

  void validate() const { require(floor > 0.0 && floor < 1e-3, "smoothing floor must lie in (0, 1e-3)"); }
};

namespace detail {

inline void require_same_dim(const Dist& p, const Dist& q) {
  require(p.size() == q.size(), "distributions have different dimensions");
}

// x log(x / y) with the 0 log 0 = 0 convention.
inline double xlogx_over(double x, double y) { return x > 0.0 ? x * std::log(x / y) : 0.0; }

inline std::vector<double> floored(const Dist& q, const SmoothingPolicy& policy) {
  std::vector<double> lifted(q.begin(), q.end());
  bool changed = false;
  for (double& v : lifted) {
    if (v < policy.floor) {
      v = policy.floor;
      changed = true;
    }
  }
  if (changed) {
    const double total = std::accumulate(lifted.begin(), lifted.end(), 0.0);
    for (double& v : lifted) v /= total;
  }
  return lifted;
}

}  // namespace detail

inline double entropy(const Dist& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return std::clamp(h, 0.0, std::log(static_cast<double>(p.size())));
}

inline double kl(const Dist& p, const Dist& q, const SmoothingPolicy& policy = {}) {
  detail::require_same_dim(p, q);
  policy.validate();
  if (p == q) return 0.0;
  const std::vector<double> lifted = detail::floored(q, policy);
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += detail::xlogx_over(p[i], lifted[i]);
  return std::max(d, 0.0);
}

inline double js(const Dist& p, const Dist& q) {
  detail::require_same_dim(p, q);
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    d += 0.5 * detail::xlogx_over(p[i], m) + 0.5 * detail::xlogx_over(q[i], m);
  }
  return std::clamp(d, 0.0, std::numbers::ln2);
}

inline double tv(const Dist& p, const Dist& q) {
  detail::require_same_dim(p, q);
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] - q[i]);
  return std::clamp(0.5 * d, 0.0, 1.0);
}

/// Mixes p with the uniform distribution: (1 - gamma) p + gamma / k.
inline Dist smooth(const Dist& p, double gamma) {
  require(gamma >= 0.0 && gamma <= 1.0, "smoothing gamma must lie in [0, 1]");
  if (gamma == 0.0) return p;
  const double k = static_cast<double>(p.size());
  if (gamma == 1.0) return Dist::uniform(p.size());
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = (1.0 - gamma) * p[i] + gamma / k;
  return Dist::from_weights(std::move(out));
}

inline double divergence(DivergenceKind kind, const Dist& p, const Dist& q, const SmoothingPolicy& policy = {}) {
  switch (kind) {
    case DivergenceKind::kl: return kl(p, q, policy);
    case DivergenceKind::js: return js(p, q);
    case DivergenceKind::tv: return tv(p, q);
  }
  throw ContractViolation("unknown divergence kind");
}

// Partial derivatives of D(p || q) with respect to the entries of p, q held
// fixed. Coordinates with p_i = 0 get 0 (the limit of the x log x term).
inline std::vector<double> divergence_grad_first(DivergenceKind kind, const Dist& p, const Dist& q,
                                                 const SmoothingPolicy& policy = {}) {
  detail::require_same_dim(p, q);
  std::vector<double> g(p.size(), 0.0);
  switch (kind) {
    case DivergenceKind::kl: {
      const std::vector<double> lifted = detail::floored(q, policy);
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) g[i] = std::log(p[i] / lifted[i]) + 1.0;
      }
      break;
    }
    case DivergenceKind::js:
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) g[i] = 0.5 * std::log(p[i] / (0.5 * (p[i] + q[i])));
      }
      break;
    case DivergenceKind::tv:
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > q[i]) g[i] = 0.5;
        else if (p[i] < q[i]) g[i] = -0.5;
      }
      break;
  }
  return g;
}

// Partial derivatives with respect to q, p held fixed. KL is excluded: the
// floor-and-renormalize step makes its q-gradient policy dependent.
inline std::vector<double> divergence_grad_second(DivergenceKind kind, const Dist& p, const Dist& q) {
  require(kind != DivergenceKind::kl, "second-argument gradient is only defined for JS and TV");
  return divergence_grad_first(kind, q, p);
}

inline std::vector<double> entropy_grad(const Dist& p) {
  std::vector<double> g(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) g[i] = -(std::log(p[i]) + 1.0);
  }
  return g;
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::distance(values.begin(), std::max_element(values.begin(), values.end())));
}

}  // namespace sua
