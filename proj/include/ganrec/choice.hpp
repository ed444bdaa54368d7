// Copyright 2026 The ganrec Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ganrec/common.hpp"

namespace ganrec {

enum class Regularizer { ShannonEntropy, L2 };

inline std::string to_string(Regularizer r) {
  return r == Regularizer::ShannonEntropy ? "entropy" : "l2";
}

inline Regularizer parse_regularizer(const std::string& s) {
  if (s == "entropy" || s == "shannon") return Regularizer::ShannonEntropy;
  if (s == "l2") return Regularizer::L2;
  throw Error("unknown regularizer '" + s + "'");
}

struct ChoiceConfig {
  double eta = 1.0;
  Regularizer regularizer = Regularizer::ShannonEntropy;

  void validate() const { check(eta > 0 && std::isfinite(eta), "eta must be > 0"); }
};

/// User's mixed strategy over the display slots. By convention the last slot
/// is the non-click option when one is present.
struct ChoiceDistribution {
  Vector probs;

  Index size() const { return probs.size(); }
  double operator[](Index i) const { return probs[i]; }
};

inline constexpr double kProbFloor = 1e-300;

namespace detail {
inline void check_rewards(const Vector& rewards) {
  check(rewards.size() >= 1, "choice: empty reward vector");
  check(rewards.allFinite(), "choice: NaN/Inf reward");
}
}  // namespace detail

// log sum exp(x), max-shifted.
inline double log_sum_exp(const Vector& x) {
  const double mx = x.maxCoeff();
  return mx + std::log((x.array() - mx).exp().sum());
}

inline Vector softmax(const Vector& logits) {
  Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

/// Closed-form maximizer of E_phi[r] + H(phi)/eta: softmax(eta * r).
inline ChoiceDistribution entropy_choice_probs(const Vector& rewards, const ChoiceConfig& config) {
  config.validate();
  detail::check_rewards(rewards);
  return {softmax(config.eta * rewards)};
}

/// Euclidean projection onto the probability simplex (sort and threshold).
inline Vector project_to_simplex(const Vector& y) {
  const Index n = y.size();
  std::vector<double> u(y.data(), y.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0, tau = 0;
  for (Index i = 0; i < n; ++i) {
    cumsum += u[static_cast<std::size_t>(i)];
    double t = (cumsum - 1.0) / static_cast<double>(i + 1);
    if (u[static_cast<std::size_t>(i)] - t > 0) tau = t;
  }
  return (y.array() - tau).max(0.0).matrix();
}

/// argmax over the simplex of phi.r - ||phi||^2 / eta, which is the projection
/// of (eta/2) r.
inline ChoiceDistribution l2_choice_probs(const Vector& rewards, const ChoiceConfig& config) {
  config.validate();
  detail::check_rewards(rewards);
  return {project_to_simplex(0.5 * config.eta * rewards)};
}

inline ChoiceDistribution choice_probs(const Vector& rewards, const ChoiceConfig& config) {
  return config.regularizer == Regularizer::ShannonEntropy ? entropy_choice_probs(rewards, config)
                                                           : l2_choice_probs(rewards, config);
}

/// argmax_i (eta r_i + eps_i) with eps_i standard Gumbel.
inline Index gumbel_sample_choice(const Vector& rewards, const ChoiceConfig& config, Rng& rng) {
  check(config.regularizer == Regularizer::ShannonEntropy,
        "gumbel sampling requires the Shannon entropy regularizer");
  config.validate();
  detail::check_rewards(rewards);
  Index best = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < rewards.size(); ++i) {
    double v = config.eta * rewards[i] - std::log(-std::log(uniform_open(rng)));
    if (v > best_val) {
      best_val = v;
      best = i;
    }
  }
  return best;
}

/// Inverse-CDF draw from an explicit distribution.
inline Index sample_index(const Vector& probs, Rng& rng) {
  const double u = uniform_open(rng) * probs.sum();
  double acc = 0;
  Index last_positive = 0;
  for (Index i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0) continue;
    acc += probs[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

/// Entropy: sum phi log phi (0 log 0 = 0). L2: sum phi^2.
inline double regularizer_value(const Vector& probs, Regularizer kind) {
  check(probs.size() >= 1 && (probs.array() >= -1e-6).all() && std::abs(probs.sum() - 1.0) <= 1e-6,
        "regularizer_value: probabilities off the simplex");
  if (kind == Regularizer::L2) return probs.squaredNorm();
  double acc = 0;
  for (Index i = 0; i < probs.size(); ++i)
    if (probs[i] > 0) acc += probs[i] * std::log(probs[i]);
  return acc;
}

// dR/dphi, with probabilities clamped before the log.
inline Vector regularizer_gradient(const Vector& probs, Regularizer kind) {
  if (kind == Regularizer::L2) return 2.0 * probs;
  return (probs.array().max(kProbFloor).log() + 1.0).matrix();
}

inline double total_variation(const Vector& p, const Vector& q) {
  check(p.size() == q.size(), "total_variation: size mismatch");
  return 0.5 * (p - q).cwiseAbs().sum();
}

}  // namespace ganrec
