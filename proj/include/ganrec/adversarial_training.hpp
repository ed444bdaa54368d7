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
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ganrec/choice.hpp"
#include "ganrec/core_data.hpp"
#include "ganrec/embed_net.hpp"

namespace ganrec {

/// One teacher-forced page view: the observed click history, the display
/// slots (displayed items, then the zero-feature non-click slot), and the
/// index of the observed choice among the slots.
struct ChoiceExample {
  HistoryBuffer history;
  Matrix slots;  // d x (k [+1])
  Index chosen = 0;
  bool has_nonclick = true;

  Index displayed_count() const { return slots.cols() - (has_nonclick ? 1 : 0); }
  bool clicked() const { return !has_nonclick || chosen < displayed_count(); }
};

inline Matrix slot_matrix(const ItemCatalog& catalog, const std::vector<ItemId>& displayed, bool nonclick = true) {
  Matrix slots = Matrix::Zero(catalog.dim(), static_cast<Index>(displayed.size()) + (nonclick ? 1 : 0));
  for (std::size_t i = 0; i < displayed.size(); ++i) slots.col(static_cast<Index>(i)) = catalog.features(displayed[i]);
  return slots;
}

/// Replays each trajectory from an empty history; non-clicks leave the
/// history untouched.
inline std::vector<ChoiceExample> build_examples(const ItemCatalog& catalog, const std::vector<Trajectory>& trajectories,
                                                 Index history_window) {
  std::vector<ChoiceExample> out;
  for (const auto& traj : trajectories) {
    HistoryBuffer buffer(history_window, catalog.dim());
    for (const auto& rec : traj.records) {
      ChoiceExample ex{buffer, slot_matrix(catalog, rec.displayed), 0, true};
      auto it = std::find(rec.displayed.begin(), rec.displayed.end(), rec.chosen);
      ex.chosen = rec.clicked() ? static_cast<Index>(it - rec.displayed.begin())
                                : static_cast<Index>(rec.displayed.size());
      out.push_back(std::move(ex));
      if (rec.clicked()) buffer.push(catalog.features(rec.chosen));
    }
  }
  return out;
}

enum class BehaviorMode {
  Parametric,  // phi = softmax of the alpha net's logits
  ClosedForm,  // phi = regularized best response to r_theta
};

/// Reward net theta, behavior net alpha, and the choice configuration.
struct UserModel {
  ScoringNet theta;
  ScoringNet alpha;
  ChoiceConfig config;
  BehaviorMode behavior = BehaviorMode::Parametric;

  Index dim() const { return theta.embed.dim(); }
  Index window() const { return theta.embed.window(); }

  Vector rewards(const HistoryBuffer& h, const Matrix& slots) const { return slot_scores(theta, h, slots); }

  Vector logits(const HistoryBuffer& h, const Matrix& slots) const {
    if (behavior == BehaviorMode::ClosedForm) return config.eta * rewards(h, slots);
    return slot_scores(alpha, h, slots);
  }

  ChoiceDistribution choice(const HistoryBuffer& h, const Matrix& slots) const {
    if (behavior == BehaviorMode::ClosedForm) return choice_probs(rewards(h, slots), config);
    return {softmax(slot_scores(alpha, h, slots))};
  }
};

/// alpha whose logits are exactly eta * r_theta.
inline ScoringNet induced_behavior(const ScoringNet& theta, double eta) {
  ScoringNet alpha = theta;
  alpha.head.v *= eta;
  return alpha;
}

// ---------------------------------------------------------------------------
// Losses and gradients. All are means over the batch.

/// mean_t [ logsumexp_a(eta r(s_t, a)) - eta r(s_t, a_true) ]
inline double nll_loss(const ScoringNet& theta, std::span<const ChoiceExample> batch, double eta) {
  check(!batch.empty(), "nll_loss: empty batch");
  double total = 0;
  for (const auto& ex : batch) {
    Vector r = eta * slot_scores(theta, ex.history, ex.slots);
    total += log_sum_exp(r) - r[ex.chosen];
  }
  return total / static_cast<double>(batch.size());
}

template <Parameterized P>
struct LossAndGrad {
  double loss = 0;
  P grad;
};

inline LossAndGrad<ScoringNet> nll_gradient(const ScoringNet& theta, std::span<const ChoiceExample> batch,
                                            double eta) {
  check(!batch.empty(), "nll_loss: empty batch");
  LossAndGrad<ScoringNet> out{0, zeros_like(theta)};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    SlotForward fw = score_slots(theta, ex.history, ex.slots);
    Vector logits = eta * fw.scores;
    out.loss += (log_sum_exp(logits) - logits[ex.chosen]) * inv_n;
    Vector g = softmax(logits);
    g[ex.chosen] -= 1.0;
    score_slots_backward(theta, ex.history, fw, (eta * inv_n) * g, out.grad);
  }
  return out;
}

inline Vector behavior_probs(const ScoringNet& alpha, const ChoiceExample& ex) {
  return softmax(slot_scores(alpha, ex.history, ex.slots));
}

/// mean_t [ E_phi r(s_t, .) - R(phi)/eta - r(s_t, a_true) ], phi given per example.
inline double minimax_objective_given(const ScoringNet& theta, std::span<const ChoiceExample> batch,
                                      const std::vector<Vector>& phis, const ChoiceConfig& config) {
  check(!batch.empty(), "minimax objective: empty batch");
  double total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Vector r = slot_scores(theta, batch[i].history, batch[i].slots);
    total += phis[i].dot(r) - regularizer_value(phis[i], config.regularizer) / config.eta - r[batch[i].chosen];
  }
  return total / static_cast<double>(batch.size());
}

/// Mini-max objective with phi = phi_alpha.
inline double minimax_objective(const ScoringNet& theta, const ScoringNet& alpha,
                                std::span<const ChoiceExample> batch, const ChoiceConfig& config) {
  std::vector<Vector> phis;
  for (const auto& ex : batch) phis.push_back(behavior_probs(alpha, ex));
  return minimax_objective_given(theta, batch, phis, config);
}

/// Mini-max objective with the inner maximization solved in closed form.
inline double minimax_inner_max_objective(const ScoringNet& theta, std::span<const ChoiceExample> batch,
                                          const ChoiceConfig& config) {
  std::vector<Vector> phis;
  for (const auto& ex : batch) phis.push_back(choice_probs(slot_scores(theta, ex.history, ex.slots), config).probs);
  return minimax_objective_given(theta, batch, phis, config);
}

/// Gradient in theta of mean_t [ E_phi r - r(a_true) ] for fixed phi.
inline LossAndGrad<ScoringNet> minimax_reward_gradient(const ScoringNet& theta, std::span<const ChoiceExample> batch,
                                                       const std::vector<Vector>& phis) {
  check(!batch.empty(), "minimax gradient: empty batch");
  LossAndGrad<ScoringNet> out{0, zeros_like(theta)};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    SlotForward fw = score_slots(theta, ex.history, ex.slots);
    out.loss += (phis[i].dot(fw.scores) - fw.scores[ex.chosen]) * inv_n;
    Vector g = phis[i];
    g[ex.chosen] -= 1.0;
    score_slots_backward(theta, ex.history, fw, inv_n * g, out.grad);
  }
  return out;
}

/// Gradient in alpha of mean_t [ E_{phi_alpha} r_theta - R(phi_alpha)/eta ].
inline LossAndGrad<ScoringNet> minimax_behavior_gradient(const ScoringNet& alpha, const ScoringNet& theta,
                                                         std::span<const ChoiceExample> batch,
                                                         const ChoiceConfig& config) {
  check(!batch.empty(), "minimax gradient: empty batch");
  LossAndGrad<ScoringNet> out{0, zeros_like(alpha)};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    Vector r = slot_scores(theta, ex.history, ex.slots);
    SlotForward fw = score_slots(alpha, ex.history, ex.slots);
    Vector phi = softmax(fw.scores);
    out.loss += (phi.dot(r) - regularizer_value(phi, config.regularizer) / config.eta) * inv_n;
    // d/dlogit_b = phi_b (u_b - phi.u), u = r - R'(phi)/eta
    Vector u = r - regularizer_gradient(phi, config.regularizer) / config.eta;
    Vector g = phi.cwiseProduct((u.array() - phi.dot(u)).matrix());
    score_slots_backward(alpha, ex.history, fw, inv_n * g, out.grad);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation.

using SlotScorer = std::function<Vector(const ChoiceExample&)>;

/// Fraction of clicked page views whose true item ranks within the top
/// k_eval displayed items. Ties go to the lower slot index.
inline double precision_at_k(const SlotScorer& scorer, std::span<const ChoiceExample> examples, int k_eval) {
  check(k_eval >= 1, "precision_at_k: k_eval must be >= 1");
  std::size_t hits = 0, total = 0;
  for (const auto& ex : examples) {
    if (!ex.clicked()) continue;
    const Index shown = ex.displayed_count();
    check(k_eval <= shown, "precision_at_k: k_eval exceeds display size");
    Vector s = scorer(ex);
    Index rank = 0;
    for (Index i = 0; i < shown; ++i) {
      if (i == ex.chosen) continue;
      if (s[i] > s[ex.chosen] || (s[i] == s[ex.chosen] && i < ex.chosen)) ++rank;
    }
    hits += rank < k_eval ? 1 : 0;
    ++total;
  }
  check(total > 0, "precision_at_k: empty evaluation set");
  return static_cast<double>(hits) / static_cast<double>(total);
}

inline double precision_at_k(const UserModel& model, std::span<const ChoiceExample> examples, int k_eval) {
  return precision_at_k([&](const ChoiceExample& ex) { return model.logits(ex.history, ex.slots); }, examples,
                        k_eval);
}

struct LogLikelihood {
  double mean = 0;
  std::size_t flagged = 0;  // records whose probability hit the floor
};

using SlotDistribution = std::function<Vector(const ChoiceExample&)>;

inline LogLikelihood heldout_loglik(const SlotDistribution& dist, std::span<const ChoiceExample> examples) {
  check(!examples.empty(), "heldout_loglik: empty data");
  LogLikelihood out;
  for (const auto& ex : examples) {
    double p = dist(ex)[ex.chosen];
    if (!(p > kProbFloor)) {
      p = kProbFloor;
      ++out.flagged;
    }
    out.mean += std::log(p);
  }
  out.mean /= static_cast<double>(examples.size());
  return out;
}

inline LogLikelihood heldout_loglik(const UserModel& model, std::span<const ChoiceExample> examples) {
  return heldout_loglik([&](const ChoiceExample& ex) { return model.choice(ex.history, ex.slots).probs; }, examples);
}

// ---------------------------------------------------------------------------
// Training.

enum class InitScheme { Fresh, EntropyInit };

struct TrainConfig {
  ChoiceConfig choice;
  NetDims dims;
  double lr_alpha = 0.05;  // gamma_1
  double lr_theta = 0.05;  // gamma_2
  double momentum = 0.0;
  int batch_size = 64;
  int epochs = 50;
  InitScheme init_scheme = InitScheme::Fresh;
  std::uint64_t seed = 0;
  int patience = 10;
  // Independent initializations for train_mle; the best validation run wins.
  int restarts = 1;
  int alpha_steps = 1;  // alpha updates per theta update
  // Replace phi_alpha by the closed-form best response (entropy only).
  bool closed_form_behavior = false;
  double oscillation_threshold = 1.0;
  int oscillation_window = 50;
  std::optional<ScoringNet> initial_theta;
  std::function<void(int iteration, const UserModel&)> on_iteration;
};

struct EpochLog {
  int epoch = 0;
  double train_nll = 0;
  double valid_nll = 0;
  double prec1 = 0;
};

struct TrainResult {
  UserModel model;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> minibatches(std::size_t n, int batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<std::size_t>> out;
  if (static_cast<std::size_t>(batch_size) >= n) {
    out.push_back(order);
    return out;
  }
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size))
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + static_cast<std::size_t>(batch_size))));
  return out;
}

inline std::vector<ChoiceExample> gather(std::span<const ChoiceExample> data, const std::vector<std::size_t>& idx) {
  std::vector<ChoiceExample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data[i]);
  return out;
}

inline double safe_prec1(const UserModel& model, std::span<const ChoiceExample> data) {
  bool any = std::any_of(data.begin(), data.end(), [](const ChoiceExample& e) { return e.clicked(); });
  return any ? precision_at_k(model, data, 1) : 0.0;
}

}  // namespace detail

namespace detail {

inline TrainResult train_mle_once(std::span<const ChoiceExample> train, std::span<const ChoiceExample> valid,
                             const TrainConfig& config, int restart) {
  check(config.choice.regularizer == Regularizer::ShannonEntropy, "train_mle requires the entropy regularizer");
  check(config.batch_size >= 1 && config.lr_theta >= 0 && config.epochs >= 0, "train_mle: invalid config");
  check(!train.empty(), "train_mle: empty training set");
  config.choice.validate();
  const double eta = config.choice.eta;

  Rng init_rng(derive_seed(config.seed, 1, restart));
  ScoringNet theta = config.initial_theta ? *config.initial_theta : make_scoring_net(config.dims, init_rng);
  auto snapshot = [&](const ScoringNet& th) {
    return UserModel{th, induced_behavior(th, eta), config.choice, BehaviorMode::Parametric};
  };
  std::span<const ChoiceExample> val = valid.empty() ? train : valid;

  TrainResult result;
  result.model = snapshot(theta);
  double best = nll_loss(theta, val, eta);
  result.log.push_back({0, nll_loss(theta, train, eta), best, detail::safe_prec1(result.model, val)});

  Rng shuffle_rng(derive_seed(config.seed, 2, restart));
  Sgd<ScoringNet> opt(config.lr_theta, config.momentum);
  int since_best = 0, iteration = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (const auto& idx : detail::minibatches(train.size(), config.batch_size, shuffle_rng)) {
      auto batch = detail::gather(train, idx);
      auto lg = nll_gradient(theta, batch, eta);
      if (!std::isfinite(lg.loss)) throw Error("divergence: NaN loss at epoch " + std::to_string(epoch));
      opt.step(theta, lg.grad);
      if (config.on_iteration) config.on_iteration(++iteration, snapshot(theta));
    }
    double train_nll = nll_loss(theta, train, eta);
    double valid_nll = nll_loss(theta, val, eta);
    if (!std::isfinite(train_nll) || !all_finite(theta))
      throw Error("divergence: NaN loss at epoch " + std::to_string(epoch));
    UserModel current = snapshot(theta);
    result.log.push_back({epoch, train_nll, valid_nll, detail::safe_prec1(current, val)});
    if (valid_nll < best) {
      best = valid_nll;
      result.model = std::move(current);
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace detail

/// Maximum likelihood fit of theta (entropy regularizer). Returns the
/// best-validation model with alpha set to theta's induced softmax.
inline TrainResult train_mle(std::span<const ChoiceExample> train, std::span<const ChoiceExample> valid,
                             const TrainConfig& config) {
  check(config.restarts >= 1, "train_mle: restarts must be >= 1");
  check(config.restarts == 1 || !config.initial_theta, "train_mle: restarts need a random initialization");
  std::span<const ChoiceExample> val = valid.empty() ? train : valid;
  TrainResult best;
  double best_nll = std::numeric_limits<double>::infinity();
  for (int r = 0; r < config.restarts; ++r) {
    TrainResult run = detail::train_mle_once(train, valid, config, r);
    double v = nll_loss(run.model.theta, val, config.choice.eta);
    if (r == 0 || v < best_nll) {
      best_nll = v;
      best = std::move(run);
    }
  }
  return best;
}

/// Alternating updates: alpha ascends E_phi[r] - R(phi)/eta, theta descends
/// E_phi[r] - r(a_true). Expectations are exact sums over the display slots.
inline TrainResult train_minimax(std::span<const ChoiceExample> train, std::span<const ChoiceExample> valid,
                                 const TrainConfig& config) {
  check(config.batch_size >= 1 && config.lr_theta >= 0 && config.lr_alpha >= 0 && config.epochs >= 0 &&
            config.alpha_steps >= 1,
        "train_minimax: invalid config");
  check(!train.empty(), "train_minimax: empty training set");
  check(!config.closed_form_behavior || config.choice.regularizer == Regularizer::ShannonEntropy,
        "closed-form behavior is only available for the entropy regularizer");
  config.choice.validate();
  const ChoiceConfig& choice = config.choice;

  UserModel model;
  model.config = choice;
  if (config.init_scheme == InitScheme::EntropyInit) {
    TrainConfig mle = config;
    mle.choice.regularizer = Regularizer::ShannonEntropy;
    mle.on_iteration = nullptr;
    UserModel init = train_mle(train, valid, mle).model;
    model.theta = init.theta;
    model.alpha = induced_behavior(init.theta, choice.eta);
  } else {
    Rng init_rng(derive_seed(config.seed, 1));
    model.theta = config.initial_theta ? *config.initial_theta : make_scoring_net(config.dims, init_rng);
    Rng alpha_rng(derive_seed(config.seed, 3));
    model.alpha = make_scoring_net(config.dims, alpha_rng);
  }
  if (config.closed_form_behavior) model.behavior = BehaviorMode::ClosedForm;

  std::span<const ChoiceExample> val = valid.empty() ? train : valid;
  auto valid_nll = [&](const UserModel& m) { return -heldout_loglik(m, val).mean; };
  auto train_nll = [&](const UserModel& m) { return -heldout_loglik(m, train).mean; };

  TrainResult result;
  result.model = model;
  double best = valid_nll(model);
  result.log.push_back({0, train_nll(model), best, detail::safe_prec1(model, val)});

  Rng shuffle_rng(derive_seed(config.seed, 2));
  Sgd<ScoringNet> opt_theta(config.lr_theta, config.momentum);
  Sgd<ScoringNet> opt_alpha(config.lr_alpha, config.momentum);
  std::vector<double> objective_trace;
  bool warned = false;
  int since_best = 0, iteration = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (const auto& idx : detail::minibatches(train.size(), config.batch_size, shuffle_rng)) {
      auto batch = detail::gather(train, idx);
      if (!config.closed_form_behavior) {
        for (int s = 0; s < config.alpha_steps; ++s) {
          auto ga = minimax_behavior_gradient(model.alpha, model.theta, batch, choice);
          opt_alpha.step(model.alpha, ga.grad, Direction::Ascent);
        }
      }
      std::vector<Vector> phis;
      for (const auto& ex : batch) phis.push_back(model.choice(ex.history, ex.slots).probs);
      auto gt = minimax_reward_gradient(model.theta, batch, phis);
      double objective = minimax_objective_given(model.theta, batch, phis, choice);
      if (!std::isfinite(objective) || !std::isfinite(gt.loss))
        throw Error("divergence: NaN objective at epoch " + std::to_string(epoch));
      opt_theta.step(model.theta, gt.grad, Direction::Descent);
      if (config.on_iteration) config.on_iteration(++iteration, model);

      objective_trace.push_back(objective);
      const auto w = static_cast<std::size_t>(config.oscillation_window);
      if (!warned && objective_trace.size() >= w) {
        double mean = 0, var = 0;
        for (std::size_t i = objective_trace.size() - w; i < objective_trace.size(); ++i) mean += objective_trace[i];
        mean /= static_cast<double>(w);
        for (std::size_t i = objective_trace.size() - w; i < objective_trace.size(); ++i)
          var += (objective_trace[i] - mean) * (objective_trace[i] - mean);
        var /= static_cast<double>(w);
        if (var > config.oscillation_threshold) {
          result.warnings.push_back("oscillation: objective variance " + std::to_string(var) + " over last " +
                                    std::to_string(w) + " iterations at epoch " + std::to_string(epoch));
          warned = true;
        }
      }
    }
    if (!all_finite(model.theta) || !all_finite(model.alpha))
      throw Error("divergence: non-finite parameters at epoch " + std::to_string(epoch));
    double v = valid_nll(model);
    result.log.push_back({epoch, train_nll(model), v, detail::safe_prec1(model, val)});
    if (v < best) {
      best = v;
      result.model = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// History-free baseline: multinomial logistic regression on item features.

struct HistoryFreeScorer {
  Vector w;

  Vector scores(const ChoiceExample& ex) const { return ex.slots.transpose() * w; }
};

inline HistoryFreeScorer train_history_free(std::span<const ChoiceExample> train, double eta, double lr, int epochs) {
  check(!train.empty(), "train_history_free: empty training set");
  HistoryFreeScorer s{Vector::Zero(train.front().slots.rows())};
  const double inv_n = 1.0 / static_cast<double>(train.size());
  for (int e = 0; e < epochs; ++e) {
    Vector g = Vector::Zero(s.w.size());
    for (const auto& ex : train) {
      Vector p = softmax(eta * s.scores(ex));
      p[ex.chosen] -= 1.0;
      g += eta * inv_n * (ex.slots * p);
    }
    s.w -= lr * g;
  }
  return s;
}

}  // namespace ganrec
