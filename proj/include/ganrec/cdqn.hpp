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
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ganrec/adversarial_training.hpp"
#include "ganrec/core_data.hpp"
#include "ganrec/embed_net.hpp"
#include "ganrec/environment.hpp"

namespace ganrec {

enum class RewardMode { LearnedReward, PlusMinusOne };
enum class QForm { Cascade, Additive };

inline RewardMode parse_reward_mode(const std::string& s) {
  if (s == "learned") return RewardMode::LearnedReward;
  if (s == "pm1" || s == "plus-minus-one") return RewardMode::PlusMinusOne;
  throw Error("unknown reward mode '" + s + "'");
}

// Training-user seeds are even, test-user seeds odd.
inline std::uint64_t training_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return derive_seed(base, 0x7a1, a, b) & ~std::uint64_t{1};
}
inline std::uint64_t test_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return derive_seed(base, 0x7e57, a, b) | std::uint64_t{1};
}

struct Transition {
  HistoryBuffer state{1, 1};
  std::vector<ItemId> slate;
  double reward = 0;
  HistoryBuffer next_state{1, 1};
  std::vector<ItemId> next_pool;
  bool terminal = false;
};

/// Fixed-capacity FIFO of transitions.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity) : capacity_(capacity) {
    check(capacity >= 1, "replay capacity must be >= 1");
  }

  void push(Transition t) {
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(t));
    ++inserted_;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t total_inserted() const { return inserted_; }
  const Transition& at(std::size_t i) const { return items_.at(i); }

  /// n draws with replacement.
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const {
    check(!items_.empty(), "replay memory is empty");
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    std::vector<const Transition*> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(&items_[pick(rng)]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t inserted_ = 0;
  std::deque<Transition> items_;
};

struct CascadeResult {
  std::vector<ItemId> slate;
  std::vector<double> values;  // Q^j(s, a*_{1:j}) for j = 1..k
  std::size_t evaluations = 0;
};

/// Greedy cascade over positions: a*_j = argmax_{a in pool \ A*} Q^j(s, a*_{1:j-1}, a).
/// q(j, prefix, candidate) evaluates Q^j. Ties go to the lowest item id.
template <class QFn>
CascadeResult cascade_argmax(int k, const std::vector<ItemId>& pool, QFn&& q) {
  if (static_cast<int>(pool.size()) < k || k < 1) throw Error("cascade_argmax: pool smaller than k");
  std::vector<ItemId> remaining = pool;
  std::sort(remaining.begin(), remaining.end());
  CascadeResult out;
  for (int j = 1; j <= k; ++j) {
    std::size_t best = 0;
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < remaining.size(); ++i) {
      double v = q(j, std::span<const ItemId>(out.slate), remaining[i]);
      ++out.evaluations;
      if (v > best_val) {
        best_val = v;
        best = i;
      }
    }
    out.slate.push_back(remaining[best]);
    out.values.push_back(best_val);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return out;
}

/// Cascade over the network heads for an already-embedded state.
inline CascadeResult cascade_argmax(const Vector& state, const std::vector<ItemId>& pool,
                                    const CascadeQParams& params, const ItemCatalog& catalog) {
  const Index dn = state.size();
  const Index d = catalog.dim();
  int cached_j = 0;
  Vector base;
  auto q = [&](int j, std::span<const ItemId> prefix, ItemId cand) {
    const QHead& h = params.heads[static_cast<std::size_t>(j - 1)];
    if (j != cached_j) {
      check(h.L.cols() == dn + d * j, "cascade: Q head dimension mismatch");
      base = h.L.leftCols(dn) * state + h.c;
      for (std::size_t p = 0; p < prefix.size(); ++p)
        base.noalias() += h.L.middleCols(dn + d * static_cast<Index>(p), d) * catalog.features(prefix[p]);
      cached_j = j;
    }
    Vector pre = base + h.L.rightCols(d) * catalog.features(cand);
    return h.q.dot(activate(pre, params.activation));
  };
  return cascade_argmax(params.k(), pool, q);
}

inline CascadeResult cascade_argmax(const HistoryBuffer& history, const std::vector<ItemId>& pool,
                                    const CascadeQParams& params, const ItemCatalog& catalog) {
  return cascade_argmax(embed_state(history, params.embed), pool, params, catalog);
}

/// Single-item values Q^1(s, a) for each pool item.
inline Vector single_item_q(const Vector& state, const std::vector<ItemId>& pool, const CascadeQParams& params,
                            const ItemCatalog& catalog) {
  const QHead& h = params.heads.front();
  const Index dn = state.size();
  Vector base = h.L.leftCols(dn) * state + h.c;
  Matrix pre = h.L.rightCols(catalog.dim()) * catalog.feature_matrix(pool);
  pre.colwise() += base;
  return activate(pre, params.activation).transpose() * h.q;
}

namespace detail {
// Indices of the k largest scores; ties to the lowest id.
inline std::vector<ItemId> top_k(const Vector& scores, const std::vector<ItemId>& ids, int k) {
  if (static_cast<int>(ids.size()) < k) throw Error("pool smaller than k");
  std::vector<std::size_t> idx(ids.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto ia = static_cast<Index>(a), ib = static_cast<Index>(b);
    if (scores[ia] != scores[ib]) return scores[ia] > scores[ib];
    return ids[a] < ids[b];
  });
  std::vector<ItemId> out;
  for (int i = 0; i < k; ++i) out.push_back(ids[idx[static_cast<std::size_t>(i)]]);
  return out;
}
}  // namespace detail

/// Top-k pool items by the user model's behavior logit.
inline std::vector<ItemId> greedy_user_model_policy(const UserModel& model, const HistoryBuffer& history,
                                                    const std::vector<ItemId>& pool, const ItemCatalog& catalog,
                                                    int k) {
  if (static_cast<int>(pool.size()) < k) throw Error("pool smaller than k");
  Vector logits = model.logits(history, slot_matrix(catalog, pool, false));
  return detail::top_k(logits, pool, k);
}

/// Argmax of sum_j Q(s, a_j): the k items with the largest single-item Q.
inline std::vector<ItemId> additive_q_policy(const CascadeQParams& params, const HistoryBuffer& history,
                                             const std::vector<ItemId>& pool, const ItemCatalog& catalog, int k) {
  if (static_cast<int>(pool.size()) < k) throw Error("pool smaller than k");
  return detail::top_k(single_item_q(embed_state(history, params.embed), pool, params, catalog), pool, k);
}

/// y = r + gamma * Q^k(s', a*_{1:k}) with a* the cascade at s' over the stored
/// next pool; y = r at terminal transitions. The additive form sums the top
/// `slate_k` single-item values.
inline double compute_target(double reward, const HistoryBuffer& next_state, const std::vector<ItemId>& next_pool,
                             const CascadeQParams& params, const ItemCatalog& catalog, double gamma, bool terminal,
                             QForm form = QForm::Cascade, int slate_k = 0) {
  if (terminal || gamma == 0.0) return reward;
  Vector s = embed_state(next_state, params.embed);
  if (form == QForm::Additive) {
    check(slate_k >= 1, "compute_target: additive form needs the slate size");
    const int k = static_cast<int>(std::min<std::size_t>(next_pool.size(), static_cast<std::size_t>(slate_k)));
    Vector q = single_item_q(s, next_pool, params, catalog);
    std::vector<double> v(q.data(), q.data() + q.size());
    std::partial_sort(v.begin(), v.begin() + k, v.end(), std::greater<>());
    double sum = 0;
    for (int i = 0; i < k; ++i) sum += v[static_cast<std::size_t>(i)];
    return reward + gamma * sum;
  }
  return reward + gamma * cascade_argmax(s, next_pool, params, catalog).values.back();
}

/// mean_B sum_j (y - Q^j(s, A_{1:j}))^2 and its gradient (targets held fixed).
/// Additive form: mean_B (y - sum_{a in A} Q(s, a))^2 with a single head.
inline LossAndGrad<CascadeQParams> td_gradient(const CascadeQParams& params,
                                               std::span<const Transition* const> batch,
                                               std::span<const double> targets, const ItemCatalog& catalog,
                                               QForm form = QForm::Cascade) {
  check(!batch.empty() && batch.size() == targets.size(), "td_gradient: batch/target size mismatch");
  LossAndGrad<CascadeQParams> out{0, zeros_like(params)};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Transition& tr = *batch[b];
    Matrix embed_pre;
    Vector s = embed_state(tr.state, params.embed, &embed_pre);
    Vector ds = Vector::Zero(s.size());
    std::vector<Vector> feats;
    for (ItemId id : tr.slate) feats.push_back(catalog.features(id));
    if (form == QForm::Cascade) {
      check(static_cast<int>(feats.size()) == params.k(), "td_gradient: slate size differs from k");
      for (int j = 1; j <= params.k(); ++j) {
        const QHead& h = params.heads[static_cast<std::size_t>(j - 1)];
        Vector x = cascade_input(s, std::span<const Vector>(feats.data(), static_cast<std::size_t>(j)));
        Vector pre;
        double qv = head_forward(h, params.activation, x, &pre);
        double err = targets[b] - qv;
        out.loss += err * err * inv_n;
        Vector dx = head_backward(h, params.activation, x, pre, -2.0 * err * inv_n,
                                  out.grad.heads[static_cast<std::size_t>(j - 1)]);
        ds += dx.head(s.size());
      }
    } else {
      const QHead& h = params.heads.front();
      std::vector<Vector> xs, pres;
      double total = 0;
      for (const auto& f : feats) {
        xs.push_back(concat(s, f));
        pres.emplace_back();
        total += head_forward(h, params.activation, xs.back(), &pres.back());
      }
      double err = targets[b] - total;
      out.loss += err * err * inv_n;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        Vector dx = head_backward(h, params.activation, xs[i], pres[i], -2.0 * err * inv_n, out.grad.heads.front());
        ds += dx.head(s.size());
      }
    }
    embed_backward(tr.state, params.embed, embed_pre, ds, out.grad.embed);
  }
  return out;
}

struct CDQNConfig {
  double gamma = 0.9;
  double epsilon = 0.1;
  // Linear decay from epsilon to epsilon_final over the run; < 0 disables.
  double epsilon_final = -1.0;
  int iterations = 100;  // L
  int horizon = 10;      // T
  int batch_users = 8;   // |U|
  std::size_t minibatch = 32;
  std::size_t replay_capacity = 10000;
  double lr = 0.01;
  double momentum = 0.0;
  // Refresh period (in updates) of a frozen target copy; 0 uses the live parameters.
  int target_period = 0;
  std::uint64_t seed = 0;
  RewardMode reward_mode = RewardMode::LearnedReward;
  QForm q_form = QForm::Cascade;
  NetDims dims;
  std::function<void(int iteration, double mean_loss)> on_iteration;
};

struct TrainedQ {
  CascadeQParams params;
  std::vector<double> loss_log;  // mean TD loss per iteration
  std::size_t transitions = 0;
};

inline std::vector<ItemId> select_greedy_slate(const CascadeQParams& params, QForm form, const HistoryBuffer& history,
                                               const std::vector<ItemId>& pool, const ItemCatalog& catalog, int k) {
  if (form == QForm::Additive) return additive_q_policy(params, history, pool, catalog, k);
  return cascade_argmax(history, pool, params, catalog).slate;
}

/// Cascading deep Q-learning with experience replay against a simulated user.
inline TrainedQ train_cdqn(const Environment& env, const UserModel& user, const CDQNConfig& config) {
  check(config.gamma >= 0 && config.gamma < 1, "cdqn: gamma must be in [0, 1)");
  check(config.epsilon >= 0 && config.epsilon <= 1, "cdqn: epsilon must be in [0, 1]");
  check(config.horizon >= 1 && config.horizon <= env.config().horizon, "cdqn: horizon exceeds env horizon");
  check(config.batch_users >= 1 && config.minibatch >= 1, "cdqn: invalid batch sizes");
  const ItemCatalog& catalog = env.catalog();
  const int k = env.config().k;
  NetDims dims = config.dims;
  dims.d = catalog.dim();
  dims.m = user.window();

  Rng init_rng(derive_seed(config.seed, 0x0e7));
  TrainedQ out;
  out.params = make_cascade_q(dims, config.q_form == QForm::Additive ? 1 : k, init_rng);
  CascadeQParams target = out.params;
  ReplayMemory memory(config.replay_capacity);
  Rng explore_rng(derive_seed(config.seed, 0xe4b));
  Rng sample_rng(derive_seed(config.seed, 0x5a3));
  Sgd<CascadeQParams> opt(config.lr, config.momentum);
  int updates = 0;

  for (int it = 0; it < config.iterations; ++it) {
    double eps = config.epsilon;
    if (config.epsilon_final >= 0 && config.iterations > 1)
      eps += (config.epsilon_final - config.epsilon) * it / static_cast<double>(config.iterations - 1);
    std::vector<EnvState> states;
    for (int u = 0; u < config.batch_users; ++u)
      states.push_back(env.reset(user, training_seed(config.seed, static_cast<std::uint64_t>(it),
                                                     static_cast<std::uint64_t>(u))));
    double loss_sum = 0;
    int loss_count = 0;
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (int t = 0; t < config.horizon; ++t) {
      for (auto& s : states) {
        std::vector<ItemId> slate = coin(explore_rng) < eps
                                        ? random_slate(s.pool, k, explore_rng)
                                        : select_greedy_slate(out.params, config.q_form, s.buffer, s.pool, catalog, k);
        StepOutcome o = env.step(s, slate, user);
        double r = config.reward_mode == RewardMode::PlusMinusOne ? (o.clicked ? 1.0 : -1.0) : o.reward;
        bool terminal = o.next_state.t >= config.horizon;
        memory.push(Transition{s.buffer, slate, r, o.next_state.buffer, terminal ? std::vector<ItemId>{} : o.next_state.pool,
                               terminal});
        s = std::move(o.next_state);
      }
      auto batch = memory.sample(config.minibatch, sample_rng);
      const CascadeQParams& tgt = config.target_period > 0 ? target : out.params;
      std::vector<double> ys;
      ys.reserve(batch.size());
      for (const Transition* tr : batch)
        ys.push_back(compute_target(tr->reward, tr->next_state, tr->next_pool, tgt, catalog, config.gamma,
                                    tr->terminal, config.q_form, k));
      auto lg = td_gradient(out.params, batch, ys, catalog, config.q_form);
      if (!std::isfinite(lg.loss)) throw Error("divergence: NaN TD loss at iteration " + std::to_string(it + 1));
      opt.step(out.params, lg.grad);
      loss_sum += lg.loss;
      ++loss_count;
      if (config.target_period > 0 && ++updates % config.target_period == 0) target = out.params;
    }
    out.loss_log.push_back(loss_sum / loss_count);
    if (config.on_iteration) config.on_iteration(it + 1, out.loss_log.back());
  }
  out.transitions = memory.total_inserted();
  return out;
}

struct DiagnosticRow {
  std::size_t state_index = 0;
  int j = 0;
  double qj = 0;
  double qk = 0;
};

/// Runs the cascade at each state and pairs Q^j(s, a*_{1:j}) with Q^k(s, a*_{1:k}).
inline std::vector<DiagnosticRow> constraint_diagnostic(const CascadeQParams& params,
                                                        const std::vector<HistoryBuffer>& states,
                                                        const std::vector<std::vector<ItemId>>& pools,
                                                        const ItemCatalog& catalog) {
  check(states.size() == pools.size(), "constraint_diagnostic: states/pools size mismatch");
  std::vector<DiagnosticRow> rows;
  for (std::size_t i = 0; i < states.size(); ++i) {
    CascadeResult c = cascade_argmax(states[i], pools[i], params, catalog);
    for (int j = 1; j <= params.k(); ++j)
      rows.push_back({i, j, c.values[static_cast<std::size_t>(j - 1)], c.values.back()});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Policy roster.

enum class PolicyKind { CDQN, GreedyUserModel, AdditiveQ, Random };

struct PolicyHandle {
  PolicyKind kind = PolicyKind::Random;
  std::string name = "random";
  const CascadeQParams* q = nullptr;
  const UserModel* user_model = nullptr;
};

inline SlatePolicy make_policy(const PolicyHandle& handle, const ItemCatalog& catalog, int k) {
  switch (handle.kind) {
    case PolicyKind::Random:
      return [k](const EnvState& s, Rng& rng) { return random_slate(s.pool, k, rng); };
    case PolicyKind::GreedyUserModel:
      check(handle.user_model != nullptr, "greedy policy needs a user model");
      return [&catalog, k, m = handle.user_model](const EnvState& s, Rng&) {
        return greedy_user_model_policy(*m, s.buffer, s.pool, catalog, k);
      };
    case PolicyKind::CDQN:
      check(handle.q != nullptr && handle.q->k() == k, "cdqn policy needs k cascade heads");
      return [&catalog, q = handle.q](const EnvState& s, Rng&) {
        return cascade_argmax(s.buffer, s.pool, *q, catalog).slate;
      };
    case PolicyKind::AdditiveQ:
      check(handle.q != nullptr, "additive policy needs a Q network");
      return [&catalog, k, q = handle.q](const EnvState& s, Rng&) {
        return additive_q_policy(*q, s.buffer, s.pool, catalog, k);
      };
  }
  throw Error("unknown policy kind");
}

}  // namespace ganrec
