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
#include <set>
#include <string>
#include <vector>

#include "ganrec/adversarial_training.hpp"
#include "ganrec/choice.hpp"
#include "ganrec/core_data.hpp"
#include "ganrec/embed_net.hpp"

namespace ganrec {

enum class CandidatePolicy { RandomSubset, FullCatalog };

struct EnvConfig {
  int k = 3;
  int pool_size = 20;
  int horizon = 10;
  CandidatePolicy candidate_policy = CandidatePolicy::RandomSubset;
  bool exclude_clicked = true;
  // Reward emitted on a non-click.
  double nonclick_reward = 0.0;
  std::uint64_t seed = 0;
};

struct EnvState {
  HistoryBuffer buffer{1, 1};
  int t = 0;
  std::set<ItemId> clicked;
  std::vector<ItemId> pool;  // ascending ids
  std::uint64_t seed = 0;
};

struct StepOutcome {
  ItemId chosen = kNonClickId;
  double reward = 0;
  bool clicked = false;
  EnvState next_state;
};

/// A user model whose behavior is the exact regularized best response to its
/// own reward, i.e. softmax(eta r) for the entropy regularizer.
struct GroundTruthUser {
  UserModel model;
};

/// Optional adjustments applied after the standard initialization. The
/// scales sharpen the synthetic user's preferences (output scale) and how
/// strongly its reward depends on click history (state scale). `affinity`
/// adds hinge pairs act(s_i + f_i) + act(-s_i - f_i) so that the user favors
/// items aligned with its recent clicks; it needs hidden >= 2d.
struct GroundTruthShape {
  double reward_scale = 1.0;
  double state_scale = 1.0;
  double affinity = 0.0;
};

inline GroundTruthUser make_ground_truth_user(const ItemCatalog& catalog, NetDims dims, std::uint64_t seed,
                                              const ChoiceConfig& choice = {}, GroundTruthShape shape = {}) {
  dims.d = catalog.dim();
  Rng rng(derive_seed(seed, 0x6a7));
  ScoringNet theta = make_scoring_net(dims, rng);
  if (shape.affinity != 0.0) {
    check(dims.hidden >= 2 * dims.d, "ground truth: affinity needs hidden >= 2d");
    const Index dn = dims.d * dims.n;
    theta.embed.W.col(0).array() += 1.0 / static_cast<double>(dims.m);
    for (Index i = 0; i < dims.d; ++i) {
      theta.head.V(i, i) += shape.affinity;
      theta.head.V(i, dn + i) += shape.affinity;
      theta.head.V(dims.d + i, i) -= shape.affinity;
      theta.head.V(dims.d + i, dn + i) -= shape.affinity;
      theta.head.v[i] += 1.0;
      theta.head.v[dims.d + i] += 1.0;
    }
  }
  theta.head.v *= shape.reward_scale;
  theta.embed.W *= shape.state_scale;
  theta.head.V.leftCols(dims.d * dims.n) *= shape.state_scale;
  GroundTruthUser user;
  user.model = UserModel{theta, induced_behavior(theta, choice.eta), choice, BehaviorMode::ClosedForm};
  return user;
}

/// Simulated user session. The environment owns the catalog view and
/// configuration; the user model is passed to each transition so the same
/// environment can play a ground-truth or a learned user.
class Environment {
 public:
  Environment(const ItemCatalog& catalog, EnvConfig config) : catalog_(&catalog), config_(config) {
    check(config.k >= 1 && config.k <= config.pool_size, "env: need 1 <= k <= pool_size");
    check(static_cast<std::size_t>(config.pool_size) + 1 <= catalog.size(), "env: pool_size exceeds catalog size");
    check(config.horizon >= 0, "env: negative horizon");
  }

  const ItemCatalog& catalog() const { return *catalog_; }
  const EnvConfig& config() const { return config_; }

  EnvState reset(const UserModel& user, std::uint64_t seed) const {
    check(user.dim() == catalog_->dim(), "env: user model / catalog dimension mismatch");
    EnvState s;
    s.buffer = HistoryBuffer(user.window(), catalog_->dim());
    s.seed = seed;
    s.pool = candidates(s);
    return s;
  }

  /// Available items at the state's step, drawn without replacement from the
  /// catalog minus clicked items; a pure function of (seed, t, clicked).
  std::vector<ItemId> candidates(const EnvState& s) const {
    std::vector<ItemId> avail;
    for (ItemId id : catalog_->item_ids())
      if (!config_.exclude_clicked || !s.clicked.count(id)) avail.push_back(id);
    if (static_cast<int>(avail.size()) < config_.k) throw Error("pool exhausted");
    if (config_.candidate_policy == CandidatePolicy::FullCatalog ||
        static_cast<int>(avail.size()) <= config_.pool_size)
      return avail;
    Rng rng(derive_seed(s.seed, 0x9001, static_cast<std::uint64_t>(s.t)));
    // Partial Fisher-Yates.
    for (int i = 0; i < config_.pool_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), avail.size() - 1);
      std::swap(avail[static_cast<std::size_t>(i)], avail[pick(rng)]);
    }
    avail.resize(static_cast<std::size_t>(config_.pool_size));
    std::sort(avail.begin(), avail.end());
    return avail;
  }

  void validate_slate(const EnvState& s, const std::vector<ItemId>& slate) const {
    if (static_cast<int>(slate.size()) != config_.k)
      throw Error("slate wrong size: expected " + std::to_string(config_.k) + ", got " + std::to_string(slate.size()));
    std::vector<ItemId> sorted = slate;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw Error("duplicate items in slate");
    for (ItemId id : slate)
      if (!std::binary_search(s.pool.begin(), s.pool.end(), id))
        throw Error("slate not in pool: item " + std::to_string(id));
  }

  /// Shows the slate (plus the implicit non-click slot), samples the user's
  /// choice and advances one step.
  StepOutcome step(const EnvState& s, const std::vector<ItemId>& slate, const UserModel& user) const {
    validate_slate(s, slate);
    check(s.t < config_.horizon, "env: step past horizon");
    const Matrix slots = slot_matrix(*catalog_, slate);
    const Vector rewards = user.rewards(s.buffer, slots);
    Rng rng(derive_seed(s.seed, 0xc11c, static_cast<std::uint64_t>(s.t)));
    Index pick;
    if (user.behavior == BehaviorMode::ClosedForm && user.config.regularizer == Regularizer::ShannonEntropy) {
      pick = gumbel_sample_choice(rewards, user.config, rng);
    } else {
      pick = sample_index(user.choice(s.buffer, slots).probs, rng);
    }

    StepOutcome out;
    out.next_state = s;
    out.next_state.t = s.t + 1;
    out.clicked = pick < config_.k;
    if (out.clicked) {
      out.chosen = slate[static_cast<std::size_t>(pick)];
      out.reward = rewards[pick];
      out.next_state.buffer.push(catalog_->features(out.chosen));
      out.next_state.clicked.insert(out.chosen);
    } else {
      out.chosen = kNonClickId;
      out.reward = config_.nonclick_reward;
    }
    if (out.next_state.t < config_.horizon) {
      out.next_state.pool = candidates(out.next_state);
    } else {
      out.next_state.pool.clear();
    }
    return out;
  }

 private:
  const ItemCatalog* catalog_;
  EnvConfig config_;
};

/// Maps (state, rng) to a slate of k ids from state.pool.
using SlatePolicy = std::function<std::vector<ItemId>(const EnvState&, Rng&)>;

struct RolloutResult {
  Trajectory trajectory;
  std::vector<double> rewards;
  int clicks = 0;
  double cumulative_reward = 0;  // (1/T) sum_t r_t
};

inline RolloutResult rollout(const Environment& env, const UserModel& user, const SlatePolicy& policy, int horizon,
                             std::uint64_t seed, std::int64_t user_id = 0) {
  check(horizon >= 0 && horizon <= env.config().horizon, "rollout: horizon exceeds env horizon");
  RolloutResult out;
  out.trajectory.user_id = user_id;
  if (horizon == 0) return out;
  EnvState s = env.reset(user, seed);
  Rng policy_rng(derive_seed(seed, 0x9011c7));
  for (int t = 0; t < horizon; ++t) {
    std::vector<ItemId> slate = policy(s, policy_rng);
    StepOutcome o = env.step(s, slate, user);
    out.trajectory.records.push_back(ClickRecord{t + 1, slate, o.chosen, o.reward});
    out.rewards.push_back(o.reward);
    out.clicks += o.clicked ? 1 : 0;
    s = std::move(o.next_state);
  }
  double sum = 0;
  for (double r : out.rewards) sum += r;
  out.cumulative_reward = sum / static_cast<double>(horizon);
  return out;
}

/// Uniformly random k-subset of the pool, in random order.
inline std::vector<ItemId> random_slate(const std::vector<ItemId>& pool, int k, Rng& rng) {
  check(static_cast<int>(pool.size()) >= k, "pool smaller than k");
  std::vector<ItemId> p = pool;
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), p.size() - 1);
    std::swap(p[static_cast<std::size_t>(i)], p[pick(rng)]);
  }
  p.resize(static_cast<std::size_t>(k));
  return p;
}

}  // namespace ganrec
