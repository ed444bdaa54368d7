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

#include <functional>
#include <string>
#include <vector>

#include "ganrec/adversarial_training.hpp"
#include "ganrec/cdqn.hpp"
#include "ganrec/embed_net.hpp"

namespace ganrec {

enum class LossKind { NLL, MinimaxReward, MinimaxBehavior, SquaredTD, AdditiveTD };

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "nll") return LossKind::NLL;
  if (s == "minimax-reward") return LossKind::MinimaxReward;
  if (s == "minimax-behavior") return LossKind::MinimaxBehavior;
  if (s == "td") return LossKind::SquaredTD;
  if (s == "td-additive") return LossKind::AdditiveTD;
  throw Error("unsupported loss kind '" + s + "'");
}

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::NLL: return "nll";
    case LossKind::MinimaxReward: return "minimax-reward";
    case LossKind::MinimaxBehavior: return "minimax-behavior";
    case LossKind::SquaredTD: return "td";
    case LossKind::AdditiveTD: return "td-additive";
  }
  return "?";
}

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst;
  std::size_t coordinates = 0;
};

/// Central differences on every coordinate; error is
/// |analytic - numeric| / max(floor, |analytic|, |numeric|).
template <Parameterized P>
GradCheckResult finite_difference_check(P params, P analytic, const std::function<double(const P&)>& loss,
                                        double h = 1e-5, double floor = 1e-6) {
  GradCheckResult res;
  auto ps = tensor_slots(params);
  auto gs = tensor_slots(analytic);
  check(ps.size() == gs.size(), "gradcheck: bundle mismatch");
  for (std::size_t t = 0; t < ps.size(); ++t) {
    for (Index e = 0; e < ps[t].size(); ++e) {
      double& x = ps[t].data[e];
      const double orig = x;
      x = orig + h;
      const double up = loss(params);
      x = orig - h;
      const double down = loss(params);
      x = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = gs[t].data[e];
      const double err = std::abs(a - numeric) / std::max({floor, std::abs(a), std::abs(numeric)});
      ++res.coordinates;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = ps[t].name + "[" + std::to_string(e) + "]";
      }
    }
  }
  return res;
}

namespace detail {

inline Vector random_vector(Index n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

inline NetDims random_dims(Rng& rng, int max_dim = 6) {
  std::uniform_int_distribution<int> u(1, max_dim);
  NetDims dims;
  dims.d = u(rng);
  dims.m = u(rng);
  dims.n = u(rng);
  dims.hidden = u(rng);
  dims.activation = Activation::ELU;
  return dims;
}

// Random teacher-forced examples with partially filled histories.
inline std::vector<ChoiceExample> random_examples(const NetDims& dims, int count, Rng& rng) {
  std::uniform_int_distribution<int> slots_u(1, 5);
  std::vector<ChoiceExample> out;
  for (int i = 0; i < count; ++i) {
    HistoryBuffer h(dims.m, dims.d);
    std::uniform_int_distribution<Index> pushes(0, dims.m + 1);
    for (Index p = pushes(rng); p > 0; --p) h.push(random_vector(dims.d, rng));
    const int k = slots_u(rng);
    Matrix slots = Matrix::Zero(dims.d, k + 1);
    for (int c = 0; c < k; ++c) slots.col(c) = random_vector(dims.d, rng);
    std::uniform_int_distribution<Index> pick(0, k);
    out.push_back({h, slots, pick(rng), true});
  }
  return out;
}

}  // namespace detail

/// Random instance of the given loss; returns the analytic-vs-numeric error.
inline GradCheckResult gradcheck_instance(LossKind kind, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x6c));
  NetDims dims = detail::random_dims(rng);
  std::uniform_real_distribution<double> eta_u(0.5, 2.0);
  ChoiceConfig choice{eta_u(rng), Regularizer::ShannonEntropy};

  switch (kind) {
    case LossKind::NLL: {
      ScoringNet theta = make_scoring_net(dims, rng);
      auto ex = detail::random_examples(dims, 4, rng);
      auto lg = nll_gradient(theta, ex, choice.eta);
      return finite_difference_check<ScoringNet>(theta, lg.grad,
                                                 [&](const ScoringNet& p) { return nll_loss(p, ex, choice.eta); });
    }
    case LossKind::MinimaxReward: {
      ScoringNet theta = make_scoring_net(dims, rng);
      ScoringNet alpha = make_scoring_net(dims, rng);
      auto ex = detail::random_examples(dims, 4, rng);
      std::vector<Vector> phis;
      for (const auto& e : ex) phis.push_back(behavior_probs(alpha, e));
      auto lg = minimax_reward_gradient(theta, ex, phis);
      return finite_difference_check<ScoringNet>(
          theta, lg.grad, [&](const ScoringNet& p) { return minimax_objective_given(p, ex, phis, choice); });
    }
    case LossKind::MinimaxBehavior: {
      ScoringNet theta = make_scoring_net(dims, rng);
      ScoringNet alpha = make_scoring_net(dims, rng);
      choice.regularizer = (seed % 2 == 0) ? Regularizer::ShannonEntropy : Regularizer::L2;
      auto ex = detail::random_examples(dims, 4, rng);
      auto lg = minimax_behavior_gradient(alpha, theta, ex, choice);
      return finite_difference_check<ScoringNet>(
          alpha, lg.grad, [&](const ScoringNet& p) { return minimax_objective(theta, p, ex, choice); });
    }
    case LossKind::SquaredTD:
    case LossKind::AdditiveTD: {
      const QForm form = kind == LossKind::AdditiveTD ? QForm::Additive : QForm::Cascade;
      std::uniform_int_distribution<int> ku(1, 3);
      const int k = ku(rng);
      ItemCatalog catalog(dims.d);
      for (int id = 1; id <= 8; ++id) catalog.add(id, detail::random_vector(dims.d, rng));
      CascadeQParams q = make_cascade_q(dims, form == QForm::Additive ? 1 : k, rng);
      std::vector<Transition> trs;
      std::vector<double> ys;
      for (int b = 0; b < 3; ++b) {
        Transition tr;
        tr.state = HistoryBuffer(dims.m, dims.d);
        std::uniform_int_distribution<Index> pushes(0, dims.m);
        for (Index p = pushes(rng); p > 0; --p) tr.state.push(detail::random_vector(dims.d, rng));
        std::vector<ItemId> pool = catalog.item_ids();
        tr.slate = random_slate(pool, k, rng);
        trs.push_back(tr);
        ys.push_back(detail::random_vector(1, rng)[0]);
      }
      std::vector<const Transition*> batch;
      for (const auto& t : trs) batch.push_back(&t);
      auto lg = td_gradient(q, batch, ys, catalog, form);
      // Forward-only loss built from qj_value.
      auto loss = [&](const CascadeQParams& p) {
        double total = 0;
        for (std::size_t b = 0; b < trs.size(); ++b) {
          Vector s = embed_state(trs[b].state, p.embed);
          std::vector<Vector> f;
          for (ItemId id : trs[b].slate) f.push_back(catalog.features(id));
          if (form == QForm::Cascade) {
            for (int j = 1; j <= p.k(); ++j) {
              double e = ys[b] - qj_value(p, j, s, std::span<const Vector>(f.data(), static_cast<std::size_t>(j)));
              total += e * e;
            }
          } else {
            double sum = 0;
            for (const auto& fv : f) sum += qj_value(p, 1, s, std::span<const Vector>(&fv, 1));
            total += (ys[b] - sum) * (ys[b] - sum);
          }
        }
        return total / static_cast<double>(trs.size());
      };
      return finite_difference_check<CascadeQParams>(q, lg.grad, loss);
    }
  }
  throw Error("unsupported loss kind");
}

struct GradCheckSummary {
  double max_rel_error = 0;
  std::vector<std::pair<LossKind, double>> per_kind;
};

inline GradCheckSummary run_gradcheck(std::uint64_t seed, int trials) {
  GradCheckSummary s;
  for (LossKind kind : {LossKind::NLL, LossKind::MinimaxReward, LossKind::MinimaxBehavior, LossKind::SquaredTD,
                        LossKind::AdditiveTD}) {
    double worst = 0;
    for (int t = 0; t < trials; ++t)
      worst = std::max(worst, gradcheck_instance(kind, derive_seed(seed, static_cast<std::uint64_t>(kind),
                                                                   static_cast<std::uint64_t>(t))).max_rel_error);
    s.per_kind.emplace_back(kind, worst);
    s.max_rel_error = std::max(s.max_rel_error, worst);
  }
  return s;
}

}  // namespace ganrec
