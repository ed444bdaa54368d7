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

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ganrec/common.hpp"
#include "ganrec/core_data.hpp"

namespace ganrec {

enum class Activation { ReLU, ELU };

inline std::string to_string(Activation a) { return a == Activation::ReLU ? "relu" : "elu"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "elu") return Activation::ELU;
  throw Error("unknown activation '" + s + "'");
}

template <class Derived>
typename Derived::PlainObject activate(const Eigen::MatrixBase<Derived>& z, Activation a) {
  if (a == Activation::ReLU) return z.array().max(0.0).matrix();
  return z.unaryExpr([](double x) { return x > 0 ? x : std::expm1(x); });
}

template <class Derived>
typename Derived::PlainObject activate_deriv(const Eigen::MatrixBase<Derived>& z, Activation a) {
  if (a == Activation::ReLU) return z.unaryExpr([](double x) { return x > 0 ? 1.0 : 0.0; });
  return z.unaryExpr([](double x) { return x > 0 ? 1.0 : std::exp(x); });
}

// ---------------------------------------------------------------------------
// Parameter containers. Each exposes visit(f) calling f(name, tensor) on every
// tensor, which the generic helpers below build on.

/// Position-weight history embedding: s = vec(act(F W + B)).
struct PositionWeightParams {
  Matrix W;  // m x n
  Matrix B;  // d x n
  Activation activation = Activation::ELU;

  Index window() const { return W.rows(); }
  Index columns() const { return W.cols(); }
  Index dim() const { return B.rows(); }
  Index output_size() const { return B.rows() * W.cols(); }

  template <class F> void visit(F&& f) { f(std::string("W"), W); f(std::string("B"), B); }
  template <class F> void visit(F&& f) const { f(std::string("W"), W); f(std::string("B"), B); }
};

/// One-hidden-layer regressor: v' act(V x + b).
struct ScorerParams {
  Matrix V;  // hidden x input
  Vector b;
  Vector v;
  Activation activation = Activation::ELU;

  Index hidden() const { return V.rows(); }
  Index input_size() const { return V.cols(); }

  template <class F> void visit(F&& f) {
    f(std::string("V"), V); f(std::string("b"), b); f(std::string("v"), v);
  }
  template <class F> void visit(F&& f) const {
    f(std::string("V"), V); f(std::string("b"), b); f(std::string("v"), v);
  }
};

template <class P, class F>
void visit_prefixed(P& p, const std::string& prefix, F& f) {
  p.visit([&](const std::string& name, auto& t) { f(prefix + name, t); });
}

/// A history embedding feeding a scorer over [state; item features]. Used for
/// both the reward r_theta and the behavior logit of phi_alpha.
struct ScoringNet {
  PositionWeightParams embed;
  ScorerParams head;

  template <class F> void visit(F&& f) { visit_prefixed(embed, "embed.", f); visit_prefixed(head, "head.", f); }
  template <class F> void visit(F&& f) const { visit_prefixed(embed, "embed.", f); visit_prefixed(head, "head.", f); }
};

/// Parameters of Q^j: q_j' act(L_j [s; f_1; ...; f_j] + c_j).
struct QHead {
  Matrix L;
  Vector c;
  Vector q;

  template <class F> void visit(F&& f) {
    f(std::string("L"), L); f(std::string("c"), c); f(std::string("q"), q);
  }
  template <class F> void visit(F&& f) const {
    f(std::string("L"), L); f(std::string("c"), c); f(std::string("q"), q);
  }
};

/// k cascade heads sharing one state embedding.
struct CascadeQParams {
  PositionWeightParams embed;
  std::vector<QHead> heads;
  Activation activation = Activation::ELU;

  int k() const { return static_cast<int>(heads.size()); }

  template <class F> void visit(F&& f) {
    visit_prefixed(embed, "embed.", f);
    for (std::size_t j = 0; j < heads.size(); ++j) visit_prefixed(heads[j], "q" + std::to_string(j + 1) + ".", f);
  }
  template <class F> void visit(F&& f) const {
    visit_prefixed(embed, "embed.", f);
    for (std::size_t j = 0; j < heads.size(); ++j) visit_prefixed(heads[j], "q" + std::to_string(j + 1) + ".", f);
  }
};

template <class P>
concept Parameterized = requires(P& p) {
  p.visit([](const std::string&, auto&) {});
};

/// Gradients share their parameter type; every tensor is congruent.
template <Parameterized P>
using GradientBundle = P;

// ---------------------------------------------------------------------------
// Generic tensor helpers.

struct TensorSlot {
  std::string name;
  double* data;
  Index rows, cols;
  Index size() const { return rows * cols; }
};

template <Parameterized P>
std::vector<TensorSlot> tensor_slots(P& p) {
  std::vector<TensorSlot> out;
  p.visit([&](const std::string& name, auto& t) { out.push_back({name, t.data(), t.rows(), t.cols()}); });
  return out;
}

template <Parameterized P>
P zeros_like(P p) {
  p.visit([](const std::string&, auto& t) { t.setZero(); });
  return p;
}

template <Parameterized P>
std::size_t parameter_count(const P& p) {
  std::size_t n = 0;
  p.visit([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

template <Parameterized P>
std::vector<double> flatten(const P& p) {
  std::vector<double> out;
  p.visit([&](const std::string&, const auto& t) {
    // Row-major, matching the checkpoint layout.
    for (Index r = 0; r < t.rows(); ++r)
      for (Index c = 0; c < t.cols(); ++c) out.push_back(t(r, c));
  });
  return out;
}

template <Parameterized P>
bool all_finite(const P& p) {
  bool ok = true;
  p.visit([&](const std::string&, const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

template <Parameterized P>
void check_congruent(P& a, P& b) {
  auto sa = tensor_slots(a);
  auto sb = tensor_slots(b);
  check(sa.size() == sb.size(), "gradient bundle: tensor count mismatch");
  for (std::size_t i = 0; i < sa.size(); ++i) {
    check(sa[i].name == sb[i].name && sa[i].rows == sb[i].rows && sa[i].cols == sb[i].cols,
          "gradient bundle: shape mismatch at " + sa[i].name);
  }
}

// acc += scale * g
template <Parameterized P>
void add_scaled(P& acc, const P& g, double scale) {
  P& gm = const_cast<P&>(g);
  check_congruent(acc, gm);
  auto sa = tensor_slots(acc);
  auto sg = tensor_slots(gm);
  for (std::size_t i = 0; i < sa.size(); ++i)
    for (Index e = 0; e < sa[i].size(); ++e) sa[i].data[e] += scale * sg[i].data[e];
}

template <Parameterized P>
void scale_inplace(P& p, double s) {
  p.visit([&](const std::string&, auto& t) { t *= s; });
}

template <Parameterized P>
double squared_norm(const P& p) {
  double n = 0;
  p.visit([&](const std::string&, const auto& t) { n += t.squaredNorm(); });
  return n;
}

enum class Direction { Descent, Ascent };

/// p <- p - lr * g (descent) or p + lr * g (ascent).
template <Parameterized P>
P sgd_step(P params, const P& grad, double learning_rate, Direction dir = Direction::Descent) {
  add_scaled(params, grad, dir == Direction::Descent ? -learning_rate : learning_rate);
  return params;
}

/// SGD with optional heavy-ball momentum.
template <Parameterized P>
class Sgd {
 public:
  Sgd(double learning_rate, double momentum = 0.0) : lr_(learning_rate), momentum_(momentum) {}

  void step(P& params, const P& grad, Direction dir = Direction::Descent) {
    if (momentum_ == 0.0) {
      add_scaled(params, grad, dir == Direction::Descent ? -lr_ : lr_);
      return;
    }
    if (!velocity_) velocity_ = zeros_like(params);
    scale_inplace(*velocity_, momentum_);
    add_scaled(*velocity_, grad, 1.0);
    add_scaled(params, *velocity_, dir == Direction::Descent ? -lr_ : lr_);
  }

  double learning_rate() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  std::optional<P> velocity_;
};

// ---------------------------------------------------------------------------
// Initialization: uniform(-s, s), s = sqrt(6 / (rows + cols)) per tensor.

template <Parameterized P>
void glorot_init(P& p, Rng& rng) {
  p.visit([&](const std::string&, auto& t) {
    const double s = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
    std::uniform_real_distribution<double> u(-s, s);
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  });
}

inline PositionWeightParams make_position_weights(Index m, Index n, Index d, Activation act) {
  check(m >= 1 && n >= 1 && d >= 1, "position weights need m, n, d >= 1");
  return {Matrix::Zero(m, n), Matrix::Zero(d, n), act};
}

inline ScorerParams make_scorer(Index input, Index hidden, Activation act) {
  check(input >= 1 && hidden >= 1, "scorer needs input, hidden >= 1");
  return {Matrix::Zero(hidden, input), Vector::Zero(hidden), Vector::Zero(hidden), act};
}

struct NetDims {
  Index d = 4;       // item feature dim
  Index m = 3;       // history window
  Index n = 2;       // position-weight columns
  Index hidden = 8;  // scorer width
  Activation activation = Activation::ELU;
};

inline ScoringNet make_scoring_net(const NetDims& dims, Rng& rng) {
  ScoringNet net{make_position_weights(dims.m, dims.n, dims.d, dims.activation),
                 make_scorer(dims.d * dims.n + dims.d, dims.hidden, dims.activation)};
  glorot_init(net, rng);
  return net;
}

inline CascadeQParams make_cascade_q(const NetDims& dims, int k, Rng& rng) {
  check(k >= 1, "cascade needs k >= 1");
  CascadeQParams p;
  p.activation = dims.activation;
  p.embed = make_position_weights(dims.m, dims.n, dims.d, dims.activation);
  const Index dn = dims.d * dims.n;
  for (int j = 1; j <= k; ++j) {
    p.heads.push_back({Matrix::Zero(dims.hidden, dn + dims.d * j), Vector::Zero(dims.hidden),
                       Vector::Zero(dims.hidden)});
  }
  glorot_init(p, rng);
  return p;
}

// ---------------------------------------------------------------------------
// State embedding.

inline void check_embed_dims(const HistoryBuffer& buffer, const PositionWeightParams& p) {
  if (buffer.window() != p.window() || buffer.dim() != p.dim() || p.B.cols() != p.columns()) {
    throw Error("embed_state dimension mismatch: buffer (m=" + std::to_string(buffer.window()) +
                ", d=" + std::to_string(buffer.dim()) + ") vs params (m=" +
                std::to_string(p.window()) + ", d=" + std::to_string(p.dim()) + ")");
  }
}

/// vec(act(F W + B)), columns concatenated. Optionally keeps the
/// pre-activation for the backward pass.
inline Vector embed_state(const HistoryBuffer& buffer, const PositionWeightParams& p,
                          Matrix* pre_out = nullptr) {
  check_embed_dims(buffer, p);
  Matrix pre = buffer.columns() * p.W + p.B;
  Matrix act = activate(pre, p.activation);
  if (pre_out) *pre_out = std::move(pre);
  return Eigen::Map<const Vector>(act.data(), act.size());
}

inline void embed_backward(const HistoryBuffer& buffer, const PositionWeightParams& p,
                           const Matrix& pre, const Vector& d_state, PositionWeightParams& grad) {
  Eigen::Map<const Matrix> ds(d_state.data(), pre.rows(), pre.cols());
  Matrix g = ds.cwiseProduct(activate_deriv(pre, p.activation));
  grad.W.noalias() += buffer.columns().transpose() * g;
  grad.B += g;
}

// ---------------------------------------------------------------------------
// Single-input scorer forward/backward, x = [state; features...].

inline double scorer_forward(const ScorerParams& p, const Vector& x, Vector* pre_out = nullptr) {
  if (x.size() != p.input_size()) {
    throw Error("scorer input dimension mismatch: expected " + std::to_string(p.input_size()) +
                ", got " + std::to_string(x.size()));
  }
  Vector pre = p.V * x + p.b;
  double out = p.v.dot(activate(pre, p.activation));
  if (pre_out) *pre_out = std::move(pre);
  return out;
}

// Accumulates upstream * d(out)/d(params) into grad and returns d(out)/dx * upstream.
inline Vector scorer_backward(const ScorerParams& p, const Vector& x, const Vector& pre, double upstream,
                              ScorerParams& grad) {
  Vector h = activate(pre, p.activation);
  Vector delta = upstream * p.v.cwiseProduct(activate_deriv(pre, p.activation));
  grad.v += upstream * h;
  grad.b += delta;
  grad.V.noalias() += delta * x.transpose();
  return p.V.transpose() * delta;
}

inline Vector concat(const Vector& a, const Vector& b) {
  Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

/// v' act(V [state; features] + b).
inline double reward_score(const ScorerParams& theta, const Vector& state, const Vector& item_features) {
  check(theta.input_size() == state.size() + item_features.size(),
        "reward_score dimension mismatch");
  return scorer_forward(theta, concat(state, item_features));
}

/// Unnormalized log-probability of the behavior model; same form as the
/// reward with its own parameters.
inline double behavior_logit(const ScorerParams& alpha, const Vector& state, const Vector& item_features) {
  return reward_score(alpha, state, item_features);
}

// ---------------------------------------------------------------------------
// Batched slot scoring for a scoring net: one state, several items.

struct SlotForward {
  Vector state;
  Matrix embed_pre;  // d x n
  Matrix items;      // d x slots
  Matrix pre;        // hidden x slots
  Vector scores;
};

/// Scores each column of `items` under the net's embedding of `history`.
inline SlotForward score_slots(const ScoringNet& net, const HistoryBuffer& history, const Matrix& items) {
  SlotForward fw;
  fw.state = embed_state(history, net.embed, &fw.embed_pre);
  const Index dn = fw.state.size();
  const ScorerParams& h = net.head;
  check(h.input_size() == dn + items.rows(), "score_slots dimension mismatch");
  fw.items = items;
  Vector base = h.V.leftCols(dn) * fw.state + h.b;
  fw.pre = h.V.rightCols(items.rows()) * items;
  fw.pre.colwise() += base;
  fw.scores = activate(fw.pre, h.activation).transpose() * h.v;
  return fw;
}

inline Vector slot_scores(const ScoringNet& net, const HistoryBuffer& history, const Matrix& items) {
  return score_slots(net, history, items).scores;
}

/// grad += sum_i upstream_i * d(score_i)/d(params), through the embedding.
inline void score_slots_backward(const ScoringNet& net, const HistoryBuffer& history, const SlotForward& fw,
                                 const Vector& upstream, ScoringNet& grad) {
  const ScorerParams& h = net.head;
  const Index dn = fw.state.size();
  Matrix act = activate(fw.pre, h.activation);
  Matrix delta = activate_deriv(fw.pre, h.activation);
  delta.array().colwise() *= h.v.array();
  delta.array().rowwise() *= upstream.transpose().array();
  Vector delta_sum = delta.rowwise().sum();
  grad.head.v.noalias() += act * upstream;
  grad.head.b += delta_sum;
  grad.head.V.leftCols(dn).noalias() += delta_sum * fw.state.transpose();
  grad.head.V.rightCols(fw.items.rows()).noalias() += delta * fw.items.transpose();
  Vector d_state = h.V.leftCols(dn).transpose() * delta_sum;
  embed_backward(history, net.embed, fw.embed_pre, d_state, grad.embed);
}

// ---------------------------------------------------------------------------
// Cascade Q heads.

inline Vector cascade_input(const Vector& state, std::span<const Vector> chosen) {
  Index size = state.size();
  for (const auto& f : chosen) size += f.size();
  Vector x(size);
  x.head(state.size()) = state;
  Index off = state.size();
  for (const auto& f : chosen) {
    x.segment(off, f.size()) = f;
    off += f.size();
  }
  return x;
}

inline double head_forward(const QHead& h, Activation act, const Vector& x, Vector* pre_out = nullptr) {
  if (x.size() != h.L.cols()) {
    throw Error("Q head input dimension mismatch: expected " + std::to_string(h.L.cols()) + ", got " +
                std::to_string(x.size()));
  }
  Vector pre = h.L * x + h.c;
  double out = h.q.dot(activate(pre, act));
  if (pre_out) *pre_out = std::move(pre);
  return out;
}

inline Vector head_backward(const QHead& h, Activation act, const Vector& x, const Vector& pre,
                            double upstream, QHead& grad) {
  Vector hid = activate(pre, act);
  Vector delta = upstream * h.q.cwiseProduct(activate_deriv(pre, act));
  grad.q += upstream * hid;
  grad.c += delta;
  grad.L.noalias() += delta * x.transpose();
  return h.L.transpose() * delta;
}

/// Q^j(s, f_1..f_j); j is 1-based and exactly j feature vectors are required.
inline double qj_value(const CascadeQParams& params, int j, const Vector& state,
                       std::span<const Vector> chosen_features) {
  check(j >= 1 && j <= params.k(), "qj_value: j out of range");
  if (static_cast<int>(chosen_features.size()) != j) {
    throw Error("qj_value: wrong arity, expected " + std::to_string(j) + " feature vectors, got " +
                std::to_string(chosen_features.size()));
  }
  return head_forward(params.heads[static_cast<std::size_t>(j - 1)], params.activation,
                      cascade_input(state, chosen_features));
}

}  // namespace ganrec
