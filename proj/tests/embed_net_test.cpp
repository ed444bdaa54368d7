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

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "ganrec/adversarial_training.hpp"
#include "ganrec/embed_net.hpp"
#include "ganrec/gradcheck.hpp"

namespace ganrec {
namespace {

double act_scalar(double x, Activation a) {
  if (a == Activation::ReLU) return x > 0 ? x : 0.0;
  return x > 0 ? x : std::exp(x) - 1.0;
}

Matrix random_matrix(Index r, Index c, Rng& rng) {
  std::normal_distribution<double> g;
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Loop-based oracle for vec(act(F W + B)), column-major.
std::vector<double> embed_oracle(const Matrix& F, const Matrix& W, const Matrix& B, Activation a) {
  std::vector<double> out;
  for (Index c = 0; c < W.cols(); ++c) {
    for (Index r = 0; r < F.rows(); ++r) {
      double acc = B(r, c);
      for (Index t = 0; t < F.cols(); ++t) acc += F(r, t) * W(t, c);
      out.push_back(act_scalar(acc, a));
    }
  }
  return out;
}

double scorer_oracle(const Matrix& V, const Vector& b, const Vector& v, const std::vector<double>& x, Activation a) {
  double out = 0;
  for (Index h = 0; h < V.rows(); ++h) {
    double acc = b[h];
    for (Index i = 0; i < V.cols(); ++i) acc += V(h, i) * x[static_cast<std::size_t>(i)];
    out += v[h] * act_scalar(acc, a);
  }
  return out;
}

TEST(EmbedStateTest, ZeroParamsGiveZero) {
  PositionWeightParams p = make_position_weights(3, 2, 4, Activation::ReLU);
  HistoryBuffer h(3, 4);
  h.push(Vector::Ones(4));
  Vector s = embed_state(h, p);
  EXPECT_EQ(s.size(), 8);
  EXPECT_TRUE(s.isZero(0.0));
}

TEST(EmbedStateTest, EmptyHistoryGivesZeroWithZeroBias) {
  Rng rng(1);
  PositionWeightParams p = make_position_weights(3, 2, 4, Activation::ReLU);
  p.W = random_matrix(3, 2, rng);
  EXPECT_TRUE(embed_state(HistoryBuffer(3, 4), p).isZero(0.0));
}

TEST(EmbedStateTest, HandExample) {
  // F = I (d=2, m=2), W = [1, 1]^T, B = 0, ReLU: F W = [1, 1].
  PositionWeightParams p = make_position_weights(2, 1, 2, Activation::ReLU);
  p.W << 1.0, 1.0;
  HistoryBuffer h(2, 2);
  h.push((Vector(2) << 1.0, 0.0).finished());
  h.push((Vector(2) << 0.0, 1.0).finished());
  Vector s = embed_state(h, p);
  EXPECT_EQ(s, (Vector(2) << 1.0, 1.0).finished());
  auto oracle = embed_oracle(h.columns(), p.W, p.B, Activation::ReLU);
  for (Index i = 0; i < 2; ++i) EXPECT_EQ(s[i], oracle[static_cast<std::size_t>(i)]);
}

TEST(EmbedStateTest, PropertyMatchesLoopOracle) {
  Rng rng(2);
  std::uniform_int_distribution<int> u(1, 6);
  for (int trial = 0; trial < 100; ++trial) {
    const Index d = u(rng), m = u(rng), n = u(rng);
    const Activation a = trial % 2 ? Activation::ReLU : Activation::ELU;
    PositionWeightParams p = make_position_weights(m, n, d, a);
    p.W = random_matrix(m, n, rng);
    p.B = random_matrix(d, n, rng);
    HistoryBuffer h(m, d);
    for (int k = 0; k < u(rng); ++k) h.push(random_matrix(d, 1, rng).col(0));
    Vector s = embed_state(h, p);
    ASSERT_EQ(s.size(), d * n);
    auto oracle = embed_oracle(h.columns(), p.W, p.B, a);
    for (Index i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], oracle[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(EmbedStateTest, DimensionMismatch) {
  PositionWeightParams p = make_position_weights(3, 2, 4, Activation::ELU);
  EXPECT_THROW(embed_state(HistoryBuffer(2, 4), p), Error);
  EXPECT_THROW(embed_state(HistoryBuffer(3, 5), p), Error);
}

TEST(ScorerTest, ZeroOutputWeights) {
  Rng rng(3);
  ScorerParams p = make_scorer(5, 4, Activation::ELU);
  p.V = random_matrix(4, 5, rng);
  p.b = random_matrix(4, 1, rng).col(0);
  EXPECT_EQ(reward_score(p, Vector::Ones(3), Vector::Ones(2)), 0.0);
  EXPECT_EQ(behavior_logit(p, Vector::Ones(3), Vector::Ones(2)), 0.0);
}

TEST(ScorerTest, LinearRegimeSumsInputs) {
  ScorerParams p = make_scorer(5, 1, Activation::ReLU);
  p.V.setOnes();
  p.v.setOnes();
  Vector s(3), f(2);
  s << 0.5, 1.0, 2.0;
  f << 0.25, 3.0;
  EXPECT_NEAR(reward_score(p, s, f), 6.75, 1e-15);
  EXPECT_NEAR(behavior_logit(p, s, f), 6.75, 1e-15);
}

TEST(ScorerTest, PropertyMatchesLoopOracle) {
  Rng rng(4);
  std::uniform_int_distribution<int> u(1, 6);
  for (int trial = 0; trial < 100; ++trial) {
    const Index sn = u(rng), d = u(rng), hidden = u(rng);
    const Activation a = trial % 2 ? Activation::ReLU : Activation::ELU;
    ScorerParams p = make_scorer(sn + d, hidden, a);
    p.V = random_matrix(hidden, sn + d, rng);
    p.b = random_matrix(hidden, 1, rng).col(0);
    p.v = random_matrix(hidden, 1, rng).col(0);
    Vector s = random_matrix(sn, 1, rng).col(0), f = random_matrix(d, 1, rng).col(0);
    std::vector<double> x(s.data(), s.data() + sn);
    x.insert(x.end(), f.data(), f.data() + d);
    EXPECT_NEAR(reward_score(p, s, f), scorer_oracle(p.V, p.b, p.v, x, a), 1e-12);
    EXPECT_NEAR(behavior_logit(p, s, f), scorer_oracle(p.V, p.b, p.v, x, a), 1e-12);
  }
}

TEST(ScorerTest, DimensionMismatch) {
  ScorerParams p = make_scorer(5, 2, Activation::ELU);
  EXPECT_THROW(reward_score(p, Vector::Ones(3), Vector::Ones(3)), Error);
}

TEST(ScorerTest, SlotScoresMatchPerItemScores) {
  Rng rng(5);
  NetDims dims{3, 2, 2, 5, Activation::ELU};
  ScoringNet net = make_scoring_net(dims, rng);
  HistoryBuffer h(2, 3);
  h.push(random_matrix(3, 1, rng).col(0));
  Matrix items = random_matrix(3, 4, rng);
  Vector scores = slot_scores(net, h, items);
  Vector s = embed_state(h, net.embed);
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(scores[i], reward_score(net.head, s, items.col(i)), 1e-12);
}

TEST(CascadeQTest, InputDimensionsPerHead) {
  Rng rng(6);
  NetDims dims{3, 2, 2, 5, Activation::ELU};
  CascadeQParams q = make_cascade_q(dims, 3, rng);
  ASSERT_EQ(q.k(), 3);
  for (int j = 1; j <= 3; ++j) EXPECT_EQ(q.heads[static_cast<std::size_t>(j - 1)].L.cols(), 6 + 3 * j);
}

TEST(CascadeQTest, ZeroOutputWeights) {
  Rng rng(7);
  CascadeQParams q = make_cascade_q({3, 2, 2, 5, Activation::ELU}, 2, rng);
  q.heads[1].q.setZero();
  std::vector<Vector> fs{Vector::Ones(3), Vector::Ones(3)};
  EXPECT_EQ(qj_value(q, 2, Vector::Ones(6), fs), 0.0);
}

TEST(CascadeQTest, FirstHeadIsAScorer) {
  Rng rng(8);
  CascadeQParams q = make_cascade_q({3, 2, 2, 5, Activation::ELU}, 3, rng);
  Vector s = random_matrix(6, 1, rng).col(0), f = random_matrix(3, 1, rng).col(0);
  std::vector<double> x(s.data(), s.data() + 6);
  x.insert(x.end(), f.data(), f.data() + 3);
  std::vector<Vector> fs{f};
  EXPECT_NEAR(qj_value(q, 1, s, fs), scorer_oracle(q.heads[0].L, q.heads[0].c, q.heads[0].q, x, Activation::ELU),
              1e-12);
}

TEST(CascadeQTest, OrderMatters) {
  Rng rng(9);
  CascadeQParams q = make_cascade_q({3, 2, 2, 5, Activation::ELU}, 2, rng);
  Vector s = random_matrix(6, 1, rng).col(0);
  Vector a = random_matrix(3, 1, rng).col(0), b = random_matrix(3, 1, rng).col(0);
  std::vector<Vector> ab{a, b}, ba{b, a};
  EXPECT_NE(qj_value(q, 2, s, ab), qj_value(q, 2, s, ba));
}

TEST(CascadeQTest, WrongArity) {
  Rng rng(10);
  CascadeQParams q = make_cascade_q({3, 2, 2, 5, Activation::ELU}, 2, rng);
  std::vector<Vector> one{Vector::Ones(3)};
  EXPECT_THROW(qj_value(q, 2, Vector::Ones(6), one), Error);
  EXPECT_THROW(qj_value(q, 3, Vector::Ones(6), one), Error);
}

TEST(ForwardTest, BitReproducible) {
  Rng a(11), b(11);
  ScoringNet na = make_scoring_net({4, 3, 2, 6, Activation::ELU}, a);
  ScoringNet nb = make_scoring_net({4, 3, 2, 6, Activation::ELU}, b);
  EXPECT_EQ(flatten(na), flatten(nb));
  HistoryBuffer h(3, 4);
  h.push(Vector::LinSpaced(4, -1, 1));
  Matrix items = Matrix::Identity(4, 3);
  EXPECT_EQ(slot_scores(na, h, items), slot_scores(nb, h, items));
}

TEST(InitTest, UniformWithinGlorotBound) {
  Rng rng(12);
  ScoringNet net = make_scoring_net({4, 3, 2, 6, Activation::ELU}, rng);
  net.visit([](const std::string& name, const auto& t) {
    const double s = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
    EXPECT_LE(t.cwiseAbs().maxCoeff(), s) << name;
  });
}

TEST(SgdTest, ZeroLearningRateLeavesParams) {
  Rng rng(13);
  ScoringNet net = make_scoring_net({2, 2, 1, 3, Activation::ELU}, rng);
  ScoringNet g = net;
  EXPECT_EQ(flatten(sgd_step(net, g, 0.0)), flatten(net));
}

TEST(SgdTest, QuadraticStep) {
  // f(p) = p^2 at p = 1: gradient 2, lr 0.1 gives 0.8.
  ScorerParams p{Matrix::Constant(1, 1, 1.0), Vector::Zero(1), Vector::Zero(1), Activation::ELU};
  ScorerParams g = zeros_like(p);
  g.V(0, 0) = 2.0 * p.V(0, 0);
  EXPECT_NEAR(sgd_step(p, g, 0.1).V(0, 0), 0.8, 1e-15);
  EXPECT_NEAR(sgd_step(p, g, 0.1, Direction::Ascent).V(0, 0), 1.2, 1e-15);
}

TEST(SgdTest, ShapeMismatch) {
  ScorerParams p = make_scorer(3, 2, Activation::ELU);
  ScorerParams g = make_scorer(4, 2, Activation::ELU);
  EXPECT_THROW(sgd_step(p, g, 0.1), Error);
}

TEST(SgdTest, MomentumAccumulatesVelocity) {
  ScorerParams p{Matrix::Constant(1, 1, 1.0), Vector::Zero(1), Vector::Zero(1), Activation::ELU};
  ScorerParams g = zeros_like(p);
  g.V(0, 0) = 1.0;
  Sgd<ScorerParams> opt(0.1, 0.9);
  opt.step(p, g);
  EXPECT_NEAR(p.V(0, 0), 0.9, 1e-15);
  opt.step(p, g);
  EXPECT_NEAR(p.V(0, 0), 0.9 - 0.1 * 1.9, 1e-15);
}

TEST(GradientTest, ConstantLossGivesZeroBundle) {
  Rng rng(14);
  ScoringNet net = make_scoring_net({2, 2, 1, 3, Activation::ELU}, rng);
  // Every displayed slot identical to the non-click slot: the loss is log(k+1)
  // whatever the parameters.
  std::vector<ChoiceExample> batch{{HistoryBuffer(2, 2), Matrix::Zero(2, 3), 1, true}};
  auto lg = nll_gradient(net, batch, 1.0);
  EXPECT_NEAR(lg.loss, std::log(3.0), 1e-12);
  EXPECT_LT(squared_norm(lg.grad), 1e-24);
}

class FiniteDifferenceTest : public ::testing::TestWithParam<LossKind> {};

TEST_P(FiniteDifferenceTest, AnalyticMatchesCentralDifferences) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    GradCheckResult r = gradcheck_instance(GetParam(), derive_seed(1234, seed));
    EXPECT_GT(r.coordinates, 0u);
    worst = std::max(worst, r.max_rel_error);
  }
  EXPECT_LE(worst, 1e-4) << to_string(GetParam());
}

INSTANTIATE_TEST_SUITE_P(AllLosses, FiniteDifferenceTest,
                         ::testing::Values(LossKind::NLL, LossKind::MinimaxReward, LossKind::MinimaxBehavior,
                                           LossKind::SquaredTD, LossKind::AdditiveTD),
                         [](const auto& info) {
                           std::string s = to_string(info.param);
                           for (char& c : s)
                             if (c == '-') c = '_';
                           return s;
                         });

TEST(GradientTest, LossKindNames) {
  EXPECT_EQ(parse_loss_kind("nll"), LossKind::NLL);
  EXPECT_EQ(parse_loss_kind("td"), LossKind::SquaredTD);
  EXPECT_THROW(parse_loss_kind("hinge"), Error);
}

// Data from a known softmax user: the NLL gradient is smaller at the
// generating parameters than at perturbed ones.
TEST(GradientTest, NllStationarityTrend) {
  Rng rng(15);
  NetDims dims{3, 2, 1, 4, Activation::ELU};
  ScoringNet truth = make_scoring_net(dims, rng);
  std::vector<ChoiceExample> data;
  std::normal_distribution<double> g;
  for (int i = 0; i < 20000; ++i) {
    HistoryBuffer h(2, 3);
    for (int p = 0; p < i % 3; ++p) h.push(random_matrix(3, 1, rng).col(0));
    Matrix slots = Matrix::Zero(3, 4);
    slots.leftCols(3) = random_matrix(3, 3, rng);
    Vector probs = softmax(slot_scores(truth, h, slots));
    data.push_back({h, slots, sample_index(probs, rng), true});
  }
  const double at_truth = std::sqrt(squared_norm(nll_gradient(truth, data, 1.0).grad));
  for (double scale : {0.3, 0.6}) {
    ScoringNet off = truth;
    off.visit([&](const std::string&, auto& t) {
      for (Index i = 0; i < t.size(); ++i) t.data()[i] += scale * g(rng);
    });
    EXPECT_LT(at_truth, std::sqrt(squared_norm(nll_gradient(off, data, 1.0).grad)));
  }
}

}  // namespace
}  // namespace ganrec
