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
#include <sstream>

#include <gtest/gtest.h>

#include "ganrec/experiment.hpp"
#include "test_util.hpp"

namespace ganrec {
namespace {

using testing::slurp;
using testing::spit;
using testing::TempDir;

TEST(MetricTest, AvgCumulativeRewardByHand) {
  EXPECT_DOUBLE_EQ(metric_avg_cum_reward({{1.0, 2.0, 3.0}}), 2.0);
  EXPECT_EQ(metric_avg_cum_reward({{0.0, 0.0}, {0.0}}), 0.0);
  // Time-average first: (2 + 10) / 2.
  EXPECT_DOUBLE_EQ(metric_avg_cum_reward({{1.0, 3.0}, {10.0}}), 6.0);
  EXPECT_EQ(metric_avg_cum_reward({{1.0, 3.0}, {10.0}}), metric_avg_cum_reward({{10.0}, {1.0, 3.0}}));
  EXPECT_THROW(metric_avg_cum_reward({}), Error);
  EXPECT_THROW(metric_avg_cum_reward({{}}), Error);
}

TEST(MetricTest, CtrByHand) {
  EXPECT_EQ(metric_ctr({{4, 4}, {3, 3}}), 1.0);
  EXPECT_EQ(metric_ctr({{0, 4}}), 0.0);
  EXPECT_DOUBLE_EQ(metric_ctr({{2, 4}, {4, 4}}), 0.75);
  EXPECT_THROW(metric_ctr({}), Error);
  EXPECT_THROW(metric_ctr({{0, 0}}), Error);
  EXPECT_THROW(metric_ctr({{5, 4}}), Error);
}

TEST(MetricTest, Pearson) {
  std::vector<double> x{1, 2, 3, 4}, y{2, 4, 6, 8}, z{4, 3, 2, 1}, c{1, 1, 1, 1};
  EXPECT_NEAR(pearson(x, y), 1.0, 1e-15);
  EXPECT_NEAR(pearson(x, z), -1.0, 1e-15);
  EXPECT_TRUE(std::isnan(pearson(x, c)));
  EXPECT_THROW(pearson(std::vector<double>{1}, std::vector<double>{1}), Error);
}

TEST(MetricTest, MeanStd) {
  std::vector<double> xs{1, 2, 3, 4};
  MeanStd m = mean_std(xs);
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.std, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_NEAR(m.sem, std::sqrt(5.0 / 3.0) / 2.0, 1e-15);
  EXPECT_EQ(mean_std(std::vector<double>{7}).std, 0.0);
}

TEST(AggregateTest, PerRepMeansThenSpread) {
  std::vector<UserMetricRow> rows{{1, 0, 1.0, 0.5}, {2, 0, 3.0, 1.0}, {1, 1, 2.0, 0.0}, {2, 1, 2.0, 0.5}};
  MetricReport m = aggregate_rows("p", rows, 10);
  EXPECT_EQ(m.n_users, 2);
  EXPECT_EQ(m.reps, 2);
  EXPECT_EQ(m.T, 10);
  EXPECT_DOUBLE_EQ(m.avg_cumulative_reward, 2.0);
  EXPECT_DOUBLE_EQ(m.ctr, 0.5);
  EXPECT_EQ(m.reward_std, 0.0);
  EXPECT_NEAR(m.ctr_std, std::sqrt(0.125), 1e-15);
}

TEST(ConfigTest, ParseNormalizeAndComments) {
  std::istringstream in("# comment\nseed = 5\npool_size=7  # trailing\n\n  eta = 0.5\n");
  Config c = Config::parse(in);
  EXPECT_EQ(c.integer("seed", 0), 5);
  EXPECT_EQ(c.integer("pool-size", 0), 7);
  EXPECT_EQ(c.integer("pool_size", 0), 7);
  EXPECT_EQ(c.real("eta", 1.0), 0.5);
  EXPECT_EQ(c.real("missing", 2.5), 2.5);
  EXPECT_EQ(c.str("missing", "x"), "x");
}

TEST(ConfigTest, Errors) {
  std::istringstream bad("seed = 1\nnot a pair\n");
  try {
    Config::parse(bad, "s.cfg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("s.cfg: line 2"), std::string::npos);
  }
  Config c;
  c.set("seed", "abc");
  EXPECT_THROW(c.integer("seed", 0), Error);
  c.set("eta", "1.5x");
  EXPECT_THROW(c.real("eta", 0), Error);
  EXPECT_THROW(Config::load("/nonexistent.cfg"), Error);
}

TEST(ConfigTest, MergeOverridesAndPathsResolveAgainstFile) {
  TempDir dir;
  std::filesystem::create_directories(dir / "sub");
  spit(dir / "sub/a.cfg", "data = d.txt\nout = /abs/out\nseed = 1\npolicy.x = x.ckpt\n");
  Config c = Config::load(dir / "sub/a.cfg");
  EXPECT_EQ(c.str("data"), (dir / "sub/d.txt").string());
  EXPECT_EQ(c.str("out"), "/abs/out");
  EXPECT_EQ(c.str("policy.x"), (dir / "sub/x.ckpt").string());
  Config cli;
  cli.set("seed", "9");
  c.merge(cli);
  EXPECT_EQ(c.integer("seed", 0), 9);
  EXPECT_EQ(split_list(" a, b ,,c"), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(UserMetricsFileTest, RoundTrip) {
  TempDir dir;
  std::vector<UserMetricRow> rows{{1, 0, 0.123456789, 0.5}, {2, 3, -4.0, 1.0}};
  write_user_metrics(dir / "m.csv", rows);
  EXPECT_EQ(slurp(dir / "m.csv"), "user_id,rep,cum_reward,ctr\n1,0,0.123456789,0.5\n2,3,-4,1\n");
  auto back = read_user_metrics(dir / "m.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].cum_reward, 0.123456789);
  EXPECT_EQ(back[1].rep, 3);
  spit(dir / "bad.csv", "a,b\n");
  EXPECT_THROW(read_user_metrics(dir / "bad.csv"), Error);
}

Config small_config(const std::filesystem::path& out) {
  Config c;
  c.set("seed", "3");
  c.set("items", "12");
  c.set("dim", "3");
  c.set("window", "2");
  c.set("positions", "1");
  c.set("hidden", "6");
  c.set("k", "2");
  c.set("pool-size", "6");
  c.set("horizon", "4");
  c.set("reps", "3");
  c.set("users", "5");
  c.set("out", out.string());
  return c;
}

TEST(RunExperimentTest, RandomOnlyIsByteReproducible) {
  TempDir a, b;
  Config ca = small_config(a.path()), cb = small_config(b.path());
  ca.set("roster", "random");
  cb.set("roster", "random");
  run_experiment(experiment_spec_from(ca));
  run_experiment(experiment_spec_from(cb));
  EXPECT_TRUE(std::filesystem::exists(a / "random_metrics.csv"));
  EXPECT_EQ(slurp(a / "random_metrics.csv"), slurp(b / "random_metrics.csv"));
  EXPECT_EQ(slurp(a / "aggregate.csv"), slurp(b / "aggregate.csv"));
}

TEST(RunExperimentTest, AggregateReproducibleFromPerUserFile) {
  TempDir dir;
  Config c = small_config(dir.path());
  ExperimentResult res = run_experiment(experiment_spec_from(c));
  ASSERT_EQ(res.reports.size(), 2u);
  for (const auto& report : res.reports) {
    auto rows = read_user_metrics(dir / (report.policy + "_metrics.csv"));
    ASSERT_EQ(rows.size(), 15u);
    // Independent recomputation: per-rep means, then their mean.
    std::map<int, std::pair<double, int>> per_rep;
    for (const auto& r : rows) {
      per_rep[r.rep].first += r.cum_reward;
      per_rep[r.rep].second += 1;
    }
    double mean = 0;
    for (const auto& [rep, v] : per_rep) mean += v.first / v.second / static_cast<double>(per_rep.size());
    EXPECT_NEAR(mean, report.avg_cumulative_reward, 1e-8);
    EXPECT_GE(report.ctr, 0.0);
    EXPECT_LE(report.ctr, 1.0);
  }
  std::istringstream agg(slurp(dir / "aggregate.csv"));
  std::string header;
  std::getline(agg, header);
  EXPECT_EQ(header, "policy,n_users,T,reps,avg_cum_reward,reward_std,reward_stderr,ctr,ctr_std,ctr_stderr");
}

TEST(RunExperimentTest, GroundTruthGreedyBeatsRandom) {
  TempDir dir;
  Config c = small_config(dir.path());
  c.set("items", "30");
  c.set("k", "3");
  c.set("pool-size", "20");
  c.set("horizon", "10");
  c.set("reps", "10");
  c.set("users", "20");
  ExperimentResult res = run_experiment(experiment_spec_from(c));
  EXPECT_EQ(res.reports[0].policy, "random");
  EXPECT_EQ(res.reports[1].policy, "greedy");
  EXPECT_GT(res.reports[1].avg_cumulative_reward, res.reports[0].avg_cumulative_reward);
}

TEST(RunExperimentTest, StderrShrinksWithReps) {
  // A single ratio of two standard-deviation estimates is noisy, so average
  // its log over several worlds. Expected ratio 2.
  double log_ratio = 0;
  const int worlds = 8;
  for (int seed = 1; seed <= worlds; ++seed) {
    TempDir a, b;
    Config c10 = small_config(a.path()), c40 = small_config(b.path());
    for (Config* c : {&c10, &c40}) {
      c->set("roster", "random");
      c->set("seed", std::to_string(seed));
    }
    c10.set("reps", "10");
    c40.set("reps", "40");
    double s10 = run_experiment(experiment_spec_from(c10)).reports[0].reward_stderr;
    double s40 = run_experiment(experiment_spec_from(c40)).reports[0].reward_stderr;
    log_ratio += std::log(s10 / s40) / worlds;
  }
  EXPECT_GT(std::exp(log_ratio), 1.5);
  EXPECT_LT(std::exp(log_ratio), 2.6);
}

TEST(ExperimentSpecTest, RosterResolution) {
  Config c = small_config("o");
  EXPECT_EQ(experiment_spec_from(c).roster.size(), 2u);
  c.set("policy", "p.ckpt");
  auto s = experiment_spec_from(c);
  ASSERT_EQ(s.roster.size(), 3u);
  EXPECT_EQ(s.roster[2].checkpoint, "p.ckpt");
  c.set("roster", "random,mystery");
  EXPECT_THROW(experiment_spec_from(c), Error);
  c.set("reps", "0");
  c.set("roster", "random");
  EXPECT_THROW(experiment_spec_from(c), Error);
}

TEST(ExperimentSpecTest, MissingCheckpointNamesPath) {
  Config c = small_config("o");
  c.set("policy", "/nonexistent/p.ckpt");
  try {
    run_experiment(experiment_spec_from(c));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/p.ckpt"), std::string::npos);
  }
}

TEST(ExperimentSpecTest, DimensionMismatchedModel) {
  TempDir dir;
  Config c = small_config(dir.path());
  Rng rng(1);
  UserModel wrong{make_scoring_net({4, 2, 1, 3, Activation::ELU}, rng), {}, {}, BehaviorMode::Parametric};
  wrong.alpha = wrong.theta;
  save_checkpoint(dir / "u.ckpt", to_checkpoint(wrong));
  c.set("user-model", (dir / "u.ckpt").string());
  try {
    run_experiment(experiment_spec_from(c));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("dimension mismatch"), std::string::npos);
  }
}

TEST(PipelineTest, GenDataTrainEvaluate) {
  TempDir dir;
  Config c = small_config(dir.path());
  c.set("users", "16");
  c.set("epochs", "3");
  c.set("iterations", "5");
  c.set("batch-users", "2");
  GenDataResult g = gen_data(c);
  ASSERT_TRUE(std::filesystem::exists(dir / "data.txt"));
  TrajectoryData data = load_trajectories(dir / "data.txt");
  EXPECT_EQ(data.trajectories.size(), 16u);

  Config tc = c;
  tc.set("data", (dir / "data.txt").string());
  UserModelReport um = train_user_model(tc);
  EXPECT_TRUE(std::filesystem::exists(dir / "user_model.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "train_log.csv"));

  Config pc = c;
  pc.set("user-model", (dir / "user_model.ckpt").string());
  PolicyTrainingReport pr = train_policy(pc);
  EXPECT_TRUE(std::filesystem::exists(dir / "policy.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "td_loss.csv"));

  Config ec = c;
  ec.set("policy", (dir / "policy.ckpt").string());
  ec.set("user-model", (dir / "user_model.ckpt").string());
  ExperimentResult res = run_experiment(experiment_spec_from(ec));
  EXPECT_EQ(res.reports.size(), 3u);
  EXPECT_TRUE(std::filesystem::exists(dir / "cdqn_metrics.csv"));

  Config dc = c;
  dc.set("policy", (dir / "policy.ckpt").string());
  dc.set("states", "20");
  DiagnosticReport diag = diagnose_q(dc);
  EXPECT_EQ(diag.rows.size(), 40u);
  EXPECT_TRUE(std::filesystem::exists(dir / "q_diagnostic.csv"));
}

}  // namespace
}  // namespace ganrec
