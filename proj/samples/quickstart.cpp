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

// Fits a user model to simulated logs, trains a cascading Q-network against
// it and compares the resulting slates with random ones.

#include <cstdio>

#include "ganrec/ganrec.hpp"

int main() {
  using namespace ganrec;
  WorldSpec w;
  w.seed = 1;
  w.dims = {2, 2, 1, 4, Activation::ELU};
  ItemCatalog catalog = world_catalog(w);
  UserModel truth = world_user(w, catalog);

  Environment log_env(catalog, EnvConfig{3, 20, 20});
  auto sessions = log_random_sessions(log_env, truth, 100, w.seed);
  std::vector<Trajectory> train(sessions.begin(), sessions.begin() + 80), valid(sessions.begin() + 80, sessions.end());

  TrainConfig tc;
  tc.dims = w.dims;
  tc.lr_theta = 0.05;
  tc.momentum = 0.9;
  tc.epochs = 100;
  UserModel model = train_mle(build_examples(catalog, train, 2), build_examples(catalog, valid, 2), tc).model;

  Environment env(catalog, EnvConfig{3, 20, 10});
  CDQNConfig qc;
  qc.iterations = 300;
  qc.lr = 0.003;
  qc.gamma = 0.5;
  qc.dims = {2, 2, 2, 16, Activation::ELU};
  TrainedQ q = train_cdqn(env, model, qc);

  for (PolicyHandle h : {PolicyHandle{PolicyKind::CDQN, "cdqn", &q.params, nullptr}, PolicyHandle{}}) {
    auto rows = evaluate_policy(env, truth, make_policy(h, catalog, 3), 5, 20, w.seed);
    MetricReport m = aggregate_rows(h.kind == PolicyKind::CDQN ? "cdqn" : "random", rows, 10);
    std::printf("%-7s reward %.4f  ctr %.3f\n", m.policy.c_str(), m.avg_cumulative_reward, m.ctr);
  }
}
