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

// Command-line front end: gen-data, train-user-model, train-policy,
// evaluate, diagnose-q and gradcheck.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ganrec/ganrec.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flags shared by every subcommand. Only flags given on the command line
// override the config file.
struct CommonFlags {
  std::string seed, out, config, policy, user_model, test_model, data, k, pool_size, horizon, reps, reward_mode;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--seed", f.seed, "random seed");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--config", f.config, "key=value config file");
  app->add_option("--policy", f.policy, "policy checkpoint");
  app->add_option("--user-model", f.user_model, "user model checkpoint");
  app->add_option("--test-model", f.test_model, "user model checkpoint driving the test environment");
  app->add_option("--data", f.data, "trajectory file");
  app->add_option("--k", f.k, "slate size");
  app->add_option("--pool-size", f.pool_size, "candidate pool size");
  app->add_option("--horizon", f.horizon, "steps per session");
  app->add_option("--reps", f.reps, "evaluation repetitions");
  app->add_option("--reward-mode", f.reward_mode, "learned | pm1");
  app->add_option("--set", f.sets, "extra key=value setting (repeatable)");
}

ganrec::Config build_config(const CommonFlags& f, const std::string& file) {
  ganrec::Config c;
  if (!file.empty()) {
    if (!std::filesystem::exists(file)) throw UsageError("config file not found: " + file);
    c = ganrec::Config::load(file);
  }
  ganrec::Config cli;
  auto put = [&](const char* key, const std::string& v) {
    if (!v.empty()) cli.set(key, v);
  };
  put("seed", f.seed);
  put("out", f.out);
  put("policy", f.policy);
  put("user-model", f.user_model);
  put("test-model", f.test_model);
  put("data", f.data);
  put("k", f.k);
  put("pool-size", f.pool_size);
  put("horizon", f.horizon);
  put("reps", f.reps);
  put("reward-mode", f.reward_mode);
  for (const auto& kv : f.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + kv + "'");
    cli.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.merge(cli);
  return c;
}

void progress(const std::string& msg) { std::cerr << "[ganrec] " << msg << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slate recommendation with learned user models and cascading Q-networks"};
  app.require_subcommand(1);

  CommonFlags gen_f, user_f, pol_f, eval_f, diag_f;
  std::string spec;
  auto* gen = app.add_subcommand("gen-data", "simulate logged sessions of a synthetic ground-truth user");
  add_common(gen, gen_f);
  auto* user = app.add_subcommand("train-user-model", "fit a user model to logged sessions");
  add_common(user, user_f);
  auto* pol = app.add_subcommand("train-policy", "train a cascading Q-network against a user model");
  add_common(pol, pol_f);
  auto* eval = app.add_subcommand("evaluate", "roll out a policy roster on test users");
  add_common(eval, eval_f);
  eval->add_option("--spec", spec, "experiment spec (key=value file)");
  auto* diag = app.add_subcommand("diagnose-q", "export Q^j vs Q^k along greedy cascades");
  add_common(diag, diag_f);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of all analytic gradients");
  std::uint64_t grad_seed = 0;
  int grad_trials = 20;
  std::string grad_loss;
  double grad_tol = 1e-4;
  grad->add_option("--seed", grad_seed, "random seed");
  grad->add_option("--trials", grad_trials, "random instances per loss")->check(CLI::PositiveNumber);
  grad->add_option("--loss", grad_loss, "nll | minimax-reward | minimax-behavior | td | td-additive");
  grad->add_option("--tol", grad_tol, "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) {
      ganrec::gen_data(build_config(gen_f, gen_f.config), progress);
    } else if (*user) {
      ganrec::Config c = build_config(user_f, user_f.config);
      if (!c.has("data")) throw UsageError("train-user-model needs --data");
      ganrec::train_user_model(c, progress);
    } else if (*pol) {
      ganrec::train_policy(build_config(pol_f, pol_f.config), progress);
    } else if (*eval) {
      if (!spec.empty() && !std::filesystem::exists(spec)) throw UsageError("spec file not found: " + spec);
      ganrec::Config c = build_config(eval_f, spec.empty() ? eval_f.config : spec);
      if (!spec.empty() && !eval_f.config.empty()) {
        if (!std::filesystem::exists(eval_f.config)) throw UsageError("config file not found: " + eval_f.config);
        ganrec::Config base = ganrec::Config::load(eval_f.config);
        base.merge(c);
        c = base;
      }
      auto result = ganrec::run_experiment(ganrec::experiment_spec_from(c), progress);
      for (const auto& m : result.reports)
        std::printf("%s avg_cum_reward=%.6f reward_stderr=%.6f ctr=%.6f\n", m.policy.c_str(), m.avg_cumulative_reward,
                    m.reward_stderr, m.ctr);
    } else if (*diag) {
      ganrec::Config c = build_config(diag_f, diag_f.config);
      if (!c.has("policy")) throw UsageError("diagnose-q needs --policy");
      auto rep = ganrec::diagnose_q(c, progress);
      for (std::size_t j = 0; j < rep.pearson_by_j.size(); ++j)
        std::printf("j=%zu pearson=%.6f\n", j + 1, rep.pearson_by_j[j]);
    } else if (*grad) {
      double worst = 0;
      if (!grad_loss.empty()) {
        ganrec::LossKind kind;
        try {
          kind = ganrec::parse_loss_kind(grad_loss);
        } catch (const ganrec::Error& e) {
          throw UsageError(e.what());
        }
        for (int t = 0; t < grad_trials; ++t)
          worst = std::max(worst, ganrec::gradcheck_instance(kind, ganrec::derive_seed(grad_seed, static_cast<std::uint64_t>(kind),
                                                                                     static_cast<std::uint64_t>(t)))
                                      .max_rel_error);
        std::printf("%s max_rel_error=%.3e\n", grad_loss.c_str(), worst);
      } else {
        auto s = ganrec::run_gradcheck(grad_seed, grad_trials);
        for (const auto& [kind, err] : s.per_kind)
          std::printf("%s max_rel_error=%.3e\n", ganrec::to_string(kind).c_str(), err);
        worst = s.max_rel_error;
      }
      std::printf("max relative error %.3e (tolerance %.1e)\n", worst, grad_tol);
      return worst <= grad_tol ? kExitOk : kExitRuntime;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
