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
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "ganrec/adversarial_training.hpp"
#include "ganrec/cdqn.hpp"
#include "ganrec/checkpoint.hpp"
#include "ganrec/core_data.hpp"
#include "ganrec/environment.hpp"

namespace ganrec {

// ---------------------------------------------------------------------------
// Metrics.

struct ClickCount {
  int clicks = 0;
  int steps = 0;
};

/// Time-average within each user, then average over users.
inline double metric_avg_cum_reward(const std::vector<std::vector<double>>& rewards_per_user) {
  check(!rewards_per_user.empty(), "metric_avg_cum_reward: empty input");
  double total = 0;
  for (const auto& r : rewards_per_user) {
    check(!r.empty(), "metric_avg_cum_reward: rollout of length 0");
    double s = 0;
    for (double x : r) s += x;
    total += s / static_cast<double>(r.size());
  }
  return total / static_cast<double>(rewards_per_user.size());
}

inline double metric_ctr(const std::vector<ClickCount>& counts) {
  check(!counts.empty(), "metric_ctr: empty input");
  double total = 0;
  for (const auto& c : counts) {
    check(c.steps > 0, "metric_ctr: zero steps");
    check(c.clicks >= 0 && c.clicks <= c.steps, "metric_ctr: clicks outside [0, steps]");
    total += static_cast<double>(c.clicks) / c.steps;
  }
  return total / static_cast<double>(counts.size());
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  check(x.size() == y.size() && x.size() >= 2, "pearson: need two equal-length samples of size >= 2");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0 || syy <= 0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

struct MeanStd {
  double mean = 0;
  double std = 0;     // sample standard deviation (n - 1)
  double sem = 0;  // std / sqrt(n)
};

inline MeanStd mean_std(std::span<const double> xs) {
  check(!xs.empty(), "mean_std: empty input");
  MeanStd out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double v = 0;
    for (double x : xs) v += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(v / static_cast<double>(xs.size() - 1));
    out.sem = out.std / std::sqrt(static_cast<double>(xs.size()));
  }
  return out;
}

struct MetricReport {
  std::string policy;
  int n_users = 0;
  int T = 0;
  int reps = 1;
  double avg_cumulative_reward = 0;
  double ctr = 0;
  // Spread of the per-repetition metric across repetitions.
  double reward_std = 0, reward_stderr = 0;
  double ctr_std = 0, ctr_stderr = 0;
  std::map<int, double> prec_at;
};

struct UserMetricRow {
  std::int64_t user_id = 0;
  int rep = 0;
  double cum_reward = 0;
  double ctr = 0;
};

/// Aggregates per-user rows: mean over users inside each repetition, then
/// mean and spread across repetitions.
inline MetricReport aggregate_rows(const std::string& policy, const std::vector<UserMetricRow>& rows, int T) {
  check(!rows.empty(), "aggregate: no rows");
  std::map<int, std::pair<std::vector<std::vector<double>>, std::vector<double>>> by_rep;
  std::map<int, int> users_per_rep;
  for (const auto& r : rows) {
    by_rep[r.rep].first.push_back({r.cum_reward});
    by_rep[r.rep].second.push_back(r.ctr);
    users_per_rep[r.rep]++;
  }
  std::vector<double> rep_reward, rep_ctr;
  for (const auto& [rep, v] : by_rep) {
    rep_reward.push_back(metric_avg_cum_reward(v.first));
    double c = 0;
    for (double x : v.second) c += x;
    rep_ctr.push_back(c / static_cast<double>(v.second.size()));
  }
  MetricReport m;
  m.policy = policy;
  m.n_users = users_per_rep.begin()->second;
  m.T = T;
  m.reps = static_cast<int>(by_rep.size());
  MeanStd r = mean_std(rep_reward), c = mean_std(rep_ctr);
  m.avg_cumulative_reward = r.mean;
  m.reward_std = r.std;
  m.reward_stderr = r.sem;
  m.ctr = c.mean;
  m.ctr_std = c.std;
  m.ctr_stderr = c.sem;
  return m;
}

// ---------------------------------------------------------------------------
// Delimited output.

inline void write_user_metrics(const std::filesystem::path& path, const std::vector<UserMetricRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "user_id,rep,cum_reward,ctr\n";
  for (const auto& r : rows)
    out << r.user_id << ',' << r.rep << ',' << format_float(r.cum_reward) << ',' << format_float(r.ctr) << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

inline std::vector<UserMetricRow> read_user_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  check(line == "user_id,rep,cum_reward,ctr", path.string() + ": unexpected header");
  std::vector<UserMetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    UserMetricRow r;
    char c1, c2, c3;
    std::istringstream ss(line);
    if (!(ss >> r.user_id >> c1 >> r.rep >> c2 >> r.cum_reward >> c3 >> r.ctr) || c1 != ',' || c2 != ',' || c3 != ',')
      throw Error(path.string() + ": malformed row '" + line + "'");
    rows.push_back(r);
  }
  return rows;
}

inline void write_aggregate(const std::filesystem::path& path, const std::vector<MetricReport>& reports) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "policy,n_users,T,reps,avg_cum_reward,reward_std,reward_stderr,ctr,ctr_std,ctr_stderr\n";
  for (const auto& m : reports)
    out << m.policy << ',' << m.n_users << ',' << m.T << ',' << m.reps << ',' << format_float(m.avg_cumulative_reward)
        << ',' << format_float(m.reward_std) << ',' << format_float(m.reward_stderr) << ',' << format_float(m.ctr)
        << ',' << format_float(m.ctr_std) << ',' << format_float(m.ctr_stderr) << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Flat key=value configuration.

class Config {
 public:
  /// Lines are `key = value`; `#` starts a comment. Keys are normalized so
  /// that `pool_size` and `pool-size` are the same key.
  static Config parse(std::istream& in, const std::string& origin = "config") {
    Config c;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      std::string t = trim(line);
      if (t.empty()) continue;
      auto eq = t.find('=');
      if (eq == std::string::npos)
        throw Error(origin + ": line " + std::to_string(line_no) + ": expected key = value");
      std::string key = normalize(trim(t.substr(0, eq)));
      if (key.empty()) throw Error(origin + ": line " + std::to_string(line_no) + ": empty key");
      c.values_[key] = trim(t.substr(eq + 1));
    }
    return c;
  }

  /// Relative path values are resolved against the file's directory.
  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read config " + path.string());
    Config c = parse(in, path.string());
    const auto base = path.parent_path();
    for (auto& [k, v] : c.values_) {
      if (is_path_key(k) && !v.empty() && std::filesystem::path(v).is_relative()) v = (base / v).lexically_normal().string();
    }
    return c;
  }

  static bool is_path_key(const std::string& key) {
    return key == "data" || key == "out" || key == "test-model" || key == "user-model" || key == "policy" ||
           key.rfind("policy.", 0) == 0;
  }

  void set(const std::string& key, const std::string& value) { values_[normalize(key)] = value; }
  bool has(const std::string& key) const { return values_.count(normalize(key)) > 0; }

  /// Entries of `other` override entries here.
  void merge(const Config& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  std::string str(const std::string& key, const std::string& def = "") const {
    auto it = values_.find(normalize(key));
    return it == values_.end() ? def : it->second;
  }

  double real(const std::string& key, double def) const {
    if (!has(key)) return def;
    const std::string v = str(key);
    try {
      std::size_t used = 0;
      double x = std::stod(v, &used);
      if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw Error("config: " + normalize(key) + " expects a number, got '" + v + "'");
  }

  long long integer(const std::string& key, long long def) const {
    if (!has(key)) return def;
    const std::string v = str(key);
    try {
      std::size_t used = 0;
      long long x = std::stoll(v, &used);
      if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw Error("config: " + normalize(key) + " expects an integer, got '" + v + "'");
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  static std::string normalize(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return key;
  }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s + ",") {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (ch != ' ' && ch != '\t') {
      cur += ch;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic world: catalog plus ground-truth user, both derived from one seed.

struct WorldSpec {
  std::uint64_t seed = 0;
  int items = 30;
  NetDims dims{4, 3, 2, 8, Activation::ELU};
  ChoiceConfig choice;
  GroundTruthShape shape;
};

inline WorldSpec world_spec_from(const Config& c) {
  WorldSpec w;
  w.seed = static_cast<std::uint64_t>(c.integer("seed", 0));
  w.items = static_cast<int>(c.integer("items", w.items));
  w.dims.d = c.integer("dim", w.dims.d);
  w.dims.m = c.integer("window", w.dims.m);
  w.dims.n = c.integer("positions", w.dims.n);
  w.dims.hidden = c.integer("hidden", w.dims.hidden);
  w.dims.activation = parse_activation(c.str("activation", "elu"));
  w.choice.eta = c.real("eta", 1.0);
  w.choice.regularizer = parse_regularizer(c.str("regularizer", "entropy"));
  w.shape.reward_scale = c.real("reward-scale", w.shape.reward_scale);
  w.shape.state_scale = c.real("state-scale", w.shape.state_scale);
  w.shape.affinity = c.real("affinity", w.shape.affinity);
  w.choice.validate();
  return w;
}

inline ItemCatalog world_catalog(const WorldSpec& w) {
  return synth_catalog(w.items, w.dims.d, derive_seed(w.seed, 0xc0de));
}

inline UserModel world_user(const WorldSpec& w, const ItemCatalog& catalog) {
  return make_ground_truth_user(catalog, w.dims, derive_seed(w.seed, 0x05e7), w.choice, w.shape).model;
}

inline EnvConfig env_config_from(const Config& c, EnvConfig e = {}) {
  e.k = static_cast<int>(c.integer("k", e.k));
  e.pool_size = static_cast<int>(c.integer("pool-size", e.pool_size));
  e.horizon = static_cast<int>(c.integer("horizon", e.horizon));
  const std::string cand = c.str("candidates", "random");
  if (cand == "random") {
    e.candidate_policy = CandidatePolicy::RandomSubset;
  } else if (cand == "full") {
    e.candidate_policy = CandidatePolicy::FullCatalog;
  } else {
    throw Error("config: candidates must be 'random' or 'full', got '" + cand + "'");
  }
  e.nonclick_reward = c.real("nonclick-reward", e.nonclick_reward);
  return e;
}

inline void require_file(const std::string& what, const std::string& path) {
  if (path.empty()) throw Error(what + ": no path given");
  if (!std::filesystem::exists(path)) throw Error(what + ": missing file " + path);
}

// Catalog from a trajectory file when `data` is set, else the synthetic world.
inline ItemCatalog resolve_catalog(const Config& c, const WorldSpec& w) {
  if (c.has("data")) {
    require_file("data", c.str("data"));
    return load_trajectories(c.str("data")).catalog;
  }
  return world_catalog(w);
}

inline UserModel resolve_model(const std::string& path, const ItemCatalog& catalog) {
  require_file("user model", path);
  UserModel m = user_model_from(load_checkpoint(path));
  if (m.dim() != catalog.dim())
    throw Error("dimension mismatch: model " + path + " has d=" + std::to_string(m.dim()) + ", catalog has d=" +
                std::to_string(catalog.dim()));
  return m;
}

using Progress = std::function<void(const std::string&)>;

inline void emit(const Progress& p, const std::string& msg) {
  if (p) p(msg);
}

inline std::filesystem::path ensure_out_dir(const Config& c) {
  std::filesystem::path out = c.str("out", "out");
  std::filesystem::create_directories(out);
  return out;
}

// ---------------------------------------------------------------------------
// gen-data: logged sessions of the ground-truth user under a uniformly random
// display policy.

struct GenDataResult {
  std::filesystem::path data_path, model_path;
  std::size_t records = 0;
};

inline std::vector<Trajectory> log_random_sessions(const Environment& env, const UserModel& user, int users,
                                                   std::uint64_t seed) {
  SlatePolicy policy = make_policy(PolicyHandle{}, env.catalog(), env.config().k);
  std::vector<Trajectory> out;
  for (int u = 1; u <= users; ++u) {
    auto r = rollout(env, user, policy, env.config().horizon, training_seed(seed, 0xda7a, static_cast<std::uint64_t>(u)),
                     u);
    out.push_back(std::move(r.trajectory));
  }
  return out;
}

inline GenDataResult gen_data(const Config& c, const Progress& progress = {}) {
  WorldSpec w = world_spec_from(c);
  ItemCatalog catalog = world_catalog(w);
  UserModel user = world_user(w, catalog);
  EnvConfig ec = env_config_from(c, EnvConfig{4, 12, 20});
  Environment env(catalog, ec);
  const int users = static_cast<int>(c.integer("users", 200));
  check(users >= 1, "gen-data: users must be >= 1");
  auto out = ensure_out_dir(c);
  auto trajs = log_random_sessions(env, user, users, w.seed);
  GenDataResult res;
  res.data_path = out / "data.txt";
  res.model_path = out / "ground_truth.ckpt";
  save_trajectories(catalog, trajs, res.data_path, static_cast<int>(w.dims.m), ec.k);
  save_checkpoint(res.model_path, to_checkpoint(user));
  for (const auto& t : trajs) res.records += t.records.size();
  emit(progress, "gen-data users=" + std::to_string(users) + " records=" + std::to_string(res.records) + " out=" +
                     res.data_path.string());
  return res;
}

// ---------------------------------------------------------------------------
// train-user-model.

struct UserModelReport {
  UserModel model;
  std::vector<EpochLog> log;
  double test_prec1 = 0, test_prec2 = 0, test_loglik = 0;
  std::vector<std::string> warnings;
};

struct SplitExamples {
  std::vector<ChoiceExample> train, valid, test;
};

inline SplitExamples split_examples(const TrajectoryData& data, int window, std::uint64_t seed) {
  std::vector<std::int64_t> ids;
  for (const auto& t : data.trajectories) ids.push_back(t.user_id);
  DatasetSplit split = split_users(ids, {0.5, 0.125, 0.375}, seed);
  auto pick = [&](const std::vector<std::int64_t>& who) {
    std::vector<Trajectory> sel;
    for (const auto& t : data.trajectories)
      if (std::find(who.begin(), who.end(), t.user_id) != who.end()) sel.push_back(t);
    return build_examples(data.catalog, sel, window);
  };
  return {pick(split.train), pick(split.valid), pick(split.test)};
}

inline TrainConfig train_config_from(const Config& c, Index d, Index window) {
  TrainConfig tc;
  tc.seed = static_cast<std::uint64_t>(c.integer("seed", 0));
  tc.dims.d = d;
  tc.dims.m = window;
  tc.dims.n = c.integer("positions", 2);
  tc.dims.hidden = c.integer("hidden", 8);
  tc.dims.activation = parse_activation(c.str("activation", "elu"));
  tc.choice.eta = c.real("eta", 1.0);
  tc.choice.regularizer = parse_regularizer(c.str("regularizer", "entropy"));
  tc.lr_theta = c.real("lr-theta", c.real("lr", 0.05));
  tc.lr_alpha = c.real("lr-alpha", c.real("lr", 0.05));
  tc.momentum = c.real("momentum", 0.9);
  tc.batch_size = static_cast<int>(c.integer("batch-size", 64));
  tc.epochs = static_cast<int>(c.integer("epochs", 50));
  tc.patience = static_cast<int>(c.integer("patience", 10));
  const std::string init = c.str("init", "entropy");
  if (init == "entropy") {
    tc.init_scheme = InitScheme::EntropyInit;
  } else if (init == "fresh") {
    tc.init_scheme = InitScheme::Fresh;
  } else {
    throw Error("config: init must be 'entropy' or 'fresh', got '" + init + "'");
  }
  return tc;
}

inline UserModelReport train_user_model(const Config& c, const Progress& progress = {}) {
  require_file("data", c.str("data"));
  TrajectoryData data = load_trajectories(c.str("data"));
  const int window = static_cast<int>(c.integer("window", data.history));
  const std::uint64_t seed = static_cast<std::uint64_t>(c.integer("seed", 0));
  SplitExamples ex = split_examples(data, window, seed);
  TrainConfig tc = train_config_from(c, data.catalog.dim(), window);
  const std::string method = c.str("method", "mle");
  TrainResult tr;
  if (method == "mle") {
    tr = train_mle(ex.train, ex.valid, tc);
  } else if (method == "minimax") {
    tr = train_minimax(ex.train, ex.valid, tc);
  } else {
    throw Error("config: method must be 'mle' or 'minimax', got '" + method + "'");
  }
  UserModelReport rep;
  rep.model = tr.model;
  rep.log = tr.log;
  rep.warnings = tr.warnings;
  if (!ex.test.empty()) {
    rep.test_prec1 = precision_at_k(tr.model, ex.test, 1);
    rep.test_prec2 = precision_at_k(tr.model, ex.test, 2);
    rep.test_loglik = heldout_loglik(tr.model, ex.test).mean;
  }
  auto out = ensure_out_dir(c);
  save_checkpoint(out / "user_model.ckpt", to_checkpoint(tr.model));
  std::ofstream log(out / "train_log.csv", std::ios::binary | std::ios::trunc);
  log << "epoch,train_nll,valid_nll,prec1\n";
  for (const auto& e : tr.log)
    log << e.epoch << ',' << format_float(e.train_nll) << ',' << format_float(e.valid_nll) << ','
        << format_float(e.prec1) << '\n';
  for (const auto& w : tr.warnings) emit(progress, "warning " + w);
  emit(progress, "train-user-model method=" + method + " best_epoch=" + std::to_string(tr.best_epoch) +
                     " test_prec1=" + format_float(rep.test_prec1) + " test_prec2=" + format_float(rep.test_prec2) +
                     " test_loglik=" + format_float(rep.test_loglik));
  return rep;
}

// ---------------------------------------------------------------------------
// train-policy.

inline CDQNConfig cdqn_config_from(const Config& c, const EnvConfig& env) {
  CDQNConfig q;
  q.seed = static_cast<std::uint64_t>(c.integer("seed", 0));
  q.gamma = c.real("gamma", q.gamma);
  q.epsilon = c.real("epsilon", q.epsilon);
  q.epsilon_final = c.real("epsilon-final", q.epsilon_final);
  q.iterations = static_cast<int>(c.integer("iterations", q.iterations));
  q.horizon = env.horizon;
  q.batch_users = static_cast<int>(c.integer("batch-users", q.batch_users));
  q.minibatch = static_cast<std::size_t>(c.integer("minibatch", static_cast<long long>(q.minibatch)));
  q.replay_capacity = static_cast<std::size_t>(c.integer("replay-capacity", static_cast<long long>(q.replay_capacity)));
  q.lr = c.real("lr", q.lr);
  q.momentum = c.real("momentum", q.momentum);
  q.target_period = static_cast<int>(c.integer("target-period", q.target_period));
  q.reward_mode = parse_reward_mode(c.str("reward-mode", "learned"));
  const std::string form = c.str("q-form", "cascade");
  if (form == "cascade") {
    q.q_form = QForm::Cascade;
  } else if (form == "additive") {
    q.q_form = QForm::Additive;
  } else {
    throw Error("config: q-form must be 'cascade' or 'additive', got '" + form + "'");
  }
  q.dims.n = c.integer("q-positions", 2);
  q.dims.hidden = c.integer("q-hidden", 16);
  q.dims.activation = parse_activation(c.str("activation", "elu"));
  return q;
}

struct PolicyTrainingReport {
  TrainedQ trained;
  QForm form = QForm::Cascade;
  std::filesystem::path checkpoint;
};

/// The agent trains against `user-model` when given, else `test-model`, else
/// the synthetic ground-truth user.
inline PolicyTrainingReport train_policy(const Config& c, const Progress& progress = {}) {
  WorldSpec w = world_spec_from(c);
  ItemCatalog catalog = resolve_catalog(c, w);
  UserModel user = c.has("user-model")   ? resolve_model(c.str("user-model"), catalog)
                   : c.has("test-model") ? resolve_model(c.str("test-model"), catalog)
                                         : world_user(w, catalog);
  EnvConfig ec = env_config_from(c);
  ec.seed = w.seed;
  Environment env(catalog, ec);
  CDQNConfig qc = cdqn_config_from(c, ec);
  qc.on_iteration = [&](int it, double loss) {
    if (it % 10 == 0 || it == qc.iterations)
      emit(progress, "train-policy iteration=" + std::to_string(it) + " td_loss=" + format_float(loss));
  };
  PolicyTrainingReport rep;
  rep.trained = train_cdqn(env, user, qc);
  rep.form = qc.q_form;
  auto out = ensure_out_dir(c);
  rep.checkpoint = out / "policy.ckpt";
  save_checkpoint(rep.checkpoint, to_checkpoint(rep.trained.params, qc.q_form));
  std::ofstream log(out / "td_loss.csv", std::ios::binary | std::ios::trunc);
  log << "iteration,td_loss\n";
  for (std::size_t i = 0; i < rep.trained.loss_log.size(); ++i)
    log << i + 1 << ',' << format_float(rep.trained.loss_log[i]) << '\n';
  return rep;
}

// ---------------------------------------------------------------------------
// evaluate.

struct RosterEntry {
  std::string name;
  PolicyKind kind = PolicyKind::Random;
  std::string checkpoint;  // Q policies only
};

struct ExperimentSpec {
  Config config;
  WorldSpec world;
  EnvConfig env;
  std::vector<RosterEntry> roster;
  int reps = 50;
  int users = 20;
  std::string test_model, user_model;
  std::filesystem::path out_dir = "out";
};

/// Roster names `random` and `greedy` are built in; any other name needs a
/// `policy.<name>` checkpoint path (`policy` alone names `cdqn`).
inline ExperimentSpec experiment_spec_from(const Config& c) {
  ExperimentSpec s;
  s.config = c;
  s.world = world_spec_from(c);
  s.env = env_config_from(c);
  s.env.seed = s.world.seed;
  s.reps = static_cast<int>(c.integer("reps", 50));
  s.users = static_cast<int>(c.integer("users", 20));
  check(s.reps >= 1, "experiment: reps must be >= 1");
  check(s.users >= 1, "experiment: users must be >= 1");
  s.test_model = c.str("test-model");
  s.user_model = c.str("user-model");
  s.out_dir = c.str("out", "out");
  std::string roster = c.str("roster", c.has("policy") ? "random,greedy,cdqn" : "random,greedy");
  for (const auto& name : split_list(roster)) {
    RosterEntry e;
    e.name = name;
    if (name == "random") {
      e.kind = PolicyKind::Random;
    } else if (name == "greedy") {
      e.kind = PolicyKind::GreedyUserModel;
    } else {
      e.checkpoint = c.str("policy." + name, name == "cdqn" ? c.str("policy") : "");
      if (e.checkpoint.empty()) throw Error("experiment: roster entry '" + name + "' has no policy." + name + " path");
      e.kind = PolicyKind::CDQN;  // refined from the checkpoint form at load time
    }
    s.roster.push_back(e);
  }
  check(!s.roster.empty(), "experiment: empty roster");
  return s;
}

/// Every referenced file must exist before anything runs.
inline void check_paths(const ExperimentSpec& s) {
  if (s.config.has("data")) require_file("data", s.config.str("data"));
  if (!s.test_model.empty()) require_file("test model", s.test_model);
  if (!s.user_model.empty()) require_file("user model", s.user_model);
  for (const auto& e : s.roster)
    if (!e.checkpoint.empty()) require_file("policy " + e.name, e.checkpoint);
}

struct ExperimentResult {
  std::vector<MetricReport> reports;
  std::map<std::string, std::vector<UserMetricRow>> rows;
};

/// Users in repetition `rep` are test-seeded environments; every policy sees
/// the same environments.
inline std::vector<UserMetricRow> evaluate_policy(const Environment& env, const UserModel& user,
                                                  const SlatePolicy& policy, int reps, int users, std::uint64_t seed) {
  std::vector<UserMetricRow> rows;
  const int T = env.config().horizon;
  check(T >= 1, "evaluate: horizon must be >= 1");
  for (int rep = 0; rep < reps; ++rep) {
    for (int u = 1; u <= users; ++u) {
      auto r = rollout(env, user, policy, T,
                       test_seed(seed, static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(u)), u);
      rows.push_back({u, rep, r.cumulative_reward, static_cast<double>(r.clicks) / T});
    }
  }
  return rows;
}

inline ExperimentResult run_experiment(const ExperimentSpec& s, const Progress& progress = {}) {
  check_paths(s);
  ItemCatalog catalog = resolve_catalog(s.config, s.world);
  UserModel user = s.test_model.empty() ? world_user(s.world, catalog) : resolve_model(s.test_model, catalog);
  UserModel greedy_model = s.user_model.empty() ? user : resolve_model(s.user_model, catalog);
  Environment env(catalog, s.env);

  std::vector<std::unique_ptr<QPolicy>> qs;
  ExperimentResult res;
  std::filesystem::create_directories(s.out_dir);
  for (const auto& e : s.roster) {
    PolicyHandle h;
    h.name = e.name;
    h.kind = e.kind;
    if (e.kind == PolicyKind::GreedyUserModel) h.user_model = &greedy_model;
    if (!e.checkpoint.empty()) {
      qs.push_back(std::make_unique<QPolicy>(q_policy_from(load_checkpoint(e.checkpoint))));
      const QPolicy& qp = *qs.back();
      if (qp.params.embed.B.rows() != catalog.dim() || qp.params.embed.W.rows() != user.window())
        throw Error("dimension mismatch: policy " + e.checkpoint + " does not fit the catalog/user window");
      h.kind = qp.form == QForm::Additive ? PolicyKind::AdditiveQ : PolicyKind::CDQN;
      h.q = &qp.params;
    }
    SlatePolicy policy = make_policy(h, catalog, s.env.k);
    auto rows = evaluate_policy(env, user, policy, s.reps, s.users, s.world.seed);
    write_user_metrics(s.out_dir / (e.name + "_metrics.csv"), rows);
    MetricReport m = aggregate_rows(e.name, rows, s.env.horizon);
    emit(progress, "evaluate policy=" + e.name + " avg_cum_reward=" + format_float(m.avg_cumulative_reward) +
                       " ctr=" + format_float(m.ctr) + " reward_stderr=" + format_float(m.reward_stderr));
    res.rows[e.name] = std::move(rows);
    res.reports.push_back(std::move(m));
  }
  write_aggregate(s.out_dir / "aggregate.csv", res.reports);
  return res;
}

// ---------------------------------------------------------------------------
// diagnose-q.

struct DiagnosticReport {
  std::vector<DiagnosticRow> rows;
  std::vector<double> pearson_by_j;  // index j-1
};

/// States visited by greedy rollouts of the policy itself on test-seeded users.
inline std::pair<std::vector<HistoryBuffer>, std::vector<std::vector<ItemId>>> sample_policy_states(
    const Environment& env, const UserModel& user, const CascadeQParams& q, int count, std::uint64_t seed) {
  std::vector<HistoryBuffer> states;
  std::vector<std::vector<ItemId>> pools;
  const ItemCatalog& catalog = env.catalog();
  for (int u = 1; static_cast<int>(states.size()) < count; ++u) {
    EnvState s = env.reset(user, test_seed(seed, 0xd1a9, static_cast<std::uint64_t>(u)));
    for (int t = 0; t < env.config().horizon && static_cast<int>(states.size()) < count; ++t) {
      states.push_back(s.buffer);
      pools.push_back(s.pool);
      auto slate = cascade_argmax(s.buffer, s.pool, q, catalog).slate;
      s = env.step(s, slate, user).next_state;
    }
  }
  return {states, pools};
}

inline DiagnosticReport diagnose_q(const CascadeQParams& q, const Environment& env, const UserModel& user, int count,
                                   std::uint64_t seed) {
  auto [states, pools] = sample_policy_states(env, user, q, count, seed);
  DiagnosticReport rep;
  rep.rows = constraint_diagnostic(q, states, pools, env.catalog());
  for (int j = 1; j <= q.k(); ++j) {
    std::vector<double> x, y;
    for (const auto& r : rep.rows)
      if (r.j == j) {
        x.push_back(r.qj);
        y.push_back(r.qk);
      }
    rep.pearson_by_j.push_back(pearson(x, y));
  }
  return rep;
}

inline void write_diagnostic(const std::filesystem::path& path, const std::vector<DiagnosticRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "state_idx,j,qj,qk\n";
  for (const auto& r : rows)
    out << r.state_index << ',' << r.j << ',' << format_float(r.qj) << ',' << format_float(r.qk) << '\n';
}

inline DiagnosticReport diagnose_q(const Config& c, const Progress& progress = {}) {
  require_file("policy", c.str("policy"));
  WorldSpec w = world_spec_from(c);
  ItemCatalog catalog = resolve_catalog(c, w);
  UserModel user = c.has("test-model") ? resolve_model(c.str("test-model"), catalog) : world_user(w, catalog);
  QPolicy qp = q_policy_from(load_checkpoint(c.str("policy")));
  check(qp.form == QForm::Cascade, "diagnose-q needs a cascade policy");
  EnvConfig ec = env_config_from(c);
  ec.k = qp.params.k();
  ec.seed = w.seed;
  Environment env(catalog, ec);
  DiagnosticReport rep = diagnose_q(qp.params, env, user, static_cast<int>(c.integer("states", 500)), w.seed);
  auto out = ensure_out_dir(c);
  write_diagnostic(out / "q_diagnostic.csv", rep.rows);
  for (std::size_t j = 0; j < rep.pearson_by_j.size(); ++j)
    emit(progress, "diagnose-q j=" + std::to_string(j + 1) + " pearson=" + format_float(rep.pearson_by_j[j]));
  return rep;
}

}  // namespace ganrec
