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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ganrec/adversarial_training.hpp"
#include "ganrec/cdqn.hpp"
#include "ganrec/embed_net.hpp"

namespace ganrec {

// Text checkpoint:
//
//   ganrec-checkpoint 1
//   meta <key> <value>
//   tensor <name> <rows> <cols>
//   <row-major values, %.17g>
//   end
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw Error("checkpoint: missing tensor " + name);
  }
  bool has_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return true;
    return false;
  }
  const std::string& get(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw Error("checkpoint: missing meta " + key);
    return it->second;
  }
};

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out << "ganrec-checkpoint " << kCheckpointVersion << '\n';
  for (const auto& [k, v] : ck.meta) out << "meta " << k << ' ' << v << '\n';
  char buf[40];
  for (const auto& [name, t] : ck.tensors) {
    out << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (Index r = 0; r < t.rows(); ++r) {
      for (Index c = 0; c < t.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", t(r, c));
        out << (r == 0 && c == 0 ? "" : " ") << buf;
      }
    }
    out << '\n';
  }
  out << "end\n";
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  write_checkpoint(out, ck);
}

inline Checkpoint read_checkpoint(std::istream& in) {
  Checkpoint ck;
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "ganrec-checkpoint") throw Error("checkpoint: bad header");
  if (version != kCheckpointVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
  std::string tag;
  while (in >> tag) {
    if (tag == "end") return ck;
    if (tag == "meta") {
      std::string k, v;
      if (!(in >> k >> v)) throw Error("checkpoint: malformed meta");
      ck.meta[k] = v;
    } else if (tag == "tensor") {
      std::string name;
      Index rows = 0, cols = 0;
      if (!(in >> name >> rows >> cols) || rows < 0 || cols < 0) throw Error("checkpoint: malformed tensor header");
      Matrix t(rows, cols);
      for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c)
          if (!(in >> t(r, c))) throw Error("checkpoint: truncated tensor " + name);
      ck.tensors.emplace_back(name, std::move(t));
    } else {
      throw Error("checkpoint: unknown tag " + tag);
    }
  }
  throw Error("checkpoint: missing end marker");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_checkpoint(in);
}

template <Parameterized P>
void store_tensors(Checkpoint& ck, const std::string& prefix, const P& p) {
  p.visit([&](const std::string& name, const auto& t) { ck.tensors.emplace_back(prefix + name, Matrix(t)); });
}

/// Fills every tensor of p (already shaped) from the checkpoint.
template <Parameterized P>
void load_tensors(const Checkpoint& ck, const std::string& prefix, P& p) {
  p.visit([&](const std::string& name, auto& t) {
    const Matrix& src = ck.tensor(prefix + name);
    if (src.rows() != t.rows() || src.cols() != t.cols())
      throw Error("checkpoint: shape mismatch for " + prefix + name);
    t = src;
  });
}

inline ScoringNet load_scoring_net(const Checkpoint& ck, const std::string& prefix, Activation act) {
  const Matrix& W = ck.tensor(prefix + "embed.W");
  const Matrix& B = ck.tensor(prefix + "embed.B");
  const Matrix& V = ck.tensor(prefix + "head.V");
  ScoringNet net{make_position_weights(W.rows(), W.cols(), B.rows(), act), make_scorer(V.cols(), V.rows(), act)};
  load_tensors(ck, prefix, net);
  return net;
}

inline Checkpoint to_checkpoint(const UserModel& m) {
  Checkpoint ck;
  ck.meta["kind"] = "user_model";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", m.config.eta);
  ck.meta["eta"] = buf;
  ck.meta["regularizer"] = to_string(m.config.regularizer);
  ck.meta["activation"] = to_string(m.theta.embed.activation);
  ck.meta["behavior"] = m.behavior == BehaviorMode::ClosedForm ? "closed_form" : "parametric";
  store_tensors(ck, "theta.", m.theta);
  store_tensors(ck, "alpha.", m.alpha);
  return ck;
}

inline UserModel user_model_from(const Checkpoint& ck) {
  if (ck.get("kind") != "user_model") throw Error("checkpoint is not a user model");
  Activation act = parse_activation(ck.get("activation"));
  UserModel m;
  m.config.eta = std::stod(ck.get("eta"));
  m.config.regularizer = parse_regularizer(ck.get("regularizer"));
  m.behavior = ck.get("behavior") == "closed_form" ? BehaviorMode::ClosedForm : BehaviorMode::Parametric;
  m.theta = load_scoring_net(ck, "theta.", act);
  m.alpha = load_scoring_net(ck, "alpha.", act);
  return m;
}

inline Checkpoint to_checkpoint(const CascadeQParams& q, QForm form) {
  Checkpoint ck;
  ck.meta["kind"] = "q_policy";
  ck.meta["form"] = form == QForm::Additive ? "additive" : "cascade";
  ck.meta["activation"] = to_string(q.activation);
  ck.meta["heads"] = std::to_string(q.k());
  store_tensors(ck, "qnet.", q);
  return ck;
}

struct QPolicy {
  CascadeQParams params;
  QForm form = QForm::Cascade;
};

inline QPolicy q_policy_from(const Checkpoint& ck) {
  if (ck.get("kind") != "q_policy") throw Error("checkpoint is not a Q policy");
  QPolicy out;
  out.form = ck.get("form") == "additive" ? QForm::Additive : QForm::Cascade;
  Activation act = parse_activation(ck.get("activation"));
  const int heads = std::stoi(ck.get("heads"));
  check(heads >= 1, "checkpoint: Q policy needs at least one head");
  const Matrix& W = ck.tensor("qnet.embed.W");
  const Matrix& B = ck.tensor("qnet.embed.B");
  CascadeQParams& p = out.params;
  p.activation = act;
  p.embed = make_position_weights(W.rows(), W.cols(), B.rows(), act);
  for (int j = 1; j <= heads; ++j) {
    const Matrix& L = ck.tensor("qnet.q" + std::to_string(j) + ".L");
    p.heads.push_back({Matrix::Zero(L.rows(), L.cols()), Vector::Zero(L.rows()), Vector::Zero(L.rows())});
  }
  load_tensors(ck, "qnet.", p);
  return out;
}

}  // namespace ganrec
