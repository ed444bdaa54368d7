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
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ganrec/common.hpp"

namespace ganrec {

/// Items and their d-dimensional feature vectors. The non-click pseudo-item
/// (id 0, all-zero features) is always present.
class ItemCatalog {
 public:
  explicit ItemCatalog(Index dim) : dim_(dim) {
    check(dim >= 1, "catalog feature dimension must be >= 1");
    add(kNonClickId, Vector::Zero(dim));
  }

  void add(ItemId id, const Vector& features) {
    if (features.size() != dim_) {
      throw Error("inconsistent feature dimension for item " +
                  std::to_string(id) + ": expected " + std::to_string(dim_) +
                  ", got " + std::to_string(features.size()));
    }
    check(features.allFinite(), "non-finite feature for item " + std::to_string(id));
    if (id == kNonClickId) {
      check(features.isZero(0.0), "item 0 is reserved for the non-click pseudo-item");
      if (index_.count(id)) return;
    }
    check(!index_.count(id), "duplicate item id " + std::to_string(id));
    index_.emplace(id, ids_.size());
    ids_.push_back(id);
    features_.push_back(features);
  }

  Index dim() const { return dim_; }
  // Entry count including the pseudo-item.
  std::size_t size() const { return ids_.size(); }
  bool contains(ItemId id) const { return index_.count(id) > 0; }
  const std::vector<ItemId>& ids() const { return ids_; }

  // Real items only, ascending.
  std::vector<ItemId> item_ids() const {
    std::vector<ItemId> out;
    for (ItemId id : ids_)
      if (id != kNonClickId) out.push_back(id);
    std::sort(out.begin(), out.end());
    return out;
  }

  const Vector& features(ItemId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error("unknown item id " + std::to_string(id));
    return features_[it->second];
  }

  // d x ids.size() matrix of the requested items' features.
  Matrix feature_matrix(const std::vector<ItemId>& ids) const {
    Matrix out(dim_, static_cast<Index>(ids.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) out.col(static_cast<Index>(i)) = features(ids[i]);
    return out;
  }

 private:
  Index dim_;
  std::vector<ItemId> ids_;
  std::vector<Vector> features_;
  std::unordered_map<ItemId, std::size_t> index_;
};

struct ClickRecord {
  int step = 1;
  std::vector<ItemId> displayed;
  ItemId chosen = kNonClickId;
  // Present only in rollout dumps.
  std::optional<double> reward;

  bool clicked() const { return chosen != kNonClickId; }
};

struct Trajectory {
  std::int64_t user_id = 0;
  std::vector<ClickRecord> records;
};

inline void validate(const ClickRecord& rec) {
  check(rec.step >= 1, "record step must be >= 1");
  std::vector<ItemId> sorted = rec.displayed;
  std::sort(sorted.begin(), sorted.end());
  check(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
        "duplicate item in displayed set");
  check(std::find(sorted.begin(), sorted.end(), kNonClickId) == sorted.end(),
        "pseudo-item 0 cannot be displayed");
  if (rec.chosen != kNonClickId &&
      std::find(rec.displayed.begin(), rec.displayed.end(), rec.chosen) == rec.displayed.end()) {
    throw Error("chosen not displayed: item " + std::to_string(rec.chosen));
  }
}

inline void validate(const Trajectory& traj) {
  int last = 0;
  for (const auto& rec : traj.records) {
    validate(rec);
    check(rec.step > last, "record steps must be strictly increasing for user " +
                               std::to_string(traj.user_id));
    last = rec.step;
  }
}

/// Last m clicked-item feature vectors, oldest first. Unfilled positions are
/// zero vectors.
class HistoryBuffer {
 public:
  HistoryBuffer(Index m, Index d) : cols_(Matrix::Zero(d, m)) {
    check(m >= 1 && d >= 1, "history buffer needs m >= 1 and d >= 1");
  }

  Index window() const { return cols_.cols(); }
  Index dim() const { return cols_.rows(); }
  // d x m, column j is the (m-j)-th most recent click.
  const Matrix& columns() const { return cols_; }

  void push(const Vector& features) {
    if (features.size() != dim()) {
      throw Error("history push dimension mismatch: expected " + std::to_string(dim()) +
                  ", got " + std::to_string(features.size()));
    }
    const Index m = window();
    if (m > 1) cols_.leftCols(m - 1) = cols_.rightCols(m - 1).eval();
    cols_.col(m - 1) = features;
  }

  bool operator==(const HistoryBuffer& o) const {
    return cols_.rows() == o.cols_.rows() && cols_.cols() == o.cols_.cols() && cols_ == o.cols_;
  }

 private:
  Matrix cols_;
};

inline HistoryBuffer push_click(HistoryBuffer buffer, const Vector& features) {
  buffer.push(features);
  return buffer;
}

struct DatasetSplit {
  std::vector<std::int64_t> train, valid, test;
};

/// Seeded shuffle then largest-remainder allocation of the requested
/// proportions.
inline DatasetSplit split_users(std::vector<std::int64_t> user_ids,
                                std::array<double, 3> proportions = {0.5, 0.125, 0.375},
                                std::uint64_t seed = 0) {
  check(!user_ids.empty(), "split_users: empty user set");
  double total = 0;
  for (double p : proportions) {
    check(p >= 0, "split_users: negative proportion");
    total += p;
  }
  check(std::abs(total - 1.0) <= 1e-9, "split_users: proportions must sum to 1");

  std::sort(user_ids.begin(), user_ids.end());
  check(std::adjacent_find(user_ids.begin(), user_ids.end()) == user_ids.end(),
        "split_users: duplicate user id");
  Rng rng(derive_seed(seed, 0x5b1d));
  std::shuffle(user_ids.begin(), user_ids.end(), rng);

  const auto n = static_cast<double>(user_ids.size());
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    double quota = proportions[i] * n;
    sizes[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    frac[i] = quota - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
  for (std::size_t r = 0; assigned < user_ids.size(); ++r, ++assigned) sizes[order[r % 3]]++;

  DatasetSplit split;
  auto it = user_ids.begin();
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
  it += static_cast<std::ptrdiff_t>(sizes[0]);
  split.valid.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
  it += static_cast<std::ptrdiff_t>(sizes[1]);
  split.test.assign(it, user_ids.end());
  return split;
}

/// K unit-norm items (ids 1..K) drawn from a spherical Gaussian.
inline ItemCatalog synth_catalog(int num_items, Index dim, std::uint64_t seed) {
  check(num_items >= 1, "synth_catalog: need at least one item");
  ItemCatalog catalog(dim);
  Rng rng(derive_seed(seed, 0xca7));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int id = 1; id <= num_items; ++id) {
    Vector f(dim);
    double norm = 0;
    do {
      for (Index i = 0; i < dim; ++i) f[i] = normal(rng);
      norm = f.norm();
    } while (norm < 1e-12);
    catalog.add(id, f / norm);
  }
  return catalog;
}

// ---------------------------------------------------------------------------
// Line-delimited trajectory file.
//
//   meta d=<int> m=<int> k=<int>
//   item <id> <f_1> ... <f_d>
//   rec <user_id> <t> <chosen_id> | <id_1> ... <id_k> [; r=<float>]

struct TrajectoryData {
  ItemCatalog catalog{1};
  std::vector<Trajectory> trajectories;
  int history = 1;
  int display = 1;
};

inline std::string format_float(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

inline void write_trajectories(std::ostream& out, const ItemCatalog& catalog,
                               const std::vector<Trajectory>& trajectories, int history,
                               int display) {
  out << "meta d=" << catalog.dim() << " m=" << history << " k=" << display << '\n';
  for (ItemId id : catalog.item_ids()) {
    out << "item " << id;
    const Vector& f = catalog.features(id);
    for (Index i = 0; i < f.size(); ++i) out << ' ' << format_float(f[i]);
    out << '\n';
  }
  for (const auto& traj : trajectories) {
    for (const auto& rec : traj.records) {
      out << "rec " << traj.user_id << ' ' << rec.step << ' ' << rec.chosen << " |";
      for (ItemId id : rec.displayed) out << ' ' << id;
      if (rec.reward) out << " ; r=" << format_float(*rec.reward);
      out << '\n';
    }
  }
}

inline void save_trajectories(const ItemCatalog& catalog, const std::vector<Trajectory>& trajectories,
                              const std::filesystem::path& path, int history, int display) {
  for (const auto& t : trajectories) {
    validate(t);
    for (const auto& r : t.records) {
      for (ItemId id : r.displayed) check(catalog.contains(id), "unknown item id " + std::to_string(id));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  write_trajectories(out, catalog, trajectories, history, display);
  if (!out) throw Error("write failed: " + path.string());
}

namespace detail {

[[noreturn]] inline void parse_error(std::size_t line_no, const std::string& what) {
  throw Error("line " + std::to_string(line_no) + ": " + what);
}

inline int parse_meta_field(const std::string& token, const std::string& key, std::size_t line_no) {
  if (token.rfind(key + "=", 0) != 0) parse_error(line_no, "expected " + key + "=<int>");
  try {
    std::size_t used = 0;
    int v = std::stoi(token.substr(key.size() + 1), &used);
    if (used != token.size() - key.size() - 1) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    parse_error(line_no, "malformed " + key);
  }
}

}  // namespace detail

inline TrajectoryData read_trajectories(std::istream& in) {
  TrajectoryData data;
  std::map<std::int64_t, std::size_t> user_index;
  bool have_meta = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "meta") {
      if (have_meta) detail::parse_error(line_no, "duplicate meta line");
      std::string d, m, k;
      if (!(ss >> d >> m >> k)) detail::parse_error(line_no, "malformed meta line");
      int dim = detail::parse_meta_field(d, "d", line_no);
      if (dim < 1) detail::parse_error(line_no, "d must be >= 1");
      data.catalog = ItemCatalog(dim);
      data.history = detail::parse_meta_field(m, "m", line_no);
      data.display = detail::parse_meta_field(k, "k", line_no);
      have_meta = true;
      continue;
    }
    if (!have_meta) detail::parse_error(line_no, "meta line must come first");
    if (tag == "item") {
      ItemId id;
      if (!(ss >> id)) detail::parse_error(line_no, "malformed item id");
      std::vector<double> vals;
      double x;
      while (ss >> x) vals.push_back(x);
      if (!ss.eof()) detail::parse_error(line_no, "malformed feature value");
      if (static_cast<Index>(vals.size()) != data.catalog.dim()) {
        detail::parse_error(line_no, "inconsistent feature dimension: expected " +
                                         std::to_string(data.catalog.dim()) + ", got " +
                                         std::to_string(vals.size()));
      }
      try {
        data.catalog.add(id, Eigen::Map<const Vector>(vals.data(), static_cast<Index>(vals.size())));
      } catch (const Error& e) {
        detail::parse_error(line_no, e.what());
      }
    } else if (tag == "rec") {
      std::int64_t user;
      ClickRecord rec;
      std::string bar;
      if (!(ss >> user >> rec.step >> rec.chosen >> bar) || bar != "|")
        detail::parse_error(line_no, "malformed record header");
      std::string tok;
      while (ss >> tok) {
        if (tok == ";") {
          std::string r;
          if (!(ss >> r) || r.rfind("r=", 0) != 0) detail::parse_error(line_no, "malformed reward column");
          try {
            rec.reward = std::stod(r.substr(2));
          } catch (const std::exception&) {
            detail::parse_error(line_no, "malformed reward value");
          }
          if (ss >> tok) detail::parse_error(line_no, "trailing tokens after reward");
          break;
        }
        try {
          std::size_t used = 0;
          rec.displayed.push_back(std::stoll(tok, &used));
          if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
          detail::parse_error(line_no, "malformed displayed item id");
        }
      }
      try {
        validate(rec);
        for (ItemId id : rec.displayed)
          check(data.catalog.contains(id), "unknown item id " + std::to_string(id));
      } catch (const Error& e) {
        detail::parse_error(line_no, e.what());
      }
      auto [it, inserted] = user_index.emplace(user, data.trajectories.size());
      if (inserted) data.trajectories.push_back(Trajectory{user, {}});
      data.trajectories[it->second].records.push_back(std::move(rec));
    } else {
      detail::parse_error(line_no, "unknown line tag '" + tag + "'");
    }
  }
  for (auto& traj : data.trajectories) {
    std::stable_sort(traj.records.begin(), traj.records.end(),
                     [](const ClickRecord& a, const ClickRecord& b) { return a.step < b.step; });
    validate(traj);
  }
  return data;
}

inline TrajectoryData load_trajectories(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_trajectories(in);
}

}  // namespace ganrec
