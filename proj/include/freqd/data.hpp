#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "freqd/common.hpp"

namespace freqd {

class parse_error : public error {
 public:
  parse_error(std::size_t line, const std::string& why)
      : error("parse error at line " + std::to_string(line) + ": " + why), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class empty_file : public error {
 public:
  explicit empty_file(const std::string& path) : error("empty file: " + path) {}
};

class empty_after_filter : public error {
 public:
  empty_after_filter() : error("no interactions survive the activity filter") {}
};

class too_few_interactions : public error {
 public:
  explicit too_few_interactions(index_t user)
      : error("user " + std::to_string(user) + " has fewer than 3 interactions"), user_(user) {}
  index_t user() const noexcept { return user_; }

 private:
  index_t user_;
};

struct Interaction {
  index_t user = 0;
  index_t item = 0;
  double ts = 0.0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Deduplicated user-item interactions over a dense index space.
///
/// Dense user ids run over [0, num_users()), item ids over [0, num_items()).
/// The original identifiers are kept so that splits can be written back out
/// with a stable mapping. A repeated (user, item) pair keeps its earliest
/// timestamp.
class InteractionSet {
 public:
  InteractionSet() = default;

  InteractionSet(index_t num_users, index_t num_items, const std::vector<Interaction>& rows,
                 std::vector<std::string> user_ids = {}, std::vector<std::string> item_ids = {})
      : num_users_(num_users),
        num_items_(num_items),
        user_ids_(std::move(user_ids)),
        item_ids_(std::move(item_ids)) {
    if (user_ids_.empty()) user_ids_ = default_ids(num_users_);
    if (item_ids_.empty()) item_ids_ = default_ids(num_items_);
    if (user_ids_.size() != num_users_ || item_ids_.size() != num_items_)
      throw invalid_argument("id table size does not match index space");

    std::unordered_map<std::uint64_t, std::size_t> seen;
    seen.reserve(rows.size());
    for (const auto& r : rows) {
      if (r.user >= num_users_ || r.item >= num_items_)
        throw index_out_of_range("interaction (" + std::to_string(r.user) + "," +
                                 std::to_string(r.item) + ") outside index space");
      auto key = pair_key(r.user, r.item);
      auto [it, inserted] = seen.emplace(key, rows_.size());
      if (inserted) {
        rows_.push_back(r);
      } else if (r.ts < rows_[it->second].ts) {
        rows_[it->second].ts = r.ts;
      }
    }
    by_user_.assign(num_users_, {});
    for (const auto& r : rows_) by_user_[r.user].push_back(r.item);
    for (auto& v : by_user_) std::sort(v.begin(), v.end());
  }

  index_t num_users() const noexcept { return num_users_; }
  index_t num_items() const noexcept { return num_items_; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }

  const std::vector<Interaction>& rows() const noexcept { return rows_; }
  const std::vector<index_t>& items_of(index_t user) const { return by_user_.at(user); }
  bool contains(index_t user, index_t item) const {
    const auto& v = by_user_.at(user);
    return std::binary_search(v.begin(), v.end(), item);
  }

  const std::vector<std::string>& user_ids() const noexcept { return user_ids_; }
  const std::vector<std::string>& item_ids() const noexcept { return item_ids_; }

  std::vector<std::size_t> item_degrees() const {
    std::vector<std::size_t> deg(num_items_, 0);
    for (const auto& r : rows_) ++deg[r.item];
    return deg;
  }

  /// Fraction of the user-item matrix that is unobserved.
  double sparsity() const {
    double cells = static_cast<double>(num_users_) * static_cast<double>(num_items_);
    return cells > 0 ? 1.0 - static_cast<double>(rows_.size()) / cells : 1.0;
  }

 private:
  static std::uint64_t pair_key(index_t u, index_t i) {
    return (static_cast<std::uint64_t>(u) << 32) ^ static_cast<std::uint64_t>(i);
  }
  static std::vector<std::string> default_ids(index_t n) {
    std::vector<std::string> ids(n);
    for (index_t k = 0; k < n; ++k) ids[k] = std::to_string(k);
    return ids;
  }

  index_t num_users_ = 0;
  index_t num_items_ = 0;
  std::vector<Interaction> rows_;
  std::vector<std::vector<index_t>> by_user_;
  std::vector<std::string> user_ids_;
  std::vector<std::string> item_ids_;
};

/// Train / validation / test views sharing one index space.
struct SplitDataset {
  InteractionSet train;
  InteractionSet validation;
  InteractionSet test;

  index_t num_users() const noexcept { return train.num_users(); }
  index_t num_items() const noexcept { return train.num_items(); }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  char sep = line.find('\t') != std::string_view::npos ? '\t' : ',';
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  std::string tmp(s);
  if (tmp.empty()) return false;
  char* end = nullptr;
  out = std::strtod(tmp.c_str(), &end);
  return end == tmp.c_str() + tmp.size() && std::isfinite(out);
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Reads `user, item[, timestamp]` lines (tab- or comma-separated).
///
/// Blank lines and lines starting with '#' are skipped. A missing timestamp
/// is replaced by the 1-based line number so file order acts as time order.
/// Dense ids are assigned in order of first appearance.
inline InteractionSet ingest_stream(std::istream& in, const std::string& name = "<stream>") {
  std::vector<Interaction> rows;
  std::vector<std::string> users, items;
  std::unordered_map<std::string, index_t> user_index, item_index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto view = detail::trim(line);
    if (view.empty() || view.front() == '#') continue;
    auto fields = detail::split_fields(view);
    if (fields.size() < 2 || fields.size() > 3)
      throw parse_error(lineno, name + ": expected 2 or 3 fields, got " + std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty()) throw parse_error(lineno, name + ": empty user or item id");
    double ts = static_cast<double>(lineno);
    if (fields.size() == 3 && !detail::parse_double(fields[2], ts))
      throw parse_error(lineno, name + ": bad timestamp '" + std::string(fields[2]) + "'");

    auto intern = [](std::unordered_map<std::string, index_t>& index, std::vector<std::string>& ids,
                     std::string_view key) {
      auto [it, inserted] = index.emplace(std::string(key), ids.size());
      if (inserted) ids.emplace_back(key);
      return it->second;
    };
    index_t u = intern(user_index, users, fields[0]);
    index_t i = intern(item_index, items, fields[1]);
    rows.push_back({u, i, ts});
  }
  if (rows.empty()) throw empty_file(name);
  index_t nu = users.size(), ni = items.size();
  return InteractionSet(nu, ni, rows, std::move(users), std::move(items));
}

inline InteractionSet ingest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw error("cannot open " + path.string());
  return ingest_stream(in, path.string());
}

/// Drops users and items with fewer than `threshold` interactions, repeating
/// until nothing changes, then reindexes densely (relative order preserved).
inline InteractionSet filter_min_interactions(const InteractionSet& data, std::size_t threshold = 10) {
  if (threshold < 1) throw invalid_argument("threshold must be >= 1");
  std::vector<char> user_alive(data.num_users(), 1), item_alive(data.num_items(), 1);
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<std::size_t> ucount(data.num_users(), 0), icount(data.num_items(), 0);
    for (const auto& r : data.rows()) {
      if (user_alive[r.user] && item_alive[r.item]) {
        ++ucount[r.user];
        ++icount[r.item];
      }
    }
    for (index_t u = 0; u < data.num_users(); ++u)
      if (user_alive[u] && ucount[u] < threshold) user_alive[u] = 0, changed = true;
    for (index_t i = 0; i < data.num_items(); ++i)
      if (item_alive[i] && icount[i] < threshold) item_alive[i] = 0, changed = true;
  }

  constexpr index_t dead = static_cast<index_t>(-1);
  std::vector<index_t> umap(data.num_users(), dead), imap(data.num_items(), dead);
  std::vector<std::string> uids, iids;
  for (index_t u = 0; u < data.num_users(); ++u)
    if (user_alive[u]) umap[u] = uids.size(), uids.push_back(data.user_ids()[u]);
  for (index_t i = 0; i < data.num_items(); ++i)
    if (item_alive[i]) imap[i] = iids.size(), iids.push_back(data.item_ids()[i]);

  std::vector<Interaction> rows;
  for (const auto& r : data.rows())
    if (umap[r.user] != dead && imap[r.item] != dead) rows.push_back({umap[r.user], imap[r.item], r.ts});
  if (rows.empty()) throw empty_after_filter();
  index_t nu = uids.size(), ni = iids.size();
  return InteractionSet(nu, ni, rows, std::move(uids), std::move(iids));
}

/// Per-user chronological split.
///
/// Each user's interactions are ordered by timestamp (ties by item index);
/// the first floor(r0*n) go to train, the next floor(r1*n) to validation and
/// the remainder to test.
inline SplitDataset chronological_split(const InteractionSet& data,
                                        std::array<double, 3> ratios = {0.8, 0.1, 0.1}) {
  if (ratios[0] <= 0 || ratios[1] < 0 || ratios[2] < 0)
    throw invalid_argument("split ratios must be nonnegative with a positive train share");
  std::vector<std::vector<Interaction>> per_user(data.num_users());
  for (const auto& r : data.rows()) per_user[r.user].push_back(r);

  std::vector<Interaction> train, val, test;
  for (index_t u = 0; u < data.num_users(); ++u) {
    auto& v = per_user[u];
    if (v.empty()) continue;
    if (v.size() < 3) throw too_few_interactions(u);
    std::sort(v.begin(), v.end(), [](const Interaction& a, const Interaction& b) {
      return a.ts != b.ts ? a.ts < b.ts : a.item < b.item;
    });
    const double n = static_cast<double>(v.size());
    auto n_train = static_cast<std::size_t>(std::floor(ratios[0] * n + 1e-9));
    auto n_val = static_cast<std::size_t>(std::floor(ratios[1] * n + 1e-9));
    n_train = std::min(n_train, v.size());
    n_val = std::min(n_val, v.size() - n_train);
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (k < n_train) train.push_back(v[k]);
      else if (k < n_train + n_val) val.push_back(v[k]);
      else test.push_back(v[k]);
    }
  }
  auto make = [&](const std::vector<Interaction>& rows) {
    return InteractionSet(data.num_users(), data.num_items(), rows, data.user_ids(), data.item_ids());
  };
  return {make(train), make(val), make(test)};
}

namespace detail {

inline void write_rows(const std::filesystem::path& path, const InteractionSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot write " + path.string());
  for (const auto& r : set.rows())
    out << r.user << '\t' << r.item << '\t' << format_double(r.ts) << '\n';
}

inline std::vector<Interaction> read_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw error("missing split file " + path.string());
  std::vector<Interaction> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto view = trim(line);
    if (view.empty()) continue;
    auto f = split_fields(view);
    double u = 0, i = 0, ts = 0;
    if (f.size() != 3 || !parse_double(f[0], u) || !parse_double(f[1], i) || !parse_double(f[2], ts) ||
        u < 0 || i < 0)
      throw parse_error(lineno, "bad split row in " + path.string());
    rows.push_back({static_cast<index_t>(u), static_cast<index_t>(i), ts});
  }
  return rows;
}

}  // namespace detail

/// Writes train.tsv, val.tsv, test.tsv (dense ids) and mapping.tsv.
inline void write_split(const SplitDataset& split, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::write_rows(dir / "train.tsv", split.train);
  detail::write_rows(dir / "val.tsv", split.validation);
  detail::write_rows(dir / "test.tsv", split.test);
  std::ofstream map(dir / "mapping.tsv", std::ios::binary);
  const auto& uids = split.train.user_ids();
  const auto& iids = split.train.item_ids();
  for (index_t u = 0; u < uids.size(); ++u) map << "user\t" << uids[u] << '\t' << u << '\n';
  for (index_t i = 0; i < iids.size(); ++i) map << "item\t" << iids[i] << '\t' << i << '\n';
}

inline SplitDataset read_split(const std::filesystem::path& dir) {
  std::ifstream map(dir / "mapping.tsv");
  if (!map) throw error("missing " + (dir / "mapping.tsv").string());
  std::vector<std::string> uids, iids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(map, line)) {
    ++lineno;
    auto f = detail::split_fields(detail::trim(line));
    if (f.size() != 3) throw parse_error(lineno, "bad mapping row");
    double dense = 0;
    if (!detail::parse_double(f[2], dense)) throw parse_error(lineno, "bad dense id");
    auto& ids = f[0] == "user" ? uids : iids;
    if (static_cast<std::size_t>(dense) != ids.size()) throw parse_error(lineno, "mapping not contiguous");
    ids.emplace_back(f[1]);
  }
  auto make = [&](const char* name) {
    return InteractionSet(uids.size(), iids.size(), detail::read_rows(dir / name), uids, iids);
  };
  return {make("train.tsv"), make("val.tsv"), make("test.tsv")};
}

/// Parameters of the clustered latent-factor generator used for desk-scale
/// studies when no public dataset is available.
struct SyntheticConfig {
  index_t num_users = 300;
  index_t num_items = 400;
  index_t clusters = 8;
  index_t latent_dim = 16;
  double user_noise = 0.6;
  double item_noise = 0.6;
  double temperature = 2.0;
  double popularity_std = 0.5;
  std::size_t min_per_user = 20;
  std::size_t max_per_user = 50;
};

/// Samples interactions from clustered latent preferences.
///
/// Users and items are drawn around shared cluster centres; each user picks
/// its items without replacement with probability proportional to
/// exp(temperature * <p_u, q_i> / sqrt(dim) + popularity_i) (Gumbel top-k).
/// Timestamps are uniform so the chronological split behaves like a random
/// holdout on this data.
inline InteractionSet make_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  if (cfg.max_per_user > cfg.num_items || cfg.min_per_user > cfg.max_per_user || cfg.clusters == 0)
    throw invalid_argument("inconsistent synthetic config");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix centres(cfg.clusters, cfg.latent_dim);
  for (Eigen::Index r = 0; r < centres.rows(); ++r)
    for (Eigen::Index c = 0; c < centres.cols(); ++c) centres(r, c) = normal(rng);

  auto draw = [&](index_t n, double noise) {
    Matrix m(n, cfg.latent_dim);
    std::uniform_int_distribution<index_t> pick(0, cfg.clusters - 1);
    for (index_t r = 0; r < n; ++r) {
      index_t c = pick(rng);
      for (index_t d = 0; d < cfg.latent_dim; ++d) m(r, d) = centres(c, d) + noise * normal(rng);
    }
    return m;
  };
  Matrix users = draw(cfg.num_users, cfg.user_noise);
  Matrix items = draw(cfg.num_items, cfg.item_noise);
  Vector pop(cfg.num_items);
  for (index_t i = 0; i < cfg.num_items; ++i) pop(i) = cfg.popularity_std * normal(rng);

  const double scale = cfg.temperature / std::sqrt(static_cast<double>(cfg.latent_dim));
  std::uniform_int_distribution<std::size_t> count(cfg.min_per_user, cfg.max_per_user);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Interaction> rows;
  std::vector<std::pair<double, index_t>> keys(cfg.num_items);
  for (index_t u = 0; u < cfg.num_users; ++u) {
    std::size_t m = count(rng);
    for (index_t i = 0; i < cfg.num_items; ++i) {
      double g = -std::log(-std::log(std::max(unif(rng), 1e-300)));
      keys[i] = {scale * users.row(u).dot(items.row(i)) + pop(i) + g, i};
    }
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(m), keys.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; k < m; ++k) rows.push_back({u, keys[k].second, unif(rng) * 1e6});
  }
  return InteractionSet(cfg.num_users, cfg.num_items, rows);
}

}  // namespace freqd
