#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <thread>
#include <vector>

#include "freqd/common.hpp"
#include "freqd/data.hpp"
#include "freqd/recmodels.hpp"

namespace freqd {

class not_enough_items : public error {
 public:
  not_enough_items(std::size_t have, std::size_t want)
      : error("only " + std::to_string(have) + " rankable items for top-" + std::to_string(want)) {}
};

class empty_relevant : public error {
 public:
  empty_relevant() : error("relevant set is empty") {}
};

/// Upper bound on worker threads for parallel loops (evaluation).
inline std::size_t& max_threads() {
  static std::size_t n = 1;
  return n;
}

/// Exact top-N over items not in `excluded` (sorted ascending), ordered by
/// descending score with ties broken by ascending item index.
inline std::vector<index_t> rank_topn(std::span<const double> scores, std::size_t n,
                                      std::span<const index_t> excluded = {}) {
  if (n < 1) throw invalid_argument("N must be >= 1");
  std::vector<index_t> cand;
  cand.reserve(scores.size());
  for (index_t i = 0, e = 0; i < scores.size(); ++i) {
    while (e < excluded.size() && excluded[e] < i) ++e;
    if (e < excluded.size() && excluded[e] == i) continue;
    cand.push_back(i);
  }
  if (cand.size() < n) throw not_enough_items(cand.size(), n);
  auto better = [&](index_t a, index_t b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n), cand.end(), better);
  cand.resize(n);
  return cand;
}

/// |top-N ∩ relevant| / |relevant|; `relevant` sorted ascending.
inline double recall_at_n(std::span<const index_t> ranked, std::span<const index_t> relevant) {
  if (relevant.empty()) throw empty_relevant();
  std::size_t hits = 0;
  for (index_t i : ranked) hits += std::binary_search(relevant.begin(), relevant.end(), i) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

/// Binary-relevance NDCG with 1/log2(p+1) discounts at 1-based positions p.
inline double ndcg_at_n(std::span<const index_t> ranked, std::span<const index_t> relevant) {
  if (relevant.empty()) throw empty_relevant();
  double dcg = 0.0;
  for (std::size_t p = 0; p < ranked.size(); ++p)
    if (std::binary_search(relevant.begin(), relevant.end(), ranked[p])) dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  double idcg = 0.0;
  const std::size_t ideal = std::min(ranked.size(), relevant.size());
  for (std::size_t p = 0; p < ideal; ++p) idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  return dcg / idcg;
}

enum class EvalTarget { Validation, Test };

struct MetricTable {
  std::vector<std::size_t> cutoffs;
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> ndcg;
  std::size_t users_evaluated = 0;
  bool validation_excluded = false;

  void write_csv(std::ostream& out) const {
    out << "metric,N,value\n";
    out.precision(10);
    for (auto n : cutoffs) out << "recall," << n << ',' << recall.at(n) << '\n';
    for (auto n : cutoffs) out << "ndcg," << n << ',' << ndcg.at(n) << '\n';
  }

  void write_summary(std::ostream& out) const {
    out << "users evaluated: " << users_evaluated << '\n';
    out << "validation items excluded from ranking: " << (validation_excluded ? "yes" : "no") << '\n';
    out.precision(4);
    out << std::fixed;
    for (auto n : cutoffs) out << "  Recall@" << n << " = " << recall.at(n) << "   NDCG@" << n << " = " << ndcg.at(n) << '\n';
    out << std::defaultfloat;
  }
};

/// Full-ranking evaluation over every item.
///
/// Ranking excludes the user's training items, and also validation items when
/// scoring the test split. Users with no relevant items are skipped.
inline MetricTable evaluate(const Representations& reps, const SplitDataset& split,
                            std::vector<std::size_t> cutoffs = {10, 20}, EvalTarget target = EvalTarget::Test) {
  std::sort(cutoffs.begin(), cutoffs.end());
  if (cutoffs.empty() || cutoffs.front() < 1) throw invalid_argument("cutoffs must be >= 1");
  const InteractionSet& relevant_set = target == EvalTarget::Test ? split.test : split.validation;
  const index_t nu = split.num_users();
  const std::size_t top = cutoffs.back();
  const std::size_t nc = cutoffs.size();

  // Per-user results land in fixed slots so the reduction order never depends
  // on thread scheduling.
  std::vector<double> rec(nu * nc, 0.0), nd(nu * nc, 0.0);
  std::vector<char> counted(nu, 0);

  auto work = [&](index_t begin, index_t end) {
    std::vector<double> scores(split.num_items());
    std::vector<index_t> excluded;
    for (index_t u = begin; u < end; ++u) {
      const auto& relevant = relevant_set.items_of(u);
      if (relevant.empty()) continue;
      Eigen::Map<Vector> s(scores.data(), static_cast<Eigen::Index>(scores.size()));
      s.noalias() = reps.items * reps.users.row(static_cast<Eigen::Index>(u)).transpose();
      excluded = split.train.items_of(u);
      if (target == EvalTarget::Test) {
        const auto& v = split.validation.items_of(u);
        excluded.insert(excluded.end(), v.begin(), v.end());
        std::sort(excluded.begin(), excluded.end());
      }
      std::size_t available = scores.size() - excluded.size();
      auto ranked = rank_topn(scores, std::min(top, available), excluded);
      for (std::size_t c = 0; c < nc; ++c) {
        std::span<const index_t> head(ranked.data(), std::min(cutoffs[c], ranked.size()));
        rec[u * nc + c] = recall_at_n(head, relevant);
        nd[u * nc + c] = ndcg_at_n(head, relevant);
      }
      counted[u] = 1;
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min<std::size_t>(max_threads(), nu / 64 + 1));
  if (threads == 1) {
    work(0, nu);
  } else {
    std::vector<std::thread> pool;
    const index_t chunk = (nu + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      index_t b = std::min<index_t>(nu, t * chunk), e = std::min<index_t>(nu, b + chunk);
      pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }

  MetricTable table;
  table.cutoffs = cutoffs;
  table.validation_excluded = target == EvalTarget::Test;
  std::vector<double> rsum(nc, 0.0), nsum(nc, 0.0);
  for (index_t u = 0; u < nu; ++u) {
    if (!counted[u]) continue;
    ++table.users_evaluated;
    for (std::size_t c = 0; c < nc; ++c) {
      rsum[c] += rec[u * nc + c];
      nsum[c] += nd[u * nc + c];
    }
  }
  const double denom = table.users_evaluated ? static_cast<double>(table.users_evaluated) : 1.0;
  for (std::size_t c = 0; c < nc; ++c) {
    table.recall[cutoffs[c]] = rsum[c] / denom;
    table.ndcg[cutoffs[c]] = nsum[c] / denom;
  }
  return table;
}

inline MetricTable evaluate(const EmbeddingModel& model, const SplitDataset& split,
                            std::vector<std::size_t> cutoffs = {10, 20}, EvalTarget target = EvalTarget::Test) {
  return evaluate(forward(model), split, std::move(cutoffs), target);
}

/// Tracks the best validation score and how long it has not improved.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {
    if (patience < 1) throw invalid_argument("patience must be >= 1");
  }

  /// Records one epoch's score; returns true when it is a new best.
  bool update(double value, std::size_t epoch) {
    if (value > best_) {
      best_ = value;
      best_epoch_ = epoch;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const noexcept { return stale_ >= patience_; }
  double best() const noexcept { return best_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }

 private:
  std::size_t patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
};

}  // namespace freqd
