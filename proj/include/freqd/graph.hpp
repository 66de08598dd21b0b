#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>

#include "freqd/common.hpp"
#include "freqd/data.hpp"

namespace freqd {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class GraphKind { UserKNN, ItemKNN, Bipartite };

struct Edge {
  index_t i = 0;
  index_t j = 0;
  double w = 1.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Undirected weighted graph stored as both directions of every edge.
///
/// Edges are kept sorted by (i, j); construction rejects self-loops,
/// nonpositive weights, out-of-range indices and asymmetric edge lists.
class SparseGraph {
 public:
  SparseGraph() = default;

  SparseGraph(index_t node_count, std::vector<Edge> edges, GraphKind kind)
      : node_count_(node_count), edges_(std::move(edges)), kind_(kind) {
    std::sort(edges_.begin(), edges_.end(),
              [](const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
    for (std::size_t k = 0; k < edges_.size(); ++k) {
      const auto& e = edges_[k];
      if (e.i >= node_count_ || e.j >= node_count_) throw index_out_of_range("edge endpoint out of range");
      if (e.i == e.j) throw invalid_argument("self-loop at node " + std::to_string(e.i));
      if (!(e.w > 0) || !std::isfinite(e.w)) throw invalid_argument("edge weights must be positive");
      if (k > 0 && edges_[k - 1].i == e.i && edges_[k - 1].j == e.j)
        throw invalid_argument("duplicate directed edge");
    }
    for (const auto& e : edges_) {
      auto it = std::lower_bound(edges_.begin(), edges_.end(), Edge{e.j, e.i, 0.0},
                                 [](const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
      if (it == edges_.end() || it->i != e.j || it->j != e.i || it->w != e.w)
        throw invalid_argument("edge list is not symmetric");
    }
  }

  /// Builds a graph from undirected pairs; each pair becomes two directed edges.
  static SparseGraph from_pairs(index_t node_count, const std::set<std::pair<index_t, index_t>>& pairs,
                                GraphKind kind) {
    std::vector<Edge> edges;
    edges.reserve(2 * pairs.size());
    for (auto [a, b] : pairs) {
      edges.push_back({a, b, 1.0});
      edges.push_back({b, a, 1.0});
    }
    return SparseGraph(node_count, std::move(edges), kind);
  }

  index_t node_count() const noexcept { return node_count_; }
  GraphKind kind() const noexcept { return kind_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  /// Number of undirected edges.
  std::size_t edge_count() const noexcept { return edges_.size() / 2; }

  std::vector<double> degrees() const {
    std::vector<double> d(node_count_, 0.0);
    for (const auto& e : edges_) d[e.i] += e.w;
    return d;
  }

  /// Undirected edges with i < j, in (i, j) order.
  std::vector<Edge> undirected_edges() const {
    std::vector<Edge> out;
    out.reserve(edges_.size() / 2);
    for (const auto& e : edges_)
      if (e.i < e.j) out.push_back(e);
    return out;
  }

  SparseMatrix adjacency() const {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(edges_.size());
    for (const auto& e : edges_)
      trips.emplace_back(static_cast<int>(e.i), static_cast<int>(e.j), e.w);
    SparseMatrix a(static_cast<Eigen::Index>(node_count_), static_cast<Eigen::Index>(node_count_));
    a.setFromTriplets(trips.begin(), trips.end());
    return a;
  }

  friend bool operator==(const SparseGraph& a, const SparseGraph& b) {
    return a.node_count_ == b.node_count_ && a.kind_ == b.kind_ && a.edges_ == b.edges_;
  }

 private:
  index_t node_count_ = 0;
  std::vector<Edge> edges_;
  GraphKind kind_ = GraphKind::ItemKNN;
};

/// Exact k-nearest-neighbour graph under Euclidean distance.
///
/// Each row selects its k closest other rows (ties to the lower index); the
/// selection is symmetrized by union and every edge has unit weight.
inline SparseGraph build_knn_graph(const Matrix& embeddings, std::size_t k,
                                   GraphKind kind = GraphKind::ItemKNN) {
  const auto n = static_cast<index_t>(embeddings.rows());
  if (n == 0 || embeddings.cols() == 0) throw invalid_argument("empty embedding matrix");
  if (n < 2) throw invalid_argument("KNN graph needs at least two rows");
  if (k < 1) throw invalid_argument("k must be >= 1");
  if (!embeddings.allFinite()) throw invalid_argument("embeddings contain non-finite values");
  const std::size_t take = std::min<std::size_t>(k, n - 1);

  std::set<std::pair<index_t, index_t>> pairs;
  std::vector<std::pair<double, index_t>> cand;
  cand.reserve(n);
  for (index_t a = 0; a < n; ++a) {
    cand.clear();
    for (index_t b = 0; b < n; ++b) {
      if (b == a) continue;
      double d2 = (embeddings.row(a) - embeddings.row(b)).squaredNorm();
      cand.emplace_back(d2, b);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
    for (std::size_t t = 0; t < take; ++t) {
      index_t b = cand[t].second;
      pairs.emplace(std::min(a, b), std::max(a, b));
    }
  }
  return SparseGraph::from_pairs(n, pairs, kind);
}

/// User-item bipartite graph: users occupy [0, |U|), item i sits at |U| + i.
inline SparseGraph build_bipartite_graph(const InteractionSet& interactions) {
  if (interactions.empty()) throw invalid_argument("no interactions");
  const index_t nu = interactions.num_users();
  std::set<std::pair<index_t, index_t>> pairs;
  for (const auto& r : interactions.rows()) pairs.emplace(r.user, nu + r.item);
  return SparseGraph::from_pairs(nu + interactions.num_items(), pairs, GraphKind::Bipartite);
}

/// G(n, p) random graph. Any node left isolated is joined to a uniformly
/// chosen other node so the normalized Laplacian is defined.
inline SparseGraph erdos_renyi(index_t n, double p, std::mt19937_64& rng, GraphKind kind = GraphKind::ItemKNN) {
  if (n < 2) throw invalid_argument("random graph needs at least 2 nodes");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::set<std::pair<index_t, index_t>> pairs;
  std::vector<bool> touched(n, false);
  for (index_t i = 0; i < n; ++i)
    for (index_t j = i + 1; j < n; ++j)
      if (unif(rng) < p) {
        pairs.emplace(i, j);
        touched[i] = touched[j] = true;
      }
  std::uniform_int_distribution<index_t> other(0, n - 2);
  for (index_t i = 0; i < n; ++i) {
    if (touched[i]) continue;
    index_t j = other(rng);
    if (j >= i) ++j;
    pairs.emplace(std::min(i, j), std::max(i, j));
    touched[i] = touched[j] = true;
  }
  return SparseGraph::from_pairs(n, pairs, kind);
}

/// Symmetric normalized Laplacian I - D^{-1/2} A D^{-1/2}.
struct Laplacian {
  SparseMatrix matrix;
  Vector degree;

  index_t node_count() const noexcept { return static_cast<index_t>(matrix.rows()); }
  Matrix dense() const { return Matrix(matrix); }
};

/// D^{-1/2} A D^{-1/2}; throws isolated_node for a zero-degree node.
inline SparseMatrix normalized_adjacency(const SparseGraph& g, Vector* degree_out = nullptr) {
  auto deg = g.degrees();
  for (index_t v = 0; v < deg.size(); ++v)
    if (!(deg[v] > 0)) throw isolated_node(v);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(g.edges().size());
  for (const auto& e : g.edges())
    trips.emplace_back(static_cast<int>(e.i), static_cast<int>(e.j), e.w / std::sqrt(deg[e.i] * deg[e.j]));
  const auto n = static_cast<Eigen::Index>(g.node_count());
  SparseMatrix a(n, n);
  a.setFromTriplets(trips.begin(), trips.end());
  if (degree_out) *degree_out = Eigen::Map<const Vector>(deg.data(), n);
  return a;
}

inline Laplacian normalized_laplacian(const SparseGraph& g) {
  Laplacian lap;
  SparseMatrix a = normalized_adjacency(g, &lap.degree);
  const auto n = a.rows();
  SparseMatrix id(n, n);
  id.setIdentity();
  lap.matrix = id - a;
  lap.matrix.makeCompressed();
  return lap;
}

/// Drops each undirected edge independently with probability `rate`.
///
/// A node left without edges gets one of its original edges back, chosen
/// uniformly. The same (graph, rate, seed) always yields the same result.
inline SparseGraph edge_dropout(const SparseGraph& g, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw invalid_argument("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return g;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto und = g.undirected_edges();
  std::vector<char> keep(und.size(), 0);
  std::vector<std::size_t> kept_degree(g.node_count(), 0);
  for (std::size_t k = 0; k < und.size(); ++k) {
    if (unif(rng) >= rate) {
      keep[k] = 1;
      ++kept_degree[und[k].i];
      ++kept_degree[und[k].j];
    }
  }
  std::vector<std::vector<std::size_t>> incident(g.node_count());
  for (std::size_t k = 0; k < und.size(); ++k) {
    incident[und[k].i].push_back(k);
    incident[und[k].j].push_back(k);
  }
  for (index_t v = 0; v < g.node_count(); ++v) {
    if (kept_degree[v] > 0 || incident[v].empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, incident[v].size() - 1);
    std::size_t k = incident[v][pick(rng)];
    keep[k] = 1;
    ++kept_degree[und[k].i];
    ++kept_degree[und[k].j];
  }
  std::vector<Edge> edges;
  for (std::size_t k = 0; k < und.size(); ++k) {
    if (!keep[k]) continue;
    edges.push_back(und[k]);
    edges.push_back({und[k].j, und[k].i, und[k].w});
  }
  return SparseGraph(g.node_count(), std::move(edges), g.kind());
}

enum class FilterFamily { Identity, Linear, Quadratic, Custom };

/// Polynomial graph filter H(L) = sum_k theta_k L^k with scalar response
/// h(lambda) = sum_k theta_k lambda^k.
class GraphFilter {
 public:
  static GraphFilter identity() { return GraphFilter({1.0}, FilterFamily::Identity); }

  /// h(lambda) = 1 - alpha * lambda, 0 <= alpha <= 0.5.
  static GraphFilter linear(double alpha) {
    if (!(alpha >= 0.0 && alpha <= 0.5)) throw invalid_argument("linear filter needs 0 <= alpha <= 0.5");
    return GraphFilter({1.0, -alpha}, FilterFamily::Linear);
  }

  /// h(lambda) = a lambda^2 + b lambda + 1, required to be non-increasing on [0, 2].
  static GraphFilter quadratic(double a, double b) {
    // h'(x) = 2 a x + b is linear, so checking both ends of [0, 2] suffices.
    if (!(b <= 0.0 && 4.0 * a + b <= 0.0))
      throw invalid_argument("quadratic filter must be non-increasing on [0, 2]");
    return GraphFilter({1.0, b, a}, FilterFamily::Quadratic);
  }

  static GraphFilter custom(std::vector<double> coeffs) {
    if (coeffs.empty()) throw invalid_argument("filter needs at least one coefficient");
    return GraphFilter(std::move(coeffs), FilterFamily::Custom);
  }

  std::size_t order() const noexcept { return coeffs_.size() - 1; }
  const std::vector<double>& coeffs() const noexcept { return coeffs_; }
  FilterFamily family() const noexcept { return family_; }

  double response(double lambda) const {
    double acc = 0.0;
    for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) acc = acc * lambda + *it;
    return acc;
  }

  /// Samples h on a grid over [0, 2] and checks it never increases.
  bool is_non_increasing(std::size_t samples = 2001) const {
    double prev = response(0.0);
    for (std::size_t s = 1; s < samples; ++s) {
      double cur = response(2.0 * static_cast<double>(s) / static_cast<double>(samples - 1));
      if (cur > prev + 1e-12) return false;
      prev = cur;
    }
    return true;
  }

  std::string describe() const {
    switch (family_) {
      case FilterFamily::Identity: return "identity";
      case FilterFamily::Linear: return "linear:" + detail::format_double(-coeffs_[1]);
      case FilterFamily::Quadratic:
        return "quadratic:" + detail::format_double(coeffs_[2]) + "," + detail::format_double(coeffs_[1]);
      case FilterFamily::Custom: break;
    }
    std::string s = "custom:";
    for (std::size_t k = 0; k < coeffs_.size(); ++k) s += (k ? "," : "") + detail::format_double(coeffs_[k]);
    return s;
  }

 private:
  GraphFilter(std::vector<double> coeffs, FilterFamily family) : coeffs_(std::move(coeffs)), family_(family) {}

  std::vector<double> coeffs_;
  FilterFamily family_;
};

/// sum_k theta_k L^k x via K sparse products; L^k is never formed.
inline Matrix apply_filter(const GraphFilter& filter, const Laplacian& lap, const Matrix& x) {
  require_dims(static_cast<index_t>(x.rows()) == lap.node_count(),
               "feature rows (" + std::to_string(x.rows()) + ") != graph nodes (" +
                   std::to_string(lap.node_count()) + ")");
  const auto& theta = filter.coeffs();
  Matrix out = theta[0] * x;
  if (theta.size() == 1) return out;
  Matrix power = x;
  for (std::size_t k = 1; k < theta.size(); ++k) {
    power = lap.matrix * power;
    out += theta[k] * power;
  }
  return out;
}

/// Writes `nodes <n>` followed by one `i<TAB>j<TAB>w` line per directed edge.
inline void write_graph(std::ostream& out, const SparseGraph& g) {
  out << "nodes " << g.node_count() << '\n';
  for (const auto& e : g.edges()) out << e.i << '\t' << e.j << '\t' << detail::format_double(e.w) << '\n';
}

inline SparseGraph read_graph(std::istream& in, GraphKind kind = GraphKind::ItemKNN) {
  std::string line;
  std::size_t lineno = 0;
  index_t n = 0;
  bool have_header = false;
  std::vector<Edge> edges;
  while (std::getline(in, line)) {
    ++lineno;
    auto view = detail::trim(line);
    if (view.empty()) continue;
    if (!have_header) {
      if (view.substr(0, 6) != "nodes ") throw parse_error(lineno, "expected 'nodes <n>' header");
      double v = 0;
      if (!detail::parse_double(detail::trim(view.substr(6)), v) || v < 0)
        throw parse_error(lineno, "bad node count");
      n = static_cast<index_t>(v);
      have_header = true;
      continue;
    }
    auto f = detail::split_fields(view);
    double i = 0, j = 0, w = 0;
    if (f.size() != 3 || !detail::parse_double(f[0], i) || !detail::parse_double(f[1], j) ||
        !detail::parse_double(f[2], w) || i < 0 || j < 0)
      throw parse_error(lineno, "expected i<TAB>j<TAB>w");
    edges.push_back({static_cast<index_t>(i), static_cast<index_t>(j), w});
  }
  if (!have_header) throw parse_error(lineno, "missing header");
  return SparseGraph(n, std::move(edges), kind);
}

}  // namespace freqd
