#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "freqd/graph.hpp"
#include "test_util.hpp"

using namespace freqd;
using freqd::testing::complete_graph;
using freqd::testing::dense_laplacian;
using freqd::testing::random_matrix;

namespace {

std::set<std::pair<index_t, index_t>> edge_set(const SparseGraph& g) {
  std::set<std::pair<index_t, index_t>> s;
  for (const auto& e : g.undirected_edges()) s.emplace(e.i, e.j);
  return s;
}

// Full sort of all pairwise distances per row, union of the selections.
std::set<std::pair<index_t, index_t>> knn_oracle(const Matrix& x, std::size_t k) {
  const auto n = static_cast<index_t>(x.rows());
  std::set<std::pair<index_t, index_t>> out;
  for (index_t a = 0; a < n; ++a) {
    std::vector<std::pair<double, index_t>> all;
    for (index_t b = 0; b < n; ++b)
      if (b != a) all.emplace_back((x.row(a) - x.row(b)).norm(), b);
    std::sort(all.begin(), all.end());
    for (std::size_t t = 0; t < std::min<std::size_t>(k, all.size()); ++t)
      out.emplace(std::min(a, all[t].second), std::max(a, all[t].second));
  }
  return out;
}

}  // namespace

TEST(KnnGraph, CollinearPoints) {
  Matrix x(3, 1);
  x << 0, 1, 5;
  auto g = build_knn_graph(x, 1);
  std::set<std::pair<index_t, index_t>> expect{{0, 1}, {1, 2}};
  EXPECT_EQ(edge_set(g), expect);
  EXPECT_EQ(g.edges().size(), 4u);
}

TEST(KnnGraph, LargeKGivesCompleteGraph) {
  std::mt19937_64 rng(3);
  auto g = build_knn_graph(random_matrix(4, 3, rng), 3);
  EXPECT_EQ(g.edge_count(), 6u);
  EXPECT_EQ(build_knn_graph(random_matrix(4, 3, rng), 50).edge_count(), 6u);
}

TEST(KnnGraph, IdenticalPoints) {
  Matrix x = Matrix::Ones(2, 3);
  auto g = build_knn_graph(x, 1);
  EXPECT_EQ(g.edge_count(), 1u);
  EXPECT_EQ(edge_set(g), (std::set<std::pair<index_t, index_t>>{{0, 1}}));
}

TEST(KnnGraph, TiesGoToLowerIndex) {
  Matrix x(3, 1);
  x << 0, -1, 1;  // node 0 is equidistant from 1 and 2
  auto g = build_knn_graph(x, 1);
  // 0 picks 1; 1 picks 0; 2 picks 0.
  EXPECT_EQ(edge_set(g), (std::set<std::pair<index_t, index_t>>{{0, 1}, {0, 2}}));
}

TEST(KnnGraph, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix x = random_matrix(25, 4, rng);
    for (std::size_t k : {1u, 3u, 7u}) EXPECT_EQ(edge_set(build_knn_graph(x, k)), knn_oracle(x, k));
  }
}

TEST(KnnGraph, RejectsBadInput) {
  EXPECT_THROW(build_knn_graph(Matrix(0, 3), 1), invalid_argument);
  EXPECT_THROW(build_knn_graph(Matrix::Zero(1, 3), 1), invalid_argument);
  EXPECT_THROW(build_knn_graph(Matrix::Zero(3, 3), 0), invalid_argument);
}

TEST(BipartiteGraph, SingleInteraction) {
  InteractionSet r(1, 1, {{0, 0, 0.0}});
  auto g = build_bipartite_graph(r);
  EXPECT_EQ(g.node_count(), 2u);
  ASSERT_EQ(g.edges().size(), 2u);
  EXPECT_EQ(g.edges()[0].i, 0u);
  EXPECT_EQ(g.edges()[0].j, 1u);
  EXPECT_EQ(g.edges()[1].i, 1u);
  EXPECT_EQ(g.edges()[1].j, 0u);
}

TEST(BipartiteGraph, ItemOffsetAndDegree) {
  InteractionSet r(1, 2, {{0, 0, 0.0}, {0, 1, 1.0}});
  auto g = build_bipartite_graph(r);
  EXPECT_EQ(g.node_count(), 3u);
  EXPECT_EQ(g.degrees()[0], 2.0);
  EXPECT_EQ(edge_set(g), (std::set<std::pair<index_t, index_t>>{{0, 1}, {0, 2}}));
}

TEST(BipartiteGraph, DuplicatesCollapse) {
  InteractionSet r(2, 2, {{0, 1, 0.0}, {0, 1, 5.0}, {1, 0, 1.0}});
  auto g = build_bipartite_graph(r);
  std::set<std::pair<index_t, index_t>> pairs{{0, 2 + 1}, {1, 2 + 0}};
  EXPECT_EQ(edge_set(g), pairs);
  EXPECT_EQ(g.edge_count(), pairs.size());
}

TEST(SparseGraph, RejectsInvalidEdges) {
  EXPECT_THROW(SparseGraph(2, {{0, 0, 1.0}}, GraphKind::ItemKNN), invalid_argument);
  EXPECT_THROW(SparseGraph(2, {{0, 1, 1.0}}, GraphKind::ItemKNN), invalid_argument);
  EXPECT_THROW(SparseGraph(2, {{0, 1, 1.0}, {1, 0, 2.0}}, GraphKind::ItemKNN), invalid_argument);
  EXPECT_THROW(SparseGraph(2, {{0, 1, 0.0}, {1, 0, 0.0}}, GraphKind::ItemKNN), invalid_argument);
  EXPECT_THROW(SparseGraph(2, {{0, 2, 1.0}, {2, 0, 1.0}}, GraphKind::ItemKNN), index_out_of_range);
}

TEST(Laplacian, TwoNodes) {
  auto lap = normalized_laplacian(complete_graph(2));
  Matrix expect(2, 2);
  expect << 1, -1, -1, 1;
  EXPECT_TRUE(lap.dense().isApprox(expect, 1e-15));
}

TEST(Laplacian, TriangleEntriesAndSpectrum) {
  auto l = normalized_laplacian(complete_graph(3)).dense();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(l(i, j), i == j ? 1.0 : -0.5, 1e-15);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(l)};
  EXPECT_NEAR(es.eigenvalues()(0), 0.0, 1e-12);
  EXPECT_NEAR(es.eigenvalues()(1), 1.5, 1e-12);
  EXPECT_NEAR(es.eigenvalues()(2), 1.5, 1e-12);
}

TEST(Laplacian, IsolatedNodeReported) {
  SparseGraph g(3, {{0, 1, 1.0}, {1, 0, 1.0}}, GraphKind::ItemKNN);
  try {
    normalized_laplacian(g);
    FAIL() << "expected isolated_node";
  } catch (const isolated_node& e) {
    EXPECT_EQ(e.node(), 2u);
  }
}

TEST(Laplacian, EntriesMatchDefinition) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    auto g = erdos_renyi(20, 0.25, rng);
    EXPECT_LE((normalized_laplacian(g).dense() - Matrix(dense_laplacian(g))).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Laplacian, EigenvaluesInUnitRange) {
  std::mt19937_64 rng(7);
  for (index_t n : {2u, 5u, 17u, 64u, 128u}) {
    for (double p : {0.05, 0.3, 0.9}) {
      auto g = erdos_renyi(n, p, rng);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense_laplacian(g), Eigen::EigenvaluesOnly);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9);
      EXPECT_LE(es.eigenvalues().maxCoeff(), 2 + 1e-9);
    }
  }
}

TEST(RandomGraph, NoIsolatedNodes) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    auto g = erdos_renyi(30, 0.01, rng);
    for (double d : g.degrees()) EXPECT_GT(d, 0.0);
  }
}

TEST(EdgeDropout, ZeroRateIsIdentity) {
  std::mt19937_64 rng(2);
  auto g = erdos_renyi(20, 0.3, rng);
  EXPECT_EQ(edge_dropout(g, 0.0, 99), g);
}

TEST(EdgeDropout, DeterministicPerSeed) {
  std::mt19937_64 rng(2);
  auto g = erdos_renyi(40, 0.2, rng);
  EXPECT_EQ(edge_dropout(g, 0.3, 17), edge_dropout(g, 0.3, 17));
  EXPECT_NE(edge_dropout(g, 0.3, 17), edge_dropout(g, 0.3, 18));
}

TEST(EdgeDropout, KeptCountMatchesReplay) {
  auto g = complete_graph(4);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    // Replay: one uniform draw per undirected edge in (i, j) order, then one
    // repair draw per node left isolated, in node order.
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::pair<index_t, index_t>> und;
    for (index_t i = 0; i < 4; ++i)
      for (index_t j = i + 1; j < 4; ++j) und.emplace_back(i, j);
    std::set<std::pair<index_t, index_t>> kept;
    for (auto e : und)
      if (unif(rng) >= 0.5) kept.insert(e);
    for (index_t v = 0; v < 4; ++v) {
      bool has = std::any_of(kept.begin(), kept.end(), [&](auto e) { return e.first == v || e.second == v; });
      if (has) continue;
      std::vector<std::pair<index_t, index_t>> inc;
      for (auto e : und)
        if (e.first == v || e.second == v) inc.push_back(e);
      std::uniform_int_distribution<std::size_t> pick(0, inc.size() - 1);
      kept.insert(inc[pick(rng)]);
    }
    auto dropped = edge_dropout(g, 0.5, seed);
    EXPECT_EQ(edge_set(dropped), kept) << "seed " << seed;
  }
}

TEST(EdgeDropout, KeepsSymmetryAndConnectivity) {
  std::mt19937_64 rng(4);
  auto g = erdos_renyi(60, 0.08, rng);
  auto orig = edge_set(g);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto d = edge_dropout(g, 0.9, seed);
    for (double deg : d.degrees()) EXPECT_GT(deg, 0.0);
    for (auto e : edge_set(d)) EXPECT_TRUE(orig.count(e));
    EXPECT_NO_THROW(normalized_laplacian(d));
  }
}

TEST(EdgeDropout, KeepRateNearExpectation) {
  std::mt19937_64 rng(8);
  auto g = erdos_renyi(200, 0.2, rng);
  double kept = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) kept += static_cast<double>(edge_dropout(g, 0.1, seed).edge_count());
  double frac = kept / (10.0 * static_cast<double>(g.edge_count()));
  EXPECT_NEAR(frac, 0.9, 0.01);
}

TEST(EdgeDropout, RejectsBadRate) {
  auto g = complete_graph(3);
  EXPECT_THROW(edge_dropout(g, 1.0, 0), invalid_argument);
  EXPECT_THROW(edge_dropout(g, -0.1, 0), invalid_argument);
}

TEST(GraphFilter, Families) {
  EXPECT_EQ(GraphFilter::identity().order(), 0u);
  EXPECT_EQ(GraphFilter::linear(0.3).coeffs(), (std::vector<double>{1.0, -0.3}));
  EXPECT_EQ(GraphFilter::quadratic(0.1, -0.5).coeffs(), (std::vector<double>{1.0, -0.5, 0.1}));
  EXPECT_THROW(GraphFilter::linear(0.6), invalid_argument);
  EXPECT_THROW(GraphFilter::linear(-0.1), invalid_argument);
  EXPECT_THROW(GraphFilter::quadratic(0.2, -0.5), invalid_argument);  // rises near 2
  EXPECT_THROW(GraphFilter::quadratic(-0.1, 0.1), invalid_argument);
  EXPECT_DOUBLE_EQ(GraphFilter::quadratic(0.1, -0.5).response(2.0), 0.4 - 1.0 + 1.0);
}

TEST(GraphFilter, ValidFiltersAreNonIncreasing) {
  for (double a : {0.0, 0.1, 0.25, 0.45, 0.5}) EXPECT_TRUE(GraphFilter::linear(a).is_non_increasing());
  for (double b : {0.0, -0.2, -0.8}) {
    for (double a : {-0.3, 0.0, -b / 8, -b / 4}) EXPECT_TRUE(GraphFilter::quadratic(a, b).is_non_increasing());
  }
  EXPECT_FALSE(GraphFilter::custom({1.0, 0.1}).is_non_increasing());
}

TEST(ApplyFilter, IdentityReturnsInput) {
  std::mt19937_64 rng(9);
  auto lap = normalized_laplacian(erdos_renyi(12, 0.3, rng));
  Matrix x = random_matrix(12, 5, rng);
  EXPECT_EQ(apply_filter(GraphFilter::identity(), lap, x), x);
}

TEST(ApplyFilter, TwoNodeLinear) {
  auto lap = normalized_laplacian(complete_graph(2));
  Matrix x(2, 1);
  x << 1, 0;
  Matrix y = apply_filter(GraphFilter::linear(0.5), lap, x);
  EXPECT_NEAR(y(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(y(1, 0), 0.5, 1e-15);
}

TEST(ApplyFilter, MatchesDenseSpectralDefinition) {
  std::mt19937_64 rng(10);
  std::vector<GraphFilter> filters{GraphFilter::linear(0.3), GraphFilter::quadratic(0.1, -0.5),
                                   GraphFilter::custom({0.5, -0.2, 0.03, 0.01})};
  for (int t = 0; t < 10; ++t) {
    auto g = erdos_renyi(16, 0.3, rng);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense_laplacian(g));
    Matrix x = random_matrix(16, 3, rng);
    for (const auto& f : filters) {
      Eigen::VectorXd h(16);
      for (int k = 0; k < 16; ++k) h(k) = f.response(es.eigenvalues()(k));
      Eigen::MatrixXd expect = es.eigenvectors() * h.asDiagonal() * es.eigenvectors().transpose() * x;
      Eigen::MatrixXd got = apply_filter(f, normalized_laplacian(g), x);
      EXPECT_LE(freqd::testing::rel_err(got, expect), 1e-9);
    }
  }
}

TEST(ApplyFilter, Linear) {
  std::mt19937_64 rng(12);
  auto lap = normalized_laplacian(erdos_renyi(30, 0.2, rng));
  auto f = GraphFilter::quadratic(0.05, -0.4);
  Matrix x = random_matrix(30, 4, rng), y = random_matrix(30, 4, rng);
  const double a = 1.7, b = -0.3;
  Matrix lhs = apply_filter(f, lap, a * x + b * y);
  Matrix rhs = a * apply_filter(f, lap, x) + b * apply_filter(f, lap, y);
  EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ApplyFilter, RelabelingEquivariance) {
  std::mt19937_64 rng(13);
  const index_t n = 25;
  auto g = erdos_renyi(n, 0.2, rng);
  std::vector<index_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Edge> edges;
  for (const auto& e : g.edges()) edges.push_back({perm[e.i], perm[e.j], e.w});
  SparseGraph pg(n, edges, g.kind());
  Matrix x = random_matrix(n, 3, rng), px(n, 3);
  for (index_t i = 0; i < n; ++i) px.row(perm[i]) = x.row(i);
  auto f = GraphFilter::linear(0.45);
  Matrix y = apply_filter(f, normalized_laplacian(g), x);
  Matrix py = apply_filter(f, normalized_laplacian(pg), px);
  for (index_t i = 0; i < n; ++i) EXPECT_LE((py.row(perm[i]) - y.row(i)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ApplyFilter, DimensionMismatch) {
  auto lap = normalized_laplacian(complete_graph(3));
  EXPECT_THROW(apply_filter(GraphFilter::linear(0.1), lap, Matrix::Zero(4, 2)), dimension_mismatch);
}

TEST(GraphIo, RoundTrip) {
  std::mt19937_64 rng(14);
  auto g = erdos_renyi(15, 0.3, rng);
  std::stringstream ss;
  write_graph(ss, g);
  EXPECT_EQ(ss.str().rfind("nodes 15\n", 0), 0u);
  EXPECT_EQ(read_graph(ss), g);
}

TEST(GraphIo, RejectsMissingHeader) {
  std::stringstream ss("0\t1\t1\n");
  EXPECT_THROW(read_graph(ss), parse_error);
}
