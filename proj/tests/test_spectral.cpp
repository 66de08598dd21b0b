#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "freqd/spectral.hpp"
#include "test_util.hpp"

using namespace freqd;
using freqd::testing::complete_graph;
using freqd::testing::random_matrix;
using freqd::testing::rel_err;

namespace {

SpectralDecomposition random_spectrum(index_t n, std::mt19937_64& rng, double p = 0.3) {
  return eigendecompose(normalized_laplacian(erdos_renyi(n, p, rng)));
}

}  // namespace

TEST(Eigendecompose, TwoNodes) {
  auto dec = eigendecompose(normalized_laplacian(complete_graph(2)));
  EXPECT_NEAR(dec.eigenvalues(0), 0.0, 1e-14);
  EXPECT_NEAR(dec.eigenvalues(1), 2.0, 1e-14);
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(dec.eigenvectors(0, 0), r, 1e-14);
  EXPECT_NEAR(dec.eigenvectors(1, 0), r, 1e-14);
}

TEST(Eigendecompose, ReconstructionAndOrthonormality) {
  std::mt19937_64 rng(1);
  for (index_t n : {8u, 32u, 64u}) {
    auto lap = normalized_laplacian(erdos_renyi(n, 0.2, rng));
    auto dec = eigendecompose(lap);
    Eigen::MatrixXd l = Eigen::MatrixXd(lap.matrix);
    const auto& u = dec.eigenvectors;
    EXPECT_LE((u * dec.eigenvalues.asDiagonal() * u.transpose() - l).norm(), 1e-8 * l.norm());
    EXPECT_LE((u.transpose() * u - Eigen::MatrixXd::Identity(n, n)).norm(), 1e-8);
    for (Eigen::Index k = 1; k < dec.eigenvalues.size(); ++k)
      EXPECT_LE(dec.eigenvalues(k - 1), dec.eigenvalues(k));
    EXPECT_GE(dec.eigenvalues.minCoeff(), -1e-9);
    EXPECT_LE(dec.eigenvalues.maxCoeff(), 2 + 1e-9);
  }
}

TEST(Eigendecompose, SignCanonical) {
  std::mt19937_64 rng(2);
  auto dec = random_spectrum(20, rng);
  for (Eigen::Index c = 0; c < dec.eigenvectors.cols(); ++c) {
    for (Eigen::Index r = 0; r < dec.eigenvectors.rows(); ++r) {
      if (std::abs(dec.eigenvectors(r, c)) > 1e-10) {
        EXPECT_GT(dec.eigenvectors(r, c), 0.0);
        break;
      }
    }
  }
}

TEST(Eigendecompose, TooLarge) {
  std::set<std::pair<index_t, index_t>> path;
  for (index_t i = 0; i + 1 < 5000; ++i) path.emplace(i, i + 1);
  auto lap = normalized_laplacian(SparseGraph::from_pairs(5000, path, GraphKind::ItemKNN));
  try {
    eigendecompose(lap);
    FAIL() << "expected too_large";
  } catch (const too_large& e) {
    EXPECT_EQ(e.size(), 5000u);
  }
}

TEST(FrequencyComponent, SumRecoversSignal) {
  std::mt19937_64 rng(3);
  auto dec = random_spectrum(16, rng);
  Matrix x = random_matrix(16, 4, rng);
  Matrix sum = Matrix::Zero(16, 4);
  for (index_t k = 1; k <= 16; ++k) sum += frequency_component(x, k, dec).component;
  EXPECT_LE((sum - x).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FrequencyComponent, SingleEigenvectorSignal) {
  std::mt19937_64 rng(4);
  auto dec = random_spectrum(12, rng);
  Matrix x(12, 3);
  for (int c = 0; c < 3; ++c) x.col(c) = dec.eigenvectors.col(0);
  EXPECT_LE((frequency_component(x, 1, dec).component - x).cwiseAbs().maxCoeff(), 1e-12);
  for (index_t k = 2; k <= 12; ++k) EXPECT_LE(frequency_component(x, k, dec).component.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FrequencyComponent, MatchesOuterProduct) {
  std::mt19937_64 rng(5);
  auto dec = random_spectrum(8, rng);
  Matrix x = random_matrix(8, 3, rng);
  for (index_t k = 1; k <= 8; ++k) {
    Eigen::VectorXd u = dec.eigenvectors.col(static_cast<Eigen::Index>(k - 1));
    Eigen::MatrixXd outer = u * u.transpose();
    Matrix expect = outer * x;
    auto fc = frequency_component(x, k, dec);
    EXPECT_EQ(fc.index, k);
    EXPECT_LE((fc.component - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(FrequencyComponent, IndexRange) {
  std::mt19937_64 rng(6);
  auto dec = random_spectrum(5, rng);
  Matrix x = Matrix::Zero(5, 2);
  EXPECT_THROW(frequency_component(x, 0, dec), index_out_of_range);
  EXPECT_THROW(frequency_component(x, 6, dec), index_out_of_range);
}

TEST(FrequencyComponent, ParsevalCompleteness) {
  std::mt19937_64 rng(7);
  for (index_t n : {4u, 16u, 64u}) {
    auto dec = random_spectrum(n, rng);
    Matrix x = random_matrix(n, 5, rng);
    double sum = 0;
    for (index_t k = 1; k <= n; ++k) sum += frequency_component(x, k, dec).component.squaredNorm();
    EXPECT_LE(rel_err(sum, x.squaredNorm()), 1e-9);
  }
}

TEST(PerFrequencyLosses, IdenticalFeaturesGiveZero) {
  std::mt19937_64 rng(8);
  auto dec = random_spectrum(10, rng);
  Matrix t = random_matrix(10, 4, rng);
  for (double v : per_frequency_losses(t, t, dec)) EXPECT_EQ(v, 0.0);
}

TEST(PerFrequencyLosses, SumEqualsFrobenius) {
  std::mt19937_64 rng(9);
  auto dec = random_spectrum(16, rng);
  Matrix s = random_matrix(16, 6, rng), t = random_matrix(16, 6, rng);
  auto per_k = per_frequency_losses(s, t, dec);
  double direct = 0;
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (Eigen::Index j = 0; j < s.cols(); ++j) direct += (s(i, j) - t(i, j)) * (s(i, j) - t(i, j));
  EXPECT_LE(rel_err(std::accumulate(per_k.begin(), per_k.end(), 0.0), direct), 1e-9);
}

TEST(PerFrequencyLosses, SingleEigenvectorDifference) {
  std::mt19937_64 rng(10);
  auto dec = random_spectrum(10, rng);
  Eigen::RowVectorXd v(3);
  v << 1.0, -2.0, 0.5;
  Matrix t = random_matrix(10, 3, rng);
  Matrix s = t + dec.eigenvectors.col(2) * v;
  auto per_k = per_frequency_losses(s, t, dec);
  for (index_t k = 0; k < 10; ++k) {
    if (k == 2)
      EXPECT_NEAR(per_k[k], v.squaredNorm(), 1e-12);
    else
      EXPECT_LE(per_k[k], 1e-24);
  }
}

TEST(PerFrequencyLosses, ShapeMismatch) {
  std::mt19937_64 rng(11);
  auto dec = random_spectrum(6, rng);
  EXPECT_THROW(per_frequency_losses(Matrix::Zero(6, 2), Matrix::Zero(6, 3), dec), dimension_mismatch);
  EXPECT_THROW(per_frequency_losses(Matrix::Zero(5, 2), Matrix::Zero(5, 2), dec), dimension_mismatch);
}

TEST(KnowledgeGroups, EightNodes) {
  auto g = KnowledgeGroups::for_size(8);
  // 0-based half-open bands {0,1},{2,3},{4,5},{6,7}
  EXPECT_EQ(g.bounds, (std::array<index_t, 5>{0, 2, 4, 6, 8}));
}

TEST(KnowledgeGroups, SevenNodes) {
  auto g = KnowledgeGroups::for_size(7);
  // 1-based {1},{2,3},{4,5},{6,7}
  EXPECT_EQ(g.bounds, (std::array<index_t, 5>{0, 1, 3, 5, 7}));
  EXPECT_EQ(g.group_of(0), 0);
  EXPECT_EQ(g.group_of(2), 1);
  EXPECT_EQ(g.group_of(6), 3);
}

TEST(KnowledgeGroups, PartitionForEverySize) {
  for (index_t n = 1; n <= 40; ++n) {
    auto g = KnowledgeGroups::for_size(n);
    std::vector<int> hits(n, 0);
    for (int grp = 0; grp < 4; ++grp)
      for (index_t k = g.begin(grp); k < g.end(grp); ++k) ++hits[k];
    for (int h : hits) EXPECT_EQ(h, 1);
  }
}

TEST(GroupLosses, UnitLosses) {
  std::vector<double> per_k(8, 1.0);
  EXPECT_EQ(group_losses(per_k, KnowledgeGroups::for_size(8)), (std::array<double, 4>{2, 2, 2, 2}));
}

TEST(GroupLosses, SumToTotal) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> unif(0.0, 3.0);
  for (index_t n : {5u, 13u, 64u}) {
    std::vector<double> per_k(n);
    for (double& v : per_k) v = unif(rng);
    auto g = group_losses(per_k, KnowledgeGroups::for_size(n));
    double total = 0;
    for (double v : per_k) total += v;
    EXPECT_NEAR(g[0] + g[1] + g[2] + g[3], total, 1e-12 * total);
  }
}

TEST(ReweightedLoss, UnitWeightsGivePlainLoss) {
  std::mt19937_64 rng(13);
  auto dec = random_spectrum(16, rng);
  Matrix s = random_matrix(16, 4, rng), t = random_matrix(16, 4, rng);
  double got = reweighted_loss_explicit(s, t, dec, std::vector<double>(16, 1.0), true);
  EXPECT_LE(rel_err(got, (s - t).squaredNorm()), 1e-12);
}

TEST(ReweightedLoss, SquaredResponseMatchesFilteredLoss) {
  std::mt19937_64 rng(14);
  auto g = erdos_renyi(16, 0.3, rng);
  auto lap = normalized_laplacian(g);
  auto dec = eigendecompose(lap);
  Matrix s = random_matrix(16, 4, rng), t = random_matrix(16, 4, rng);
  for (double a : {0.1, 0.3, 0.45, 0.5}) {
    auto f = GraphFilter::linear(a);
    double filtered = (apply_filter(f, lap, s) - apply_filter(f, lap, t)).squaredNorm();
    double spectral = reweighted_loss_explicit(s, t, dec, squared_response_weights(f, dec), true);
    EXPECT_LE(rel_err(filtered, spectral), 1e-9);
  }
}

TEST(ReweightedLoss, GroupWeightsAreLinear) {
  std::mt19937_64 rng(15);
  auto dec = random_spectrum(22, rng);
  Matrix s = random_matrix(22, 4, rng), t = random_matrix(22, 4, rng);
  std::array<double, 4> w{1.0, 0.75, 0.5, 0.25};
  auto groups = group_losses(per_frequency_losses(s, t, dec), KnowledgeGroups::for_size(22));
  double expect = w[0] * groups[0] + w[1] * groups[1] + w[2] * groups[2] + w[3] * groups[3];
  EXPECT_LE(rel_err(reweighted_loss_explicit(s, t, dec, broadcast_group_weights(w, 22), true), expect), 1e-12);
}

TEST(ReweightedLoss, StrictModeRejectsIncreasingWeights) {
  std::mt19937_64 rng(16);
  auto dec = random_spectrum(8, rng);
  Matrix s = random_matrix(8, 2, rng), t = random_matrix(8, 2, rng);
  auto w = broadcast_group_weights({0.25, 0.5, 0.75, 1.0}, 8);
  EXPECT_THROW(reweighted_loss_explicit(s, t, dec, w, true), non_monotone_weights);
  EXPECT_NO_THROW(reweighted_loss_explicit(s, t, dec, w, false));
  w[3] = -1.0;
  EXPECT_THROW(reweighted_loss_explicit(s, t, dec, w, false), invalid_argument);
}

TEST(ReweightedLoss, SquaredResponseNonIncreasing) {
  std::mt19937_64 rng(17);
  auto dec = random_spectrum(40, rng, 0.15);
  for (const auto& f : {GraphFilter::identity(), GraphFilter::linear(0.45), GraphFilter::linear(0.5),
                        GraphFilter::quadratic(0.1, -0.5), GraphFilter::quadratic(-0.2, -0.1)}) {
    auto w = squared_response_weights(f, dec);
    for (std::size_t k = 1; k < w.size(); ++k) EXPECT_LE(w[k], w[k - 1] + 1e-12);
  }
}

TEST(SpectralOperator, MatchesPolynomialFilter) {
  std::mt19937_64 rng(18);
  auto lap = normalized_laplacian(erdos_renyi(24, 0.2, rng));
  auto dec = eigendecompose(lap);
  auto f = GraphFilter::quadratic(0.1, -0.5);
  std::vector<double> h(dec.size());
  for (index_t k = 0; k < dec.size(); ++k) h[k] = f.response(dec.eigenvalues(static_cast<Eigen::Index>(k)));
  Matrix x = random_matrix(24, 3, rng);
  Matrix y = apply_filter(f, lap, x);
  EXPECT_LE(rel_err(apply_spectral(dec, h, x), y), 1e-10);
  EXPECT_LE(rel_err(Matrix(spectral_operator(dec, h) * x), y), 1e-10);
}

TEST(VerifyFrequencySum, RandomInstances) {
  std::mt19937_64 rng(19);
  for (index_t n : {8u, 16u, 32u}) {
    auto dec = random_spectrum(n, rng);
    auto r = verify_frequency_sum(dec, random_matrix(n, 8, rng), random_matrix(n, 8, rng));
    EXPECT_TRUE(r.passed(1e-9)) << r;
  }
}

TEST(VerifyFilteredSum, IdentityFilter) {
  std::mt19937_64 rng(20);
  auto lap = normalized_laplacian(erdos_renyi(10, 0.3, rng));
  Matrix s = random_matrix(10, 3, rng), t = random_matrix(10, 3, rng);
  auto r = verify_filtered_sum(lap, GraphFilter::identity(), s, t);
  EXPECT_DOUBLE_EQ(r.lhs, (s - t).squaredNorm());
  EXPECT_LE(rel_err(r.rhs, (s - t).squaredNorm()), 1e-12);
}

TEST(VerifyFilteredSum, LinearFilterRandomGraph) {
  std::mt19937_64 rng(21);
  auto lap = normalized_laplacian(erdos_renyi(16, 0.3, rng));
  auto r = verify_filtered_sum(lap, GraphFilter::linear(0.3), random_matrix(16, 8, rng), random_matrix(16, 8, rng));
  EXPECT_TRUE(r.passed(1e-9)) << r;
}

TEST(VerifyFilteredSum, EqualFeaturesGiveZero) {
  std::mt19937_64 rng(22);
  auto lap = normalized_laplacian(erdos_renyi(9, 0.3, rng));
  Matrix t = random_matrix(9, 3, rng);
  auto r = verify_filtered_sum(lap, GraphFilter::linear(0.45), t, t);
  EXPECT_EQ(r.lhs, 0.0);
  EXPECT_EQ(r.rhs, 0.0);
  EXPECT_EQ(r.rel_err, 0.0);
}

TEST(VerifyPairwiseSum, EqualFeaturesGiveZero) {
  std::mt19937_64 rng(23);
  auto dec = random_spectrum(8, rng);
  Matrix s = random_matrix(8, 3, rng);
  auto r = verify_pairwise_sum(dec, s, s);
  EXPECT_EQ(r.lhs, 0.0);
  EXPECT_LE(r.rhs, 1e-24);
}

TEST(VerifyPairwiseSum, RandomEightNodes) {
  std::mt19937_64 rng(24);
  auto dec = random_spectrum(8, rng);
  auto r = verify_pairwise_sum(dec, random_matrix(8, 3, rng), random_matrix(8, 5, rng));
  EXPECT_TRUE(r.passed(1e-8)) << r;
}

TEST(VerifyPairwiseSum, SingleComponentSignal) {
  std::mt19937_64 rng(25);
  auto dec = random_spectrum(8, rng);
  Eigen::RowVectorXd a(3);
  a << 0.5, 1.0, -2.0;
  Matrix s = dec.eigenvectors.col(0) * a;
  Matrix t = Matrix::Zero(8, 3);
  // Only the (1, 1) pair carries anything.
  auto c1 = frequency_component(s, 1, dec).component;
  double pair11 = (c1 * c1.transpose()).squaredNorm();
  auto r = verify_pairwise_sum(dec, s, t);
  EXPECT_LE(rel_err(r.lhs, pair11), 1e-12);
  EXPECT_LE(rel_err(r.rhs, pair11), 1e-12);
}

TEST(VerifyPairwiseSum, TooLarge) {
  std::mt19937_64 rng(26);
  auto dec = random_spectrum(65, rng);
  EXPECT_THROW(verify_pairwise_sum(dec, Matrix::Zero(65, 2), Matrix::Zero(65, 2)), too_large);
}

TEST(VerifyReport, KeyValueOutput) {
  VerifyReport r{2.0, 2.0, 0.0};
  std::ostringstream os;
  os << r;
  EXPECT_EQ(os.str(), "lhs=2\nrhs=2\nrel_err=0\n");
}
