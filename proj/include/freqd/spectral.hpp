#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <ostream>
#include <vector>

#include <Eigen/Eigenvalues>

#include "freqd/common.hpp"
#include "freqd/graph.hpp"

namespace freqd {

inline constexpr index_t kDefaultSpectralCap = 4096;
inline constexpr index_t kPairwiseSpectralCap = 64;

/// Eigenpairs of a normalized Laplacian, eigenvalues ascending.
///
/// Column k of `eigenvectors` is u_{k+1}; each column is sign-canonical
/// (its first entry with magnitude above 1e-10 is positive).
struct SpectralDecomposition {
  Vector eigenvalues;
  Eigen::MatrixXd eigenvectors;

  index_t size() const noexcept { return static_cast<index_t>(eigenvalues.size()); }
};

inline SpectralDecomposition eigendecompose(const Laplacian& lap, index_t cap = kDefaultSpectralCap) {
  const index_t n = lap.node_count();
  if (n > cap) throw too_large(n, cap);
  Eigen::MatrixXd dense = Eigen::MatrixXd(lap.matrix);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dense, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) throw error("eigendecomposition did not converge");
  SpectralDecomposition dec{solver.eigenvalues(), solver.eigenvectors()};
  for (Eigen::Index c = 0; c < dec.eigenvectors.cols(); ++c) {
    for (Eigen::Index r = 0; r < dec.eigenvectors.rows(); ++r) {
      double v = dec.eigenvectors(r, c);
      if (std::abs(v) > 1e-10) {
        if (v < 0) dec.eigenvectors.col(c) *= -1.0;
        break;
      }
    }
  }
  return dec;
}

struct FrequencyComponent {
  index_t index = 0;  // 1-based
  Matrix component;
};

/// u_k u_k^T x for 1-based k.
inline FrequencyComponent frequency_component(const Matrix& x, index_t k, const SpectralDecomposition& dec) {
  if (k < 1 || k > dec.size()) throw index_out_of_range("frequency index " + std::to_string(k));
  require_dims(static_cast<index_t>(x.rows()) == dec.size(), "feature rows != spectrum size");
  const auto u = dec.eigenvectors.col(static_cast<Eigen::Index>(k - 1));
  Eigen::RowVectorXd coeff = u.transpose() * x;
  return {k, u * coeff};
}

/// ||u_k u_k^T (s_proj - t)||_F^2 for every k (0-based position k-1).
inline std::vector<double> per_frequency_losses(const Matrix& s_proj, const Matrix& t,
                                                const SpectralDecomposition& dec) {
  require_dims(s_proj.rows() == t.rows() && s_proj.cols() == t.cols(), "projected student and teacher shapes differ");
  require_dims(static_cast<index_t>(t.rows()) == dec.size(), "feature rows != spectrum size");
  Eigen::MatrixXd coeff = dec.eigenvectors.transpose() * (s_proj - t);
  std::vector<double> out(dec.size());
  for (index_t k = 0; k < dec.size(); ++k) out[k] = coeff.row(static_cast<Eigen::Index>(k)).squaredNorm();
  return out;
}

/// The four consecutive frequency bands, as half-open 0-based ranges.
struct KnowledgeGroups {
  std::array<index_t, 5> bounds{};

  static KnowledgeGroups for_size(index_t n) { return {{0, n / 4, n / 2, 3 * n / 4, n}}; }

  index_t size() const noexcept { return bounds[4]; }
  index_t begin(int g) const { return bounds.at(static_cast<std::size_t>(g)); }
  index_t end(int g) const { return bounds.at(static_cast<std::size_t>(g) + 1); }

  int group_of(index_t k) const {
    for (int g = 0; g < 4; ++g)
      if (k < end(g)) return g;
    throw index_out_of_range("frequency position " + std::to_string(k));
  }
};

inline std::array<double, 4> group_losses(const std::vector<double>& per_k, const KnowledgeGroups& groups) {
  require_dims(per_k.size() == groups.size(), "per-frequency list length != group partition size");
  std::array<double, 4> out{};
  for (int g = 0; g < 4; ++g)
    for (index_t k = groups.begin(g); k < groups.end(g); ++k) out[static_cast<std::size_t>(g)] += per_k[k];
  return out;
}

/// Broadcasts four group weights to one weight per frequency.
inline std::vector<double> broadcast_group_weights(const std::array<double, 4>& w, index_t n) {
  auto groups = KnowledgeGroups::for_size(n);
  std::vector<double> out(n);
  for (index_t k = 0; k < n; ++k) out[k] = w[static_cast<std::size_t>(groups.group_of(k))];
  return out;
}

/// g(lambda_k) = h(lambda_k)^2 for a polynomial filter.
inline std::vector<double> squared_response_weights(const GraphFilter& filter, const SpectralDecomposition& dec) {
  std::vector<double> w(dec.size());
  for (index_t k = 0; k < dec.size(); ++k) {
    double h = filter.response(dec.eigenvalues(static_cast<Eigen::Index>(k)));
    w[k] = h * h;
  }
  return w;
}

/// sum_k g(lambda_k) ||u_k u_k^T (s_proj - t)||_F^2.
///
/// Weights must be nonnegative. With `strict`, they must also be
/// non-increasing along the ascending spectrum (group-ablation studies turn
/// this off on purpose).
inline double reweighted_loss_explicit(const Matrix& s_proj, const Matrix& t, const SpectralDecomposition& dec,
                                       const std::vector<double>& weights, bool strict = false) {
  require_dims(weights.size() == dec.size(), "one weight per frequency required");
  for (index_t k = 0; k < weights.size(); ++k) {
    if (!(weights[k] >= 0.0)) throw invalid_argument("weights must be nonnegative");
    if (strict && k > 0 && weights[k] > weights[k - 1] + 1e-12)
      throw non_monotone_weights("weight increases at frequency " + std::to_string(k + 1));
  }
  auto per_k = per_frequency_losses(s_proj, t, dec);
  double total = 0.0;
  for (index_t k = 0; k < per_k.size(); ++k) total += weights[k] * per_k[k];
  return total;
}

/// U diag(response) U^T x without forming the n x n operator.
inline Matrix apply_spectral(const SpectralDecomposition& dec, const std::vector<double>& response, const Matrix& x) {
  require_dims(response.size() == dec.size() && static_cast<index_t>(x.rows()) == dec.size(),
               "spectral filter shape mismatch");
  Eigen::MatrixXd coeff = dec.eigenvectors.transpose() * x;
  for (index_t k = 0; k < response.size(); ++k) coeff.row(static_cast<Eigen::Index>(k)) *= response[k];
  return dec.eigenvectors * coeff;
}

/// Dense operator U diag(response) U^T.
inline Matrix spectral_operator(const SpectralDecomposition& dec, const std::vector<double>& response) {
  require_dims(response.size() == dec.size(), "spectral filter shape mismatch");
  Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(response.data(), static_cast<Eigen::Index>(response.size()));
  return dec.eigenvectors * r.asDiagonal() * dec.eigenvectors.transpose();
}

struct VerifyReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double rel_err = 0.0;

  bool passed(double tol) const { return std::isfinite(rel_err) && rel_err <= tol; }
};

inline double relative_error(double lhs, double rhs) {
  double scale = std::max(std::abs(lhs), std::abs(rhs));
  return scale == 0.0 ? 0.0 : std::abs(lhs - rhs) / scale;
}

inline std::ostream& operator<<(std::ostream& os, const VerifyReport& r) {
  os.precision(17);
  return os << "lhs=" << r.lhs << "\nrhs=" << r.rhs << "\nrel_err=" << r.rel_err << '\n';
}

/// Frobenius loss decomposed over frequencies: ||s_proj - t||^2 against the per-k sum.
inline VerifyReport verify_frequency_sum(const SpectralDecomposition& dec, const Matrix& s_proj, const Matrix& t) {
  VerifyReport r;
  r.lhs = (s_proj - t).squaredNorm();
  for (double v : per_frequency_losses(s_proj, t, dec)) r.rhs += v;
  r.rel_err = relative_error(r.lhs, r.rhs);
  return r;
}

/// Filtered loss via sparse polynomial products against the h^2-weighted spectral sum.
inline VerifyReport verify_filtered_sum(const Laplacian& lap, const GraphFilter& filter, const Matrix& s_proj,
                                    const Matrix& t, index_t cap = kDefaultSpectralCap) {
  require_dims(s_proj.rows() == t.rows() && s_proj.cols() == t.cols(), "projected student and teacher shapes differ");
  VerifyReport r;
  r.lhs = (apply_filter(filter, lap, s_proj) - apply_filter(filter, lap, t)).squaredNorm();
  auto dec = eigendecompose(lap, cap);
  r.rhs = reweighted_loss_explicit(s_proj, t, dec, squared_response_weights(filter, dec));
  r.rel_err = relative_error(r.lhs, r.rhs);
  return r;
}

/// ||S S^T - T T^T||_F^2 against the double sum over frequency pairs, with
/// every rank-one component product formed explicitly.
inline VerifyReport verify_pairwise_sum(const SpectralDecomposition& dec, const Matrix& s, const Matrix& t) {
  const index_t n = dec.size();
  if (n > kPairwiseSpectralCap) throw too_large(n, kPairwiseSpectralCap);
  require_dims(static_cast<index_t>(s.rows()) == n && static_cast<index_t>(t.rows()) == n,
               "feature rows != spectrum size");
  VerifyReport r;
  r.lhs = (s * s.transpose() - t * t.transpose()).squaredNorm();

  std::vector<Matrix> sk(n), tk(n);
  for (index_t k = 0; k < n; ++k) {
    sk[k] = frequency_component(s, k + 1, dec).component;
    tk[k] = frequency_component(t, k + 1, dec).component;
  }
  for (index_t k = 0; k < n; ++k)
    for (index_t p = 0; p < n; ++p)
      r.rhs += (sk[k] * sk[p].transpose() - tk[k] * tk[p].transpose()).squaredNorm();
  r.rel_err = relative_error(r.lhs, r.rhs);
  return r;
}

}  // namespace freqd
