#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace freqd {

using index_t = std::size_t;

/// Dense real matrix, one row per node (user or item).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Error hierarchy. Every failure the library reports derives from freqd::error
// so callers (the CLI in particular) can map them to exit codes in one place.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class dimension_mismatch : public error {
 public:
  using error::error;
};

class index_out_of_range : public error {
 public:
  using error::error;
};

class invalid_argument : public error {
 public:
  using error::error;
};

class isolated_node : public error {
 public:
  explicit isolated_node(index_t node)
      : error("node " + std::to_string(node) + " has degree 0"), node_(node) {}
  index_t node() const noexcept { return node_; }

 private:
  index_t node_;
};

class too_large : public error {
 public:
  too_large(index_t n, index_t cap)
      : error("node count " + std::to_string(n) + " exceeds desk-scale cap " + std::to_string(cap)),
        n_(n) {}
  index_t size() const noexcept { return n_; }

 private:
  index_t n_;
};

class non_monotone_weights : public error {
 public:
  using error::error;
};

class non_finite_loss : public error {
 public:
  using error::error;
};

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw dimension_mismatch(what);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace freqd
