#pragma once

#include <Eigen/Core>

namespace mtrack {

/// Symmetric matrix stored as its lower band: entry (i, j) with
/// 0 ≤ i − j ≤ bandwidth.
class BandedSymmetricMatrix {
 public:
  BandedSymmetricMatrix() = default;
  BandedSymmetricMatrix(Eigen::Index n, Eigen::Index bandwidth);

  Eigen::Index size() const { return n_; }
  Eigen::Index bandwidth() const { return bw_; }

  /// Adds v to (i, j) and, implicitly, (j, i). |i − j| must be within the band.
  void add(Eigen::Index i, Eigen::Index j, double v);
  double operator()(Eigen::Index i, Eigen::Index j) const;
  /// Adds a dense symmetric block at (offset, offset).
  void add_block(Eigen::Index offset, const Eigen::MatrixXd& block);
  void set_zero() { data_.setZero(); }

  Eigen::MatrixXd to_dense() const;
  Eigen::VectorXd diagonal() const { return data_.col(0); }
  void add_to_diagonal(const Eigen::VectorXd& d) { data_.col(0) += d; }

  /// In-place L·Lᵀ factorisation. Returns false if a pivot is not positive.
  bool factorize();
  /// Requires a successful factorize().
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;

 private:
  double& at(Eigen::Index i, Eigen::Index j) { return data_(i, i - j); }
  double at(Eigen::Index i, Eigen::Index j) const { return data_(i, i - j); }

  Eigen::Index n_ = 0, bw_ = 0;
  Eigen::MatrixXd data_;  // row i, column d holds (i, i − d)
};

}  // namespace mtrack
