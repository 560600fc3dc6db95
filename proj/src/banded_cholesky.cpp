#include "mtrack/banded_cholesky.hpp"

#include <algorithm>
#include <cmath>

#include "mtrack/errors.hpp"

namespace mtrack {

BandedSymmetricMatrix::BandedSymmetricMatrix(Eigen::Index n, Eigen::Index bandwidth)
    : n_(n), bw_(bandwidth), data_(Eigen::MatrixXd::Zero(n, bandwidth + 1)) {}

void BandedSymmetricMatrix::add(Eigen::Index i, Eigen::Index j, double v) {
  if (i < j) std::swap(i, j);
  if (i - j > bw_) throw Error(ErrorCode::InvalidArgument, "entry outside matrix band");
  at(i, j) += v;
}

double BandedSymmetricMatrix::operator()(Eigen::Index i, Eigen::Index j) const {
  if (i < j) std::swap(i, j);
  return i - j > bw_ ? 0.0 : at(i, j);
}

void BandedSymmetricMatrix::add_block(Eigen::Index offset, const Eigen::MatrixXd& block) {
  for (Eigen::Index r = 0; r < block.rows(); ++r) {
    for (Eigen::Index c = 0; c <= r; ++c) add(offset + r, offset + c, block(r, c));
  }
}

Eigen::MatrixXd BandedSymmetricMatrix::to_dense() const {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n_, n_);
  for (Eigen::Index i = 0; i < n_; ++i) {
    for (Eigen::Index j = std::max<Eigen::Index>(0, i - bw_); j <= i; ++j) {
      d(i, j) = at(i, j);
      d(j, i) = at(i, j);
    }
  }
  return d;
}

bool BandedSymmetricMatrix::factorize() {
  for (Eigen::Index j = 0; j < n_; ++j) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, j - bw_);
    double d = at(j, j);
    for (Eigen::Index k = lo; k < j; ++k) d -= at(j, k) * at(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    at(j, j) = ljj;
    const Eigen::Index hi = std::min(n_ - 1, j + bw_);
    for (Eigen::Index i = j + 1; i <= hi; ++i) {
      double s = at(i, j);
      for (Eigen::Index k = std::max<Eigen::Index>(lo, i - bw_); k < j; ++k) s -= at(i, k) * at(j, k);
      at(i, j) = s / ljj;
    }
  }
  return true;
}

Eigen::VectorXd BandedSymmetricMatrix::solve(const Eigen::VectorXd& b) const {
  Eigen::VectorXd y = b;
  for (Eigen::Index i = 0; i < n_; ++i) {
    double s = y[i];
    for (Eigen::Index k = std::max<Eigen::Index>(0, i - bw_); k < i; ++k) s -= at(i, k) * y[k];
    y[i] = s / at(i, i);
  }
  for (Eigen::Index i = n_; i-- > 0;) {
    double s = y[i];
    for (Eigen::Index k = i + 1; k <= std::min(n_ - 1, i + bw_); ++k) s -= at(k, i) * y[k];
    y[i] = s / at(i, i);
  }
  return y;
}

}  // namespace mtrack
