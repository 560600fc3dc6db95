#pragma once

// Small dense Levenberg-Marquardt used for single-camera / single-point /
// single-epoch refinements. The trajectory adjustment has its own banded
// solver in adjustment.cpp.

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace mtrack::detail {

struct DenseLmOptions {
  int max_iterations = 100;
  double function_tolerance = 1e-16;
  double gradient_tolerance = 1e-14;
  double step_tolerance = 1e-15;
  double initial_lambda = 1e-4;
};

struct DenseLmSummary {
  Eigen::VectorXd x;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Central-difference Jacobian of a residual-only callable r = f(x).
template <typename Fn>
Eigen::MatrixXd numeric_jacobian(Fn&& f, const Eigen::VectorXd& x, double step = 1e-6) {
  const Eigen::VectorXd r0 = f(x);
  Eigen::MatrixXd J(r0.size(), x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = step * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    const Eigen::VectorXd rp = f(xp);
    xp[j] = x[j] - h;
    const Eigen::VectorXd rm = f(xp);
    xp[j] = x[j];
    J.col(j) = (rp - rm) / (2.0 * h);
  }
  return J;
}

/// Minimises 0.5·|r(x)|². `fn(x, r, J)` fills the residual and, when J is
/// non-null, the Jacobian.
template <typename Fn>
DenseLmSummary minimize_dense(Fn&& fn, Eigen::VectorXd x, const DenseLmOptions& options = {}) {
  DenseLmSummary summary;
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  fn(x, r, &J);
  double cost = 0.5 * r.squaredNorm();
  summary.initial_cost = cost;
  double lambda = options.initial_lambda;

  for (int it = 0; it < options.max_iterations; ++it) {
    summary.iterations = it + 1;
    const Eigen::VectorXd g = J.transpose() * r;
    if (!std::isfinite(cost) || g.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      summary.converged = std::isfinite(cost);
      break;
    }
    const Eigen::MatrixXd A = J.transpose() * J;
    const double diag_floor = 1e-12 * std::max(1.0, A.diagonal().maxCoeff());

    bool accepted = false;
    while (lambda < 1e16) {
      Eigen::MatrixXd damped = A;
      for (Eigen::Index i = 0; i < A.rows(); ++i) {
        damped(i, i) += lambda * std::max(A(i, i), diag_floor);
      }
      const Eigen::VectorXd step = damped.ldlt().solve(-g);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd candidate = x + step;
      Eigen::VectorXd r_new;
      fn(candidate, r_new, nullptr);
      const double new_cost = 0.5 * r_new.squaredNorm();
      if (std::isfinite(new_cost) && new_cost <= cost) {
        const double decrease = cost - new_cost;
        x = candidate;
        lambda = std::max(lambda / 3.0, 1e-12);
        const bool small_step =
            step.norm() <= options.step_tolerance * (x.norm() + options.step_tolerance);
        const bool small_decrease = decrease <= options.function_tolerance * std::max(cost, 1e-300);
        fn(x, r, &J);
        cost = 0.5 * r.squaredNorm();
        accepted = true;
        if (small_step || small_decrease) {
          summary.converged = true;
        }
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted || summary.converged) {
      summary.converged = summary.converged || !accepted;
      break;
    }
  }
  summary.x = x;
  summary.final_cost = cost;
  return summary;
}

}  // namespace mtrack::detail
