#include "mtrack/track_constraint.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mtrack/errors.hpp"
#include "mtrack/json_io.hpp"

namespace mtrack {

namespace {

constexpr double kMaxBranchStep = std::numbers::pi / 2.0;

void check_branch(const std::vector<Vec3>& ordered) {
  for (std::size_t j = 1; j < ordered.size(); ++j) {
    if ((ordered[j] - ordered[j - 1]).norm() > kMaxBranchStep) {
      throw Error(ErrorCode::BranchDiscontinuity,
                  "consecutive rotation vectors differ by more than pi/2; unwrapping failed");
    }
  }
}

// d unwrap(r, ref) / d r for fixed branch offset.
Mat3 unwrap_jacobian(const Vec3& raw, const Vec3& unwrapped) {
  const double shift = (unwrapped - raw).norm();
  const double angle = raw.norm();
  if (shift < 1e-12 || angle < 1e-12) return Mat3::Identity();
  const Vec3 axis = raw / angle;
  const double c = (unwrapped - raw).dot(axis);
  return Mat3::Identity() + (c / angle) * (Mat3::Identity() - axis * axis.transpose());
}

}  // namespace

ComparisonGrid ComparisonGrid::lattice(int nx, int ny, int nz, const Vec3& half_extent, const Vec3& center) {
  if (nx < 2 || ny < 2 || nz < 2 || nx * ny * nz < 27) {
    throw Error(ErrorCode::InvalidArgument, "comparison grid needs at least 27 points with >= 2 per axis");
  }
  if (!(half_extent.array() > 0).all()) throw Error(ErrorCode::InvalidArgument, "grid extent must be positive");
  ComparisonGrid g;
  g.nx = nx;
  g.ny = ny;
  g.nz = nz;
  g.half_extent = half_extent;
  auto coord = [](int i, int n, double h) { return -h + 2.0 * h * i / (n - 1); };
  for (int a = 0; a < nx; ++a) {
    for (int b = 0; b < ny; ++b) {
      for (int c = 0; c < nz; ++c) {
        g.points.push_back(center + Vec3(coord(a, nx, half_extent.x()), coord(b, ny, half_extent.y()),
                                         coord(c, nz, half_extent.z())));
      }
    }
  }
  return g;
}

ComparisonGrid ComparisonGrid::standard() { return lattice(3, 3, 3, Vec3(13.5, 36.0, 19.0)); }

nlohmann::json ComparisonGrid::to_json() const {
  return {{"nx", nx}, {"ny", ny}, {"nz", nz}, {"extent_mm", io::from_vec(half_extent)}};
}

ComparisonGrid ComparisonGrid::from_json(const nlohmann::json& value, std::string_view context) {
  const std::string ctx(context);
  if (!value.is_object()) throw Error(ErrorCode::SchemaError, ctx + ": expected an object");
  const ComparisonGrid d = standard();
  const int nx = value.contains("nx") ? io::require_int(value, "nx", ctx) : d.nx;
  const int ny = value.contains("ny") ? io::require_int(value, "ny", ctx) : d.ny;
  const int nz = value.contains("nz") ? io::require_int(value, "nz", ctx) : d.nz;
  const Vec3 h = value.contains("extent_mm") ? io::to_vec3(value["extent_mm"], ctx + ".extent_mm") : d.half_extent;
  return lattice(nx, ny, nz, h);
}

std::array<double, 4> lagrange_weights(const std::array<double, 4>& nodes, double x) {
  std::array<double, 4> w{};
  for (int j = 0; j < 4; ++j) {
    double num = 1.0, den = 1.0;
    for (int m = 0; m < 4; ++m) {
      if (m == j) continue;
      num *= x - nodes[static_cast<std::size_t>(m)];
      den *= nodes[static_cast<std::size_t>(j)] - nodes[static_cast<std::size_t>(m)];
    }
    w[static_cast<std::size_t>(j)] = num / den;
  }
  return w;
}

TrackWindow track_window(int t, int n_epochs) {
  if (n_epochs < 5) throw Error(ErrorCode::WindowOutOfRange, "track constraint needs at least 5 epochs");
  if (t < 0 || t >= n_epochs) throw Error(ErrorCode::WindowOutOfRange, "epoch " + std::to_string(t) + " outside track");
  TrackWindow w;
  w.target = t;
  w.start = std::clamp(t - 2, 0, n_epochs - 5);
  std::array<double, 4> nodes{};
  int j = 0;
  for (int e = w.start; e < w.start + 5; ++e) {
    if (e == t) continue;
    w.neighbors[static_cast<std::size_t>(j)] = e;
    nodes[static_cast<std::size_t>(j)] = e - t;
    ++j;
  }
  w.weights = lagrange_weights(nodes, 0.0);
  return w;
}

PoseVector spline_interpolate(const std::array<PoseVector, 4>& neighbors, const std::array<double, 4>& weights) {
  PoseVector s;
  s.rodrigues.setZero();
  s.translation.setZero();
  for (std::size_t j = 0; j < 4; ++j) {
    s.rodrigues += weights[j] * neighbors[j].rodrigues;
    s.translation += weights[j] * neighbors[j].translation;
  }
  return s;
}

PoseVector spline_interpolate(const std::array<PoseVector, 4>& neighbors) {
  std::vector<Vec3> r;
  for (const auto& p : neighbors) {
    if (!p.as_vector().allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite neighbour pose");
    r.push_back(p.rodrigues);
  }
  check_branch(r);
  static const std::array<double, 4> w = lagrange_weights({-2.0, -1.0, 1.0, 2.0}, 0.0);
  return spline_interpolate(neighbors, w);
}

double grid_rmse(const RigidTransform& H, const RigidTransform& S, const ComparisonGrid& grid) {
  double sum = 0.0;
  for (const auto& g : grid.points) sum += (H.apply(g) - S.apply(g)).squaredNorm();
  return std::sqrt(sum / static_cast<double>(grid.size()));
}

TrackResidualEval track_residual_with_jacobian(const std::vector<PoseVector>& track, int t,
                                               const ComparisonGrid& grid, bool with_jacobian,
                                               bool check_branches) {
  TrackResidualEval out;
  out.window = track_window(t, static_cast<int>(track.size()));
  const TrackWindow& w = out.window;
  const Vec3& anchor = track[static_cast<std::size_t>(t)].rodrigues;

  std::array<PoseVector, 4> nb;
  std::vector<Vec3> ordered;
  for (int e = w.start; e < w.start + 5; ++e) {
    ordered.push_back(e == t ? anchor : unwrap_rodrigues(track[static_cast<std::size_t>(e)].rodrigues, anchor));
  }
  if (check_branches) check_branch(ordered);
  for (std::size_t j = 0; j < 4; ++j) {
    const int e = w.neighbors[j];
    nb[j].rodrigues = ordered[static_cast<std::size_t>(e - w.start)];
    nb[j].translation = track[static_cast<std::size_t>(e)].translation;
  }
  const PoseVector s = spline_interpolate(nb, w.weights);
  const PoseVector& p = track[static_cast<std::size_t>(t)];
  const Mat3 Rt = rodrigues_to_matrix(p.rodrigues);
  const Mat3 Rs = rodrigues_to_matrix(s.rodrigues);

  const auto G = static_cast<Eigen::Index>(grid.size());
  out.residual.resize(3 * G);
  for (Eigen::Index g = 0; g < G; ++g) {
    const Vec3& x = grid.points[static_cast<std::size_t>(g)];
    out.residual.segment<3>(3 * g) = (Rt * x + p.translation) - (Rs * x + s.translation);
  }
  if (!with_jacobian) return out;

  out.jacobian = Eigen::MatrixXd::Zero(3 * G, 30);
  const auto dRt = rodrigues_derivatives(p.rodrigues);
  const auto dRs = rodrigues_derivatives(s.rodrigues);
  const Eigen::Index ct = 6 * (t - w.start);
  std::array<Mat3, 4> unwrap_j;
  for (std::size_t j = 0; j < 4; ++j) {
    const int e = w.neighbors[j];
    unwrap_j[j] = unwrap_jacobian(track[static_cast<std::size_t>(e)].rodrigues, nb[j].rodrigues);
  }
  for (Eigen::Index g = 0; g < G; ++g) {
    const Vec3& x = grid.points[static_cast<std::size_t>(g)];
    Mat3 At, As;
    for (int i = 0; i < 3; ++i) {
      At.col(i) = dRt[static_cast<std::size_t>(i)] * x;
      As.col(i) = dRs[static_cast<std::size_t>(i)] * x;
    }
    out.jacobian.block<3, 3>(3 * g, ct) = At;
    out.jacobian.block<3, 3>(3 * g, ct + 3) = Mat3::Identity();
    for (std::size_t j = 0; j < 4; ++j) {
      const Eigen::Index c = 6 * (w.neighbors[j] - w.start);
      out.jacobian.block<3, 3>(3 * g, c) = -w.weights[j] * As * unwrap_j[j];
      out.jacobian.block<3, 3>(3 * g, c + 3) = -w.weights[j] * Mat3::Identity();
    }
  }
  return out;
}

Eigen::VectorXd track_residual(const std::vector<PoseVector>& track, int t, const ComparisonGrid& grid) {
  return track_residual_with_jacobian(track, t, grid, false).residual;
}

Vec6 parameter_residual(const std::vector<PoseVector>& track, int t) {
  const TrackWindow w = track_window(t, static_cast<int>(track.size()));
  const Vec3& anchor = track[static_cast<std::size_t>(t)].rodrigues;
  std::array<PoseVector, 4> nb;
  for (std::size_t j = 0; j < 4; ++j) {
    const PoseVector& q = track[static_cast<std::size_t>(w.neighbors[j])];
    nb[j].rodrigues = unwrap_rodrigues(q.rodrigues, anchor);
    nb[j].translation = q.translation;
  }
  const PoseVector s = spline_interpolate(nb, w.weights);
  return track[static_cast<std::size_t>(t)].as_vector() - s.as_vector();
}

}  // namespace mtrack
