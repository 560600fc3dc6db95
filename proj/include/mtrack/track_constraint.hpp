#pragma once

// Motion-track smoothness: each epoch's pose is compared with the cubic
// through its four temporal neighbours. Both poses are applied to a lattice
// of model-frame points and the displacements (mm) are the residual.

#include <array>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mtrack/geometry.hpp"

namespace mtrack {

struct ComparisonGrid {
  std::vector<Vec3> points;  // model frame, mm

  /// 3×3×3 lattice over the standard mouse bounding box, centred at the
  /// model origin.
  static ComparisonGrid standard();
  /// nx×ny×nz lattice spanning center ± half_extent.
  static ComparisonGrid lattice(int nx, int ny, int nz, const Vec3& half_extent, const Vec3& center = Vec3::Zero());

  std::size_t size() const { return points.size(); }

  /// {nx, ny, nz, extent_mm: [hx, hy, hz]}; missing keys take standard values.
  nlohmann::json to_json() const;
  static ComparisonGrid from_json(const nlohmann::json& value, std::string_view context = "grid");

  int nx = 3, ny = 3, nz = 3;
  Vec3 half_extent = Vec3(13.5, 36.0, 19.0);
};

/// Weights of the cubic through (nodes[j], y_j) evaluated at x.
std::array<double, 4> lagrange_weights(const std::array<double, 4>& nodes, double x);

/// Epoch window used to constrain epoch t in a track of n epochs: the four
/// nearest other epochs of the five-epoch block start..start+4.
struct TrackWindow {
  int target = 0;
  int start = 0;
  std::array<int, 4> neighbors{};
  std::array<double, 4> weights{};
};
TrackWindow track_window(int t, int n_epochs);

/// Cubic interpolation of each pose parameter from neighbours at t-2, t-1,
/// t+1, t+2, evaluated at t. Rotation vectors must already share a branch.
PoseVector spline_interpolate(const std::array<PoseVector, 4>& neighbors);

/// Same with arbitrary weights.
PoseVector spline_interpolate(const std::array<PoseVector, 4>& neighbors, const std::array<double, 4>& weights);

/// RMS over grid points of |H·g − S·g|.
double grid_rmse(const RigidTransform& H, const RigidTransform& S, const ComparisonGrid& grid);

/// Grid displacement residual (3 per grid point, point-major) of epoch t
/// against the interpolation from its window.
Eigen::VectorXd track_residual(const std::vector<PoseVector>& track, int t, const ComparisonGrid& grid);

struct TrackResidualEval {
  TrackWindow window;
  Eigen::VectorXd residual;
  /// ∂residual/∂(pose params of epochs start..start+4), 6 columns per epoch.
  Eigen::MatrixXd jacobian;
};
TrackResidualEval track_residual_with_jacobian(const std::vector<PoseVector>& track, int t,
                                               const ComparisonGrid& grid, bool with_jacobian = true,
                                               bool check_branches = true);

/// Per-parameter difference p_t − S(p_neighbours).
Vec6 parameter_residual(const std::vector<PoseVector>& track, int t);

}  // namespace mtrack
