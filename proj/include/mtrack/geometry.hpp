#pragma once

// Homogeneous projective geometry for calibrated pinhole cameras.
//
// Units: millimetres for all 3D quantities, pixels for image coordinates,
// radians for angles. A CameraModel's pose maps global coordinates into the
// camera frame; a pose of the animal maps model coordinates into the global
// frame.

#include <array>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace mtrack {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

/// Depth (mm along the optical axis) at or below which a point is rejected.
inline constexpr double kMinDepthMm = 1e-9;

Mat3 skew(const Vec3& v);

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  Eigen::Matrix4d matrix() const;
};

/// a ∘ b: applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);
inline Vec3 apply(const RigidTransform& t, const Vec3& x) { return t.apply(x); }

/// Six exterior-orientation parameters: axis-angle (Rodrigues) rotation plus
/// translation.
struct PoseVector {
  Vec3 rodrigues = Vec3::Zero();
  Vec3 translation = Vec3::Zero();

  Vec6 as_vector() const;
  static PoseVector from_vector(const Vec6& v);
};

Mat3 rodrigues_to_matrix(const Vec3& r);

/// Inverse Rodrigues map on the canonical branch: angle in [0, π]. At an
/// angle of exactly π the axis sign is chosen so that its first nonzero
/// component is positive.
Vec3 matrix_to_rodrigues(const Mat3& R);

/// Re-express r on its canonical branch without changing the rotation.
Vec3 canonical_rodrigues(const Vec3& r);

/// Equivalent Rodrigues vector r + 2πk·r/|r| closest to `reference`.
Vec3 unwrap_rodrigues(const Vec3& r, const Vec3& reference);

/// Partial derivatives ∂R/∂r_i of the Rodrigues map at r.
std::array<Mat3, 3> rodrigues_derivatives(const Vec3& r);

RigidTransform pose_to_transform(const PoseVector& p);
PoseVector transform_to_pose(const RigidTransform& t);

struct ImageSize {
  int width = 0;
  int height = 0;
};

struct CameraModel {
  int id = 0;
  Mat3 calibration = Mat3::Identity();  // K, upper triangular, K(2,2) = 1
  RigidTransform pose_global;           // global -> camera
  ImageSize image_size;

  Mat34 projection_matrix() const;
  Vec3 center() const;
  bool in_image(const Vec2& px) const;
};

/// Pixel coordinates of a global point. Throws NonPositiveDepth when the
/// point is not in front of the camera.
Vec2 project(const CameraModel& camera, const Vec3& point);

/// Pixel projection through a raw 3×4 matrix. Invariant to positive and
/// negative scaling of P; depth is measured with the sign of det(P[:, :3]).
Vec2 project(const Mat34& P, const Vec3& point);

/// Camera-frame coordinates of a global point together with the derivative of
/// the pixel coordinates with respect to those camera-frame coordinates.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Mat3& K, const Vec3& camera_point);

/// RQ-style factorisation P ~ K [R | t] with positive K diagonal, K(2,2) = 1
/// and det(R) = +1. Throws SingularCamera if the left 3×3 block is rank
/// deficient.
CameraModel decompose_projection(const Mat34& P);

struct Correspondence {
  Vec3 point;  // global mm
  Vec2 pixel;
};

struct ResectionResult {
  CameraModel camera;
  double mean_reprojection_px = 0.0;
  double rms_reprojection_px = 0.0;
};

/// Spatial resection. Without a known K: normalised DLT (≥ 6 non-coplanar
/// points) refined by reprojection minimisation over K and pose. With a known
/// K: pose-only minimisation from ≥ 4 points; planar configurations are
/// accepted on this path.
ResectionResult resect(std::span<const Correspondence> correspondences,
                       const std::optional<Mat3>& known_K = std::nullopt);

struct ViewObservation {
  CameraModel camera;
  Vec2 pixel;
};

struct TriangulationResult {
  Vec3 point;
  std::vector<double> residuals_px;  // one reprojection error per view
};

/// Minimum pairwise ray angle (radians) accepted by triangulate.
inline constexpr double kMinTriangulationAngle = 0.1 * 3.14159265358979323846 / 180.0;

/// Linear triangulation refined by Gauss-Newton on reprojection error.
TriangulationResult triangulate(std::span<const ViewObservation> observations);

/// Similarity transform that moves the centroid to the origin and scales the
/// mean distance to sqrt(dim). Returned as a homogeneous matrix.
Eigen::Matrix3d hartley_normalization_2d(std::span<const Vec2> points);
Eigen::Matrix4d hartley_normalization_3d(std::span<const Vec3> points);

/// Least-squares rigid registration (Kabsch): the transform T minimising
/// Σ |T·source_i − target_i|². Requires ≥ 3 non-collinear points.
RigidTransform fit_rigid_transform(std::span<const Vec3> source, std::span<const Vec3> target);

/// Geodesic angle (radians) between two rotations.
double rotation_angle_between(const Mat3& a, const Mat3& b);

}  // namespace mtrack
