#include "mtrack/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "mtrack/dense_lm.hpp"
#include "mtrack/errors.hpp"

namespace mtrack {

namespace {

constexpr double kPi = std::numbers::pi;

Vec3 vee(const Mat3& m) { return Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)) * 0.5; }

// First nonzero component positive.
Vec3 canonical_axis_sign(Vec3 n) {
  for (int i = 0; i < 3; ++i) {
    if (std::abs(n[i]) > 1e-15) {
      if (n[i] < 0) n = -n;
      break;
    }
  }
  return n;
}

// Rank of a point cloud's spread: 0 (coincident), 1 (collinear), 2 (coplanar), 3.
int point_cloud_rank(std::span<const Vec3> pts, double rel_tol = 1e-6) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : pts) cov += (p - c) * (p - c).transpose();
  Eigen::JacobiSVD<Mat3> svd(cov);
  const Vec3 s = svd.singularValues().cwiseSqrt();
  if (s[0] <= 1e-12) return 0;
  int rank = 1;
  if (s[1] > rel_tol * s[0]) ++rank;
  if (s[2] > rel_tol * s[0]) ++rank;
  return rank;
}

// Camera-frame point -> pixel without depth checks (used inside minimisers).
Vec2 raw_pixel(const Mat3& K, const Vec3& c) {
  const Vec3 x = K * c;
  return x.head<2>() / x[2];
}

std::array<Mat3, 24> cube_rotations() {
  std::array<Mat3, 24> out;
  int n = 0;
  const std::array<std::array<int, 3>, 6> perms = {{{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  for (const auto& p : perms) {
    for (int signs = 0; signs < 8; ++signs) {
      Mat3 m = Mat3::Zero();
      for (int r = 0; r < 3; ++r) m(r, p[r]) = (signs >> r & 1) ? -1.0 : 1.0;
      if (m.determinant() > 0) out[n++] = m;
    }
  }
  return out;
}

struct PoseRefinement {
  RigidTransform pose;
  double cost = std::numeric_limits<double>::infinity();
  bool all_in_front = false;
};

// Pose-only reprojection minimisation with fixed K.
PoseRefinement refine_pose_known_k(std::span<const Correspondence> corr, const Mat3& K,
                                   const RigidTransform& initial) {
  const PoseVector p0 = transform_to_pose(initial);
  const auto fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    const Vec3 rv = x.head<3>();
    const Vec3 tv = x.tail<3>();
    const Mat3 R = rodrigues_to_matrix(rv);
    r.resize(2 * static_cast<Eigen::Index>(corr.size()));
    std::array<Mat3, 3> dR;
    if (J) {
      J->resize(r.size(), 6);
      dR = rodrigues_derivatives(rv);
    }
    for (std::size_t i = 0; i < corr.size(); ++i) {
      const Vec3 c = R * corr[i].point + tv;
      const auto row = static_cast<Eigen::Index>(2 * i);
      if (c[2] <= kMinDepthMm) {
        r.segment<2>(row).setConstant(1e6);
        if (J) J->middleRows<2>(row).setZero();
        continue;
      }
      r.segment<2>(row) = raw_pixel(K, c) - corr[i].pixel;
      if (J) {
        const Eigen::Matrix<double, 2, 3> Jp = projection_jacobian(K, c);
        for (int k = 0; k < 3; ++k) J->block<2, 1>(row, k) = Jp * (dR[k] * corr[i].point);
        J->block<2, 3>(row, 3) = Jp;
      }
    }
  };
  Eigen::VectorXd x0(6);
  x0 << p0.rodrigues, p0.translation;
  const auto summary = detail::minimize_dense(fn, x0);
  PoseRefinement out;
  out.pose = pose_to_transform(PoseVector::from_vector(summary.x));
  out.cost = summary.final_cost;
  out.all_in_front = std::all_of(corr.begin(), corr.end(), [&](const Correspondence& c) {
    return out.pose.apply(c.point)[2] > kMinDepthMm;
  });
  return out;
}

// Normalised DLT: returns P (3×4) such that pixel ~ P [X;1].
Mat34 dlt_projection(std::span<const Vec3> points, std::span<const Vec2> pixels) {
  const Eigen::Matrix4d T3 = hartley_normalization_3d(points);
  const Eigen::Matrix3d T2 = hartley_normalization_2d(pixels);
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * n, 12);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector4d X = T3 * points[i].homogeneous();
    const Vec3 x = T2 * pixels[i].homogeneous();
    const double u = x[0] / x[2];
    const double v = x[1] / x[2];
    A.block<1, 4>(2 * i, 0) = X.transpose();
    A.block<1, 4>(2 * i, 8) = -u * X.transpose();
    A.block<1, 4>(2 * i + 1, 4) = X.transpose();
    A.block<1, 4>(2 * i + 1, 8) = -v * X.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(11);
  Mat34 Pn;
  Pn << h.segment<4>(0).transpose(), h.segment<4>(4).transpose(), h.segment<4>(8).transpose();
  return T2.inverse() * Pn * T3;
}

ResectionResult finish_resection(std::span<const Correspondence> corr, CameraModel camera) {
  ResectionResult out;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (const auto& c : corr) {
    const Vec3 pc = camera.pose_global.apply(c.point);
    const double e = (raw_pixel(camera.calibration, pc) - c.pixel).norm();
    sum += e;
    sum_sq += e * e;
  }
  const auto n = static_cast<double>(corr.size());
  out.camera = std::move(camera);
  out.mean_reprojection_px = sum / n;
  out.rms_reprojection_px = std::sqrt(sum_sq / n);
  return out;
}

ResectionResult resect_unknown_k(std::span<const Correspondence> corr) {
  if (corr.size() < 6) {
    throw Error(ErrorCode::InsufficientPoints, "resection with unknown K needs at least 6 points, got " +
                                                   std::to_string(corr.size()));
  }
  std::vector<Vec3> pts;
  std::vector<Vec2> pix;
  for (const auto& c : corr) {
    pts.push_back(c.point);
    pix.push_back(c.pixel);
  }
  if (point_cloud_rank(pts) < 3) {
    throw Error(ErrorCode::DegenerateConfiguration, "points are coplanar or collinear; DLT with unknown K is undefined");
  }
  CameraModel init = decompose_projection(dlt_projection(pts, pix));

  // Refine K (fx, skew, cx, fy, cy) and pose on reprojection error.
  const auto pack = [](const CameraModel& cam) {
    Eigen::VectorXd x(11);
    const PoseVector p = transform_to_pose(cam.pose_global);
    const Mat3& K = cam.calibration;
    x << K(0, 0), K(0, 1), K(0, 2), K(1, 1), K(1, 2), p.rodrigues, p.translation;
    return x;
  };
  const auto unpack = [&](const Eigen::VectorXd& x) {
    CameraModel cam = init;
    cam.calibration << x[0], x[1], x[2], 0.0, x[3], x[4], 0.0, 0.0, 1.0;
    cam.pose_global = pose_to_transform(PoseVector::from_vector(x.tail<6>()));
    return cam;
  };
  const auto residuals = [&](const Eigen::VectorXd& x) {
    const CameraModel cam = unpack(x);
    Eigen::VectorXd r(2 * static_cast<Eigen::Index>(corr.size()));
    for (std::size_t i = 0; i < corr.size(); ++i) {
      const Vec3 c = cam.pose_global.apply(corr[i].point);
      r.segment<2>(static_cast<Eigen::Index>(2 * i)) =
          c[2] > kMinDepthMm ? Vec2(raw_pixel(cam.calibration, c) - corr[i].pixel) : Vec2(1e6, 1e6);
    }
    return r;
  };
  const auto fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    r = residuals(x);
    if (J) *J = detail::numeric_jacobian(residuals, x, 1e-7);
  };
  const auto summary = detail::minimize_dense(fn, pack(init));
  return finish_resection(corr, unpack(summary.x));
}

ResectionResult resect_known_k(std::span<const Correspondence> corr, const Mat3& K) {
  if (corr.size() < 4) {
    throw Error(ErrorCode::InsufficientPoints,
                "resection with known K needs at least 4 points, got " + std::to_string(corr.size()));
  }
  std::vector<Vec3> pts;
  for (const auto& c : corr) pts.push_back(c.point);
  const int rank = point_cloud_rank(pts);
  if (rank < 2) {
    throw Error(ErrorCode::DegenerateConfiguration, "points are collinear");
  }

  const Mat3 Kinv = K.inverse();
  PoseRefinement best;

  if (corr.size() >= 6 && rank == 3) {
    std::vector<Vec2> normalized;
    for (const auto& c : corr) normalized.push_back((Kinv * c.pixel.homogeneous()).hnormalized());
    const Mat34 P = dlt_projection(pts, normalized);
    const Mat3 M = P.leftCols<3>();
    const double s = M.determinant() >= 0 ? 1.0 : -1.0;
    Eigen::JacobiSVD<Mat3> svd(s * M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 R = svd.matrixU() * svd.matrixV().transpose();
    if (R.determinant() < 0) {
      Mat3 D = Mat3::Identity();
      D(2, 2) = -1;
      R = svd.matrixU() * D * svd.matrixV().transpose();
    }
    const double scale = svd.singularValues().mean();
    RigidTransform init{R, s * P.col(3) / scale};
    best = refine_pose_known_k(corr, K, init);
  }

  if (!best.all_in_front || best.cost > 1e-6 * static_cast<double>(corr.size())) {
    // Multi-start minimisation from the 24 axis-aligned orientations.
    Vec3 centroid = Vec3::Zero();
    Vec2 mean_xy = Vec2::Zero();
    std::vector<Vec2> xy;
    for (const auto& c : corr) {
      centroid += c.point;
      xy.push_back((Kinv * c.pixel.homogeneous()).hnormalized());
      mean_xy += xy.back();
    }
    const double n = static_cast<double>(corr.size());
    centroid /= n;
    mean_xy /= n;
    double spread3 = 0.0;
    double spread2 = 0.0;
    for (std::size_t i = 0; i < corr.size(); ++i) {
      spread3 += (corr[i].point - centroid).squaredNorm();
      spread2 += (xy[i] - mean_xy).squaredNorm();
    }
    const double depth = spread2 > 1e-24 ? std::sqrt(spread3 / spread2) : 1000.0;
    const Vec3 centre_ray = depth * mean_xy.homogeneous();
    for (const Mat3& R : cube_rotations()) {
      RigidTransform init{R, centre_ray - R * centroid};
      PoseRefinement cand = refine_pose_known_k(corr, K, init);
      if (cand.all_in_front && cand.cost < best.cost) best = cand;
      if (best.all_in_front && best.cost < 1e-20) break;
    }
  }
  if (!best.all_in_front) {
    throw Error(ErrorCode::DegenerateConfiguration, "no pose places all points in front of the camera");
  }
  CameraModel cam;
  cam.calibration = K;
  cam.pose_global = best.pose;
  return finish_resection(corr, cam);
}

}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v[2], v[1], v[2], 0, -v[0], -v[1], v[0], 0;
  return m;
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

RigidTransform invert(const RigidTransform& t) {
  const Mat3 Rt = t.rotation.transpose();
  return {Rt, -(Rt * t.translation)};
}

Vec6 PoseVector::as_vector() const {
  Vec6 v;
  v << rodrigues, translation;
  return v;
}

PoseVector PoseVector::from_vector(const Vec6& v) { return {v.head<3>(), v.tail<3>()}; }

Mat3 rodrigues_to_matrix(const Vec3& r) {
  const double theta2 = r.squaredNorm();
  const double theta = std::sqrt(theta2);
  double a, b;
  if (theta < 1e-4) {
    a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
    b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  const Mat3 K = skew(r);
  return Mat3::Identity() + a * K + b * K * K;
}

Vec3 matrix_to_rodrigues(const Mat3& R) {
  const Vec3 w = vee(R);
  const double s = w.norm();
  const double c = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::atan2(s, c);

  if (theta < 1e-5) {
    return w * (1.0 + theta * theta / 6.0);
  }
  if (theta < kPi - 1e-3) {
    return w * (theta / s);
  }
  // Near π: axis from the symmetric part, sign from the skew part.
  const Mat3 sym = 0.5 * (R + R.transpose());
  const Mat3 nn = (sym - c * Mat3::Identity()) / (1.0 - c);
  int k = 0;
  nn.diagonal().maxCoeff(&k);
  Vec3 n = nn.col(k) / std::sqrt(std::max(nn(k, k), 1e-300));
  n.normalize();
  if (s > 1e-12) {
    if (n.dot(w) < 0) n = -n;
  } else {
    n = canonical_axis_sign(n);
    return n * kPi;
  }
  return n * theta;
}

Vec3 canonical_rodrigues(const Vec3& r) {
  const double theta = r.norm();
  if (theta <= kPi) {
    if (theta == kPi) return canonical_axis_sign(r / theta) * kPi;
    return r;
  }
  const Vec3 n = r / theta;
  const double reduced = theta - 2.0 * kPi * std::round(theta / (2.0 * kPi));  // (-π, π]
  if (std::abs(std::abs(reduced) - kPi) < 1e-15) return canonical_axis_sign(n) * kPi;
  return n * reduced;
}

Vec3 unwrap_rodrigues(const Vec3& r, const Vec3& reference) {
  const double theta = r.norm();
  Vec3 n;
  if (theta > 1e-12) {
    n = r / theta;
  } else if (reference.norm() > 1e-12) {
    n = reference.normalized();
  } else {
    return r;
  }
  const double k0 = std::round((n.dot(reference) - theta) / (2.0 * kPi));
  Vec3 best = r;
  double best_dist = (r - reference).norm();
  for (double k = k0 - 1; k <= k0 + 1; k += 1.0) {
    const Vec3 cand = n * (theta + 2.0 * kPi * k);
    const double d = (cand - reference).norm();
    if (d < best_dist - 1e-15) {
      best = cand;
      best_dist = d;
    }
  }
  return best;
}

std::array<Mat3, 3> rodrigues_derivatives(const Vec3& r) {
  const double theta2 = r.squaredNorm();
  const double theta = std::sqrt(theta2);
  double a, b, da, db;  // da = a'(θ)/θ, db = b'(θ)/θ
  if (theta < 1e-2) {
    const double t4 = theta2 * theta2;
    a = 1.0 - theta2 / 6.0 + t4 / 120.0;
    b = 0.5 - theta2 / 24.0 + t4 / 720.0;
    da = -1.0 / 3.0 + theta2 / 30.0 - t4 / 840.0;
    db = -1.0 / 12.0 + theta2 / 180.0 - t4 / 6720.0;
  } else {
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    a = s / theta;
    b = (1.0 - c) / theta2;
    da = (theta * c - s) / (theta2 * theta);
    db = (theta * s - 2.0 * (1.0 - c)) / (theta2 * theta2);
  }
  const Mat3 K = skew(r);
  const Mat3 K2 = K * K;
  std::array<Mat3, 3> out;
  for (int i = 0; i < 3; ++i) {
    const Mat3 Ei = skew(Vec3::Unit(i));
    out[i] = a * Ei + b * (Ei * K + K * Ei) + da * r[i] * K + db * r[i] * K2;
  }
  return out;
}

RigidTransform pose_to_transform(const PoseVector& p) { return {rodrigues_to_matrix(p.rodrigues), p.translation}; }

PoseVector transform_to_pose(const RigidTransform& t) { return {matrix_to_rodrigues(t.rotation), t.translation}; }

Mat34 CameraModel::projection_matrix() const {
  Mat34 Rt;
  Rt << pose_global.rotation, pose_global.translation;
  return calibration * Rt;
}

Vec3 CameraModel::center() const { return -(pose_global.rotation.transpose() * pose_global.translation); }

bool CameraModel::in_image(const Vec2& px) const {
  return px[0] >= 0.0 && px[1] >= 0.0 && px[0] < image_size.width && px[1] < image_size.height;
}

Vec2 project(const CameraModel& camera, const Vec3& point) {
  const Vec3 c = camera.pose_global.apply(point);
  if (!(c[2] > kMinDepthMm)) {
    throw Error(ErrorCode::NonPositiveDepth,
                "point has depth " + std::to_string(c[2]) + " mm in camera " + std::to_string(camera.id));
  }
  return raw_pixel(camera.calibration, c);
}

Vec2 project(const Mat34& P, const Vec3& point) {
  const Vec3 x = P * point.homogeneous();
  const double sign = P.leftCols<3>().determinant() >= 0 ? 1.0 : -1.0;
  const double depth = sign * x[2] / P.row(2).head<3>().norm();
  if (!(depth > kMinDepthMm)) {
    throw Error(ErrorCode::NonPositiveDepth, "point is not in front of the camera");
  }
  return x.head<2>() / x[2];
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const Mat3& K, const Vec3& c) {
  const Vec3 x = K * c;
  const double inv = 1.0 / x[2];
  Eigen::Matrix<double, 2, 3> J;
  J.row(0) = (K.row(0) - x[0] * inv * K.row(2)) * inv;
  J.row(1) = (K.row(1) - x[1] * inv * K.row(2)) * inv;
  return J;
}

CameraModel decompose_projection(const Mat34& P) {
  Mat3 M = P.leftCols<3>();
  Eigen::JacobiSVD<Mat3> svd(M);
  const Vec3 sv = svd.singularValues();
  if (!(sv[2] > 1e-12 * sv[0])) {
    throw Error(ErrorCode::SingularCamera, "left 3x3 block of the projection matrix is rank deficient");
  }
  const double s = M.determinant() > 0 ? 1.0 : -1.0;
  M *= s;
  const Vec3 p4 = s * P.col(3);

  // RQ via QR of the row-flipped transpose.
  Mat3 flip = Mat3::Zero();
  flip(0, 2) = flip(1, 1) = flip(2, 0) = 1.0;
  const Mat3 A = flip * M;
  Eigen::HouseholderQR<Mat3> qr(A.transpose());
  const Mat3 Q = qr.householderQ();
  const Mat3 U = qr.matrixQR().triangularView<Eigen::Upper>();
  Mat3 K = flip * U.transpose() * flip;
  Mat3 R = flip * Q.transpose();
  for (int i = 0; i < 3; ++i) {
    if (K(i, i) < 0) {
      K.col(i) *= -1.0;
      R.row(i) *= -1.0;
    }
  }
  CameraModel cam;
  cam.pose_global.rotation = R;
  cam.pose_global.translation = K.triangularView<Eigen::Upper>().solve(p4);
  K /= K(2, 2);
  K(1, 0) = K(2, 0) = K(2, 1) = 0.0;
  cam.calibration = K;
  return cam;
}

ResectionResult resect(std::span<const Correspondence> correspondences, const std::optional<Mat3>& known_K) {
  if (known_K) return resect_known_k(correspondences, *known_K);
  return resect_unknown_k(correspondences);
}

TriangulationResult triangulate(std::span<const ViewObservation> obs) {
  if (obs.size() < 2) {
    throw Error(ErrorCode::InsufficientPoints, "triangulation needs at least 2 views, got " + std::to_string(obs.size()));
  }
  std::vector<Vec3> rays;
  for (const auto& o : obs) {
    const Vec3 local = o.camera.calibration.inverse() * o.pixel.homogeneous();
    rays.push_back((o.camera.pose_global.rotation.transpose() * local).normalized());
  }
  double max_angle = 0.0;
  for (std::size_t i = 0; i < rays.size(); ++i) {
    for (std::size_t j = i + 1; j < rays.size(); ++j) {
      max_angle = std::max(max_angle, std::acos(std::clamp(rays[i].dot(rays[j]), -1.0, 1.0)));
    }
  }
  if (max_angle < kMinTriangulationAngle) {
    throw Error(ErrorCode::ParallelRays, "maximum triangulation angle is below 0.1 degrees");
  }

  // Linear solve in normalised image coordinates.
  const auto n = static_cast<Eigen::Index>(obs.size());
  Eigen::MatrixXd A(2 * n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& cam = obs[static_cast<std::size_t>(i)].camera;
    const Vec2 x = (cam.calibration.inverse() * obs[static_cast<std::size_t>(i)].pixel.homogeneous()).hnormalized();
    Mat34 Rt;
    Rt << cam.pose_global.rotation, cam.pose_global.translation;
    A.row(2 * i) = x[0] * Rt.row(2) - Rt.row(0);
    A.row(2 * i + 1) = x[1] * Rt.row(2) - Rt.row(1);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  Vec3 X = h.head<3>() / h[3];

  // Gauss-Newton on pixel reprojection error.
  for (int it = 0; it < 20; ++it) {
    Eigen::Matrix3d JtJ = Eigen::Matrix3d::Zero();
    Vec3 Jtr = Vec3::Zero();
    bool ok = true;
    for (const auto& o : obs) {
      const Vec3 c = o.camera.pose_global.apply(X);
      if (c[2] <= kMinDepthMm) {
        ok = false;
        break;
      }
      const Vec2 r = raw_pixel(o.camera.calibration, c) - o.pixel;
      const Eigen::Matrix<double, 2, 3> J = projection_jacobian(o.camera.calibration, c) * o.camera.pose_global.rotation;
      JtJ += J.transpose() * J;
      Jtr += J.transpose() * r;
    }
    if (!ok) break;
    const Vec3 step = JtJ.ldlt().solve(-Jtr);
    if (!step.allFinite()) break;
    X += step;
    if (step.norm() < 1e-13 * (1.0 + X.norm())) break;
  }

  TriangulationResult out;
  out.point = X;
  for (const auto& o : obs) {
    const Vec3 c = o.camera.pose_global.apply(X);
    out.residuals_px.push_back((raw_pixel(o.camera.calibration, c) - o.pixel).norm());
  }
  return out;
}

Eigen::Matrix3d hartley_normalization_2d(std::span<const Vec2> points) {
  Vec2 c = Vec2::Zero();
  for (const auto& p : points) c += p;
  c /= static_cast<double>(points.size());
  double d = 0.0;
  for (const auto& p : points) d += (p - c).norm();
  d /= static_cast<double>(points.size());
  const double s = d > 0 ? std::sqrt(2.0) / d : 1.0;
  Eigen::Matrix3d T = Eigen::Matrix3d::Identity();
  T(0, 0) = T(1, 1) = s;
  T.block<2, 1>(0, 2) = -s * c;
  return T;
}

Eigen::Matrix4d hartley_normalization_3d(std::span<const Vec3> points) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : points) c += p;
  c /= static_cast<double>(points.size());
  double d = 0.0;
  for (const auto& p : points) d += (p - c).norm();
  d /= static_cast<double>(points.size());
  const double s = d > 0 ? std::sqrt(3.0) / d : 1.0;
  Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
  T(0, 0) = T(1, 1) = T(2, 2) = s;
  T.block<3, 1>(0, 3) = -s * c;
  return T;
}

RigidTransform fit_rigid_transform(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size()) {
    throw Error(ErrorCode::InvalidArgument, "rigid fit needs paired point sets");
  }
  if (source.size() < 3) {
    throw Error(ErrorCode::InsufficientPoints, "rigid fit needs at least 3 points");
  }
  if (point_cloud_rank(source) < 2) {
    throw Error(ErrorCode::DegenerateConfiguration, "rigid fit source points are collinear");
  }
  const double n = static_cast<double>(source.size());
  Vec3 cs = Vec3::Zero();
  Vec3 ct = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    cs += source[i];
    ct += target[i];
  }
  cs /= n;
  ct /= n;
  Mat3 H = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) H += (source[i] - cs) * (target[i] - ct).transpose();
  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 D = Mat3::Identity();
  D(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Mat3 R = svd.matrixV() * D * svd.matrixU().transpose();
  return {R, ct - R * cs};
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  return matrix_to_rodrigues(a.transpose() * b).norm();
}

}  // namespace mtrack
