#pragma once
// Reference computations used as test oracles. Deliberately written without
// the library's own helpers.

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "mtrack/geometry.hpp"

namespace oracle {

using mtrack::CameraModel;
using mtrack::Vec2;
using mtrack::Vec3;

/// Pixel where the straight line from `point` to the camera centre crosses
/// the image plane at focal distance, assuming square pixels and zero skew.
inline Vec2 ray_projection(const CameraModel& cam, const Vec3& point) {
  const Eigen::Matrix3d& R = cam.pose_global.rotation;
  const Vec3 c = -R.transpose() * cam.pose_global.translation;
  const Vec3 ax = R.row(0).transpose(), ay = R.row(1).transpose(), az = R.row(2).transpose();
  const double f = cam.calibration(0, 0);
  const Vec3 d = point - c;
  const double lambda = f / d.dot(az);
  const Vec3 on_plane = lambda * d;
  return {cam.calibration(0, 2) + on_plane.dot(ax), cam.calibration(1, 2) + on_plane.dot(ay)};
}

/// Value at x of the polynomial of degree < n through (xs, ys), by solving
/// the Vandermonde system.
inline double polynomial_through(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  const int n = static_cast<int>(xs.size());
  Eigen::MatrixXd V(n, n);
  Eigen::VectorXd y(n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) V(r, c) = std::pow(xs[static_cast<std::size_t>(r)], c);
    y(r) = ys[static_cast<std::size_t>(r)];
  }
  const Eigen::VectorXd a = V.fullPivLu().solve(y);
  double v = 0.0;
  for (int c = n - 1; c >= 0; --c) v = v * x + a(c);
  return v;
}

inline Eigen::Matrix3d axis_angle(const Vec3& r) {
  const double a = r.norm();
  if (a == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(a, r / a).toRotationMatrix();
}

inline Vec3 random_unit(std::mt19937_64& g) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v(n(g), n(g), n(g));
  return v.normalized();
}

inline mtrack::RigidTransform random_transform(std::mt19937_64& g, double max_angle = 3.0, double max_t = 100.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  mtrack::RigidTransform T;
  T.rotation = axis_angle(random_unit(g) * std::abs(u(g)) * max_angle);
  T.translation = Vec3(u(g), u(g), u(g)) * max_t;
  return T;
}

/// Camera at `center` looking at the origin.
inline CameraModel camera_looking_at_origin(int id, const Vec3& center, double f = 1000.0) {
  const Vec3 z = (-center).normalized();
  Vec3 up = std::abs(z.z()) > 0.9 ? Vec3(0, 1, 0) : Vec3(0, 0, 1);
  const Vec3 x = z.cross(up).normalized();
  const Vec3 y = z.cross(x);
  CameraModel cam;
  cam.id = id;
  cam.calibration << f, 0, 640, 0, f, 480, 0, 0, 1;
  cam.pose_global.rotation.row(0) = x.transpose();
  cam.pose_global.rotation.row(1) = y.transpose();
  cam.pose_global.rotation.row(2) = z.transpose();
  cam.pose_global.translation = -cam.pose_global.rotation * center;
  cam.image_size = {1280, 960};
  return cam;
}

/// Central-difference derivative of a vector function.
template <typename F>
Eigen::MatrixXd numeric_jacobian(F&& f, const Eigen::VectorXd& x, double h) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Eigen::VectorXd xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    J.col(j) = (f(xp) - f(xm)) / (2 * h);
  }
  return J;
}

}  // namespace oracle
