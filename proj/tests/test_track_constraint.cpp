#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mtrack/errors.hpp"
#include "mtrack/simulator.hpp"
#include "mtrack/track_constraint.hpp"
#include "oracles.hpp"

using namespace mtrack;

namespace {

constexpr double kPi = 3.14159265358979323846;

PoseVector pose_at(const std::array<std::array<double, 4>, 6>& coeffs, double t) {
  Vec6 v;
  for (int l = 0; l < 6; ++l) {
    const auto& c = coeffs[static_cast<std::size_t>(l)];
    v(l) = c[0] + c[1] * t + c[2] * t * t + c[3] * t * t * t;
  }
  return PoseVector::from_vector(v);
}

}  // namespace

TEST(Spline, ConstantNeighbours) {
  const PoseVector p{Vec3(0.1, -0.2, 0.3), Vec3(5, 6, 7)};
  const PoseVector s = spline_interpolate({p, p, p, p});
  EXPECT_LT((s.as_vector() - p.as_vector()).norm(), 1e-12);
}

TEST(Spline, ReproducesCubicsInAllParameters) {
  std::mt19937_64 g(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int n = 0; n < 200; ++n) {
    std::array<std::array<double, 4>, 6> c;
    for (int l = 0; l < 6; ++l) {
      const double s = l < 3 ? 0.02 : 3.0;
      c[static_cast<std::size_t>(l)] = {u(g) * (l < 3 ? 0.5 : 50.0), u(g) * s, u(g) * s * 0.1, u(g) * s * 0.01};
    }
    const double t = 10 * u(g);
    const PoseVector s = spline_interpolate({pose_at(c, t - 2), pose_at(c, t - 1), pose_at(c, t + 1), pose_at(c, t + 2)});
    EXPECT_LT((s.as_vector() - pose_at(c, t).as_vector()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Spline, QuarticSamples) {
  auto q = [](double t) { return PoseVector{Vec3::Zero(), Vec3(t * t * t * t, 0, 0)}; };
  const PoseVector s = spline_interpolate({q(-2), q(-1), q(1), q(2)});
  const double expected = oracle::polynomial_through({-2, -1, 1, 2}, {16, 1, 1, 16}, 0.0);
  EXPECT_NEAR(expected, -4.0, 1e-12);
  EXPECT_NEAR(s.translation.x(), expected, 1e-12);
  std::vector<PoseVector> track{q(-2), q(-1), q(0), q(1), q(2)};
  EXPECT_NEAR(parameter_residual(track, 2)(3), 0.0 - expected, 1e-12);
}

TEST(Spline, LagrangeWeightsMatchVandermonde) {
  const std::array<double, 4> nodes{0, 1, 3, 4};
  for (double x : {2.0, -1.0, 0.5}) {
    const auto w = lagrange_weights(nodes, x);
    for (int e = 0; e < 4; ++e) {
      std::vector<double> ys;
      for (double n : nodes) ys.push_back(std::pow(n, e) + 1.0);
      double v = 0;
      for (int j = 0; j < 4; ++j) v += w[static_cast<std::size_t>(j)] * ys[static_cast<std::size_t>(j)];
      EXPECT_NEAR(v, oracle::polynomial_through({0, 1, 3, 4}, ys, x), 1e-9);
    }
  }
}

TEST(Spline, BranchDiscontinuity) {
  const PoseVector a{Vec3(0, 0, 0.1), Vec3::Zero()}, b{Vec3(0, 0, 2.0), Vec3::Zero()};
  try {
    spline_interpolate({a, b, b, b});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BranchDiscontinuity);
  }
}

TEST(TrackWindow, InteriorAndBoundaries) {
  const TrackWindow w = track_window(5, 20);
  EXPECT_EQ(w.start, 3);
  EXPECT_EQ(w.neighbors, (std::array<int, 4>{3, 4, 6, 7}));
  const TrackWindow b0 = track_window(0, 20);
  EXPECT_EQ(b0.neighbors, (std::array<int, 4>{1, 2, 3, 4}));
  const TrackWindow b1 = track_window(19, 20);
  EXPECT_EQ(b1.neighbors, (std::array<int, 4>{15, 16, 17, 18}));
  double sum = 0;
  for (double x : b0.weights) sum += x;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_THROW(track_window(0, 4), Error);
  EXPECT_THROW(track_window(20, 20), Error);
}

TEST(Grid, StandardLayout) {
  const ComparisonGrid g = ComparisonGrid::standard();
  ASSERT_EQ(g.size(), 27u);
  Vec3 lo = Vec3::Constant(1e9), hi = Vec3::Constant(-1e9), mean = Vec3::Zero();
  for (const auto& p : g.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
    mean += p / 27.0;
  }
  EXPECT_LT(mean.norm(), 1e-12);
  EXPECT_LE(lo.x(), -13.5);
  EXPECT_LE(lo.y(), -30.0);
  EXPECT_LE(lo.z(), -8.0);
  EXPECT_GE(hi.x(), 13.5);
  EXPECT_GE(hi.y(), 36.0);
  EXPECT_GE(hi.z(), 19.0);
  const ComparisonGrid back = ComparisonGrid::from_json(g.to_json());
  EXPECT_EQ(back.points, g.points);
}

TEST(GridRmse, IdentityTranslationRotation) {
  std::mt19937_64 gen(2);
  const ComparisonGrid g = ComparisonGrid::standard();
  const RigidTransform S = oracle::random_transform(gen);
  EXPECT_EQ(grid_rmse(S, S, g), 0.0);
  const Vec3 d(1.5, -2.0, 0.25);
  RigidTransform D;
  D.translation = d;
  EXPECT_NEAR(grid_rmse(compose(S, D), S, g), d.norm(), 1e-12);
  RigidTransform Rz;
  Rz.rotation = oracle::axis_angle(Vec3(0, 0, kPi / 180));
  double ss = 0;
  for (const auto& p : g.points) {
    const double chord = p.head<2>().norm() * 2 * std::sin(0.5 * kPi / 180);
    ss += chord * chord;
  }
  EXPECT_NEAR(grid_rmse(compose(S, Rz), S, g), std::sqrt(ss / 27), 1e-12);
}

TEST(GridRmse, ZeroOnlyForEqualTransforms) {
  std::mt19937_64 gen(3);
  const ComparisonGrid g = ComparisonGrid::standard();
  for (int n = 0; n < 200; ++n) {
    const RigidTransform S = oracle::random_transform(gen);
    RigidTransform H = S;
    if (n % 2) H.translation.x() += 1e-6;
    else H.rotation = H.rotation * oracle::axis_angle(oracle::random_unit(gen) * 1e-8);
    EXPECT_GT(grid_rmse(H, S, g), 0.0);
  }
}

TEST(TrackResidual, RmsEqualsGridRmse) {
  const SimulatedDataset ds = simulate([] {
    SceneConfig c = SceneConfig::default_scene();
    c.n_epochs = 40;
    return c;
  }());
  std::vector<PoseVector> track;
  for (const auto& e : ds.ground_truth) track.push_back(e.pose);
  const ComparisonGrid g = ComparisonGrid::standard();
  for (int t = 0; t < 40; ++t) {
    const Eigen::VectorXd r = track_residual(track, t, g);
    ASSERT_EQ(r.size(), 81);
    const TrackWindow w = track_window(t, 40);
    std::array<PoseVector, 4> nb;
    for (int j = 0; j < 4; ++j) nb[static_cast<std::size_t>(j)] = track[static_cast<std::size_t>(w.neighbors[static_cast<std::size_t>(j)])];
    const double expected = grid_rmse(pose_to_transform(track[static_cast<std::size_t>(t)]),
                                      pose_to_transform(spline_interpolate(nb, w.weights)), g);
    EXPECT_NEAR(std::sqrt(r.squaredNorm() / 27), expected, 1e-12 * (1 + expected));
  }
}

TEST(TrackResidual, UniformLinearMotionIsZero) {
  std::vector<PoseVector> track;
  for (int t = 0; t < 12; ++t) track.push_back({Vec3(0, 0, 0.3 + 0.05 * t), Vec3(1.0 * t, -0.5 * t, 8)});
  for (int t = 0; t < 12; ++t) EXPECT_LT(track_residual(track, t, ComparisonGrid::standard()).norm(), 1e-9);
}

TEST(TrackResidual, ShrinksWithStepSize) {
  double previous = 1e300, first = 0;
  for (double sigma : {1.0, 0.1, 0.01, 0.001}) {
    SceneConfig c = SceneConfig::default_scene();
    c.n_epochs = 60;
    c.step_sigma_mm = sigma;
    const auto track = generate_track(c);
    double worst = 0;
    for (int t = 0; t < 60; ++t) worst = std::max(worst, track_residual(track, t, ComparisonGrid::standard()).norm());
    EXPECT_LT(worst, previous);
    if (sigma == 1.0) first = worst;
    previous = worst;
  }
  // Three decades of step size give at least two decades of residual.
  EXPECT_LT(previous, 1e-2 * first);
}

TEST(TrackResidual, OutlierEqualsRecombinedDisplacement) {
  std::vector<PoseVector> track;
  for (int t = 0; t < 9; ++t) track.push_back({Vec3(0, 0, 0.1 * t), Vec3(2.0 * t, 0, 8)});
  PoseVector outlier = track[4];
  outlier.translation += Vec3(0, 3, 0);
  outlier.rodrigues += Vec3(0, 0, 0.2);
  track[4] = outlier;
  const ComparisonGrid g = ComparisonGrid::standard();
  const Eigen::VectorXd r = track_residual(track, 4, g);
  // Cubic through the untouched neighbours of uniform motion is the linear pose.
  const RigidTransform H = pose_to_transform(outlier);
  const RigidTransform S = pose_to_transform({Vec3(0, 0, 0.4), Vec3(8, 0, 8)});
  for (std::size_t n = 0; n < g.size(); ++n) {
    const Vec3 expected = H.apply(g.points[n]) - S.apply(g.points[n]);
    EXPECT_LT((r.segment<3>(static_cast<Eigen::Index>(3 * n)) - expected).norm(), 1e-12);
  }
}

TEST(TrackResidual, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 gen(4);
  const ComparisonGrid g = ComparisonGrid::standard();
  for (int n = 0; n < 50; ++n) {
    std::vector<PoseVector> track;
    const Vec3 axis = oracle::random_unit(gen);
    for (int t = 0; t < 7; ++t) {
      track.push_back({axis * (0.5 + 0.1 * t) + oracle::random_unit(gen) * 0.05, oracle::random_unit(gen) * 20.0});
    }
    const int t = n % 7;
    const TrackResidualEval ev = track_residual_with_jacobian(track, t, g);
    Eigen::VectorXd x(30);
    for (int j = 0; j < 5; ++j) x.segment<6>(6 * j) = track[static_cast<std::size_t>(ev.window.start + j)].as_vector();
    auto f = [&](const Eigen::VectorXd& y) {
      std::vector<PoseVector> tr = track;
      for (int j = 0; j < 5; ++j) tr[static_cast<std::size_t>(ev.window.start + j)] = PoseVector::from_vector(y.segment<6>(6 * j));
      return Eigen::VectorXd(track_residual(tr, t, g));
    };
    const Eigen::MatrixXd fd = oracle::numeric_jacobian(f, x, 1e-6);
    const double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
    EXPECT_LT((fd - ev.jacobian).cwiseAbs().maxCoeff() / scale, 1e-5);
  }
}
