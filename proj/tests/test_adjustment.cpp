#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "mtrack/adjustment.hpp"
#include "mtrack/banded_cholesky.hpp"
#include "mtrack/errors.hpp"
#include "mtrack/evaluation.hpp"
#include "mtrack/simulator.hpp"
#include "oracles.hpp"

using namespace mtrack;

namespace {

SceneConfig scene(std::uint64_t seed, int n, double noise, double dropout, bool deformation = false) {
  SceneConfig c = SceneConfig::default_scene();
  c.seed = seed;
  c.n_epochs = n;
  c.noise_sigma_px = noise;
  c.occlusion.random_dropout_rate = dropout;
  c.deformation = deformation;
  return c;
}

std::vector<PoseVector> truth(const SimulatedDataset& ds) {
  std::vector<PoseVector> p;
  for (const auto& e : ds.ground_truth) p.push_back(e.pose);
  return p;
}

MouseStateTrack track_from(const std::vector<PoseVector>& poses) {
  MouseStateTrack t;
  t.epochs.resize(poses.size());
  t.set_poses(poses);
  return t;
}

void hide(SimulatedDataset& ds, int t, int keep_parts) {
  for (int k = 0; k < ds.n_cameras(); ++k)
    for (int i = keep_parts; i < ds.n_parts(); ++i) {
      Observation& o = ds.observation(t, k, i);
      o.cause = VisibilityCause::Dropout;
      o.pixel.reset();
      o.noise.reset();
    }
}

}  // namespace

TEST(BandedCholesky, MatchesDense) {
  std::mt19937_64 g(1);
  std::normal_distribution<double> n(0, 1);
  const Eigen::Index N = 40, bw = 7;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(N, N);
  BandedSymmetricMatrix B(N, bw);
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = std::max<Eigen::Index>(0, i - bw); j <= i; ++j) {
      const double v = i == j ? 20.0 + n(g) : n(g);
      A(i, j) += v;
      if (i != j) A(j, i) += v;
      B.add(i, j, v);
    }
  }
  EXPECT_LT((B.to_dense() - A).cwiseAbs().maxCoeff(), 1e-15);
  const Eigen::VectorXd b = Eigen::VectorXd::Random(N);
  ASSERT_TRUE(B.factorize());
  EXPECT_LT((B.solve(b) - A.ldlt().solve(b)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BandedCholesky, RejectsIndefinite) {
  BandedSymmetricMatrix B(3, 1);
  B.add(0, 0, 1);
  B.add(1, 1, -1);
  B.add(2, 2, 1);
  EXPECT_FALSE(B.factorize());
}

TEST(Initialize, NoiselessEqualsTruth) {
  const SimulatedDataset ds = simulate(scene(2, 40, 0.0, 0.0));
  const MouseStateTrack tr = initialize(ds, ds.model);
  const auto gt = truth(ds);
  for (int t = 0; t < 40; ++t) {
    EXPECT_TRUE(tr.epochs[static_cast<std::size_t>(t)].solved);
    EXPECT_EQ(tr.epochs[static_cast<std::size_t>(t)].solved_from, SolvedFrom::Local);
    EXPECT_LT((tr.epochs[static_cast<std::size_t>(t)].pose.translation - gt[static_cast<std::size_t>(t)].translation).norm(), 1e-5);
  }
}

TEST(Initialize, SparseEpochInterpolated) {
  SimulatedDataset ds = simulate(scene(3, 20, 0.0, 0.0));
  hide(ds, 10, 2);
  EXPECT_FALSE(locally_solvable(ds, 10));
  const MouseStateTrack tr = initialize(ds, ds.model);
  const EpochState& e = tr.epochs[10];
  EXPECT_FALSE(e.solved);
  EXPECT_EQ(e.solved_from, SolvedFrom::Interpolated);
  const Vec3 mid = 0.5 * (tr.epochs[9].pose.translation + tr.epochs[11].pose.translation);
  EXPECT_LT((e.pose.translation - mid).norm(), 1e-9);
}

TEST(Initialize, NothingSolvable) {
  SimulatedDataset ds = simulate(scene(3, 8, 0.0, 0.0));
  for (int t = 0; t < 8; ++t) hide(ds, t, 2);
  try {
    initialize(ds, ds.model);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoSolvableEpoch);
  }
}

TEST(BuildProblem, BlockCounts) {
  const SimulatedDataset ds = simulate(scene(4, 500, 0.5, 0.2));
  int visible = 0;
  for (const auto& o : ds.observations) visible += o.visible();
  const Problem p = build_problem(ds, ds.cameras, track_from(truth(ds)), ds.model, nullptr, {});
  EXPECT_EQ(p.unknowns(), 3000);
  EXPECT_EQ(p.count(BlockKind::RigidReprojection), visible);
  EXPECT_NEAR(visible, 9600, 300);
  EXPECT_EQ(p.count(BlockKind::TrackSmoothness), 500);
  EXPECT_EQ(p.count(BlockKind::DeformedReprojection), 0);
  for (const auto& b : p.blocks) {
    if (b.kind == BlockKind::RigidReprojection) {
      EXPECT_DOUBLE_EQ(b.weight, 1.0 / 3.0);
    }
  }
}

TEST(BuildProblem, Errors) {
  const SimulatedDataset ds = simulate(scene(4, 10, 0.5, 0.0));
  auto cams = ds.cameras;
  cams[2].id = 17;
  EXPECT_THROW(build_problem(ds, cams, track_from(truth(ds)), ds.model, nullptr, {}), Error);
  try {
    build_problem(ds, cams, track_from(truth(ds)), ds.model, nullptr, {});
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InconsistentCameraIds);
  }
  auto short_track = truth(ds);
  short_track.pop_back();
  try {
    build_problem(ds, ds.cameras, track_from(short_track), ds.model, nullptr, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EpochMismatch);
  }
}

TEST(BuildProblem, ZeroSmoothnessIsBlockDiagonal) {
  const SimulatedDataset ds = simulate(scene(5, 20, 0.5, 0.0));
  StochasticConfig st;
  st.smoothness_weight = 0.0;
  st.smoothness_weight_observed = 0.0;
  const Problem p = build_problem(ds, ds.cameras, track_from(truth(ds)), ds.model, nullptr, st);
  const Eigen::MatrixXd N = linearize(p, truth(ds)).JtJ.to_dense();
  for (Eigen::Index r = 0; r < N.rows(); ++r) {
    for (Eigen::Index c = 0; c < N.cols(); ++c) {
      if (r / 6 != c / 6) {
        EXPECT_EQ(N(r, c), 0.0);
      }
    }
  }
}

TEST(Solve, NoiselessGroundTruthStart) {
  // Uniform motion track.
  std::vector<PoseVector> line;
  for (int t = 0; t < 60; ++t) line.push_back({Vec3(0, 0, 0.2 + 0.01 * t), Vec3(-40 + 1.5 * t, 20 - 0.5 * t, 8)});
  const SimulatedDataset ds = render(scene(6, 60, 0.0, 0.0), line);
  const Problem p = build_problem(ds, ds.cameras, track_from(truth(ds)), ds.model, nullptr, {});
  const SolveResult r = solve(p, track_from(truth(ds)));
  EXPECT_LE(r.report.iterations, 1);
  EXPECT_LT(r.report.final_cost, 1e-18);
  EXPECT_EQ(r.track.completeness(), 1.0);
}

TEST(Solve, NoisyDropoutAccuracy) {
  std::vector<double> all, full;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const SimulatedDataset ds = simulate(scene(seed, 150, 0.5, 0.2));
    const SolveResult r = estimate_track(ds, ds.model, nullptr, {});
    EXPECT_EQ(r.track.completeness(), 1.0);
    const EvaluationReport rep = evaluate(r.track, ds);
    for (int t = 0; t < ds.n_epochs(); ++t) {
      bool fully = true;
      for (int k = 0; k < ds.n_cameras(); ++k) fully = fully && ds.visible_count(t, k) == ds.n_parts();
      const double e = rep.position_error_mm[static_cast<std::size_t>(t)];
      all.push_back(e * e);
      if (fully) full.push_back(e * e);
    }
  }
  ASSERT_GT(full.size(), 10u);
  const double rmse_all = std::sqrt(std::accumulate(all.begin(), all.end(), 0.0) / all.size());
  const double rmse_full = std::sqrt(std::accumulate(full.begin(), full.end(), 0.0) / full.size());
  EXPECT_LE(rmse_all, 1.5 * rmse_full);
}

TEST(Solve, PerturbedStartReachesSameOptimum) {
  const SimulatedDataset ds = simulate(scene(7, 60, 0.5, 0.1));
  const Problem p = build_problem(ds, ds.cameras, track_from(truth(ds)), ds.model, nullptr, {});
  const SolveResult ref = solve(p, track_from(truth(ds)));
  std::mt19937_64 g(7);
  std::uniform_real_distribution<double> u(-1, 1);
  auto start = truth(ds);
  for (auto& q : start) {
    q.translation += Vec3(u(g), u(g), u(g)) * 5.0;
    q.rodrigues = matrix_to_rodrigues(rodrigues_to_matrix(q.rodrigues) *
                                      oracle::axis_angle(oracle::random_unit(g) * 5.0 * M_PI / 180));
  }
  const SolveResult r = solve(p, track_from(start));
  EXPECT_LT(std::abs(r.report.final_cost - ref.report.final_cost) / ref.report.final_cost, 1e-9);
  for (std::size_t n = 1; n < r.report.cost_history.size(); ++n) {
    EXPECT_LE(r.report.cost_history[n], r.report.cost_history[n - 1]);
  }
}

TEST(Solve, StrongSmoothnessKeepsLinearTruth) {
  SceneConfig c = scene(8, 30, 0.0, 0.0);
  std::vector<PoseVector> line;
  for (int t = 0; t < 30; ++t) line.push_back({Vec3(0, 0, 0.4), Vec3(-30 + 2.0 * t, 10 - 0.5 * t, 8)});
  const SimulatedDataset ds = render(c, line);
  StochasticConfig st;
  st.smoothness_weight = 1e4;
  st.smoothness_weight_observed = 1e4;
  const SolveResult r = estimate_track(ds, ds.model, nullptr, st);
  for (int t = 0; t < 30; ++t) {
    EXPECT_LT((r.track.epochs[static_cast<std::size_t>(t)].pose.translation - line[static_cast<std::size_t>(t)].translation).norm(), 1e-6);
  }
}

TEST(Solve, FrameConsistency) {
  // Re-expressing everything in camera 0's frame and mapping back gives the
  // same track.
  const SimulatedDataset ds = simulate(scene(9, 80, 0.5, 0.2));
  const RigidTransform G = ds.cameras[0].pose_global;
  SimulatedDataset moved = ds;
  for (auto& cam : moved.cameras) cam.pose_global = compose(cam.pose_global, invert(G));
  const SolveResult a = estimate_track(ds, ds.model, nullptr, {});
  const SolveResult b = estimate_track(moved, moved.model, nullptr, {});
  for (int t = 0; t < 80; ++t) {
    const RigidTransform pa = pose_to_transform(a.track.epochs[static_cast<std::size_t>(t)].pose);
    const RigidTransform pb = compose(invert(G), pose_to_transform(b.track.epochs[static_cast<std::size_t>(t)].pose));
    EXPECT_LT((pa.translation - pb.translation).norm(), 1e-3);
    EXPECT_LT(rotation_angle_between(pa.rotation, pb.rotation), 1e-5);
  }
}

TEST(Solve, CompletenessDespiteGaps) {
  const SimulatedDataset ds = simulate(scene(10, 100, 0.5, 0.75));
  int unsolvable = 0;
  for (int t = 0; t < 100; ++t) unsolvable += ds.locally_unsolvable(t);
  ASSERT_GT(unsolvable, 0);
  const SolveResult r = estimate_track(ds, ds.model, nullptr, {});
  EXPECT_EQ(r.track.completeness(), 1.0);
}

TEST(CheckJacobian, RandomConfigurations) {
  std::mt19937_64 g(11);
  const SimulatedDataset ds = simulate(scene(11, 30, 0.5, 0.0));
  const Problem p = build_problem(ds, ds.cameras, track_from(truth(ds)), ds.model, nullptr, {});
  for (int n = 0; n < 20; ++n) {
    auto poses = truth(ds);
    for (auto& q : poses) {
      q.rodrigues += oracle::random_unit(g) * 0.2;
      q.translation += oracle::random_unit(g) * 3.0;
    }
    EXPECT_LT(check_jacobian(p, poses), 1e-5);
  }
}

TEST(CheckJacobian, DeformedBlocks) {
  const SimulatedDataset ds = simulate(scene(12, 20, 0.5, 0.0, true));
  const LinearPredictor lin(Eigen::MatrixXd::Identity(24, 24) * 1.01, Eigen::VectorXd::Constant(24, 0.3));
  const Problem p = build_problem(ds, ds.cameras, track_from(truth(ds)), ds.model, &lin, {});
  EXPECT_GT(p.count(BlockKind::DeformedReprojection), 0);
  EXPECT_LT(check_jacobian(p, truth(ds)), 1e-5);
}

TEST(CheckJacobian, IdentityPoseIsFinite) {
  const SimulatedDataset ds = simulate(scene(13, 10, 0.5, 0.0));
  const Problem p = build_problem(ds, ds.cameras, track_from(truth(ds)), ds.model, nullptr, {});
  std::vector<PoseVector> poses(10, PoseVector{Vec3::Zero(), Vec3(0, 0, 50)});
  EXPECT_TRUE(std::isfinite(check_jacobian(p, poses)));
}

TEST(Huber, DownweightsOutliers) {
  SimulatedDataset ds = simulate(scene(14, 30, 0.5, 0.0));
  ds.observation(15, 0, 0).pixel = *ds.observation(15, 0, 0).pixel + Vec2(80, 0);
  StochasticConfig st;
  const double plain = total_cost(build_problem(ds, ds.cameras, track_from(truth(ds)), ds.model, nullptr, st), truth(ds));
  st.huber = true;
  const Problem hp = build_problem(ds, ds.cameras, track_from(truth(ds)), ds.model, nullptr, st);
  EXPECT_LT(total_cost(hp, truth(ds)), plain);
  EXPECT_LT(check_jacobian(hp, truth(ds)), 1e-5);
}

TEST(StateTrack, JsonRoundTrip) {
  const SimulatedDataset ds = simulate(scene(15, 20, 0.5, 0.5));
  const SolveResult r = estimate_track(ds, ds.model, nullptr, {});
  const nlohmann::json j = r.track.to_json();
  const MouseStateTrack back = MouseStateTrack::from_json(j);
  EXPECT_EQ(back.to_json(), j);
  ASSERT_TRUE(j.is_array());
  for (const auto& e : j) {
    EXPECT_TRUE(e.contains("rodrigues"));
    EXPECT_TRUE(e.contains("translation_mm"));
    EXPECT_TRUE(e.contains("solved_from"));
    EXPECT_TRUE(e.contains("residual_rms"));
  }
}

TEST(StochasticConfigTest, Validation) {
  nlohmann::json j = StochasticConfig{}.to_json();
  j["sigma_px_geometric"] = 0.0;
  EXPECT_THROW(StochasticConfig::from_json(j), Error);
}
