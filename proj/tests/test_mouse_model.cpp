#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mtrack/errors.hpp"
#include "mtrack/mouse_model.hpp"
#include "mtrack/simulator.hpp"
#include "oracles.hpp"

using namespace mtrack;

TEST(MouseModel, TableValues) {
  const RigidMouseModel m = RigidMouseModel::standard();
  ASSERT_EQ(m.size(), 8u);
  EXPECT_EQ(m.position(BodyPart::NoseTip), Vec3(0, 36, 2.5));
  EXPECT_EQ(m.position(BodyPart::LeftEar), Vec3(7.75, 16, 19));
  EXPECT_EQ(m.position(BodyPart::RightEar), Vec3(-7.75, 16, 19));
  EXPECT_EQ(m.position(BodyPart::TailRoot), Vec3(0, -30, -6));
}

TEST(MouseModel, BilateralSymmetry) {
  const RigidMouseModel m = RigidMouseModel::standard();
  const std::pair<BodyPart, BodyPart> pairs[] = {{BodyPart::LeftEar, BodyPart::RightEar},
                                                 {BodyPart::LeftFrontPaw, BodyPart::RightFrontPaw},
                                                 {BodyPart::LeftHindPaw, BodyPart::RightHindPaw}};
  for (const auto& [l, r] : pairs) {
    EXPECT_EQ(m.position(l).x(), -m.position(r).x());
    EXPECT_EQ(m.position(l).tail<2>(), m.position(r).tail<2>());
  }
}

TEST(MouseModel, JsonRoundTripAndErrors) {
  const RigidMouseModel m = RigidMouseModel::standard();
  const RigidMouseModel back = RigidMouseModel::from_json(m.to_json());
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(back.parts()[i].position_mm, m.parts()[i].position_mm);
  nlohmann::json bad = m.to_json();
  bad[0].erase("xyz_mm");
  EXPECT_THROW(RigidMouseModel::from_json(bad), Error);
}

TEST(Deform, CycleStartIsRigid) {
  const RigidMouseModel m = RigidMouseModel::standard();
  const DeformationState s = deform(m, 0.0, 2.0, 0.0);
  for (const auto& o : s.offsets) EXPECT_EQ(o, Vec3::Zero());
  const auto pts = deformed_model_positions(m, s);
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(pts[i], m.parts()[i].position_mm);
}

TEST(Deform, SwingAndStanceWorldDisplacement) {
  // Body moving straight along +Y at v mm/frame, paw world positions by
  // finite difference over one frame in each half of the cycle.
  const RigidMouseModel m = RigidMouseModel::standard();
  GaitConfig gait;
  gait.cycle_frames = 8;
  const double v = 2.0;
  const int L = gait.cycle_frames;
  auto world = [&](int t) {
    const PoseVector pose{Vec3::Zero(), Vec3(0, v * t, 0)};
    return world_part_positions(m, pose, deform(m, gait_phase(t, gait), v, 0.0, gait));
  };
  const int paws[] = {3, 4, 5, 6};
  int swing_count = 0, stance_count = 0;
  for (int t = 0; t < L; ++t) {
    const auto a = world(t), b = world(t + 1);
    for (int i : paws) {
      const double d = (b[static_cast<std::size_t>(i)] - a[static_cast<std::size_t>(i)]).y();
      if (std::abs(d - 2 * v) < 1e-9) ++swing_count;
      else if (std::abs(d) < 1e-9) ++stance_count;
    }
  }
  // Each paw swings half the cycle and stands the other half.
  EXPECT_EQ(swing_count, 4 * L / 2);
  EXPECT_EQ(stance_count, 4 * L / 2);
  // Quarter cycle into a half: one diagonal pair swings while the other stands.
  const auto a = world(L / 4), b = world(L / 4 + 1);
  const double lf = (b[3] - a[3]).y(), rf = (b[4] - a[4]).y(), lh = (b[5] - a[5]).y(), rh = (b[6] - a[6]).y();
  EXPECT_NEAR(lf, rh, 1e-9);
  EXPECT_NEAR(rf, lh, 1e-9);
  EXPECT_NEAR(std::abs(lf - rf), 2 * v, 1e-9);
}

TEST(Deform, PawOffsetsZeroMeanOverCycle) {
  const RigidMouseModel m = RigidMouseModel::standard();
  const GaitConfig gait;
  Vec3 sum[kNumParts];
  for (auto& s : sum) s.setZero();
  for (int t = 0; t < gait.cycle_frames; ++t) {
    const auto s = deform(m, gait_phase(t, gait), 1.7, 0.0, gait);
    for (int i = 0; i < kNumParts; ++i) sum[i] += s.offsets[static_cast<std::size_t>(i)];
  }
  for (const auto& s : sum) EXPECT_LT(s.norm() / gait.cycle_frames, 1e-9);
}

TEST(Deform, HeadRotationIsRigidAndLocal) {
  const RigidMouseModel m = RigidMouseModel::standard();
  const auto rigid = m.rigid_part_positions();
  for (double a : {-0.26, -0.1, 0.05, 0.2}) {
    const auto p = deformed_model_positions(m, deform(m, 0.0, 0.0, a));
    const Vec3 mid = 0.5 * (p[1] + p[2]);
    const Vec3 mid0 = 0.5 * (rigid[1] + rigid[2]);
    EXPECT_NEAR((p[0] - mid).norm(), (rigid[0] - mid0).norm(), 1e-12);
    EXPECT_NEAR((p[1] - p[2]).norm(), (rigid[1] - rigid[2]).norm(), 1e-12);
    for (int i = 3; i < kNumParts; ++i) EXPECT_EQ(p[static_cast<std::size_t>(i)], rigid[static_cast<std::size_t>(i)]);
    EXPECT_GT((p[0] - rigid[0]).norm(), 0.0);
  }
}

TEST(Deform, HeadAngleStaysInConfiguredIntervals) {
  const GaitConfig gait;
  double lo = 1e9, hi = -1e9;
  for (int t = 0; t < 1000; ++t) {
    const double a = head_angle_at(t, gait);
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  EXPECT_NEAR(lo, -15 * M_PI / 180, 1e-9);
  EXPECT_NEAR(hi, 15 * M_PI / 180, 1e-9);
}

TEST(WorldParts, IdentityTranslationAndIsometry) {
  const RigidMouseModel m = RigidMouseModel::standard();
  const DeformationState none;
  const auto id = world_part_positions(m, PoseVector{}, none);
  const auto sh = world_part_positions(m, PoseVector{Vec3::Zero(), Vec3(10, 0, 0)}, none);
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(id[i], m.parts()[i].position_mm);
    EXPECT_LT((sh[i] - m.parts()[i].position_mm - Vec3(10, 0, 0)).norm(), 1e-12);
  }
  std::mt19937_64 g(6);
  for (int n = 0; n < 100; ++n) {
    const PoseVector p = transform_to_pose(oracle::random_transform(g));
    const auto w = world_part_positions(m, p, none);
    for (std::size_t i = 0; i < m.size(); ++i)
      for (std::size_t j = 0; j < m.size(); ++j)
        EXPECT_NEAR((w[i] - w[j]).norm(), (id[i] - id[j]).norm(), 1e-9);
  }
}
