#pragma once

// Rigid eight-part mouse body model and its pace-gait / head-nod deformation.
//
// Model frame: X lateral (left positive), Y anterior, Z up, origin at the
// body centre of gravity. Units mm.

#include <string>
#include <vector>

#include <json.hpp>

#include "mtrack/geometry.hpp"

namespace mtrack {

inline constexpr int kNumParts = 8;

enum class BodyPart : int {
  NoseTip = 0,
  LeftEar = 1,
  RightEar = 2,
  LeftFrontPaw = 3,
  RightFrontPaw = 4,
  LeftHindPaw = 5,
  RightHindPaw = 6,
  TailRoot = 7,
};

struct ModelPart {
  int id = 0;
  std::string name;
  Vec3 position_mm = Vec3::Zero();
};

class RigidMouseModel {
 public:
  /// Built-in biologically plausible coordinates.
  static RigidMouseModel standard();

  /// Validates: exactly kNumParts parts with ids 0..7 in order, left/right
  /// pairs mirrored in X.
  explicit RigidMouseModel(std::vector<ModelPart> parts);

  const std::vector<ModelPart>& parts() const { return parts_; }
  std::vector<Vec3> rigid_part_positions() const;
  const Vec3& position(BodyPart part) const { return parts_[static_cast<std::size_t>(part)].position_mm; }
  std::size_t size() const { return parts_.size(); }

  nlohmann::json to_json() const;
  static RigidMouseModel from_json(const nlohmann::json& value, std::string_view context = "model");

 private:
  std::vector<ModelPart> parts_;
};

struct AngleInterval {
  double lo_rad = 0.0;
  double hi_rad = 0.0;
};

struct GaitConfig {
  int cycle_frames = 10;
  /// Head nods sweep linearly back and forth inside one interval, then move
  /// on to the next interval (cyclically).
  std::vector<AngleInterval> head_intervals;
  int head_start_interval = 1;
  double head_sweep_frames = 20.0;  // one full back-and-forth sweep
  int head_sweeps_per_interval = 2;
  Vec3 head_axis = Vec3::UnitX();  // model-frame axis through the ear midpoint

  GaitConfig();

  nlohmann::json to_json() const;
  static GaitConfig from_json(const nlohmann::json& value, std::string_view context = "gait");
};

struct DeformationState {
  double phase = 0.0;       // gait cycle position in [0, 1)
  double head_angle = 0.0;  // radians
  std::vector<Vec3> offsets = std::vector<Vec3>(kNumParts, Vec3::Zero());  // model frame, mm
};

double gait_phase(int epoch, const GaitConfig& config);
double head_angle_at(int epoch, const GaitConfig& config);

/// Forward (model +Y) offset of the paw pair that is planted at phase 0
/// (right front, left hind). The other diagonal pair moves with the negated
/// offset. body_speed in mm per frame.
double planted_pair_forward_offset(double phase, double body_speed, int cycle_frames);

/// Pace-gait paw offsets plus a rigid head-triangle rotation about the ear
/// midpoint. Pure function of its arguments.
DeformationState deform(const RigidMouseModel& model, double phase, double body_speed, double head_angle,
                        const GaitConfig& config = {});

/// X_i + Δ_i in the model frame.
std::vector<Vec3> deformed_model_positions(const RigidMouseModel& model, const DeformationState& state);

/// apply(pose, X_i + Δ_i) for every part.
std::vector<Vec3> world_part_positions(const RigidMouseModel& model, const PoseVector& pose,
                                       const DeformationState& state);

}  // namespace mtrack
