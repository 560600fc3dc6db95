#pragma once

// Ground-truth scene simulation: a random walk of the mouse on the table
// plane, the deforming body parts, and noisy, partially missing multi-camera
// pixel observations.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtrack/geometry.hpp"
#include "mtrack/mouse_model.hpp"

namespace mtrack {

struct OcclusionConfig {
  double random_dropout_rate = 0.0;
  /// Epochs where every camera sees fewer parts than this are flagged as not
  /// solvable from that frame alone.
  int min_visible_floor = 3;
};

struct SceneConfig {
  std::vector<CameraModel> cameras;
  double plane_half_extent_mm = 150.0;  // table is [-e, e]^2 at z = 0
  std::uint64_t seed = 1;
  int n_epochs = 200;
  double step_sigma_mm = 1.0;      // per-axis random-walk step
  double heading_smoothing = 0.3;  // exponential smoothing of the motion direction
  double max_turn_deg = 10.0;      // per frame; <= 0 disables the cap
  double min_turn_radius_mm = 10.0;  // turn per frame <= step / radius; <= 0 disables
  double noise_sigma_px = 0.5;
  OcclusionConfig occlusion;
  bool deformation = true;
  GaitConfig gait;
  RigidMouseModel model = RigidMouseModel::standard();

  /// Three cameras (top, side, front) roughly 90° apart.
  static SceneConfig default_scene();

  nlohmann::json to_json() const;
  /// Missing keys fall back to default_scene() values.
  static SceneConfig from_json(const nlohmann::json& value, std::string_view context = "scene");
};

std::vector<CameraModel> default_camera_rig();

/// Camera looking from `center` towards `target`; image y points away from `up`.
CameraModel look_at_camera(int id, const Vec3& center, const Vec3& target, const Vec3& up, double focal_px,
                           ImageSize size);

enum class VisibilityCause { Visible, Dropout, OutOfImage, BehindCamera };
std::string_view to_string(VisibilityCause cause);

struct Observation {
  int epoch = 0;
  int camera = 0;  // index into SimulatedDataset::cameras
  int part = 0;
  VisibilityCause cause = VisibilityCause::Visible;
  std::optional<Vec2> pixel;  // present iff visible
  std::optional<Vec2> noise;  // present iff visible; pixel = exact projection + noise

  bool visible() const { return cause == VisibilityCause::Visible; }
};

struct EpochTruth {
  PoseVector pose;  // model -> global
  double body_speed_mm = 0.0;
  DeformationState deformation;
  std::vector<Vec3> rigid_world;       // X̂_t,i
  std::vector<Vec3> deformable_world;  // X̃_t,i
};

struct SimulatedDataset {
  nlohmann::json meta;
  std::vector<CameraModel> cameras;
  RigidMouseModel model = RigidMouseModel::standard();
  GaitConfig gait;
  std::vector<EpochTruth> ground_truth;  // empty when the data carry no truth
  std::vector<Observation> observations;  // dense, ordered by (epoch, camera, part)
  int min_visible_floor = 3;

  int n_epochs() const;
  int n_cameras() const { return static_cast<int>(cameras.size()); }
  int n_parts() const { return static_cast<int>(model.size()); }
  bool has_ground_truth() const { return !ground_truth.empty(); }

  const Observation& observation(int epoch, int camera, int part) const;
  Observation& observation(int epoch, int camera, int part);
  int visible_count(int epoch, int camera) const;
  /// Number of cameras that see the part.
  int view_count(int epoch, int part) const;
  /// Every camera sees fewer than min_visible_floor parts.
  bool locally_unsolvable(int epoch) const;
};

/// 2D random walk on the plane (reflected at the borders) with heading from
/// the smoothed motion direction. Model +Y points along the heading; paws
/// rest on z = 0.
std::vector<PoseVector> generate_track(const SceneConfig& config);

/// Body speed (mm/frame) per epoch: norm of the exponentially smoothed step.
std::vector<double> smoothed_body_speed(const std::vector<PoseVector>& track, double smoothing);

SimulatedDataset render(const SceneConfig& config, const std::vector<PoseVector>& track);

/// generate_track followed by render.
SimulatedDataset simulate(const SceneConfig& config);

nlohmann::json dataset_to_json(const SimulatedDataset& dataset);
SimulatedDataset dataset_from_json(const nlohmann::json& value, std::string_view context = "dataset");
void export_dataset(const SimulatedDataset& dataset, const std::filesystem::path& path);
SimulatedDataset import_dataset(const std::filesystem::path& path);

}  // namespace mtrack
