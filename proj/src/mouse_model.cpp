#include "mtrack/mouse_model.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "mtrack/errors.hpp"
#include "mtrack/json_io.hpp"

namespace mtrack {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Mirror partner of each part (self for midline parts).
constexpr int kMirror[kNumParts] = {0, 2, 1, 4, 3, 6, 5, 7};

// +1: planted at phase 0, -1: swinging at phase 0, 0: not a paw.
constexpr double kPawPair[kNumParts] = {0, 0, 0, -1, +1, +1, -1, 0};

}  // namespace

RigidMouseModel RigidMouseModel::standard() {
  return RigidMouseModel({
      {0, "nose tip", {0.0, 36.0, 2.5}},
      {1, "left ear", {7.75, 16.0, 19.0}},
      {2, "right ear", {-7.75, 16.0, 19.0}},
      {3, "left front paw", {5.5, 20.0, -8.0}},
      {4, "right front paw", {-5.5, 20.0, -8.0}},
      {5, "left hind paw", {13.5, -8.5, -8.0}},
      {6, "right hind paw", {-13.5, -8.5, -8.0}},
      {7, "tail root", {0.0, -30.0, -6.0}},
  });
}

RigidMouseModel::RigidMouseModel(std::vector<ModelPart> parts) : parts_(std::move(parts)) {
  if (parts_.size() != kNumParts) {
    throw Error(ErrorCode::SchemaError, "mouse model needs exactly 8 parts, got " + std::to_string(parts_.size()));
  }
  for (int i = 0; i < kNumParts; ++i) {
    if (parts_[static_cast<std::size_t>(i)].id != i) {
      throw Error(ErrorCode::SchemaError, "mouse model part ids must be 0..7 in order");
    }
  }
  for (int i = 0; i < kNumParts; ++i) {
    const Vec3& a = parts_[static_cast<std::size_t>(i)].position_mm;
    const Vec3& b = parts_[static_cast<std::size_t>(kMirror[i])].position_mm;
    if (std::abs(a.x() + b.x()) > 1e-9 || std::abs(a.y() - b.y()) > 1e-9 || std::abs(a.z() - b.z()) > 1e-9) {
      throw Error(ErrorCode::SchemaError, "mouse model is not bilaterally symmetric at part " + std::to_string(i));
    }
  }
}

std::vector<Vec3> RigidMouseModel::rigid_part_positions() const {
  std::vector<Vec3> out;
  out.reserve(parts_.size());
  for (const auto& p : parts_) out.push_back(p.position_mm);
  return out;
}

nlohmann::json RigidMouseModel::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : parts_) {
    arr.push_back({{"id", p.id}, {"name", p.name}, {"xyz_mm", io::from_vec(p.position_mm)}});
  }
  return arr;
}

RigidMouseModel RigidMouseModel::from_json(const nlohmann::json& value, std::string_view context) {
  if (!value.is_array()) throw Error(ErrorCode::SchemaError, std::string(context) + ": expected an array of parts");
  std::vector<ModelPart> parts;
  for (std::size_t i = 0; i < value.size(); ++i) {
    const std::string ctx = std::string(context) + "[" + std::to_string(i) + "]";
    const auto& e = value[i];
    const auto& name = io::require(e, "name", ctx);
    if (!name.is_string()) throw Error(ErrorCode::SchemaError, ctx + ".name: expected a string");
    parts.push_back({io::require_int(e, "id", ctx), name.get<std::string>(),
                     io::to_vec3(io::require(e, "xyz_mm", ctx), ctx + ".xyz_mm")});
  }
  return RigidMouseModel(std::move(parts));
}

GaitConfig::GaitConfig()
    : head_intervals{{-15 * kDeg, -5 * kDeg}, {-5 * kDeg, 5 * kDeg}, {5 * kDeg, 15 * kDeg}} {}

nlohmann::json GaitConfig::to_json() const {
  nlohmann::json intervals = nlohmann::json::array();
  for (const auto& iv : head_intervals) intervals.push_back({iv.lo_rad, iv.hi_rad});
  return {{"cycle_frames", cycle_frames},
          {"head_intervals_rad", intervals},
          {"head_start_interval", head_start_interval},
          {"head_sweep_frames", head_sweep_frames},
          {"head_sweeps_per_interval", head_sweeps_per_interval},
          {"head_axis", io::from_vec(head_axis)}};
}

GaitConfig GaitConfig::from_json(const nlohmann::json& value, std::string_view context) {
  GaitConfig g;
  const std::string ctx(context);
  if (value.contains("cycle_frames")) g.cycle_frames = io::require_int(value, "cycle_frames", ctx);
  if (value.contains("head_intervals_rad")) {
    g.head_intervals.clear();
    const auto& arr = value.at("head_intervals_rad");
    if (!arr.is_array() || arr.empty()) {
      throw Error(ErrorCode::SchemaError, ctx + ".head_intervals_rad: expected a non-empty array");
    }
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const auto a = io::number_array(arr[i], 2, ctx + ".head_intervals_rad[" + std::to_string(i) + "]");
      g.head_intervals.push_back({a[0], a[1]});
    }
  }
  if (value.contains("head_start_interval")) g.head_start_interval = io::require_int(value, "head_start_interval", ctx);
  if (value.contains("head_sweep_frames")) g.head_sweep_frames = io::require_number(value, "head_sweep_frames", ctx);
  if (value.contains("head_sweeps_per_interval")) {
    g.head_sweeps_per_interval = io::require_int(value, "head_sweeps_per_interval", ctx);
  }
  if (value.contains("head_axis")) g.head_axis = io::to_vec3(value.at("head_axis"), ctx + ".head_axis").normalized();
  if (g.cycle_frames < 2 || g.head_sweep_frames <= 0 || g.head_sweeps_per_interval < 1) {
    throw Error(ErrorCode::SchemaError, ctx + ": gait periods must be positive");
  }
  return g;
}

double gait_phase(int epoch, const GaitConfig& config) {
  const int L = config.cycle_frames;
  return static_cast<double>(((epoch % L) + L) % L) / L;
}

double head_angle_at(int epoch, const GaitConfig& config) {
  if (config.head_intervals.empty()) return 0.0;
  const double t = static_cast<double>(epoch);
  const double P = config.head_sweep_frames;
  const double block = P * config.head_sweeps_per_interval;
  const auto n = static_cast<long>(config.head_intervals.size());
  const long idx = ((config.head_start_interval + static_cast<long>(std::floor(t / block))) % n + n) % n;
  const AngleInterval& iv = config.head_intervals[static_cast<std::size_t>(idx)];
  double s = std::fmod(t, P) / P;
  if (s < 0) s += 1.0;
  // Triangle starting at the interval centre, rising first.
  double tri;
  if (s < 0.25) {
    tri = 4.0 * s;
  } else if (s < 0.75) {
    tri = 2.0 - 4.0 * s;
  } else {
    tri = 4.0 * s - 4.0;
  }
  return 0.5 * (iv.lo_rad + iv.hi_rad) + 0.5 * (iv.hi_rad - iv.lo_rad) * tri;
}

double planted_pair_forward_offset(double phase, double body_speed, int cycle_frames) {
  // Zero-mean triangle: stance (slope -v per frame) on [0.75, 1.25),
  // swing (slope +v per frame) on [0.25, 0.75).
  const double vl = body_speed * cycle_frames;
  if (phase < 0.25) return -vl * phase;
  if (phase < 0.75) return -0.25 * vl + vl * (phase - 0.25);
  return 0.25 * vl - vl * (phase - 0.75);
}

DeformationState deform(const RigidMouseModel& model, double phase, double body_speed, double head_angle,
                        const GaitConfig& config) {
  DeformationState state;
  state.phase = phase;
  state.head_angle = head_angle;
  const double forward = planted_pair_forward_offset(phase, body_speed, config.cycle_frames);
  for (int i = 0; i < kNumParts; ++i) {
    state.offsets[static_cast<std::size_t>(i)] = Vec3(0.0, kPawPair[i] * forward, 0.0);
  }
  if (head_angle != 0.0) {
    const Vec3 pivot = 0.5 * (model.position(BodyPart::LeftEar) + model.position(BodyPart::RightEar));
    const Mat3 R = Eigen::AngleAxisd(head_angle, config.head_axis.normalized()).toRotationMatrix();
    for (BodyPart part : {BodyPart::NoseTip, BodyPart::LeftEar, BodyPart::RightEar}) {
      const Vec3& X = model.position(part);
      state.offsets[static_cast<std::size_t>(part)] = R * (X - pivot) + pivot - X;
    }
  }
  return state;
}

std::vector<Vec3> deformed_model_positions(const RigidMouseModel& model, const DeformationState& state) {
  std::vector<Vec3> out = model.rigid_part_positions();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += state.offsets[i];
  return out;
}

std::vector<Vec3> world_part_positions(const RigidMouseModel& model, const PoseVector& pose,
                                       const DeformationState& state) {
  const RigidTransform T = pose_to_transform(pose);
  std::vector<Vec3> out = deformed_model_positions(model, state);
  for (auto& x : out) x = T.apply(x);
  return out;
}

}  // namespace mtrack
