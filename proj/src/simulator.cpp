#include "mtrack/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "mtrack/errors.hpp"
#include "mtrack/json_io.hpp"
#include "mtrack/rng.hpp"

namespace mtrack {

using nlohmann::json;

namespace {

constexpr std::uint32_t kTrackStream = 0x7472;   // "tr"
constexpr std::uint32_t kRenderStream = 0x7278;  // "rx"

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a;
}

double body_radius(const RigidMouseModel& model) {
  double r = 0.0;
  for (const auto& p : model.parts()) r = std::max(r, p.position_mm.head<2>().norm());
  return r;
}

double paw_rest_height(const RigidMouseModel& model) {
  double z = 0.0;
  for (int i : {3, 4, 5, 6}) z = std::min(z, model.parts()[static_cast<std::size_t>(i)].position_mm.z());
  return -z;
}

double reflect(double x, double bound) {
  // Fold x into [-bound, bound].
  const double period = 4.0 * bound;
  double y = std::fmod(x + bound, period);
  if (y < 0) y += period;
  return y <= 2.0 * bound ? y - bound : 3.0 * bound - y;
}

void check_camera_sees_plane(const CameraModel& camera, double extent) {
  constexpr int n = 21;
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      const Vec3 g(-extent + 2.0 * extent * a / (n - 1), -extent + 2.0 * extent * b / (n - 1), 0.0);
      const Vec3 c = camera.pose_global.apply(g);
      if (c.z() <= kMinDepthMm) continue;
      if (camera.in_image(project(camera, g))) return;
    }
  }
  throw Error(ErrorCode::CameraSeesNothing, "camera " + std::to_string(camera.id) + " does not image the table plane");
}

VisibilityCause cause_from_string(const std::string& s, std::string_view context) {
  if (s == "visible") return VisibilityCause::Visible;
  if (s == "dropout") return VisibilityCause::Dropout;
  if (s == "out_of_image") return VisibilityCause::OutOfImage;
  if (s == "behind_camera") return VisibilityCause::BehindCamera;
  throw Error(ErrorCode::SchemaError, std::string(context) + ": unknown visibility cause '" + s + "'");
}

json pose_json(int t, const PoseVector& p) {
  return {{"t", t}, {"rodrigues", io::from_vec(p.rodrigues)}, {"translation_mm", io::from_vec(p.translation)}};
}

json points_json(const std::vector<Vec3>& pts) {
  json arr = json::array();
  for (const auto& p : pts) arr.push_back(io::from_vec(p));
  return arr;
}

std::vector<Vec3> points_from_json(const json& value, std::string_view context) {
  if (!value.is_array() || value.size() != kNumParts) {
    throw Error(ErrorCode::SchemaError, std::string(context) + ": expected 8 points");
  }
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < value.size(); ++i) {
    out.push_back(io::to_vec3(value[i], std::string(context) + "[" + std::to_string(i) + "]"));
  }
  return out;
}

}  // namespace

std::string_view to_string(VisibilityCause cause) {
  switch (cause) {
    case VisibilityCause::Visible: return "visible";
    case VisibilityCause::Dropout: return "dropout";
    case VisibilityCause::OutOfImage: return "out_of_image";
    case VisibilityCause::BehindCamera: return "behind_camera";
  }
  return "visible";
}

CameraModel look_at_camera(int id, const Vec3& center, const Vec3& target, const Vec3& up, double focal_px,
                           ImageSize size) {
  const Vec3 z = (target - center).normalized();
  const Vec3 x = z.cross(up).normalized();
  const Vec3 y = z.cross(x);
  CameraModel cam;
  cam.id = id;
  cam.calibration << focal_px, 0.0, size.width / 2.0, 0.0, focal_px, size.height / 2.0, 0.0, 0.0, 1.0;
  cam.pose_global.rotation.row(0) = x.transpose();
  cam.pose_global.rotation.row(1) = y.transpose();
  cam.pose_global.rotation.row(2) = z.transpose();
  cam.pose_global.translation = -cam.pose_global.rotation * center;
  cam.image_size = size;
  return cam;
}

std::vector<CameraModel> default_camera_rig() {
  const ImageSize size{1280, 960};
  const Vec3 target(0.0, 0.0, 0.0);
  return {
      look_at_camera(0, {0.0, 0.0, 700.0}, target, Vec3::UnitY(), 1000.0, size),
      look_at_camera(1, {0.0, -600.0, 350.0}, target, Vec3::UnitZ(), 1000.0, size),
      look_at_camera(2, {600.0, 0.0, 350.0}, target, Vec3::UnitZ(), 1000.0, size),
  };
}

SceneConfig SceneConfig::default_scene() {
  SceneConfig c;
  c.cameras = default_camera_rig();
  return c;
}

json SceneConfig::to_json() const {
  return {
      {"cameras", io::cameras_to_json(cameras)["cameras"]},
      {"plane_half_extent_mm", plane_half_extent_mm},
      {"seed", seed},
      {"n_epochs", n_epochs},
      {"step_sigma_mm", step_sigma_mm},
      {"heading_smoothing", heading_smoothing},
      {"max_turn_deg", max_turn_deg},
      {"min_turn_radius_mm", min_turn_radius_mm},
      {"noise_sigma_px", noise_sigma_px},
      {"occlusion",
       {{"random_dropout_rate", occlusion.random_dropout_rate}, {"min_visible_floor", occlusion.min_visible_floor}}},
      {"deformation", deformation},
      {"gait", gait.to_json()},
      {"model", model.to_json()},
  };
}

SceneConfig SceneConfig::from_json(const json& value, std::string_view context) {
  if (!value.is_object()) throw Error(ErrorCode::SchemaError, std::string(context) + ": expected an object");
  SceneConfig c = default_scene();
  const std::string ctx(context);
  if (value.contains("cameras")) c.cameras = io::cameras_from_json(value["cameras"], ctx + ".cameras");
  if (value.contains("plane_half_extent_mm")) c.plane_half_extent_mm = io::require_number(value, "plane_half_extent_mm", ctx);
  if (value.contains("seed")) {
    const json& s = value["seed"];
    if (!s.is_number_integer()) throw Error(ErrorCode::SchemaError, ctx + ".seed: expected an integer");
    c.seed = s.get<std::uint64_t>();
  }
  if (value.contains("n_epochs")) c.n_epochs = io::require_int(value, "n_epochs", ctx);
  if (value.contains("step_sigma_mm")) c.step_sigma_mm = io::require_number(value, "step_sigma_mm", ctx);
  if (value.contains("heading_smoothing")) c.heading_smoothing = io::require_number(value, "heading_smoothing", ctx);
  if (value.contains("max_turn_deg")) c.max_turn_deg = io::require_number(value, "max_turn_deg", ctx);
  if (value.contains("min_turn_radius_mm")) {
    c.min_turn_radius_mm = io::require_number(value, "min_turn_radius_mm", ctx);
  }
  if (value.contains("noise_sigma_px")) c.noise_sigma_px = io::require_number(value, "noise_sigma_px", ctx);
  if (value.contains("occlusion")) {
    const json& o = value["occlusion"];
    const std::string octx = ctx + ".occlusion";
    if (o.contains("random_dropout_rate")) c.occlusion.random_dropout_rate = io::require_number(o, "random_dropout_rate", octx);
    if (o.contains("min_visible_floor")) c.occlusion.min_visible_floor = io::require_int(o, "min_visible_floor", octx);
  }
  if (value.contains("deformation")) c.deformation = io::require_bool(value, "deformation", ctx);
  if (value.contains("gait")) c.gait = GaitConfig::from_json(value["gait"], ctx + ".gait");
  if (value.contains("model")) c.model = RigidMouseModel::from_json(value["model"], ctx + ".model");

  if (c.cameras.size() < 2) throw Error(ErrorCode::InvalidArgument, ctx + ".cameras: at least 2 cameras required");
  if (c.n_epochs < 5) throw Error(ErrorCode::InvalidArgument, ctx + ".n_epochs: must be at least 5");
  if (!(c.plane_half_extent_mm > 0)) throw Error(ErrorCode::InvalidArgument, ctx + ".plane_half_extent_mm: must be positive");
  if (!(c.step_sigma_mm >= 0)) throw Error(ErrorCode::InvalidArgument, ctx + ".step_sigma_mm: must be >= 0");
  if (!(c.noise_sigma_px >= 0)) throw Error(ErrorCode::InvalidArgument, ctx + ".noise_sigma_px: must be >= 0");
  if (!(c.heading_smoothing > 0 && c.heading_smoothing <= 1)) {
    throw Error(ErrorCode::InvalidArgument, ctx + ".heading_smoothing: must be in (0, 1]");
  }
  if (!(c.occlusion.random_dropout_rate >= 0 && c.occlusion.random_dropout_rate <= 1)) {
    throw Error(ErrorCode::InvalidArgument, ctx + ".occlusion.random_dropout_rate: must be in [0, 1]");
  }
  return c;
}

int SimulatedDataset::n_epochs() const {
  const int per_epoch = n_cameras() * n_parts();
  return per_epoch == 0 ? 0 : static_cast<int>(observations.size()) / per_epoch;
}

const Observation& SimulatedDataset::observation(int epoch, int camera, int part) const {
  return observations[static_cast<std::size_t>((epoch * n_cameras() + camera) * n_parts() + part)];
}

Observation& SimulatedDataset::observation(int epoch, int camera, int part) {
  return observations[static_cast<std::size_t>((epoch * n_cameras() + camera) * n_parts() + part)];
}

int SimulatedDataset::visible_count(int epoch, int camera) const {
  int n = 0;
  for (int i = 0; i < n_parts(); ++i) n += observation(epoch, camera, i).visible();
  return n;
}

int SimulatedDataset::view_count(int epoch, int part) const {
  int n = 0;
  for (int k = 0; k < n_cameras(); ++k) n += observation(epoch, k, part).visible();
  return n;
}

bool SimulatedDataset::locally_unsolvable(int epoch) const {
  for (int k = 0; k < n_cameras(); ++k) {
    if (visible_count(epoch, k) >= min_visible_floor) return false;
  }
  return true;
}

std::vector<PoseVector> generate_track(const SceneConfig& config) {
  if (config.n_epochs < 5) throw Error(ErrorCode::InvalidArgument, "n_epochs must be at least 5");
  const double bound = config.plane_half_extent_mm - body_radius(config.model);
  if (bound <= 0) throw Error(ErrorCode::InvalidArgument, "table plane is smaller than the mouse");

  Rng rng(config.seed, {kTrackStream});
  const double z = paw_rest_height(config.model);
  const double alpha = config.heading_smoothing;
  const double max_turn = config.max_turn_deg * std::numbers::pi / 180.0;

  std::vector<PoseVector> track;
  track.reserve(static_cast<std::size_t>(config.n_epochs));
  Vec2 pos = Vec2::Zero();
  Vec2 smoothed = Vec2::Zero();
  double yaw = 0.0;
  for (int t = 0; t < config.n_epochs; ++t) {
    if (t > 0) {
      const double dx = config.step_sigma_mm * rng.normal();
      const double dy = config.step_sigma_mm * rng.normal();
      const Vec2 next(reflect(pos.x() + dx, bound), reflect(pos.y() + dy, bound));
      const double step = (next - pos).norm();
      smoothed = alpha * (next - pos) + (1.0 - alpha) * smoothed;
      pos = next;
      if (smoothed.norm() > 1e-12) {
        double turn = wrap_angle(std::atan2(smoothed.y(), smoothed.x()) - std::numbers::pi / 2 - yaw);
        double cap = max_turn > 0 ? max_turn : std::numbers::pi;
        if (config.min_turn_radius_mm > 0) cap = std::min(cap, step / config.min_turn_radius_mm);
        turn = std::clamp(turn, -cap, cap);
        yaw = wrap_angle(yaw + turn);
      }
    }
    PoseVector p;
    p.rodrigues = canonical_rodrigues(Vec3(0.0, 0.0, yaw));
    p.translation = Vec3(pos.x(), pos.y(), z);
    track.push_back(p);
  }
  return track;
}

std::vector<double> smoothed_body_speed(const std::vector<PoseVector>& track, double smoothing) {
  std::vector<double> speed(track.size(), 0.0);
  Vec2 s = Vec2::Zero();
  for (std::size_t t = 1; t < track.size(); ++t) {
    const Vec2 d = (track[t].translation - track[t - 1].translation).head<2>();
    s = smoothing * d + (1.0 - smoothing) * s;
    speed[t] = s.norm();
  }
  return speed;
}

SimulatedDataset render(const SceneConfig& config, const std::vector<PoseVector>& track) {
  if (config.cameras.size() < 2) throw Error(ErrorCode::InvalidArgument, "at least 2 cameras required");
  if (track.empty()) throw Error(ErrorCode::InvalidArgument, "empty track");
  for (const auto& cam : config.cameras) check_camera_sees_plane(cam, config.plane_half_extent_mm);

  SimulatedDataset ds;
  ds.cameras = config.cameras;
  ds.model = config.model;
  ds.gait = config.gait;
  ds.min_visible_floor = config.occlusion.min_visible_floor;
  const json config_json = config.to_json();
  ds.meta = {{"config", config_json}, {"config_hash", io::content_hash(config_json)}};

  const auto speeds = smoothed_body_speed(track, config.heading_smoothing);
  const int n_cam = static_cast<int>(config.cameras.size());
  const std::vector<Vec3> rigid_model = config.model.rigid_part_positions();

  ds.ground_truth.reserve(track.size());
  ds.observations.reserve(track.size() * static_cast<std::size_t>(n_cam * kNumParts));
  for (std::size_t ti = 0; ti < track.size(); ++ti) {
    const int t = static_cast<int>(ti);
    EpochTruth truth;
    truth.pose = track[ti];
    truth.body_speed_mm = speeds[ti];
    const double phase = gait_phase(t, config.gait);
    if (config.deformation) {
      truth.deformation = deform(config.model, phase, speeds[ti], head_angle_at(t, config.gait), config.gait);
    } else {
      truth.deformation.phase = phase;
    }
    const RigidTransform H = pose_to_transform(truth.pose);
    for (const auto& x : rigid_model) truth.rigid_world.push_back(H.apply(x));
    truth.deformable_world = world_part_positions(config.model, truth.pose, truth.deformation);

    Rng rng(config.seed, {kRenderStream, static_cast<std::uint32_t>(t)});
    for (int k = 0; k < n_cam; ++k) {
      const CameraModel& cam = config.cameras[static_cast<std::size_t>(k)];
      for (int i = 0; i < kNumParts; ++i) {
        // Always draw the same number of variates so streams stay aligned.
        const Vec2 noise(config.noise_sigma_px * rng.normal(), config.noise_sigma_px * rng.normal());
        const bool dropped = rng.uniform() < config.occlusion.random_dropout_rate;

        Observation obs;
        obs.epoch = t;
        obs.camera = k;
        obs.part = i;
        const Vec3& X = truth.deformable_world[static_cast<std::size_t>(i)];
        if (cam.pose_global.apply(X).z() <= kMinDepthMm) {
          obs.cause = VisibilityCause::BehindCamera;
        } else {
          const Vec2 px = project(cam, X) + noise;
          if (dropped) {
            obs.cause = VisibilityCause::Dropout;
          } else if (!cam.in_image(px)) {
            obs.cause = VisibilityCause::OutOfImage;
          } else {
            obs.pixel = px;
            obs.noise = noise;
          }
        }
        ds.observations.push_back(obs);
      }
    }
    ds.ground_truth.push_back(std::move(truth));
  }
  return ds;
}

SimulatedDataset simulate(const SceneConfig& config) { return render(config, generate_track(config)); }

json dataset_to_json(const SimulatedDataset& ds) {
  json gt_poses = json::array();
  json gt_deform = json::array();
  json gt_rigid = json::array();
  json gt_deformable = json::array();
  for (std::size_t t = 0; t < ds.ground_truth.size(); ++t) {
    const EpochTruth& e = ds.ground_truth[t];
    gt_poses.push_back(pose_json(static_cast<int>(t), e.pose));
    gt_deform.push_back({{"t", t},
                         {"phase", e.deformation.phase},
                         {"head_angle_rad", e.deformation.head_angle},
                         {"body_speed_mm", e.body_speed_mm},
                         {"offsets_mm", points_json(e.deformation.offsets)}});
    gt_rigid.push_back(points_json(e.rigid_world));
    gt_deformable.push_back(points_json(e.deformable_world));
  }
  json obs = json::array();
  for (const auto& o : ds.observations) {
    json j = {{"t", o.epoch}, {"k", ds.cameras[static_cast<std::size_t>(o.camera)].id}, {"i", o.part},
              {"visible", o.visible()}};
    if (o.visible()) {
      j["u"] = o.pixel->x();
      j["v"] = o.pixel->y();
      j["noise"] = io::from_vec(*o.noise);
    } else {
      j["cause"] = std::string(to_string(o.cause));
    }
    obs.push_back(std::move(j));
  }
  json out = {
      {"format", "mtrack-dataset"},
      {"version", 1},
      {"meta", ds.meta},
      {"n_epochs", ds.n_epochs()},
      {"min_visible_floor", ds.min_visible_floor},
      {"cameras", io::cameras_to_json(ds.cameras)["cameras"]},
      {"model", ds.model.to_json()},
      {"gait", ds.gait.to_json()},
      {"observations", std::move(obs)},
  };
  if (ds.has_ground_truth()) {
    out["ground_truth"] = {{"poses", std::move(gt_poses)},
                           {"deformation", std::move(gt_deform)},
                           {"rigid_world_mm", std::move(gt_rigid)},
                           {"deformable_world_mm", std::move(gt_deformable)}};
  }
  return out;
}

SimulatedDataset dataset_from_json(const json& value, std::string_view context) {
  const std::string ctx(context);
  if (!value.is_object()) throw Error(ErrorCode::SchemaError, ctx + ": expected an object");
  SimulatedDataset ds;
  ds.meta = value.contains("meta") ? value["meta"] : json::object();
  ds.cameras = io::cameras_from_json(io::require(value, "cameras", ctx), ctx + ".cameras");
  if (value.contains("model")) ds.model = RigidMouseModel::from_json(value["model"], ctx + ".model");
  if (value.contains("gait")) ds.gait = GaitConfig::from_json(value["gait"], ctx + ".gait");
  if (value.contains("min_visible_floor")) ds.min_visible_floor = io::require_int(value, "min_visible_floor", ctx);
  const int n_epochs = io::require_int(value, "n_epochs", ctx);
  if (n_epochs < 0) throw Error(ErrorCode::SchemaError, ctx + ".n_epochs: must be >= 0");

  const int n_cam = ds.n_cameras();
  const int n_part = ds.n_parts();
  ds.observations.resize(static_cast<std::size_t>(n_epochs * n_cam * n_part));
  std::vector<char> seen(ds.observations.size(), 0);

  const json& obs = io::require(value, "observations", ctx);
  if (!obs.is_array()) throw Error(ErrorCode::SchemaError, ctx + ".observations: expected an array");
  for (std::size_t n = 0; n < obs.size(); ++n) {
    const std::string octx = ctx + ".observations[" + std::to_string(n) + "]";
    const json& o = obs[n];
    const int t = io::require_int(o, "t", octx);
    const int cam_id = io::require_int(o, "k", octx);
    const int i = io::require_int(o, "i", octx);
    const auto it = std::find_if(ds.cameras.begin(), ds.cameras.end(), [&](const CameraModel& c) { return c.id == cam_id; });
    if (it == ds.cameras.end()) {
      throw Error(ErrorCode::InconsistentCameraIds, octx + ".k: camera id " + std::to_string(cam_id) + " not in camera list");
    }
    if (t < 0 || t >= n_epochs || i < 0 || i >= n_part) {
      throw Error(ErrorCode::SchemaError, octx + ": epoch or part index out of range");
    }
    const int k = static_cast<int>(it - ds.cameras.begin());
    Observation& dst = ds.observation(t, k, i);
    char& flag = seen[static_cast<std::size_t>((t * n_cam + k) * n_part + i)];
    if (flag) throw Error(ErrorCode::SchemaError, octx + ": duplicate observation");
    flag = 1;
    dst.epoch = t;
    dst.camera = k;
    dst.part = i;
    if (io::require_bool(o, "visible", octx)) {
      dst.cause = VisibilityCause::Visible;
      dst.pixel = Vec2(io::require_number(o, "u", octx), io::require_number(o, "v", octx));
      dst.noise = o.contains("noise") ? io::to_vec2(o["noise"], octx + ".noise") : Vec2::Zero();
    } else {
      const std::string cause = o.contains("cause") ? o["cause"].get<std::string>() : "dropout";
      dst.cause = cause_from_string(cause, octx + ".cause");
      if (dst.cause == VisibilityCause::Visible) {
        throw Error(ErrorCode::SchemaError, octx + ": invisible observation with cause 'visible'");
      }
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw Error(ErrorCode::SchemaError, ctx + ".observations: incomplete (every epoch/camera/part needs an entry)");
  }

  if (value.contains("ground_truth")) {
    const json& gt = value["ground_truth"];
    const std::string gctx = ctx + ".ground_truth";
    const json& poses = io::require(gt, "poses", gctx);
    const json& def = io::require(gt, "deformation", gctx);
    const json& rigid = io::require(gt, "rigid_world_mm", gctx);
    const json& deformable = io::require(gt, "deformable_world_mm", gctx);
    for (const json* a : {&poses, &def, &rigid, &deformable}) {
      if (!a->is_array() || static_cast<int>(a->size()) != n_epochs) {
        throw Error(ErrorCode::SchemaError, gctx + ": arrays must have one entry per epoch");
      }
    }
    for (int t = 0; t < n_epochs; ++t) {
      const std::string ts = "[" + std::to_string(t) + "]";
      EpochTruth e;
      const json& p = poses[static_cast<std::size_t>(t)];
      e.pose.rodrigues = io::to_vec3(io::require(p, "rodrigues", gctx + ".poses" + ts), gctx + ".poses" + ts + ".rodrigues");
      e.pose.translation =
          io::to_vec3(io::require(p, "translation_mm", gctx + ".poses" + ts), gctx + ".poses" + ts + ".translation_mm");
      const json& d = def[static_cast<std::size_t>(t)];
      const std::string dctx = gctx + ".deformation" + ts;
      e.deformation.phase = io::require_number(d, "phase", dctx);
      e.deformation.head_angle = io::require_number(d, "head_angle_rad", dctx);
      e.body_speed_mm = io::require_number(d, "body_speed_mm", dctx);
      e.deformation.offsets = points_from_json(io::require(d, "offsets_mm", dctx), dctx + ".offsets_mm");
      e.rigid_world = points_from_json(rigid[static_cast<std::size_t>(t)], gctx + ".rigid_world_mm" + ts);
      e.deformable_world = points_from_json(deformable[static_cast<std::size_t>(t)], gctx + ".deformable_world_mm" + ts);
      ds.ground_truth.push_back(std::move(e));
    }
  }
  return ds;
}

void export_dataset(const SimulatedDataset& dataset, const std::filesystem::path& path) {
  io::write_json_file(path, dataset_to_json(dataset));
}

SimulatedDataset import_dataset(const std::filesystem::path& path) {
  return dataset_from_json(io::read_json_file(path), path.filename().string());
}

}  // namespace mtrack
