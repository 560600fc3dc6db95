#include "mtrack/adjustment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Eigenvalues>

#include "mtrack/dense_lm.hpp"
#include "mtrack/errors.hpp"
#include "mtrack/json_io.hpp"

namespace mtrack {

using nlohmann::json;

namespace {

constexpr double kHuberScale = 3.0;
constexpr double kRankTolerance = 1e-12;

Vec3 model_point(const Problem& p, int epoch, int part) {
  Vec3 x = p.model.parts()[static_cast<std::size_t>(part)].position_mm;
  if (p.mode == SolveMode::Deformed) x += p.offsets[static_cast<std::size_t>(epoch)][static_cast<std::size_t>(part)];
  return x;
}

// Pixel of model point x under pose p seen by camera; Jacobian w.r.t. p.
Vec2 project_model_point(const CameraModel& cam, const PoseVector& pose, const Vec3& x,
                         Eigen::Matrix<double, 2, 6>* jac) {
  const Mat3 R = rodrigues_to_matrix(pose.rodrigues);
  const Vec3 world = R * x + pose.translation;
  const Vec3 c = cam.pose_global.apply(world);
  if (!(c.z() > kMinDepthMm)) throw Error(ErrorCode::NonPositiveDepth, "part behind camera");
  const Vec3 u = cam.calibration * c;
  if (jac) {
    const Eigen::Matrix<double, 2, 3> Jc = projection_jacobian(cam.calibration, c) * cam.pose_global.rotation;
    const auto dR = rodrigues_derivatives(pose.rodrigues);
    for (int i = 0; i < 3; ++i) jac->col(i) = Jc * (dR[static_cast<std::size_t>(i)] * x);
    jac->rightCols<3>() = Jc;
  }
  return u.head<2>() / u.z();
}

std::vector<PoseVector> canonical(std::vector<PoseVector> poses) {
  for (auto& p : poses) p.rodrigues = canonical_rodrigues(p.rodrigues);
  return poses;
}

PoseVector interpolate_pose(const PoseVector& a, const PoseVector& b, double s) {
  const Mat3 Ra = rodrigues_to_matrix(a.rodrigues);
  const Mat3 Rb = rodrigues_to_matrix(b.rodrigues);
  const Vec3 delta = matrix_to_rodrigues(Ra.transpose() * Rb);
  PoseVector p;
  p.rodrigues = matrix_to_rodrigues(Ra * rodrigues_to_matrix(s * delta));
  p.translation = (1.0 - s) * a.translation + s * b.translation;
  return p;
}

// Observations of one epoch visible in some camera: (camera, part, pixel).
struct LocalObs {
  int camera;
  int part;
  Vec2 pixel;
};

std::vector<LocalObs> epoch_observations(const SimulatedDataset& ds, int t) {
  std::vector<LocalObs> out;
  for (int k = 0; k < ds.n_cameras(); ++k) {
    for (int i = 0; i < ds.n_parts(); ++i) {
      const Observation& o = ds.observation(t, k, i);
      if (o.visible()) out.push_back({k, i, *o.pixel});
    }
  }
  return out;
}

PoseVector refine_epoch(const SimulatedDataset& ds, const RigidMouseModel& model, const std::vector<LocalObs>& obs,
                        const PoseVector& start) {
  auto fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    const PoseVector p = PoseVector::from_vector(x);
    r.resize(2 * static_cast<Eigen::Index>(obs.size()));
    if (J) J->resize(r.size(), 6);
    for (std::size_t n = 0; n < obs.size(); ++n) {
      const auto& o = obs[n];
      Eigen::Matrix<double, 2, 6> j;
      Vec2 px;
      try {
        px = project_model_point(ds.cameras[static_cast<std::size_t>(o.camera)], p,
                                 model.parts()[static_cast<std::size_t>(o.part)].position_mm, J ? &j : nullptr);
      } catch (const Error&) {
        r.setConstant(std::numeric_limits<double>::infinity());
        return;
      }
      r.segment<2>(2 * static_cast<Eigen::Index>(n)) = px - o.pixel;
      if (J) J->middleRows<2>(2 * static_cast<Eigen::Index>(n)) = j;
    }
  };
  detail::DenseLmOptions opts;
  opts.max_iterations = 50;
  const auto summary = detail::minimize_dense(fn, start.as_vector(), opts);
  PoseVector p = PoseVector::from_vector(summary.x);
  p.rodrigues = canonical_rodrigues(p.rodrigues);
  return p;
}

}  // namespace

json StochasticConfig::to_json() const {
  return {{"sigma_px_geometric", sigma_px_geometric},
          {"sigma_px_deformation", sigma_px_deformation},
          {"smoothness_weight", smoothness_weight},
          {"smoothness_weight_observed", smoothness_weight_observed},
          {"huber", huber}};
}

StochasticConfig StochasticConfig::from_json(const json& value, std::string_view context) {
  const std::string ctx(context);
  if (!value.is_object()) throw Error(ErrorCode::SchemaError, ctx + ": expected an object");
  StochasticConfig s;
  if (value.contains("sigma_px_geometric")) s.sigma_px_geometric = io::require_number(value, "sigma_px_geometric", ctx);
  if (value.contains("sigma_px_deformation")) s.sigma_px_deformation = io::require_number(value, "sigma_px_deformation", ctx);
  if (value.contains("smoothness_weight")) s.smoothness_weight = io::require_number(value, "smoothness_weight", ctx);
  if (value.contains("smoothness_weight_observed")) {
    s.smoothness_weight_observed = io::require_number(value, "smoothness_weight_observed", ctx);
  }
  if (value.contains("huber")) s.huber = io::require_bool(value, "huber", ctx);
  if (!(s.sigma_px_geometric > 0) || !(s.sigma_px_deformation > 0) || !(s.smoothness_weight >= 0) ||
      !(s.smoothness_weight_observed >= 0)) {
    throw Error(ErrorCode::InvalidArgument, ctx + ": sigmas must be positive and the smoothness weight non-negative");
  }
  return s;
}

std::string_view to_string(SolveMode mode) { return mode == SolveMode::Rigid ? "rigid" : "deformed"; }

SolveMode solve_mode_from_string(std::string_view s) {
  if (s == "rigid") return SolveMode::Rigid;
  if (s == "deformed") return SolveMode::Deformed;
  throw Error(ErrorCode::InvalidArgument, "mode must be 'rigid' or 'deformed', got '" + std::string(s) + "'");
}

std::string_view to_string(SolvedFrom s) {
  switch (s) {
    case SolvedFrom::Local: return "local";
    case SolvedFrom::Interpolated: return "interpolated";
    case SolvedFrom::Adjusted: return "adjusted";
  }
  return "local";
}

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::RigidReprojection: return "rigid_reprojection";
    case BlockKind::DeformedReprojection: return "deformed_reprojection";
    case BlockKind::TrackSmoothness: return "track_smoothness";
  }
  return "rigid_reprojection";
}

std::vector<PoseVector> MouseStateTrack::poses() const {
  std::vector<PoseVector> out;
  out.reserve(epochs.size());
  for (const auto& e : epochs) out.push_back(e.pose);
  return out;
}

void MouseStateTrack::set_poses(const std::vector<PoseVector>& poses) {
  if (poses.size() != epochs.size()) throw Error(ErrorCode::EpochMismatch, "pose count does not match track");
  for (std::size_t t = 0; t < poses.size(); ++t) epochs[t].pose = poses[t];
}

double MouseStateTrack::completeness() const {
  if (epochs.empty()) return 0.0;
  const auto n = std::count_if(epochs.begin(), epochs.end(), [](const EpochState& e) { return e.solved; });
  return static_cast<double>(n) / static_cast<double>(epochs.size());
}

json MouseStateTrack::to_json() const {
  json arr = json::array();
  for (std::size_t t = 0; t < epochs.size(); ++t) {
    const EpochState& e = epochs[t];
    json j = {{"t", t},
              {"rodrigues", io::from_vec(e.pose.rodrigues)},
              {"translation_mm", io::from_vec(e.pose.translation)},
              {"solved_from", std::string(to_string(e.solved_from))},
              {"solved", e.solved},
              {"residual_rms", e.residual_rms_px ? json(*e.residual_rms_px) : json(nullptr)}};
    if (!e.offsets.empty()) {
      json off = json::array();
      for (const auto& o : e.offsets) off.push_back(io::from_vec(o));
      j["offsets_mm"] = std::move(off);
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

MouseStateTrack MouseStateTrack::from_json(const json& value, std::string_view context) {
  const std::string ctx(context);
  const json& arr = value.is_object() ? io::require(value, "epochs", ctx) : value;
  if (!arr.is_array()) throw Error(ErrorCode::SchemaError, ctx + ": expected an array of epochs");
  MouseStateTrack track;
  for (std::size_t t = 0; t < arr.size(); ++t) {
    const std::string ectx = ctx + ".epochs[" + std::to_string(t) + "]";
    const json& j = arr[t];
    if (io::require_int(j, "t", ectx) != static_cast<int>(t)) throw Error(ErrorCode::SchemaError, ectx + ".t: epochs must be consecutive from 0");
    EpochState e;
    e.pose.rodrigues = io::to_vec3(io::require(j, "rodrigues", ectx), ectx + ".rodrigues");
    e.pose.translation = io::to_vec3(io::require(j, "translation_mm", ectx), ectx + ".translation_mm");
    const std::string from = io::require(j, "solved_from", ectx).get<std::string>();
    if (from == "local") e.solved_from = SolvedFrom::Local;
    else if (from == "interpolated") e.solved_from = SolvedFrom::Interpolated;
    else if (from == "adjusted") e.solved_from = SolvedFrom::Adjusted;
    else throw Error(ErrorCode::SchemaError, ectx + ".solved_from: unknown value '" + from + "'");
    e.solved = j.contains("solved") ? io::require_bool(j, "solved", ectx) : true;
    if (j.contains("residual_rms") && !j["residual_rms"].is_null()) e.residual_rms_px = io::require_number(j, "residual_rms", ectx);
    if (j.contains("offsets_mm")) {
      for (std::size_t i = 0; i < j["offsets_mm"].size(); ++i) {
        e.offsets.push_back(io::to_vec3(j["offsets_mm"][i], ectx + ".offsets_mm[" + std::to_string(i) + "]"));
      }
    }
    track.epochs.push_back(std::move(e));
  }
  return track;
}

bool locally_solvable(const SimulatedDataset& ds, int t) {
  int observed = 0, multi = 0, best_camera = 0;
  for (int i = 0; i < ds.n_parts(); ++i) {
    const int v = ds.view_count(t, i);
    observed += v > 0;
    multi += v >= 2;
  }
  for (int k = 0; k < ds.n_cameras(); ++k) best_camera = std::max(best_camera, ds.visible_count(t, k));
  return observed >= 4 && (multi >= 3 || best_camera >= 4);
}

std::optional<PoseVector> solve_epoch_locally(const SimulatedDataset& ds, const RigidMouseModel& model, int t) {
  if (!locally_solvable(ds, t)) return std::nullopt;
  const auto obs = epoch_observations(ds, t);
  std::optional<PoseVector> start;

  std::vector<Vec3> src, dst;
  for (int i = 0; i < ds.n_parts(); ++i) {
    std::vector<ViewObservation> views;
    for (int k = 0; k < ds.n_cameras(); ++k) {
      const Observation& o = ds.observation(t, k, i);
      if (o.visible()) views.push_back({ds.cameras[static_cast<std::size_t>(k)], *o.pixel});
    }
    if (views.size() < 2) continue;
    try {
      dst.push_back(triangulate(views).point);
      src.push_back(model.parts()[static_cast<std::size_t>(i)].position_mm);
    } catch (const Error&) {
    }
  }
  if (src.size() >= 3) {
    try {
      start = transform_to_pose(fit_rigid_transform(src, dst));
    } catch (const Error&) {
    }
  }
  if (!start) {
    int best = -1, best_count = 0;
    for (int k = 0; k < ds.n_cameras(); ++k) {
      const int c = ds.visible_count(t, k);
      if (c > best_count) {
        best = k;
        best_count = c;
      }
    }
    if (best < 0 || best_count < 4) return std::nullopt;
    const CameraModel& cam = ds.cameras[static_cast<std::size_t>(best)];
    std::vector<Correspondence> corr;
    for (int i = 0; i < ds.n_parts(); ++i) {
      const Observation& o = ds.observation(t, best, i);
      if (o.visible()) corr.push_back({model.parts()[static_cast<std::size_t>(i)].position_mm, *o.pixel});
    }
    try {
      const ResectionResult res = resect(corr, cam.calibration);
      // model -> camera, then camera -> global.
      start = transform_to_pose(compose(invert(cam.pose_global), res.camera.pose_global));
    } catch (const Error&) {
      return std::nullopt;
    }
  }
  const PoseVector refined = refine_epoch(ds, model, obs, *start);
  if (!refined.as_vector().allFinite()) return std::nullopt;
  return refined;
}

MouseStateTrack initialize(const SimulatedDataset& ds, const RigidMouseModel& model) {
  const int N = ds.n_epochs();
  MouseStateTrack track;
  track.epochs.resize(static_cast<std::size_t>(N));
  std::vector<int> solved;
  for (int t = 0; t < N; ++t) {
    if (auto p = solve_epoch_locally(ds, model, t)) {
      track.epochs[static_cast<std::size_t>(t)].pose = *p;
      track.epochs[static_cast<std::size_t>(t)].solved_from = SolvedFrom::Local;
      track.epochs[static_cast<std::size_t>(t)].solved = true;
      solved.push_back(t);
    }
  }
  if (solved.empty()) throw Error(ErrorCode::NoSolvableEpoch, "no epoch has enough observations for a local solution");

  std::size_t next = 0;
  for (int t = 0; t < N; ++t) {
    while (next < solved.size() && solved[next] < t) ++next;
    if (next < solved.size() && solved[next] == t) continue;
    EpochState& e = track.epochs[static_cast<std::size_t>(t)];
    e.solved_from = SolvedFrom::Interpolated;
    e.solved = false;
    if (next == 0) {
      e.pose = track.epochs[static_cast<std::size_t>(solved.front())].pose;
    } else if (next == solved.size()) {
      e.pose = track.epochs[static_cast<std::size_t>(solved.back())].pose;
    } else {
      const int a = solved[next - 1], b = solved[next];
      e.pose = interpolate_pose(track.epochs[static_cast<std::size_t>(a)].pose,
                                track.epochs[static_cast<std::size_t>(b)].pose,
                                static_cast<double>(t - a) / static_cast<double>(b - a));
    }
  }
  return track;
}

int Problem::count(BlockKind kind) const {
  return static_cast<int>(std::count_if(blocks.begin(), blocks.end(), [&](const ResidualBlock& b) { return b.kind == kind; }));
}

Eigen::Index Problem::bandwidth() const {
  return count(BlockKind::TrackSmoothness) > 0 ? 29 : 5;
}

Problem build_problem(const SimulatedDataset& ds, const std::vector<CameraModel>& cameras, const MouseStateTrack& track,
                      const RigidMouseModel& model, const DeformationPredictor* deform_model,
                      const StochasticConfig& stochastic, const ComparisonGrid& grid) {
  if (track.size() != ds.n_epochs()) {
    throw Error(ErrorCode::EpochMismatch, "track has " + std::to_string(track.size()) + " epochs, dataset " +
                                              std::to_string(ds.n_epochs()));
  }
  if (cameras.size() != ds.cameras.size()) {
    throw Error(ErrorCode::InconsistentCameraIds, "camera list size differs from the dataset's");
  }
  std::vector<int> map;
  for (const auto& dc : ds.cameras) {
    const auto it = std::find_if(cameras.begin(), cameras.end(), [&](const CameraModel& c) { return c.id == dc.id; });
    if (it == cameras.end()) {
      throw Error(ErrorCode::InconsistentCameraIds, "dataset camera id " + std::to_string(dc.id) + " not in camera list");
    }
    map.push_back(static_cast<int>(it - cameras.begin()));
  }

  Problem p;
  p.cameras = cameras;
  p.model = model;
  p.grid = grid;
  p.stochastic = stochastic;
  p.mode = deform_model ? SolveMode::Deformed : SolveMode::Rigid;
  p.n_epochs = ds.n_epochs();
  p.offsets.assign(static_cast<std::size_t>(p.n_epochs), std::vector<Vec3>(kNumParts, Vec3::Zero()));
  const BlockKind kind = deform_model ? BlockKind::DeformedReprojection : BlockKind::RigidReprojection;
  const double w = 1.0 / (deform_model ? stochastic.sigma_px_geometric : stochastic.sigma_px_deformation);
  for (int t = 0; t < p.n_epochs; ++t) {
    for (int k = 0; k < ds.n_cameras(); ++k) {
      for (int i = 0; i < ds.n_parts(); ++i) {
        const Observation& o = ds.observation(t, k, i);
        if (!o.visible()) continue;
        ResidualBlock b;
        b.kind = kind;
        b.epoch = t;
        b.camera = map[static_cast<std::size_t>(k)];
        b.part = i;
        b.weight = w;
        b.observed = *o.pixel;
        p.blocks.push_back(b);
      }
    }
  }
  if (p.n_epochs >= 5) {
    for (int t = 0; t < p.n_epochs; ++t) {
      ResidualBlock b;
      b.kind = BlockKind::TrackSmoothness;
      b.epoch = t;
      b.weight = locally_solvable(ds, t) ? stochastic.smoothness_weight_observed : stochastic.smoothness_weight;
      p.blocks.push_back(b);
    }
  }
  return p;
}

BlockEvaluation evaluate_block(const Problem& p, const std::vector<PoseVector>& poses, std::size_t index,
                               bool with_jacobian) {
  const ResidualBlock& b = p.blocks[index];
  BlockEvaluation out;
  if (b.kind == BlockKind::TrackSmoothness) {
    auto ev = track_residual_with_jacobian(poses, b.epoch, p.grid, with_jacobian, false);
    out.first_epoch = ev.window.start;
    out.residual = b.weight * ev.residual;
    if (with_jacobian) out.jacobian = b.weight * ev.jacobian;
    return out;
  }
  out.first_epoch = b.epoch;
  Eigen::Matrix<double, 2, 6> J;
  const Vec2 px = project_model_point(p.cameras[static_cast<std::size_t>(b.camera)],
                                      poses[static_cast<std::size_t>(b.epoch)], model_point(p, b.epoch, b.part),
                                      with_jacobian ? &J : nullptr);
  out.residual = b.weight * (b.observed - px);
  if (with_jacobian) out.jacobian = -b.weight * J;
  return out;
}

namespace {

// Huber reweighting of a reprojection block: returns the cost contribution
// and scales residual/Jacobian for the Gauss-Newton model.
double robustify(const Problem& p, const ResidualBlock& b, BlockEvaluation& ev) {
  const double s2 = ev.residual.squaredNorm();
  if (!p.stochastic.huber || b.kind == BlockKind::TrackSmoothness) return 0.5 * s2;
  const double s = std::sqrt(s2);
  if (s <= kHuberScale) return 0.5 * s2;
  const double scale = std::sqrt(kHuberScale / s);
  ev.residual *= scale;
  if (ev.jacobian.size()) ev.jacobian *= scale;
  return kHuberScale * s - 0.5 * kHuberScale * kHuberScale;
}

}  // namespace

double total_cost(const Problem& p, const std::vector<PoseVector>& poses) {
  double cost = 0.0;
  try {
    for (std::size_t n = 0; n < p.blocks.size(); ++n) {
      if (p.blocks[n].weight == 0.0) continue;
      BlockEvaluation ev = evaluate_block(p, poses, n, false);
      cost += robustify(p, p.blocks[n], ev);
    }
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
  return std::isfinite(cost) ? cost : std::numeric_limits<double>::infinity();
}

NormalEquations linearize(const Problem& p, const std::vector<PoseVector>& poses) {
  NormalEquations ne;
  ne.JtJ = BandedSymmetricMatrix(p.unknowns(), p.bandwidth());
  ne.gradient = Eigen::VectorXd::Zero(p.unknowns());
  for (std::size_t n = 0; n < p.blocks.size(); ++n) {
    if (p.blocks[n].weight == 0.0) continue;
    BlockEvaluation ev = evaluate_block(p, poses, n, true);
    ne.cost += robustify(p, p.blocks[n], ev);
    const Eigen::Index off = 6 * static_cast<Eigen::Index>(ev.first_epoch);
    ne.JtJ.add_block(off, ev.jacobian.transpose() * ev.jacobian);
    ne.gradient.segment(off, ev.jacobian.cols()) += ev.jacobian.transpose() * ev.residual;
  }
  return ne;
}

double check_jacobian(const Problem& p, const std::vector<PoseVector>& poses, std::optional<std::size_t> only_block) {
  double worst = 0.0;
  const std::size_t lo = only_block ? *only_block : 0;
  const std::size_t hi = only_block ? *only_block + 1 : p.blocks.size();
  for (std::size_t n = lo; n < hi; ++n) {
    const BlockEvaluation ev = evaluate_block(p, poses, n, true);
    const Eigen::Index cols = ev.jacobian.cols();
    Eigen::MatrixXd fd(ev.residual.size(), cols);
    std::vector<PoseVector> work = poses;
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto e = static_cast<std::size_t>(ev.first_epoch + c / 6);
      const Vec6 x0 = poses[e].as_vector();
      const double h = 1e-6;
      Vec6 xp = x0, xm = x0;
      xp[c % 6] += h;
      xm[c % 6] -= h;
      work[e] = PoseVector::from_vector(xp);
      const Eigen::VectorXd rp = evaluate_block(p, work, n, false).residual;
      work[e] = PoseVector::from_vector(xm);
      const Eigen::VectorXd rm = evaluate_block(p, work, n, false).residual;
      work[e] = poses[e];
      fd.col(c) = (rp - rm) / (2.0 * h);
    }
    const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-12);
    const double dev = (ev.jacobian - fd).cwiseAbs().maxCoeff() / scale;
    worst = std::max(worst, std::isfinite(dev) ? dev : std::numeric_limits<double>::max());
  }
  return worst;
}

json SolveReport::to_json() const {
  return {{"initial_cost", initial_cost},
          {"final_cost", final_cost},
          {"iterations", iterations},
          {"status", status},
          {"rms_reprojection_px", rms_reprojection_px},
          {"rms_smoothness_mm", rms_smoothness_mm},
          {"reprojection_blocks", reprojection_blocks},
          {"smoothness_blocks", smoothness_blocks}};
}

SolveResult solve(const Problem& p, const MouseStateTrack& init, const SolveOptions& options) {
  if (init.size() != p.n_epochs) throw Error(ErrorCode::EpochMismatch, "initial track does not match the problem");
  std::vector<PoseVector> x = canonical(init.poses());
  SolveReport report;
  report.reprojection_blocks = p.count(BlockKind::RigidReprojection) + p.count(BlockKind::DeformedReprojection);
  report.smoothness_blocks = p.count(BlockKind::TrackSmoothness);

  NormalEquations ne = linearize(p, x);
  double cost = ne.cost;
  if (!std::isfinite(cost)) throw Error(ErrorCode::NonFiniteCost, "cost is not finite at the initial track");
  report.initial_cost = cost;
  report.cost_history.push_back(cost);
  report.status = "max_iterations";
  double lambda = options.initial_lambda;

  for (int it = 0; it < options.max_iterations; ++it) {
    if (ne.gradient.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      report.status = "converged";
      break;
    }
    const Eigen::VectorXd diag = ne.JtJ.diagonal();
    const double floor = 1e-12 * std::max(1.0, diag.maxCoeff());
    bool accepted = false, stalled = false;
    while (!accepted) {
      if (lambda > 1e16) {
        stalled = true;
        break;
      }
      BandedSymmetricMatrix A = ne.JtJ;
      A.add_to_diagonal(lambda * diag.cwiseMax(floor));
      if (!A.factorize()) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd step = A.solve(-ne.gradient);
      std::vector<PoseVector> trial = x;
      for (int t = 0; t < p.n_epochs; ++t) {
        trial[static_cast<std::size_t>(t)] =
            PoseVector::from_vector(x[static_cast<std::size_t>(t)].as_vector() + step.segment<6>(6 * t));
      }
      trial = canonical(std::move(trial));
      const double new_cost = total_cost(p, trial);
      if (std::isfinite(new_cost) && new_cost <= cost) {
        const double decrease = (cost - new_cost) / std::max(cost, 1e-300);
        x = std::move(trial);
        ne = linearize(p, x);
        cost = ne.cost;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        report.iterations = it + 1;
        report.cost_history.push_back(cost);
        if (decrease < options.function_tolerance) stalled = true;
      } else {
        lambda *= 4.0;
      }
    }
    if (stalled) {
      report.status = "converged";
      break;
    }
  }
  if (!std::isfinite(cost)) throw Error(ErrorCode::NonFiniteCost, "cost became non-finite");
  report.final_cost = cost;

  SolveResult result;
  result.track = init;
  result.track.set_poses(x);

  // Per-epoch rank of the diagonal normal block decides the solved flag.
  for (int t = 0; t < p.n_epochs; ++t) {
    Eigen::Matrix<double, 6, 6> B;
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 6; ++c) B(r, c) = ne.JtJ(6 * t + r, 6 * t + c);
    }
    bool full_rank = (B.diagonal().array() > 0).all();
    if (full_rank) {
      const Vec6 d = B.diagonal().cwiseSqrt().cwiseInverse();
      const Eigen::Matrix<double, 6, 6> S = d.asDiagonal() * B * d.asDiagonal();
      const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> es(S, Eigen::EigenvaluesOnly);
      full_rank = es.eigenvalues().minCoeff() > kRankTolerance;
    }
    EpochState& e = result.track.epochs[static_cast<std::size_t>(t)];
    e.solved = full_rank;
    if (full_rank) e.solved_from = SolvedFrom::Adjusted;
    e.residual_rms_px.reset();
    e.offsets.clear();
    if (p.mode == SolveMode::Deformed) e.offsets = p.offsets[static_cast<std::size_t>(t)];
  }

  std::vector<double> sq(static_cast<std::size_t>(p.n_epochs), 0.0);
  std::vector<int> cnt(static_cast<std::size_t>(p.n_epochs), 0);
  double reproj_sum = 0.0, smooth_sum = 0.0;
  int smooth_n = 0;
  for (std::size_t n = 0; n < p.blocks.size(); ++n) {
    const ResidualBlock& b = p.blocks[n];
    if (b.kind == BlockKind::TrackSmoothness) {
      const Eigen::VectorXd e = track_residual_with_jacobian(x, b.epoch, p.grid, false, false).residual;
      smooth_sum += e.squaredNorm() / static_cast<double>(p.grid.size());
      ++smooth_n;
      continue;
    }
    const Vec2 px = project_model_point(p.cameras[static_cast<std::size_t>(b.camera)],
                                        x[static_cast<std::size_t>(b.epoch)], model_point(p, b.epoch, b.part), nullptr);
    const double d2 = (b.observed - px).squaredNorm();
    sq[static_cast<std::size_t>(b.epoch)] += d2;
    cnt[static_cast<std::size_t>(b.epoch)] += 1;
    reproj_sum += d2;
  }
  for (int t = 0; t < p.n_epochs; ++t) {
    if (cnt[static_cast<std::size_t>(t)] > 0) {
      result.track.epochs[static_cast<std::size_t>(t)].residual_rms_px =
          std::sqrt(sq[static_cast<std::size_t>(t)] / cnt[static_cast<std::size_t>(t)]);
    }
  }
  if (report.reprojection_blocks > 0) report.rms_reprojection_px = std::sqrt(reproj_sum / report.reprojection_blocks);
  if (smooth_n > 0) report.rms_smoothness_mm = std::sqrt(smooth_sum / smooth_n);
  result.report = std::move(report);
  return result;
}

std::vector<PartPoints> triangulate_parts(const SimulatedDataset& ds) {
  std::vector<PartPoints> out(static_cast<std::size_t>(ds.n_epochs()));
  for (int t = 0; t < ds.n_epochs(); ++t) {
    for (int i = 0; i < ds.n_parts(); ++i) {
      std::vector<ViewObservation> views;
      for (int k = 0; k < ds.n_cameras(); ++k) {
        const Observation& o = ds.observation(t, k, i);
        if (o.visible()) views.push_back({ds.cameras[static_cast<std::size_t>(k)], *o.pixel});
      }
      if (views.size() < 2) continue;
      try {
        out[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] = triangulate(views).point;
      } catch (const Error&) {
      }
    }
  }
  return out;
}

std::vector<std::vector<Vec3>> predict_offsets(const DeformationPredictor& predictor, const RigidMouseModel& model,
                                               const std::vector<PoseVector>& poses,
                                               const std::vector<PartPoints>& triangulated) {
  const int N = static_cast<int>(poses.size());
  const int n = predictor.half_window();
  std::vector<std::vector<Vec3>> out(static_cast<std::size_t>(N), std::vector<Vec3>(kNumParts, Vec3::Zero()));
  const auto X = model.rigid_part_positions();
  for (int t = n; t + n < N; ++t) {
    const auto pred = predictor.predict(build_tokens(model, poses, triangulated, t, n));
    for (int i = 0; i < kNumParts; ++i) {
      out[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] = pred[static_cast<std::size_t>(i)] - X[static_cast<std::size_t>(i)];
    }
  }
  return out;
}

SolveResult estimate_track(const SimulatedDataset& ds, const RigidMouseModel& model,
                           const DeformationPredictor* deform_model, const StochasticConfig& stochastic,
                           const SolveOptions& options, const ComparisonGrid& grid) {
  const MouseStateTrack init = initialize(ds, model);
  Problem problem = build_problem(ds, ds.cameras, init, model, deform_model, stochastic, grid);
  if (!deform_model) return solve(problem, init, options);

  const auto triangulated = triangulate_parts(ds);
  SolveResult result;
  result.track = init;
  int iterations = 0;
  double initial_cost = 0.0;
  for (int round = 0; round < std::max(1, options.outer_iterations); ++round) {
    problem.offsets = predict_offsets(*deform_model, model, result.track.poses(), triangulated);
    result = solve(problem, result.track, options);
    if (round == 0) initial_cost = result.report.initial_cost;
    iterations += result.report.iterations;
  }
  result.report.initial_cost = initial_cost;
  result.report.iterations = iterations;
  return result;
}

}  // namespace mtrack
