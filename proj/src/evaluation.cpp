#include "mtrack/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

#include "mtrack/errors.hpp"
#include "mtrack/json_io.hpp"

namespace mtrack {

using nlohmann::json;

namespace {

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

json stats_json(const SummaryStats& s) {
  return {{"mean", s.mean}, {"rmse", s.rmse}, {"p50", s.p50}, {"p95", s.p95}, {"max", s.max}};
}

}  // namespace

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(values.size() - 1, lo + 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SummaryStats summarize(const std::vector<double>& values) {
  SummaryStats s;
  if (values.empty()) return s;
  double sum = 0.0, sq = 0.0;
  for (double v : values) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(values.size());
  s.mean = sum / n;
  s.rmse = std::sqrt(sq / n);
  s.p50 = percentile(values, 50);
  s.p95 = percentile(values, 95);
  s.max = *std::max_element(values.begin(), values.end());
  return s;
}

double EvaluationReport::position_rmse(const std::vector<bool>& mask) const {
  double sq = 0.0;
  int n = 0;
  for (std::size_t t = 0; t < position_error_mm.size() && t < mask.size(); ++t) {
    if (!mask[t]) continue;
    sq += position_error_mm[t] * position_error_mm[t];
    ++n;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : std::sqrt(sq / n);
}

json EvaluationReport::to_json() const {
  std::vector<int> observed(locally_observed.begin(), locally_observed.end());
  std::vector<int> solved_flags(solved.begin(), solved.end());
  return {{"n_epochs", position_error_mm.size()},
          {"completeness_input", completeness_input},
          {"completeness_output", completeness_output},
          {"position_error_mm", stats_json(position)},
          {"rotation_error_deg", stats_json(rotation)},
          {"part_rmse_mm", std::vector<double>(part_rmse_mm.begin(), part_rmse_mm.end())},
          {"part_rmse_all_mm", part_rmse_all_mm},
          {"per_epoch",
           {{"position_error_mm", position_error_mm},
            {"rotation_error_deg", rotation_error_deg},
            {"locally_observed", observed},
            {"solved", solved_flags}}}};
}

std::vector<Vec3> track_part_positions(const MouseStateTrack& track, const RigidMouseModel& model, int epoch) {
  const EpochState& e = track.epochs[static_cast<std::size_t>(epoch)];
  const RigidTransform H = pose_to_transform(e.pose);
  std::vector<Vec3> out;
  for (int i = 0; i < kNumParts; ++i) {
    Vec3 x = model.parts()[static_cast<std::size_t>(i)].position_mm;
    if (e.offsets.size() == kNumParts) x += e.offsets[static_cast<std::size_t>(i)];
    out.push_back(H.apply(x));
  }
  return out;
}

EvaluationReport evaluate(const MouseStateTrack& track, const SimulatedDataset& ds) {
  if (!ds.has_ground_truth()) throw Error(ErrorCode::InvalidArgument, "evaluation needs a dataset with ground truth");
  if (track.size() != ds.n_epochs()) {
    throw Error(ErrorCode::EpochMismatch, "track has " + std::to_string(track.size()) + " epochs, dataset " +
                                              std::to_string(ds.n_epochs()));
  }
  EvaluationReport r;
  std::array<double, kNumParts> part_sq{};
  int observed = 0, solved = 0;
  for (int t = 0; t < ds.n_epochs(); ++t) {
    const EpochTruth& g = ds.ground_truth[static_cast<std::size_t>(t)];
    const EpochState& e = track.epochs[static_cast<std::size_t>(t)];
    r.position_error_mm.push_back((e.pose.translation - g.pose.translation).norm());
    r.rotation_error_deg.push_back(rotation_angle_between(rodrigues_to_matrix(e.pose.rodrigues),
                                                          rodrigues_to_matrix(g.pose.rodrigues)) *
                                   180.0 / std::numbers::pi);
    const bool obs = !ds.locally_unsolvable(t);
    r.locally_observed.push_back(obs);
    r.solved.push_back(e.solved);
    observed += obs;
    solved += e.solved;
    const auto parts = track_part_positions(track, ds.model, t);
    for (int i = 0; i < kNumParts; ++i) {
      part_sq[static_cast<std::size_t>(i)] +=
          (parts[static_cast<std::size_t>(i)] - g.deformable_world[static_cast<std::size_t>(i)]).squaredNorm();
    }
  }
  const double n = std::max(1, ds.n_epochs());
  r.completeness_input = observed / n;
  r.completeness_output = solved / n;
  double all = 0.0;
  for (int i = 0; i < kNumParts; ++i) {
    r.part_rmse_mm[static_cast<std::size_t>(i)] = std::sqrt(part_sq[static_cast<std::size_t>(i)] / n);
    all += part_sq[static_cast<std::size_t>(i)];
  }
  r.part_rmse_all_mm = std::sqrt(all / (n * kNumParts));
  r.position = summarize(r.position_error_mm);
  r.rotation = summarize(r.rotation_error_deg);
  return r;
}

std::string track_svg(const MouseStateTrack& track, const SimulatedDataset* ds, double e) {
  const double size = 600.0;
  const double scale = size / (2.0 * e);
  auto X = [&](double x) { return fmt((x + e) * scale); };
  auto Y = [&](double y) { return fmt((e - y) * scale); };
  auto path = [&](const std::vector<Vec3>& pts, const std::string& id, const std::string& color) {
    std::ostringstream d;
    for (std::size_t j = 0; j < pts.size(); ++j) d << (j == 0 ? "M" : " L") << X(pts[j].x()) << ' ' << Y(pts[j].y());
    return "  <path id=\"" + id + "\" d=\"" + d.str() + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"1.5\" stroke-linejoin=\"round\" stroke-linecap=\"round\"/>\n";
  };
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << ' ' << size << "\">\n"
      << "  <title>mouse track, top view</title>\n"
      << "  <rect x=\"0\" y=\"0\" width=\"" << size << "\" height=\"" << size << "\" fill=\"#303030\"/>\n";
  if (ds && ds->has_ground_truth()) {
    std::vector<Vec3> gt;
    for (const auto& g : ds->ground_truth) gt.push_back(g.pose.translation);
    out << path(gt, "ground_truth", "#e08030");
  }
  std::vector<Vec3> est;
  for (const auto& s : track.epochs) est.push_back(s.pose.translation);
  out << path(est, "estimate", "#ffffff");
  out << "</svg>\n";
  return out.str();
}

std::string parameters_csv(const MouseStateTrack& track) {
  std::ostringstream out;
  out << "t,r1,r2,r3,tx_mm,ty_mm,tz_mm,solved_from,solved\n";
  for (std::size_t t = 0; t < track.epochs.size(); ++t) {
    const auto& e = track.epochs[t];
    out << t;
    for (int j = 0; j < 3; ++j) out << ',' << fmt(e.pose.rodrigues[j], 12);
    for (int j = 0; j < 3; ++j) out << ',' << fmt(e.pose.translation[j], 12);
    out << ',' << to_string(e.solved_from) << ',' << (e.solved ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string overlay_csv(const MouseStateTrack& track, const SimulatedDataset& ds, int camera) {
  const CameraModel& cam = ds.cameras[static_cast<std::size_t>(camera)];
  std::ostringstream out;
  out << "t,part,visible,u_obs,v_obs,u_pred,v_pred\n";
  for (int t = 0; t < ds.n_epochs(); ++t) {
    const auto parts = track_part_positions(track, ds.model, t);
    for (int i = 0; i < ds.n_parts(); ++i) {
      const Observation& o = ds.observation(t, camera, i);
      out << t << ',' << i << ',' << (o.visible() ? 1 : 0) << ',';
      if (o.visible()) out << fmt(o.pixel->x(), 10) << ',' << fmt(o.pixel->y(), 10);
      else out << ',';
      out << ',';
      if (cam.pose_global.apply(parts[static_cast<std::size_t>(i)]).z() > kMinDepthMm) {
        const Vec2 p = project(cam, parts[static_cast<std::size_t>(i)]);
        out << fmt(p.x(), 10) << ',' << fmt(p.y(), 10);
      } else {
        out << ',';
      }
      out << '\n';
    }
  }
  return out.str();
}

std::vector<std::filesystem::path> plot(const MouseStateTrack& track, const SimulatedDataset& ds,
                                        const std::filesystem::path& out_dir) {
  if (track.size() != ds.n_epochs()) throw Error(ErrorCode::EpochMismatch, "track and dataset lengths differ");
  double extent = 150.0;
  if (ds.meta.contains("config") && ds.meta["config"].contains("plane_half_extent_mm")) {
    extent = ds.meta["config"]["plane_half_extent_mm"].get<double>();
  }
  for (const auto& s : track.epochs) extent = std::max(extent, s.pose.translation.head<2>().cwiseAbs().maxCoeff());
  std::vector<std::filesystem::path> written;
  const auto svg = out_dir / "track.svg";
  io::write_text_file(svg, track_svg(track, &ds, extent));
  written.push_back(svg);
  const auto csv = out_dir / "parameters.csv";
  io::write_text_file(csv, parameters_csv(track));
  written.push_back(csv);
  for (int k = 0; k < ds.n_cameras(); ++k) {
    const auto p = out_dir / ("overlay_cam" + std::to_string(ds.cameras[static_cast<std::size_t>(k)].id) + ".csv");
    io::write_text_file(p, overlay_csv(track, ds, k));
    written.push_back(p);
  }
  return written;
}

}  // namespace mtrack
