#pragma once

// Accuracy and completeness metrics against simulator ground truth, and
// SVG/CSV plot output.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtrack/adjustment.hpp"
#include "mtrack/simulator.hpp"

namespace mtrack {

struct SummaryStats {
  double mean = 0.0;
  double rmse = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
  double max = 0.0;
};

/// Linear-interpolated percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);
SummaryStats summarize(const std::vector<double>& values);

struct EvaluationReport {
  std::vector<double> position_error_mm;
  std::vector<double> rotation_error_deg;
  std::vector<bool> locally_observed;  // epoch not flagged unsolvable from its own frame
  std::vector<bool> solved;
  double completeness_input = 0.0;
  double completeness_output = 0.0;
  std::array<double, kNumParts> part_rmse_mm{};
  double part_rmse_all_mm = 0.0;
  SummaryStats position;
  SummaryStats rotation;

  /// RMSE of position error over epochs where mask is true (NaN if none).
  double position_rmse(const std::vector<bool>& mask) const;
  nlohmann::json to_json() const;
};

/// Throws EpochMismatch when the track and dataset lengths differ and
/// InvalidArgument when the dataset has no ground truth.
EvaluationReport evaluate(const MouseStateTrack& track, const SimulatedDataset& dataset);

/// World position of every part implied by the track (offsets included).
std::vector<Vec3> track_part_positions(const MouseStateTrack& track, const RigidMouseModel& model, int epoch);

/// Top-down SVG: one path per track (estimate, and ground truth if present).
std::string track_svg(const MouseStateTrack& track, const SimulatedDataset* dataset, double plane_half_extent_mm);
std::string parameters_csv(const MouseStateTrack& track);
/// Observed vs reprojected pixels for one camera.
std::string overlay_csv(const MouseStateTrack& track, const SimulatedDataset& dataset, int camera);

/// Writes track.svg, parameters.csv and overlay_cam<id>.csv into out_dir.
std::vector<std::filesystem::path> plot(const MouseStateTrack& track, const SimulatedDataset& dataset,
                                        const std::filesystem::path& out_dir);

}  // namespace mtrack
