#pragma once

// End-to-end run: simulate → train-deform → solve → evaluate → plot, driven
// by one JSON config and seed. Also the track / report file formats shared
// with the CLI.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtrack/adjustment.hpp"
#include "mtrack/deform_predictor.hpp"
#include "mtrack/evaluation.hpp"
#include "mtrack/simulator.hpp"
#include "mtrack/track_constraint.hpp"

namespace mtrack {

struct CheckThresholds {
  double min_completeness = 1.0;
  double max_position_rmse_mm = 2.0;
  double max_rotation_rmse_deg = 10.0;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  SceneConfig scene = SceneConfig::default_scene();
  int training_datasets = 50;
  int training_epochs_per_dataset = 500;
  TrainingOptions training = default_training();
  StochasticConfig stochastic;
  SolveOptions solve;
  SolveMode mode = SolveMode::Deformed;
  ComparisonGrid grid = ComparisonGrid::standard();
  CheckThresholds check;

  PipelineConfig();
  static TrainingOptions default_training();
  /// The training scenes for this config's seed.
  std::vector<SimulatedDataset> training_scenes() const;
  /// Missing keys keep defaults; the seed is propagated to scene and training.
  static PipelineConfig from_json(const nlohmann::json& value, std::string_view context = "config");
  nlohmann::json to_json() const;
  void set_seed(std::uint64_t seed);
};

/// Seeds of the training scenes, distinct from the evaluation scene seed.
std::uint64_t training_scene_seed(std::uint64_t seed, int index);

nlohmann::json track_file_json(const MouseStateTrack& track, const SolveReport& report, SolveMode mode,
                               const nlohmann::json& meta);
MouseStateTrack read_track_file(const std::filesystem::path& path);

nlohmann::json report_file_json(const EvaluationReport& report, const nlohmann::json& meta);

/// Names of violated thresholds (empty when all pass).
std::vector<std::string> check_report(const EvaluationReport& report, const CheckThresholds& thresholds);

struct PipelineResult {
  EvaluationReport report;
  SolveReport solve;
  std::vector<std::string> check_failures;
  std::vector<std::filesystem::path> artifacts;
};

/// Errors are re-thrown with the failing stage named in the message.
PipelineResult run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir, std::ostream* log);

}  // namespace mtrack
