#pragma once

// Global least-squares estimation of the per-epoch mouse pose (model ->
// global) from all cameras and epochs: reprojection residuals plus the
// grid-based motion-track smoothness residuals, solved by Levenberg-Marquardt
// on the banded normal equations.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mtrack/banded_cholesky.hpp"
#include "mtrack/deform_predictor.hpp"
#include "mtrack/geometry.hpp"
#include "mtrack/mouse_model.hpp"
#include "mtrack/simulator.hpp"
#include "mtrack/track_constraint.hpp"

namespace mtrack {

struct StochasticConfig {
  double sigma_px_geometric = 0.5;    // deformed mode
  double sigma_px_deformation = 3.0;  // rigid mode: deformation treated as noise
  double smoothness_weight = 0.1;     // per mm of grid displacement, epochs not solvable locally
  double smoothness_weight_observed = 1e-5;  // epochs solvable from their own observations
  bool huber = false;                 // robust loss on reprojection, scale 3σ

  nlohmann::json to_json() const;
  static StochasticConfig from_json(const nlohmann::json& value, std::string_view context = "stochastic");
};

enum class SolveMode { Rigid, Deformed };
std::string_view to_string(SolveMode mode);
SolveMode solve_mode_from_string(std::string_view s);

enum class SolvedFrom { Local, Interpolated, Adjusted };
std::string_view to_string(SolvedFrom s);

struct EpochState {
  PoseVector pose;
  SolvedFrom solved_from = SolvedFrom::Local;
  bool solved = false;
  std::optional<double> residual_rms_px;  // empty without observations
  std::vector<Vec3> offsets;              // deformed mode, model frame
};

struct MouseStateTrack {
  std::vector<EpochState> epochs;

  int size() const { return static_cast<int>(epochs.size()); }
  std::vector<PoseVector> poses() const;
  void set_poses(const std::vector<PoseVector>& poses);
  double completeness() const;

  nlohmann::json to_json() const;
  static MouseStateTrack from_json(const nlohmann::json& value, std::string_view context = "track");
};

/// ≥ 4 distinct parts observed, and either ≥ 3 of them seen by two or more
/// cameras or one camera seeing ≥ 4.
bool locally_solvable(const SimulatedDataset& dataset, int epoch);

/// Per-epoch pose from that epoch's observations alone, or nullopt.
std::optional<PoseVector> solve_epoch_locally(const SimulatedDataset& dataset, const RigidMouseModel& model,
                                              int epoch);

/// Local solutions where possible, interpolation elsewhere. Throws
/// NoSolvableEpoch when nothing can be solved locally.
MouseStateTrack initialize(const SimulatedDataset& dataset, const RigidMouseModel& model);

enum class BlockKind { RigidReprojection, DeformedReprojection, TrackSmoothness };
std::string_view to_string(BlockKind kind);

struct ResidualBlock {
  BlockKind kind = BlockKind::RigidReprojection;
  int epoch = 0;
  int camera = -1;  // index into Problem::cameras
  int part = -1;
  double weight = 1.0;  // 1/σ (reprojection) or smoothness weight
  Vec2 observed = Vec2::Zero();
};

struct Problem {
  std::vector<CameraModel> cameras;
  RigidMouseModel model = RigidMouseModel::standard();
  ComparisonGrid grid = ComparisonGrid::standard();
  StochasticConfig stochastic;
  SolveMode mode = SolveMode::Rigid;
  int n_epochs = 0;
  std::vector<ResidualBlock> blocks;
  /// Model-frame part offsets used by deformed reprojection blocks.
  std::vector<std::vector<Vec3>> offsets;

  Eigen::Index unknowns() const { return 6 * static_cast<Eigen::Index>(n_epochs); }
  int count(BlockKind kind) const;
  /// Half-bandwidth (scalars) of the normal matrix.
  Eigen::Index bandwidth() const;
};

/// Without a predictor every observation becomes a rigid reprojection block.
/// Throws InconsistentCameraIds if `cameras` do not match the dataset's.
Problem build_problem(const SimulatedDataset& dataset, const std::vector<CameraModel>& cameras,
                      const MouseStateTrack& track, const RigidMouseModel& model,
                      const DeformationPredictor* deform_model, const StochasticConfig& stochastic,
                      const ComparisonGrid& grid = ComparisonGrid::standard());

/// Residual and Jacobian (w.r.t. the 6 parameters of each involved epoch) of
/// one block. For smoothness blocks the columns cover the five-epoch window.
struct BlockEvaluation {
  Eigen::VectorXd residual;
  Eigen::MatrixXd jacobian;
  int first_epoch = 0;
};
BlockEvaluation evaluate_block(const Problem& problem, const std::vector<PoseVector>& poses, std::size_t block,
                               bool with_jacobian = true);

/// ½ Σ r² (Huber-adjusted when enabled).
double total_cost(const Problem& problem, const std::vector<PoseVector>& poses);

/// Normal matrix JᵀJ and gradient Jᵀr at the given poses.
struct NormalEquations {
  BandedSymmetricMatrix JtJ;
  Eigen::VectorXd gradient;
  double cost = 0.0;
};
NormalEquations linearize(const Problem& problem, const std::vector<PoseVector>& poses);

/// Worst relative deviation between analytic and central-difference (step
/// 1e-6) block Jacobians. Restrict to one block with `only_block`.
double check_jacobian(const Problem& problem, const std::vector<PoseVector>& poses,
                      std::optional<std::size_t> only_block = std::nullopt);

struct SolveOptions {
  int max_iterations = 100;
  double function_tolerance = 1e-10;
  double gradient_tolerance = 1e-10;
  double initial_lambda = 1e-4;
  int outer_iterations = 3;  // deformed mode: offset re-prediction rounds
};

struct SolveReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  std::string status;  // "converged" or "max_iterations"
  std::vector<double> cost_history;
  double rms_reprojection_px = 0.0;
  double rms_smoothness_mm = 0.0;
  int reprojection_blocks = 0;
  int smoothness_blocks = 0;

  nlohmann::json to_json() const;
};

struct SolveResult {
  MouseStateTrack track;
  SolveReport report;
};

/// Levenberg-Marquardt from the given track. Epochs whose 6×6 normal block
/// is rank deficient are reported unsolved.
SolveResult solve(const Problem& problem, const MouseStateTrack& init, const SolveOptions& options = {});

/// Triangulated world positions of parts seen by ≥ 2 cameras.
std::vector<PartPoints> triangulate_parts(const SimulatedDataset& dataset);

/// Centre-epoch offsets predicted from the current track; zero where the
/// token window does not fit.
std::vector<std::vector<Vec3>> predict_offsets(const DeformationPredictor& predictor, const RigidMouseModel& model,
                                               const std::vector<PoseVector>& poses,
                                               const std::vector<PartPoints>& triangulated);

/// initialize → build_problem → solve, with offset re-prediction rounds in
/// deformed mode.
SolveResult estimate_track(const SimulatedDataset& dataset, const RigidMouseModel& model,
                           const DeformationPredictor* deform_model, const StochasticConfig& stochastic,
                           const SolveOptions& options = {}, const ComparisonGrid& grid = ComparisonGrid::standard());

}  // namespace mtrack
