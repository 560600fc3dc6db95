#pragma once

// Learned body-part deformation. Windows of (rigid, deformable) part
// coordinates around an epoch are expressed in that epoch's model frame; a
// sequence model predicts the deformable positions of all parts at the
// centre epoch, whose own deformable coordinates are masked.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mtrack/geometry.hpp"
#include "mtrack/lstm.hpp"
#include "mtrack/mouse_model.hpp"
#include "mtrack/simulator.hpp"

namespace mtrack {

struct Token {
  int epoch = 0;
  int part = 0;
  Vec3 rigid = Vec3::Zero();       // model frame of the centre epoch, mm
  Vec3 deformable = Vec3::Zero();  // meaningful only when present
  bool present = false;
  bool masked = false;  // centre-epoch slot whose deformable value is hidden
};

struct TokenSequence {
  int center = 0;
  int half_window = 2;
  int n_parts = kNumParts;
  std::vector<Token> tokens;  // (2n+1)·M, ordered by (epoch, part)

  int steps() const { return 2 * half_window + 1; }
  const Token& at(int step, int part) const { return tokens[static_cast<std::size_t>(step * n_parts + part)]; }
  Token& at(int step, int part) { return tokens[static_cast<std::size_t>(step * n_parts + part)]; }
  int masked_count() const;
};

using PartPoints = std::array<std::optional<Vec3>, kNumParts>;

/// Tokens from model-to-global poses and (possibly missing) deformable world
/// positions. Throws WindowOutOfRange unless n ≤ t < size − n.
TokenSequence build_tokens(const RigidMouseModel& model, const std::vector<PoseVector>& poses,
                           const std::vector<PartPoints>& deformable_world, int t, int n);

/// Tokens from simulated ground truth. Parts seen by fewer than two cameras
/// are flagged missing.
TokenSequence build_tokens(const SimulatedDataset& dataset, int t, int n);

class DeformationPredictor {
 public:
  virtual ~DeformationPredictor() = default;

  /// Centre-epoch deformable positions of all parts, model frame.
  virtual std::vector<Vec3> predict(const TokenSequence& tokens) const = 0;
  virtual int half_window() const = 0;
  /// Size in mm of one normalised unit of the centre-epoch rigid input.
  virtual double rigid_input_scale(int /*part*/, int /*axis*/) const { return 1.0; }

  /// ∂predict/∂(centre-epoch rigid inputs), 3M × 3M, by central differences
  /// with a step of `step` normalised units.
  Eigen::MatrixXd jacobian(const TokenSequence& tokens, double step = 1e-3) const;
};

/// predict = W·(stacked centre rigid coordinates) + b.
class LinearPredictor : public DeformationPredictor {
 public:
  LinearPredictor(Eigen::MatrixXd W, Eigen::VectorXd b, int half_window = 2);
  std::vector<Vec3> predict(const TokenSequence& tokens) const override;
  int half_window() const override { return half_window_; }

 private:
  Eigen::MatrixXd W_;
  Eigen::VectorXd b_;
  int half_window_;
};

struct TrainingExample {
  TokenSequence tokens;
  std::vector<Vec3> target;  // centre-epoch deformable positions, model frame
};

/// One example per window position of the dataset (requires ground truth).
std::vector<TrainingExample> training_examples(const SimulatedDataset& dataset, int half_window);

/// MSE (mm² per coordinate) of predicting the rigid model position.
double rigid_baseline_mse(const std::vector<TrainingExample>& examples);

struct TrainingOptions {
  int epochs = 200;
  double learning_rate = 3e-3;
  int batch_size = 32;
  std::uint64_t seed = 1;
  int half_window = 2;
  int hidden = 32;
  int layers = 1;
  double clip_norm = 5.0;

  nlohmann::json to_json() const;
  static TrainingOptions from_json(const nlohmann::json& value, std::string_view context = "train");
};

class SequenceModel : public DeformationPredictor {
 public:
  SequenceModel() = default;

  static SequenceModel train(const std::vector<TrainingExample>& examples, const TrainingOptions& options);
  static SequenceModel train(const std::vector<SimulatedDataset>& datasets, const TrainingOptions& options);

  /// Throws UntrainedModel before training.
  std::vector<Vec3> predict(const TokenSequence& tokens) const override;
  int half_window() const override { return options_.half_window; }
  double rigid_input_scale(int part, int axis) const override;

  bool trained() const { return !network_.empty(); }
  const std::vector<double>& loss_curve() const { return loss_curve_; }
  const TrainingOptions& options() const { return options_; }
  /// Mean squared error, mm² per coordinate.
  double mse(const std::vector<TrainingExample>& examples) const;

  nlohmann::json to_json() const;
  static SequenceModel from_json(const nlohmann::json& value, std::string_view context = "deform_model");
  void save(const std::filesystem::path& path) const;
  static SequenceModel load(const std::filesystem::path& path);

 private:
  std::vector<Eigen::MatrixXd> encode(const std::vector<const TokenSequence*>& batch) const;

  TrainingOptions options_;
  LstmRegressor network_;
  Eigen::VectorXd input_mean_, input_std_;  // per step feature, 7 per part
  std::vector<bool> input_used_;            // constant features are ignored
  Eigen::VectorXd output_mean_, output_std_;
  std::vector<double> loss_curve_;
};

}  // namespace mtrack
