#pragma once

// Small LSTM regressor: stacked LSTM layers over a fixed-length sequence,
// linear head on the last hidden state. Batched forward pass, hand-written
// backpropagation through time and an Adam optimiser.

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace mtrack {

class Rng;

class LstmRegressor {
 public:
  LstmRegressor() = default;
  LstmRegressor(int input_size, int hidden_size, int layers, int output_size, Rng& rng);

  int input_size() const { return input_; }
  int hidden_size() const { return hidden_; }
  int layers() const { return layers_; }
  int output_size() const { return output_; }
  Eigen::Index parameter_count() const { return theta_.size(); }
  bool empty() const { return theta_.size() == 0; }

  /// seq[s] is input_size × batch; returns output_size × batch.
  Eigen::MatrixXd forward(const std::vector<Eigen::MatrixXd>& seq) const;

  /// Mean squared error over all outputs of the batch and its gradient with
  /// respect to the flat parameter vector.
  double loss_and_gradient(const std::vector<Eigen::MatrixXd>& seq, const Eigen::MatrixXd& target,
                           Eigen::VectorXd& gradient) const;

  const Eigen::VectorXd& parameters() const { return theta_; }
  void set_parameters(const Eigen::VectorXd& theta);

  nlohmann::json to_json() const;
  static LstmRegressor from_json(const nlohmann::json& value, std::string_view context);

 private:
  struct Offsets {
    Eigen::Index W, U, b;
  };
  void layout();
  int layer_input(int l) const { return l == 0 ? input_ : hidden_; }

  int input_ = 0, hidden_ = 0, layers_ = 0, output_ = 0;
  std::vector<Offsets> offsets_;
  Eigen::Index head_W_ = 0, head_b_ = 0;
  Eigen::VectorXd theta_;
};

class AdamOptimizer {
 public:
  explicit AdamOptimizer(Eigen::Index n, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                         double epsilon = 1e-8);
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& gradient);

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  Eigen::VectorXd m_, v_;
};

}  // namespace mtrack
