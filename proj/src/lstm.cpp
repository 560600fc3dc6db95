#include "mtrack/lstm.hpp"

#include <cmath>
#include <string>

#include "mtrack/errors.hpp"
#include "mtrack/json_io.hpp"
#include "mtrack/rng.hpp"

namespace mtrack {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd sigmoid(const MatrixXd& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

struct StepCache {
  MatrixXd x, h_prev, c_prev, i, f, g, o, c, tanh_c, h;
};

}  // namespace

LstmRegressor::LstmRegressor(int input_size, int hidden_size, int layers, int output_size, Rng& rng)
    : input_(input_size), hidden_(hidden_size), layers_(layers), output_(output_size) {
  if (input_size <= 0 || hidden_size <= 0 || layers <= 0 || output_size <= 0) {
    throw Error(ErrorCode::InvalidArgument, "LSTM sizes must be positive");
  }
  layout();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hidden_));
  for (Eigen::Index j = 0; j < theta_.size(); ++j) theta_[j] = rng.uniform(-scale, scale);
  const Eigen::Index H = hidden_;
  for (const auto& off : offsets_) {
    theta_.segment(off.b, 4 * H).setZero();
    theta_.segment(off.b + H, H).setOnes();  // forget gate
  }
  theta_.segment(head_b_, output_).setZero();
}

void LstmRegressor::layout() {
  const Eigen::Index H = hidden_;
  Eigen::Index n = 0;
  offsets_.clear();
  for (int l = 0; l < layers_; ++l) {
    Offsets off{};
    off.W = n;
    n += 4 * H * layer_input(l);
    off.U = n;
    n += 4 * H * H;
    off.b = n;
    n += 4 * H;
    offsets_.push_back(off);
  }
  head_W_ = n;
  n += output_ * H;
  head_b_ = n;
  n += output_;
  theta_ = VectorXd::Zero(n);
}

void LstmRegressor::set_parameters(const VectorXd& theta) {
  if (theta.size() != theta_.size()) throw Error(ErrorCode::InvalidArgument, "parameter vector size mismatch");
  theta_ = theta;
}

MatrixXd LstmRegressor::forward(const std::vector<MatrixXd>& seq) const {
  if (seq.empty()) throw Error(ErrorCode::InvalidArgument, "empty sequence");
  const Eigen::Index H = hidden_;
  const Eigen::Index B = seq.front().cols();
  std::vector<MatrixXd> xs = seq;
  for (int l = 0; l < layers_; ++l) {
    const Offsets& off = offsets_[static_cast<std::size_t>(l)];
    Eigen::Map<const MatrixXd> W(theta_.data() + off.W, 4 * H, layer_input(l));
    Eigen::Map<const MatrixXd> U(theta_.data() + off.U, 4 * H, H);
    Eigen::Map<const VectorXd> b(theta_.data() + off.b, 4 * H);
    MatrixXd h = MatrixXd::Zero(H, B), c = MatrixXd::Zero(H, B);
    for (auto& x : xs) {
      MatrixXd z = W * x + U * h;
      z.colwise() += b;
      const MatrixXd i = sigmoid(z.middleRows(0, H));
      const MatrixXd f = sigmoid(z.middleRows(H, H));
      const MatrixXd g = z.middleRows(2 * H, H).array().tanh().matrix();
      const MatrixXd o = sigmoid(z.middleRows(3 * H, H));
      c = (f.array() * c.array() + i.array() * g.array()).matrix();
      h = (o.array() * c.array().tanh()).matrix();
      x = h;
    }
  }
  Eigen::Map<const MatrixXd> Wo(theta_.data() + head_W_, output_, H);
  Eigen::Map<const VectorXd> bo(theta_.data() + head_b_, output_);
  MatrixXd y = Wo * xs.back();
  y.colwise() += bo;
  return y;
}

double LstmRegressor::loss_and_gradient(const std::vector<MatrixXd>& seq, const MatrixXd& target,
                                        VectorXd& gradient) const {
  const Eigen::Index H = hidden_;
  const Eigen::Index B = seq.front().cols();
  const std::size_t T = seq.size();
  gradient = VectorXd::Zero(theta_.size());

  std::vector<std::vector<StepCache>> cache(static_cast<std::size_t>(layers_), std::vector<StepCache>(T));
  std::vector<MatrixXd> xs = seq;
  for (int l = 0; l < layers_; ++l) {
    const Offsets& off = offsets_[static_cast<std::size_t>(l)];
    Eigen::Map<const MatrixXd> W(theta_.data() + off.W, 4 * H, layer_input(l));
    Eigen::Map<const MatrixXd> U(theta_.data() + off.U, 4 * H, H);
    Eigen::Map<const VectorXd> b(theta_.data() + off.b, 4 * H);
    MatrixXd h = MatrixXd::Zero(H, B), c = MatrixXd::Zero(H, B);
    for (std::size_t s = 0; s < T; ++s) {
      StepCache& k = cache[static_cast<std::size_t>(l)][s];
      k.x = xs[s];
      k.h_prev = h;
      k.c_prev = c;
      MatrixXd z = W * k.x + U * h;
      z.colwise() += b;
      k.i = sigmoid(z.middleRows(0, H));
      k.f = sigmoid(z.middleRows(H, H));
      k.g = z.middleRows(2 * H, H).array().tanh().matrix();
      k.o = sigmoid(z.middleRows(3 * H, H));
      k.c = (k.f.array() * c.array() + k.i.array() * k.g.array()).matrix();
      k.tanh_c = k.c.array().tanh().matrix();
      k.h = (k.o.array() * k.tanh_c.array()).matrix();
      h = k.h;
      c = k.c;
      xs[s] = k.h;
    }
  }
  Eigen::Map<const MatrixXd> Wo(theta_.data() + head_W_, output_, H);
  Eigen::Map<const VectorXd> bo(theta_.data() + head_b_, output_);
  MatrixXd y = Wo * xs.back();
  y.colwise() += bo;
  const MatrixXd diff = y - target;
  const double n = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / n;

  const MatrixXd dy = (2.0 / n) * diff;
  Eigen::Map<MatrixXd>(gradient.data() + head_W_, output_, H) = dy * xs.back().transpose();
  Eigen::Map<VectorXd>(gradient.data() + head_b_, output_) = dy.rowwise().sum();

  // Gradient reaching each layer's hidden output, per step.
  std::vector<MatrixXd> dh_above(T, MatrixXd::Zero(H, B));
  dh_above.back() = Wo.transpose() * dy;
  for (int l = layers_ - 1; l >= 0; --l) {
    const Offsets& off = offsets_[static_cast<std::size_t>(l)];
    Eigen::Map<const MatrixXd> W(theta_.data() + off.W, 4 * H, layer_input(l));
    Eigen::Map<const MatrixXd> U(theta_.data() + off.U, 4 * H, H);
    Eigen::Map<MatrixXd> dW(gradient.data() + off.W, 4 * H, layer_input(l));
    Eigen::Map<MatrixXd> dU(gradient.data() + off.U, 4 * H, H);
    Eigen::Map<VectorXd> db(gradient.data() + off.b, 4 * H);
    MatrixXd dh_next = MatrixXd::Zero(H, B), dc_next = MatrixXd::Zero(H, B);
    std::vector<MatrixXd> dx(T);
    for (std::size_t s = T; s-- > 0;) {
      const StepCache& k = cache[static_cast<std::size_t>(l)][s];
      const MatrixXd dh = dh_above[s] + dh_next;
      const auto one = MatrixXd::Ones(H, B).array();
      const MatrixXd dc = (dh.array() * k.o.array() * (one - k.tanh_c.array().square()) + dc_next.array()).matrix();
      MatrixXd dz(4 * H, B);
      dz.middleRows(0, H) = (dc.array() * k.g.array() * k.i.array() * (one - k.i.array())).matrix();
      dz.middleRows(H, H) = (dc.array() * k.c_prev.array() * k.f.array() * (one - k.f.array())).matrix();
      dz.middleRows(2 * H, H) = (dc.array() * k.i.array() * (one - k.g.array().square())).matrix();
      dz.middleRows(3 * H, H) = (dh.array() * k.tanh_c.array() * k.o.array() * (one - k.o.array())).matrix();
      dW.noalias() += dz * k.x.transpose();
      dU.noalias() += dz * k.h_prev.transpose();
      db += dz.rowwise().sum();
      dh_next = U.transpose() * dz;
      dc_next = (dc.array() * k.f.array()).matrix();
      if (l > 0) dx[s] = W.transpose() * dz;
    }
    if (l > 0) dh_above = std::move(dx);
  }
  return loss;
}

nlohmann::json LstmRegressor::to_json() const {
  return {{"input", input_},
          {"hidden", hidden_},
          {"layers", layers_},
          {"output", output_},
          {"parameters", std::vector<double>(theta_.data(), theta_.data() + theta_.size())}};
}

LstmRegressor LstmRegressor::from_json(const nlohmann::json& value, std::string_view context) {
  const std::string ctx(context);
  LstmRegressor r;
  r.input_ = io::require_int(value, "input", ctx);
  r.hidden_ = io::require_int(value, "hidden", ctx);
  r.layers_ = io::require_int(value, "layers", ctx);
  r.output_ = io::require_int(value, "output", ctx);
  if (r.input_ <= 0 || r.hidden_ <= 0 || r.layers_ <= 0 || r.output_ <= 0) {
    throw Error(ErrorCode::SchemaError, ctx + ": sizes must be positive");
  }
  r.layout();
  const auto p = io::number_array(io::require(value, "parameters", ctx), static_cast<std::size_t>(r.theta_.size()),
                                  ctx + ".parameters");
  r.theta_ = Eigen::Map<const VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
  return r;
}

AdamOptimizer::AdamOptimizer(Eigen::Index n, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(epsilon), m_(VectorXd::Zero(n)), v_(VectorXd::Zero(n)) {}

void AdamOptimizer::step(VectorXd& theta, const VectorXd& gradient) {
  ++t_;
  m_ = b1_ * m_ + (1.0 - b1_) * gradient;
  v_ = b2_ * v_ + (1.0 - b2_) * gradient.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  theta.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

}  // namespace mtrack
