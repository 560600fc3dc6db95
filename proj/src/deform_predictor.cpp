#include "mtrack/deform_predictor.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "mtrack/errors.hpp"
#include "mtrack/json_io.hpp"
#include "mtrack/rng.hpp"

namespace mtrack {

namespace {

constexpr int kFeaturesPerPart = 7;
constexpr int kStepFeatures = kFeaturesPerPart * kNumParts;
constexpr int kOutputs = 3 * kNumParts;
constexpr std::uint32_t kShuffleStream = 0x7368;  // "sh"
constexpr std::uint32_t kInitStream = 0x696e;     // "in"

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

int TokenSequence::masked_count() const {
  int n = 0;
  for (const auto& t : tokens) n += t.masked;
  return n;
}

TokenSequence build_tokens(const RigidMouseModel& model, const std::vector<PoseVector>& poses,
                           const std::vector<PartPoints>& deformable_world, int t, int n) {
  const int N = static_cast<int>(poses.size());
  if (n < 1 || t - n < 0 || t + n >= N || deformable_world.size() != poses.size()) {
    throw Error(ErrorCode::WindowOutOfRange,
                "token window " + std::to_string(t) + "±" + std::to_string(n) + " outside " + std::to_string(N) + " epochs");
  }
  const RigidTransform to_model = invert(pose_to_transform(poses[static_cast<std::size_t>(t)]));
  const auto X = model.rigid_part_positions();
  TokenSequence seq;
  seq.center = t;
  seq.half_window = n;
  seq.n_parts = kNumParts;
  for (int e = t - n; e <= t + n; ++e) {
    const RigidTransform rel = compose(to_model, pose_to_transform(poses[static_cast<std::size_t>(e)]));
    for (int i = 0; i < kNumParts; ++i) {
      Token tok;
      tok.epoch = e;
      tok.part = i;
      tok.rigid = rel.apply(X[static_cast<std::size_t>(i)]);
      const auto& w = deformable_world[static_cast<std::size_t>(e)][static_cast<std::size_t>(i)];
      if (e == t) {
        tok.masked = true;
      } else if (w) {
        tok.present = true;
        tok.deformable = to_model.apply(*w);
      }
      seq.tokens.push_back(tok);
    }
  }
  return seq;
}

TokenSequence build_tokens(const SimulatedDataset& dataset, int t, int n) {
  if (!dataset.has_ground_truth()) throw Error(ErrorCode::InvalidArgument, "dataset carries no ground truth");
  const int N = dataset.n_epochs();
  if (n < 1 || t - n < 0 || t + n >= N) {
    throw Error(ErrorCode::WindowOutOfRange, "token window outside dataset");
  }
  std::vector<PoseVector> poses(static_cast<std::size_t>(N));
  std::vector<PartPoints> world(static_cast<std::size_t>(N));
  for (int e = t - n; e <= t + n; ++e) {
    const auto& g = dataset.ground_truth[static_cast<std::size_t>(e)];
    poses[static_cast<std::size_t>(e)] = g.pose;
    for (int i = 0; i < kNumParts; ++i) {
      if (dataset.view_count(e, i) >= 2) world[static_cast<std::size_t>(e)][static_cast<std::size_t>(i)] = g.deformable_world[static_cast<std::size_t>(i)];
    }
  }
  return build_tokens(dataset.model, poses, world, t, n);
}

Eigen::MatrixXd DeformationPredictor::jacobian(const TokenSequence& tokens, double step) const {
  const int mid = tokens.half_window;
  Eigen::MatrixXd J(kOutputs, kOutputs);
  TokenSequence work = tokens;
  for (int i = 0; i < kNumParts; ++i) {
    for (int a = 0; a < 3; ++a) {
      const double h = step * rigid_input_scale(i, a);
      Token& tok = work.at(mid, i);
      const double x0 = tok.rigid[a];
      tok.rigid[a] = x0 + h;
      const auto plus = predict(work);
      tok.rigid[a] = x0 - h;
      const auto minus = predict(work);
      tok.rigid[a] = x0;
      for (int p = 0; p < kNumParts; ++p) {
        J.block<3, 1>(3 * p, 3 * i + a) =
            (plus[static_cast<std::size_t>(p)] - minus[static_cast<std::size_t>(p)]) / (2.0 * h);
      }
    }
  }
  return J;
}

LinearPredictor::LinearPredictor(Eigen::MatrixXd W, Eigen::VectorXd b, int half_window)
    : W_(std::move(W)), b_(std::move(b)), half_window_(half_window) {
  if (W_.rows() != kOutputs || W_.cols() != kOutputs || b_.size() != kOutputs) {
    throw Error(ErrorCode::InvalidArgument, "linear predictor needs a 24×24 matrix and 24-vector");
  }
}

std::vector<Vec3> LinearPredictor::predict(const TokenSequence& tokens) const {
  Eigen::VectorXd x(kOutputs);
  for (int i = 0; i < kNumParts; ++i) x.segment<3>(3 * i) = tokens.at(tokens.half_window, i).rigid;
  const Eigen::VectorXd y = W_ * x + b_;
  std::vector<Vec3> out;
  for (int i = 0; i < kNumParts; ++i) out.emplace_back(y.segment<3>(3 * i));
  return out;
}

std::vector<TrainingExample> training_examples(const SimulatedDataset& dataset, int half_window) {
  if (!dataset.has_ground_truth()) throw Error(ErrorCode::InvalidArgument, "training needs ground truth");
  std::vector<TrainingExample> out;
  for (int t = half_window; t + half_window < dataset.n_epochs(); ++t) {
    TrainingExample ex;
    ex.tokens = build_tokens(dataset, t, half_window);
    const auto& g = dataset.ground_truth[static_cast<std::size_t>(t)];
    const RigidTransform to_model = invert(pose_to_transform(g.pose));
    for (const auto& w : g.deformable_world) ex.target.push_back(to_model.apply(w));
    out.push_back(std::move(ex));
  }
  return out;
}

double rigid_baseline_mse(const std::vector<TrainingExample>& examples) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& ex : examples) {
    for (int i = 0; i < kNumParts; ++i) {
      sum += (ex.target[static_cast<std::size_t>(i)] - ex.tokens.at(ex.tokens.half_window, i).rigid).squaredNorm();
      n += 3;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

nlohmann::json TrainingOptions::to_json() const {
  return {{"epochs", epochs},       {"learning_rate", learning_rate}, {"batch_size", batch_size},
          {"seed", seed},           {"half_window", half_window},     {"hidden", hidden},
          {"layers", layers},       {"clip_norm", clip_norm}};
}

TrainingOptions TrainingOptions::from_json(const nlohmann::json& value, std::string_view context) {
  const std::string ctx(context);
  if (!value.is_object()) throw Error(ErrorCode::SchemaError, ctx + ": expected an object");
  TrainingOptions o;
  if (value.contains("epochs")) o.epochs = io::require_int(value, "epochs", ctx);
  if (value.contains("learning_rate")) o.learning_rate = io::require_number(value, "learning_rate", ctx);
  if (value.contains("batch_size")) o.batch_size = io::require_int(value, "batch_size", ctx);
  if (value.contains("seed")) o.seed = value["seed"].get<std::uint64_t>();
  if (value.contains("half_window")) o.half_window = io::require_int(value, "half_window", ctx);
  if (value.contains("hidden")) o.hidden = io::require_int(value, "hidden", ctx);
  if (value.contains("layers")) o.layers = io::require_int(value, "layers", ctx);
  if (value.contains("clip_norm")) o.clip_norm = io::require_number(value, "clip_norm", ctx);
  if (o.epochs < 0 || o.batch_size < 1 || o.half_window < 1 || o.hidden < 1 || o.layers < 1 || o.layers > 2 ||
      !(o.learning_rate > 0)) {
    throw Error(ErrorCode::InvalidArgument, ctx + ": invalid training options");
  }
  return o;
}

std::vector<Eigen::MatrixXd> SequenceModel::encode(const std::vector<const TokenSequence*>& batch) const {
  const int steps = 2 * options_.half_window + 1;
  const auto B = static_cast<Eigen::Index>(batch.size());
  std::vector<Eigen::MatrixXd> seq(static_cast<std::size_t>(steps), Eigen::MatrixXd::Zero(kStepFeatures, B));
  for (Eigen::Index b = 0; b < B; ++b) {
    const TokenSequence& ts = *batch[static_cast<std::size_t>(b)];
    if (ts.half_window != options_.half_window || ts.n_parts != kNumParts ||
        static_cast<int>(ts.tokens.size()) != steps * kNumParts) {
      throw Error(ErrorCode::InvalidArgument, "token sequence does not match the model window");
    }
    for (int s = 0; s < steps; ++s) {
      auto col = seq[static_cast<std::size_t>(s)].col(b);
      for (int i = 0; i < kNumParts; ++i) {
        const Token& tok = ts.at(s, i);
        const int base = kFeaturesPerPart * i;
        for (int a = 0; a < 3; ++a) col[base + a] = tok.rigid[a];
        if (tok.present && !tok.masked) {
          for (int a = 0; a < 3; ++a) col[base + 3 + a] = tok.deformable[a];
          col[base + 6] = 1.0;
        }
      }
      for (int f = 0; f < kStepFeatures; ++f) {
        const bool is_deformable = (f % kFeaturesPerPart) >= 3 && (f % kFeaturesPerPart) < 6;
        const bool missing = is_deformable && col[kFeaturesPerPart * (f / kFeaturesPerPart) + 6] == 0.0;
        if (!input_used_[static_cast<std::size_t>(f)] || missing) {
          col[f] = 0.0;
        } else {
          col[f] = (col[f] - input_mean_[f]) / input_std_[f];
        }
      }
    }
  }
  return seq;
}

SequenceModel SequenceModel::train(const std::vector<SimulatedDataset>& datasets, const TrainingOptions& options) {
  if (datasets.empty()) throw Error(ErrorCode::InvalidArgument, "training needs at least one dataset");
  std::vector<TrainingExample> all;
  for (const auto& d : datasets) {
    auto ex = training_examples(d, options.half_window);
    all.insert(all.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
  }
  return train(all, options);
}

SequenceModel SequenceModel::train(const std::vector<TrainingExample>& examples, const TrainingOptions& options) {
  if (examples.empty()) throw Error(ErrorCode::InvalidArgument, "no training examples");
  SequenceModel m;
  m.options_ = options;

  // Normalisation statistics; deformable coordinates only where present.
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(kStepFeatures), sq = sum, cnt = sum;
  Eigen::VectorXd osum = Eigen::VectorXd::Zero(kOutputs), osq = osum;
  for (const auto& ex : examples) {
    const auto& ts = ex.tokens;
    if (ts.half_window != options.half_window) throw Error(ErrorCode::InvalidArgument, "example window mismatch");
    for (int s = 0; s < ts.steps(); ++s) {
      for (int i = 0; i < kNumParts; ++i) {
        const Token& tok = ts.at(s, i);
        const int base = kFeaturesPerPart * i;
        for (int a = 0; a < 3; ++a) {
          sum[base + a] += tok.rigid[a];
          sq[base + a] += tok.rigid[a] * tok.rigid[a];
          cnt[base + a] += 1;
          if (tok.present && !tok.masked) {
            sum[base + 3 + a] += tok.deformable[a];
            sq[base + 3 + a] += tok.deformable[a] * tok.deformable[a];
            cnt[base + 3 + a] += 1;
          }
        }
      }
    }
    for (int i = 0; i < kNumParts; ++i) {
      const Vec3 d = ex.target[static_cast<std::size_t>(i)] - ts.at(ts.half_window, i).rigid;
      osum.segment<3>(3 * i) += d;
      osq.segment<3>(3 * i) += d.cwiseAbs2();
    }
  }
  m.input_mean_ = Eigen::VectorXd::Zero(kStepFeatures);
  m.input_std_ = Eigen::VectorXd::Ones(kStepFeatures);
  m.input_used_.assign(kStepFeatures, false);
  for (int f = 0; f < kStepFeatures; ++f) {
    if (f % kFeaturesPerPart == 6) {
      m.input_used_[static_cast<std::size_t>(f)] = true;  // presence flag, raw 0/1
      continue;
    }
    if (cnt[f] < 1) continue;
    const double mean = sum[f] / cnt[f];
    const double var = std::max(0.0, sq[f] / cnt[f] - mean * mean);
    m.input_mean_[f] = mean;
    if (std::sqrt(var) >= 1e-6) {
      m.input_std_[f] = std::sqrt(var);
      m.input_used_[static_cast<std::size_t>(f)] = true;
    }
  }
  const double n_ex = static_cast<double>(examples.size());
  m.output_mean_ = osum / n_ex;
  m.output_std_ = ((osq / n_ex) - m.output_mean_.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
  for (Eigen::Index j = 0; j < kOutputs; ++j) {
    if (m.output_std_[j] < 1e-6) m.output_std_[j] = 1.0;
  }

  Rng init(options.seed, {kInitStream});
  m.network_ = LstmRegressor(kStepFeatures, options.hidden, options.layers, kOutputs, init);
  m.options_ = options;

  // Pre-encode everything once.
  std::vector<const TokenSequence*> all_tokens;
  for (const auto& ex : examples) all_tokens.push_back(&ex.tokens);
  const auto encoded = m.encode(all_tokens);
  Eigen::MatrixXd targets(kOutputs, static_cast<Eigen::Index>(examples.size()));
  for (std::size_t e = 0; e < examples.size(); ++e) {
    for (int i = 0; i < kNumParts; ++i) {
      const Vec3 d = examples[e].target[static_cast<std::size_t>(i)] - examples[e].tokens.at(options.half_window, i).rigid;
      targets.col(static_cast<Eigen::Index>(e)).segment<3>(3 * i) = d;
    }
  }
  targets = ((targets.colwise() - m.output_mean_).array().colwise() / m.output_std_.array()).matrix();

  AdamOptimizer adam(m.network_.parameter_count(), options.learning_rate);
  Eigen::VectorXd theta = m.network_.parameters();
  Eigen::VectorXd grad;
  std::vector<std::size_t> order(examples.size());
  std::vector<Eigen::MatrixXd> batch_seq(encoded.size());
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(options.seed, {kShuffleStream, static_cast<std::uint32_t>(epoch)});
    for (std::size_t j = order.size(); j > 1; --j) std::swap(order[j - 1], order[shuffle.below(j)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      const auto B = static_cast<Eigen::Index>(end - start);
      for (std::size_t s = 0; s < encoded.size(); ++s) {
        batch_seq[s].resize(kStepFeatures, B);
        for (std::size_t j = start; j < end; ++j) batch_seq[s].col(static_cast<Eigen::Index>(j - start)) = encoded[s].col(static_cast<Eigen::Index>(order[j]));
      }
      Eigen::MatrixXd batch_target(kOutputs, B);
      for (std::size_t j = start; j < end; ++j) batch_target.col(static_cast<Eigen::Index>(j - start)) = targets.col(static_cast<Eigen::Index>(order[j]));

      m.network_.set_parameters(theta);
      const double loss = m.network_.loss_and_gradient(batch_seq, batch_target, grad);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        throw Error(ErrorCode::DivergedLoss, "training loss became non-finite at epoch " + std::to_string(epoch));
      }
      const double gnorm = grad.norm();
      if (options.clip_norm > 0 && gnorm > options.clip_norm) grad *= options.clip_norm / gnorm;
      adam.step(theta, grad);
      epoch_loss += loss * static_cast<double>(B);
    }
    m.loss_curve_.push_back(epoch_loss / n_ex);
  }
  m.network_.set_parameters(theta);
  if (!theta.allFinite()) throw Error(ErrorCode::DivergedLoss, "network parameters became non-finite");
  return m;
}

std::vector<Vec3> SequenceModel::predict(const TokenSequence& tokens) const {
  if (!trained()) throw Error(ErrorCode::UntrainedModel, "deformation model has not been trained");
  const auto seq = encode({&tokens});
  const Eigen::VectorXd y = network_.forward(seq).col(0).cwiseProduct(output_std_) + output_mean_;
  std::vector<Vec3> out;
  for (int i = 0; i < kNumParts; ++i) out.emplace_back(tokens.at(tokens.half_window, i).rigid + y.segment<3>(3 * i));
  return out;
}

double SequenceModel::rigid_input_scale(int part, int axis) const {
  if (!trained()) return 1.0;
  return input_std_[kFeaturesPerPart * part + axis];
}

double SequenceModel::mse(const std::vector<TrainingExample>& examples) const {
  if (!trained()) throw Error(ErrorCode::UntrainedModel, "deformation model has not been trained");
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& ex : examples) {
    const auto pred = predict(ex.tokens);
    for (int i = 0; i < kNumParts; ++i) {
      sum += (pred[static_cast<std::size_t>(i)] - ex.target[static_cast<std::size_t>(i)]).squaredNorm();
      n += 3;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

nlohmann::json SequenceModel::to_json() const {
  if (!trained()) throw Error(ErrorCode::UntrainedModel, "cannot serialise an untrained model");
  std::vector<int> used;
  for (bool u : input_used_) used.push_back(u ? 1 : 0);
  return {{"format", "mtrack-deform-model"},
          {"version", 1},
          {"architecture", {{"type", "lstm"}, {"n_parts", kNumParts}, {"features_per_part", kFeaturesPerPart}}},
          {"options", options_.to_json()},
          {"normalization",
           {{"input_mean", to_std(input_mean_)},
            {"input_std", to_std(input_std_)},
            {"input_used", used},
            {"output_mean", to_std(output_mean_)},
            {"output_std", to_std(output_std_)}}},
          {"network", network_.to_json()},
          {"loss_curve", loss_curve_}};
}

SequenceModel SequenceModel::from_json(const nlohmann::json& value, std::string_view context) {
  const std::string ctx(context);
  if (!value.is_object() || value.value("format", "") != "mtrack-deform-model") {
    throw Error(ErrorCode::SchemaError, ctx + ": not a deformation model file");
  }
  if (io::require_int(value, "version", ctx) != 1) throw Error(ErrorCode::SchemaError, ctx + ".version: unsupported");
  SequenceModel m;
  m.options_ = TrainingOptions::from_json(io::require(value, "options", ctx), ctx + ".options");
  const auto& norm = io::require(value, "normalization", ctx);
  const std::string nctx = ctx + ".normalization";
  m.input_mean_ = to_eigen(io::number_array(io::require(norm, "input_mean", nctx), kStepFeatures, nctx + ".input_mean"));
  m.input_std_ = to_eigen(io::number_array(io::require(norm, "input_std", nctx), kStepFeatures, nctx + ".input_std"));
  const auto used = io::number_array(io::require(norm, "input_used", nctx), kStepFeatures, nctx + ".input_used");
  for (double u : used) m.input_used_.push_back(u != 0.0);
  m.output_mean_ = to_eigen(io::number_array(io::require(norm, "output_mean", nctx), kOutputs, nctx + ".output_mean"));
  m.output_std_ = to_eigen(io::number_array(io::require(norm, "output_std", nctx), kOutputs, nctx + ".output_std"));
  m.network_ = LstmRegressor::from_json(io::require(value, "network", ctx), ctx + ".network");
  if (m.network_.input_size() != kStepFeatures || m.network_.output_size() != kOutputs) {
    throw Error(ErrorCode::SchemaError, ctx + ".network: wrong input/output size");
  }
  if (value.contains("loss_curve")) m.loss_curve_ = value["loss_curve"].get<std::vector<double>>();
  return m;
}

void SequenceModel::save(const std::filesystem::path& path) const { io::write_json_file(path, to_json()); }

SequenceModel SequenceModel::load(const std::filesystem::path& path) {
  return from_json(io::read_json_file(path), path.filename().string());
}

}  // namespace mtrack
