#include "mtrack/pipeline.hpp"

#include <ostream>

#include "mtrack/errors.hpp"
#include "mtrack/json_io.hpp"

namespace mtrack {

using nlohmann::json;

namespace {

template <typename Fn>
auto stage(const char* name, std::ostream* log, Fn&& fn) {
  if (log) *log << "[" << name << "]\n";
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), std::string("stage ") + name + ": " + e.what());
  }
}

}  // namespace

PipelineConfig::PipelineConfig() { set_seed(seed); }

TrainingOptions PipelineConfig::default_training() {
  TrainingOptions o;
  o.epochs = 10;
  return o;
}

std::vector<SimulatedDataset> PipelineConfig::training_scenes() const {
  std::vector<SimulatedDataset> out;
  for (int j = 0; j < training_datasets; ++j) {
    SceneConfig sc = scene;
    sc.seed = training_scene_seed(seed, j);
    sc.n_epochs = training_epochs_per_dataset;
    out.push_back(simulate(sc));
  }
  return out;
}

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  scene.seed = s;
  training.seed = s;
}

std::uint64_t training_scene_seed(std::uint64_t seed, int index) {
  return seed * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull * static_cast<std::uint64_t>(index + 1);
}

PipelineConfig PipelineConfig::from_json(const json& value, std::string_view context) {
  const std::string ctx(context);
  if (!value.is_object()) throw Error(ErrorCode::SchemaError, ctx + ": expected an object");
  PipelineConfig c;
  if (value.contains("scene")) c.scene = SceneConfig::from_json(value["scene"], ctx + ".scene");
  if (value.contains("training")) {
    const json& t = value["training"];
    const std::string tctx = ctx + ".training";
    if (t.contains("datasets")) c.training_datasets = io::require_int(t, "datasets", tctx);
    if (t.contains("epochs_per_dataset")) c.training_epochs_per_dataset = io::require_int(t, "epochs_per_dataset", tctx);
    if (t.contains("options")) {
      // Keys missing from the options keep the pipeline defaults.
      json merged = c.training.to_json();
      merged.update(t["options"]);
      c.training = TrainingOptions::from_json(merged, tctx + ".options");
    }
    if (c.training_datasets < 1 || c.training_epochs_per_dataset < 5) {
      throw Error(ErrorCode::InvalidArgument, tctx + ": need >= 1 dataset of >= 5 epochs");
    }
  }
  if (value.contains("stochastic")) c.stochastic = StochasticConfig::from_json(value["stochastic"], ctx + ".stochastic");
  if (value.contains("solve")) {
    const json& s = value["solve"];
    const std::string sctx = ctx + ".solve";
    if (s.contains("mode")) c.mode = solve_mode_from_string(io::require(s, "mode", sctx).get<std::string>());
    if (s.contains("max_iterations")) c.solve.max_iterations = io::require_int(s, "max_iterations", sctx);
    if (s.contains("outer_iterations")) c.solve.outer_iterations = io::require_int(s, "outer_iterations", sctx);
  }
  if (value.contains("grid")) c.grid = ComparisonGrid::from_json(value["grid"], ctx + ".grid");
  if (value.contains("check")) {
    const json& k = value["check"];
    const std::string kctx = ctx + ".check";
    if (k.contains("min_completeness")) c.check.min_completeness = io::require_number(k, "min_completeness", kctx);
    if (k.contains("max_position_rmse_mm")) c.check.max_position_rmse_mm = io::require_number(k, "max_position_rmse_mm", kctx);
    if (k.contains("max_rotation_rmse_deg")) c.check.max_rotation_rmse_deg = io::require_number(k, "max_rotation_rmse_deg", kctx);
  }
  std::uint64_t seed = c.scene.seed;
  if (value.contains("seed")) {
    if (!value["seed"].is_number_integer()) throw Error(ErrorCode::SchemaError, ctx + ".seed: expected an integer");
    seed = value["seed"].get<std::uint64_t>();
  }
  c.set_seed(seed);
  return c;
}

json PipelineConfig::to_json() const {
  return {{"seed", seed},
          {"scene", scene.to_json()},
          {"training",
           {{"datasets", training_datasets},
            {"epochs_per_dataset", training_epochs_per_dataset},
            {"options", training.to_json()}}},
          {"stochastic", stochastic.to_json()},
          {"solve",
           {{"mode", std::string(to_string(mode))},
            {"max_iterations", solve.max_iterations},
            {"outer_iterations", solve.outer_iterations}}},
          {"grid", grid.to_json()},
          {"check",
           {{"min_completeness", check.min_completeness},
            {"max_position_rmse_mm", check.max_position_rmse_mm},
            {"max_rotation_rmse_deg", check.max_rotation_rmse_deg}}}};
}

json track_file_json(const MouseStateTrack& track, const SolveReport& report, SolveMode mode, const json& meta) {
  return {{"format", "mtrack-track"},
          {"version", 1},
          {"meta", meta},
          {"mode", std::string(to_string(mode))},
          {"completeness", track.completeness()},
          {"report", report.to_json()},
          {"epochs", track.to_json()}};
}

MouseStateTrack read_track_file(const std::filesystem::path& path) {
  return MouseStateTrack::from_json(io::read_json_file(path), path.filename().string());
}

json report_file_json(const EvaluationReport& report, const json& meta) {
  return {{"format", "mtrack-evaluation"}, {"version", 1}, {"meta", meta}, {"evaluation", report.to_json()}};
}

std::vector<std::string> check_report(const EvaluationReport& r, const CheckThresholds& k) {
  std::vector<std::string> failures;
  if (r.completeness_output < k.min_completeness) {
    failures.push_back("completeness: output " + std::to_string(r.completeness_output) + " < required " +
                       std::to_string(k.min_completeness));
  }
  if (!(r.position.rmse <= k.max_position_rmse_mm)) {
    failures.push_back("position_rmse: " + std::to_string(r.position.rmse) + " mm > " +
                       std::to_string(k.max_position_rmse_mm) + " mm");
  }
  if (!(r.rotation.rmse <= k.max_rotation_rmse_deg)) {
    failures.push_back("rotation_rmse: " + std::to_string(r.rotation.rmse) + " deg > " +
                       std::to_string(k.max_rotation_rmse_deg) + " deg");
  }
  return failures;
}

PipelineResult run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir, std::ostream* log) {
  PipelineResult result;
  const json config_json = config.to_json();
  const json meta = {{"config_hash", io::content_hash(config_json)}, {"seed", config.seed}};

  io::write_json_file(out_dir / "config.json", config_json);
  result.artifacts.push_back(out_dir / "config.json");

  const SimulatedDataset dataset = stage("simulate", log, [&] {
    SimulatedDataset ds = simulate(config.scene);
    export_dataset(ds, out_dir / "dataset.json");
    io::write_cameras(out_dir / "cameras.json", ds.cameras);
    return ds;
  });
  result.artifacts.push_back(out_dir / "dataset.json");
  result.artifacts.push_back(out_dir / "cameras.json");

  SequenceModel model;
  if (config.mode == SolveMode::Deformed) {
    model = stage("train-deform", log, [&] {
      SequenceModel m = SequenceModel::train(config.training_scenes(), config.training);
      m.save(out_dir / "deform_model.json");
      if (log) *log << "  final training loss " << m.loss_curve().back() << "\n";
      return m;
    });
    result.artifacts.push_back(out_dir / "deform_model.json");
  }

  const SolveResult solved = stage("solve", log, [&] {
    SolveResult r = estimate_track(dataset, dataset.model, config.mode == SolveMode::Deformed ? &model : nullptr,
                                   config.stochastic, config.solve, config.grid);
    io::write_json_file(out_dir / "track.json", track_file_json(r.track, r.report, config.mode, meta));
    if (log) *log << "  " << r.report.iterations << " iterations, cost " << r.report.initial_cost << " -> "
                  << r.report.final_cost << "\n";
    return r;
  });
  result.solve = solved.report;
  result.artifacts.push_back(out_dir / "track.json");

  result.report = stage("evaluate", log, [&] {
    EvaluationReport r = evaluate(solved.track, dataset);
    io::write_json_file(out_dir / "report.json", report_file_json(r, meta));
    if (log) *log << "  position rmse " << r.position.rmse << " mm, completeness " << r.completeness_output << "\n";
    return r;
  });
  result.artifacts.push_back(out_dir / "report.json");

  const auto plots = stage("plot", log, [&] { return plot(solved.track, dataset, out_dir); });
  result.artifacts.insert(result.artifacts.end(), plots.begin(), plots.end());

  result.check_failures = check_report(result.report, config.check);
  return result;
}

}  // namespace mtrack
