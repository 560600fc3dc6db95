#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtrack/adjustment.hpp"
#include "mtrack/deform_predictor.hpp"
#include "mtrack/errors.hpp"
#include "mtrack/evaluation.hpp"
#include "mtrack/json_io.hpp"
#include "mtrack/pipeline.hpp"
#include "mtrack/simulator.hpp"

namespace fs = std::filesystem;
using namespace mtrack;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitCheck = 4;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out_dir = ".";
  bool check = false;
};

fs::path out_path(const Globals& g, const std::string& name) {
  const fs::path p(name);
  if (p.is_absolute() || p.has_parent_path()) return p;
  return fs::path(g.out_dir) / p;
}

json meta_for(const json& config, std::optional<std::uint64_t> seed) {
  json m = {{"config_hash", io::content_hash(config)}};
  if (seed) m["seed"] = *seed;
  return m;
}

SceneConfig load_scene(const Globals& g) {
  SceneConfig c = SceneConfig::default_scene();
  if (!g.config.empty()) {
    json j = io::read_json_file(g.config);
    c = SceneConfig::from_json(j.contains("scene") ? j["scene"] : j, "scene");
  }
  if (g.seed) c.seed = *g.seed;
  return c;
}

void use_cameras(SimulatedDataset& ds, const std::vector<CameraModel>& cameras) {
  if (cameras.size() != ds.cameras.size()) {
    throw Error(ErrorCode::InconsistentCameraIds, "camera file has " + std::to_string(cameras.size()) +
                                                      " cameras, dataset " + std::to_string(ds.cameras.size()));
  }
  for (auto& dc : ds.cameras) {
    const auto it = std::find_if(cameras.begin(), cameras.end(), [&](const CameraModel& c) { return c.id == dc.id; });
    if (it == cameras.end()) {
      throw Error(ErrorCode::InconsistentCameraIds, "dataset camera id " + std::to_string(dc.id) + " not in camera file");
    }
    dc = *it;
  }
}

int report_checks(const std::vector<std::string>& failures) {
  if (failures.empty()) {
    std::cout << "check: all thresholds met\n";
    return kExitOk;
  }
  for (const auto& f : failures) std::cerr << "check failed: " << f << "\n";
  return kExitCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-camera rigid/deformable mouse tracking"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_flag("--check", g.check, "Exit 4 when a threshold is violated");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Render a synthetic multi-camera dataset");
  std::string sim_out = "dataset.json", sim_cams = "cameras.json";
  std::optional<int> sim_epochs;
  std::optional<double> sim_dropout, sim_noise;
  sim->add_option("--out", sim_out, "Dataset file");
  sim->add_option("--cameras-out", sim_cams, "Camera file");
  sim->add_option("--epochs", sim_epochs, "Number of epochs");
  sim->add_option("--dropout", sim_dropout, "Random dropout rate");
  sim->add_option("--noise", sim_noise, "Pixel noise sigma");

  // train-deform
  auto* trn = app.add_subcommand("train-deform", "Train the deformation sequence model");
  std::vector<std::string> trn_data;
  std::string trn_out = "deform_model.json";
  std::optional<int> trn_epochs;
  trn->add_option("--data", trn_data, "Training dataset files")->required();
  trn->add_option("--out", trn_out, "Model file");
  trn->add_option("--epochs", trn_epochs, "Training epochs");

  // solve
  auto* slv = app.add_subcommand("solve", "Estimate the pose track");
  std::string slv_data, slv_cams, slv_deform, slv_mode, slv_out = "track.json";
  std::optional<double> slv_ws;
  slv->add_option("--data", slv_data, "Dataset file")->required();
  slv->add_option("--cameras", slv_cams, "Camera file (defaults to the dataset's cameras)");
  slv->add_option("--deform", slv_deform, "Trained deformation model");
  slv->add_option("--ws", slv_ws, "Track smoothness weight");
  slv->add_option("--mode", slv_mode, "rigid or deformed")->check(CLI::IsMember({"rigid", "deformed"}));
  slv->add_option("--out", slv_out, "Track file");

  // evaluate
  auto* evl = app.add_subcommand("evaluate", "Compare a track with ground truth");
  std::string evl_track, evl_data, evl_out = "report.json";
  evl->add_option("--track", evl_track, "Track file")->required();
  evl->add_option("--data", evl_data, "Dataset file")->required();
  evl->add_option("--out", evl_out, "Report file");

  // plot
  auto* plt = app.add_subcommand("plot", "Write SVG/CSV plots of a track");
  std::string plt_track, plt_data;
  plt->add_option("--track", plt_track, "Track file")->required();
  plt->add_option("--data", plt_data, "Dataset file")->required();

  // pipeline
  auto* pip = app.add_subcommand("pipeline", "simulate, train-deform, solve, evaluate and plot");

  for (auto* sub : {sim, trn, slv, evl, plt, pip}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    fs::create_directories(g.out_dir);

    if (*sim) {
      SceneConfig c = load_scene(g);
      if (sim_epochs) c.n_epochs = *sim_epochs;
      if (sim_dropout) c.occlusion.random_dropout_rate = *sim_dropout;
      if (sim_noise) c.noise_sigma_px = *sim_noise;
      c = SceneConfig::from_json(c.to_json(), "scene");
      const SimulatedDataset ds = simulate(c);
      export_dataset(ds, out_path(g, sim_out));
      io::write_cameras(out_path(g, sim_cams), ds.cameras);
      std::cout << "wrote " << out_path(g, sim_out).string() << " (" << ds.n_epochs() << " epochs, "
                << ds.n_cameras() << " cameras)\n";
      return kExitOk;
    }

    if (*trn) {
      TrainingOptions opts;
      if (!g.config.empty()) {
        json j = io::read_json_file(g.config);
        if (j.contains("training") && j["training"].contains("options")) {
          opts = TrainingOptions::from_json(j["training"]["options"], "training.options");
        } else if (!j.contains("training") && !j.contains("scene")) {
          opts = TrainingOptions::from_json(j, "training");
        }
      }
      if (g.seed) opts.seed = *g.seed;
      if (trn_epochs) opts.epochs = *trn_epochs;
      std::vector<SimulatedDataset> data;
      for (const auto& f : trn_data) data.push_back(import_dataset(f));
      const SequenceModel m = SequenceModel::train(data, opts);
      m.save(out_path(g, trn_out));
      std::cout << "trained " << opts.epochs << " epochs, final loss " << m.loss_curve().back() << "\n";
      return kExitOk;
    }

    if (*slv) {
      SimulatedDataset ds = import_dataset(slv_data);
      if (!slv_cams.empty()) use_cameras(ds, io::read_cameras(slv_cams));
      StochasticConfig st;
      SolveOptions so;
      json config = json::object();
      if (!g.config.empty()) {
        config = io::read_json_file(g.config);
        const PipelineConfig pc = PipelineConfig::from_json(config);
        st = pc.stochastic;
        so = pc.solve;
      }
      if (slv_ws) st.smoothness_weight = *slv_ws;
      SolveMode mode = slv_deform.empty() ? SolveMode::Rigid : SolveMode::Deformed;
      if (!slv_mode.empty()) mode = solve_mode_from_string(slv_mode);
      std::optional<SequenceModel> model;
      if (mode == SolveMode::Deformed) {
        if (slv_deform.empty()) throw Error(ErrorCode::InvalidArgument, "--mode deformed needs --deform");
        model = SequenceModel::load(slv_deform);
      }
      const SolveResult r = estimate_track(ds, ds.model, model ? &*model : nullptr, st, so);
      json meta = meta_for(config, g.seed);
      meta["dataset_hash"] = ds.meta.value("config_hash", "");
      io::write_json_file(out_path(g, slv_out), track_file_json(r.track, r.report, mode, meta));
      std::cout << "solved " << r.report.iterations << " iterations, cost " << r.report.initial_cost << " -> "
                << r.report.final_cost << ", completeness " << r.track.completeness() << "\n";
      return kExitOk;
    }

    if (*evl) {
      const SimulatedDataset ds = import_dataset(evl_data);
      const MouseStateTrack track = read_track_file(evl_track);
      const EvaluationReport rep = evaluate(track, ds);
      json meta = {{"dataset_hash", ds.meta.value("config_hash", "")}};
      io::write_json_file(out_path(g, evl_out), report_file_json(rep, meta));
      std::cout << "position rmse " << rep.position.rmse << " mm, rotation rmse " << rep.rotation.rmse
                << " deg, completeness " << rep.completeness_output << "\n";
      if (g.check) {
        CheckThresholds k;
        if (!g.config.empty()) k = PipelineConfig::from_json(io::read_json_file(g.config)).check;
        return report_checks(check_report(rep, k));
      }
      return kExitOk;
    }

    if (*plt) {
      const SimulatedDataset ds = import_dataset(plt_data);
      const MouseStateTrack track = read_track_file(plt_track);
      for (const auto& p : plot(track, ds, g.out_dir)) std::cout << "wrote " << p.string() << "\n";
      return kExitOk;
    }

    if (*pip) {
      PipelineConfig pc;
      if (!g.config.empty()) pc = PipelineConfig::from_json(io::read_json_file(g.config));
      if (g.seed) pc.set_seed(*g.seed);
      const PipelineResult r = run_pipeline(pc, g.out_dir, &std::cout);
      if (g.check) return report_checks(r.check_failures);
      return kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_validation_error(e.code()) ? kExitValidation : kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
