#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <gtest/gtest.h>

#include "mtrack/adjustment.hpp"
#include "mtrack/errors.hpp"
#include "mtrack/evaluation.hpp"
#include "mtrack/json_io.hpp"
#include "mtrack/pipeline.hpp"
#include "mtrack/simulator.hpp"

using namespace mtrack;
namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

SceneConfig scene(std::uint64_t seed, int n, double dropout = 0.0) {
  SceneConfig c = SceneConfig::default_scene();
  c.seed = seed;
  c.n_epochs = n;
  c.occlusion.random_dropout_rate = dropout;
  return c;
}

MouseStateTrack truth_track(const SimulatedDataset& ds) {
  MouseStateTrack t;
  t.epochs.resize(static_cast<std::size_t>(ds.n_epochs()));
  for (int e = 0; e < ds.n_epochs(); ++e) {
    t.epochs[static_cast<std::size_t>(e)].pose = ds.ground_truth[static_cast<std::size_t>(e)].pose;
    t.epochs[static_cast<std::size_t>(e)].offsets = ds.ground_truth[static_cast<std::size_t>(e)].deformation.offsets;
    t.epochs[static_cast<std::size_t>(e)].solved = true;
  }
  return t;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "mtrack_test_cli" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct RunResult {
  int code;
  std::string output;
};

RunResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli.log";
  const std::string cmd = std::string(MTRACK_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

std::vector<std::pair<double, double>> path_vertices(const std::string& d) {
  std::vector<std::pair<double, double>> v;
  const std::regex num(R"([ML]([-0-9.e]+) ([-0-9.e]+))");
  for (auto it = std::sregex_iterator(d.begin(), d.end(), num); it != std::sregex_iterator(); ++it) {
    v.emplace_back(std::stod((*it)[1]), std::stod((*it)[2]));
  }
  return v;
}

}  // namespace

TEST(Evaluate, TruthIsPerfect) {
  const SimulatedDataset ds = simulate(scene(1, 30, 0.3));
  const EvaluationReport r = evaluate(truth_track(ds), ds);
  for (double e : r.position_error_mm) EXPECT_EQ(e, 0.0);
  for (double e : r.rotation_error_deg) EXPECT_EQ(e, 0.0);
  EXPECT_EQ(r.completeness_output, 1.0);
  EXPECT_LT(r.part_rmse_all_mm, 1e-9);
  EXPECT_GE(r.completeness_output, r.completeness_input);
}

TEST(Evaluate, ShiftedTrack) {
  const SimulatedDataset ds = simulate(scene(2, 30));
  MouseStateTrack t = truth_track(ds);
  for (auto& e : t.epochs) e.pose.translation.x() += 1.0;
  const EvaluationReport r = evaluate(t, ds);
  for (double e : r.position_error_mm) EXPECT_NEAR(e, 1.0, 1e-12);
  EXPECT_NEAR(r.position.rmse, 1.0, 1e-12);
  for (double e : r.part_rmse_mm) EXPECT_NEAR(e, 1.0, 1e-12);
}

TEST(Evaluate, Errors) {
  SimulatedDataset ds = simulate(scene(3, 20));
  MouseStateTrack t = truth_track(ds);
  t.epochs.pop_back();
  try {
    evaluate(t, ds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EpochMismatch);
  }
}

TEST(Stats, Percentiles) {
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4, 5}, 50), 3.0);
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4}, 50), 2.5);
  EXPECT_DOUBLE_EQ(percentile({7}, 95), 7.0);
  const SummaryStats s = summarize({3, 4});
  EXPECT_DOUBLE_EQ(s.mean, 3.5);
  EXPECT_DOUBLE_EQ(s.rmse, std::sqrt(12.5));
  EXPECT_DOUBLE_EQ(s.max, 4.0);
}

TEST(Plot, SvgStructure) {
  const SimulatedDataset ds = simulate(scene(4, 120));
  const std::string svg = track_svg(truth_track(ds), &ds, 150.0);
  std::istringstream in(svg);
  pt::ptree tree;
  ASSERT_NO_THROW(pt::read_xml(in, tree));
  const pt::ptree& root = tree.get_child("svg");
  EXPECT_EQ(root.get<std::string>("<xmlattr>.xmlns"), "http://www.w3.org/2000/svg");
  EXPECT_EQ(root.get<std::string>("<xmlattr>.version"), "1.1");
  int paths = 0;
  for (const auto& [name, child] : root) {
    if (name != "path") continue;
    ++paths;
    EXPECT_EQ(path_vertices(child.get<std::string>("<xmlattr>.d")).size(), 120u);
  }
  EXPECT_EQ(paths, 2);
}

TEST(Plot, StationaryTrackIsOnePoint) {
  SceneConfig c = scene(5, 15);
  c.step_sigma_mm = 0.0;
  const SimulatedDataset ds = simulate(c);
  std::istringstream in(track_svg(truth_track(ds), nullptr, 150.0));
  pt::ptree tree;
  pt::read_xml(in, tree);
  const auto v = path_vertices(tree.get<std::string>("svg.path.<xmlattr>.d"));
  ASSERT_EQ(v.size(), 15u);
  for (const auto& p : v) EXPECT_EQ(p, v.front());
}

TEST(Plot, WritesArtifacts) {
  const fs::path dir = fresh_dir("plot");
  const SimulatedDataset ds = simulate(scene(6, 25, 0.2));
  const auto files = plot(truth_track(ds), ds, dir);
  EXPECT_EQ(files.size(), 5u);
  for (const auto& f : files) EXPECT_TRUE(fs::exists(f)) << f;
  const std::string csv = slurp(dir / "parameters.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 26);
  EXPECT_THROW(plot(truth_track(ds), ds, "/proc/definitely/not/writable"), Error);
}

TEST(Pipeline, ConfigRoundTrip) {
  PipelineConfig c;
  c.set_seed(17);
  c.training_datasets = 2;
  c.mode = SolveMode::Rigid;
  const nlohmann::json j = c.to_json();
  const PipelineConfig back = PipelineConfig::from_json(j);
  EXPECT_EQ(back.to_json(), j);
  EXPECT_EQ(back.scene.seed, 17u);
  EXPECT_EQ(back.training.seed, 17u);
}

TEST(Pipeline, StageLabelOnFailure) {
  PipelineConfig c;
  c.mode = SolveMode::Rigid;
  c.scene.n_epochs = 20;
  for (auto& cam : c.scene.cameras) cam.image_size = {2, 2};
  try {
    run_pipeline(c, fresh_dir("stage"), nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("stage simulate"), std::string::npos) << e.what();
  }
}

TEST(Pipeline, CheckThresholds) {
  EvaluationReport r;
  r.completeness_output = 0.4;
  r.position.rmse = 0.5;
  r.rotation.rmse = 0.5;
  const auto f = check_report(r, {});
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].rfind("completeness", 0), 0u);
}

TEST(Cli, DefaultPipelineWritesArtifacts) {
  const fs::path dir = fresh_dir("default");
  const RunResult r = run_cli("pipeline --seed 1 --check --out-dir " + dir.string(), dir);
  EXPECT_EQ(r.code, 0) << r.output;
  for (const char* f : {"config.json", "dataset.json", "cameras.json", "deform_model.json", "track.json",
                        "report.json", "track.svg", "parameters.csv", "overlay_cam0.csv"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const nlohmann::json report = io::read_json_file(dir / "report.json");
  const nlohmann::json track = io::read_json_file(dir / "track.json");
  EXPECT_EQ(report["meta"]["config_hash"], track["meta"]["config_hash"]);
  EXPECT_EQ(report["meta"]["config_hash"].get<std::string>().size(), 16u);
}

TEST(Cli, SabotagedSolverFailsCompletenessCheck) {
  const fs::path dir = fresh_dir("sabotage");
  io::write_json_file(dir / "cfg.json",
                      {{"scene", {{"n_epochs", 100}, {"occlusion", {{"random_dropout_rate", 0.9}}}}},
                       {"stochastic", {{"smoothness_weight", 0.0}, {"smoothness_weight_observed", 0.0}}},
                       {"solve", {{"mode", "rigid"}}}});
  const RunResult r = run_cli("pipeline --check --config " + (dir / "cfg.json").string() + " --out-dir " +
                                  (dir / "out").string(),
                              dir);
  EXPECT_EQ(r.code, 4) << r.output;
  EXPECT_NE(r.output.find("check failed: completeness"), std::string::npos) << r.output;
}

TEST(Cli, SubcommandsChain) {
  const fs::path dir = fresh_dir("chain");
  const std::string d = " --out-dir " + dir.string();
  ASSERT_EQ(run_cli("simulate --seed 4 --epochs 40 --dropout 0.2" + d, dir).code, 0);
  ASSERT_EQ(run_cli("simulate --seed 5 --epochs 60 --out train.json" + d, dir).code, 0);
  ASSERT_EQ(run_cli("train-deform --seed 2 --epochs 3 --data " + (dir / "train.json").string() + d, dir).code, 0);
  RunResult r = run_cli("solve --data " + (dir / "dataset.json").string() + " --cameras " +
                            (dir / "cameras.json").string() + " --deform " + (dir / "deform_model.json").string() +
                            " --mode deformed --ws 0.2" + d,
                        dir);
  ASSERT_EQ(r.code, 0) << r.output;
  const nlohmann::json track = io::read_json_file(dir / "track.json");
  EXPECT_EQ(track["format"], "mtrack-track");
  EXPECT_EQ(track["mode"], "deformed");
  EXPECT_EQ(track["epochs"].size(), 40u);
  EXPECT_TRUE(track["meta"].contains("config_hash"));
  r = run_cli("evaluate --check --track " + (dir / "track.json").string() + " --data " +
                  (dir / "dataset.json").string() + d,
              dir);
  EXPECT_EQ(r.code, 0) << r.output;
  r = run_cli("plot --track " + (dir / "track.json").string() + " --data " + (dir / "dataset.json").string() + d, dir);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir / "track.svg"));
}

TEST(Cli, ExitCodes) {
  const fs::path dir = fresh_dir("codes");
  EXPECT_EQ(run_cli("solve --data " + (dir / "missing.json").string(), dir).code, 2);
  EXPECT_EQ(run_cli("frobnicate", dir).code, 2);
  std::ofstream(dir / "bad.json") << "{\"scene\": {\"n_epochs\": 2}}";
  EXPECT_EQ(run_cli("simulate --config " + (dir / "bad.json").string() + " --out-dir " + dir.string(), dir).code, 2);

  SimulatedDataset ds = simulate(scene(7, 10));
  for (auto& o : ds.observations) {
    if (o.part >= 2) {
      o.cause = VisibilityCause::Dropout;
      o.pixel.reset();
      o.noise.reset();
    }
  }
  export_dataset(ds, dir / "empty.json");
  const RunResult r = run_cli("solve --data " + (dir / "empty.json").string() + " --out-dir " + dir.string(), dir);
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("NoSolvableEpoch"), std::string::npos);

  auto cams = ds.cameras;
  cams[1].id = 42;
  io::write_cameras(dir / "cams.json", cams);
  EXPECT_EQ(run_cli("solve --data " + (dir / "empty.json").string() + " --cameras " + (dir / "cams.json").string() +
                        " --out-dir " + dir.string(),
                    dir)
                .code,
            2);
}
