#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "uqrecon/harness.hpp"
#include "uqrecon/png_io.hpp"

using namespace uqr;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.scene.views = 10;
  c.scene.resolution = 16;
  c.methods = {Method::kActive};
  c.train.steps = 10;
  c.train.rays_per_batch = 16;
  c.train.render.samples_per_ray = 8;
  c.train.architecture.density_hidden = 8;
  c.train.architecture.color_hidden = 8;
  c.train.architecture.density_layers = 2;
  c.train.initial_gaussians = 40;
  c.train.densify_interval = 5;
  c.train.densify_from = 5;
  c.eval.samples_per_ray = 8;
  c.eval.ensemble_members = 2;
  c.eval.mc_passes = 2;
  c.eval.laplace = {2, 16, 1.0, 2, 2};
  c.eval.image_views = 1;
  c.seed = 11;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("uqrecon_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Metric columns only; protocol labels differ between runs of the same cell.
void expect_same_metrics(const ResultsRow& a, const ResultsRow& b) {
  EXPECT_EQ(a.status, b.status);
  EXPECT_EQ(a.train_views, b.train_views);
  EXPECT_EQ(a.test_views, b.test_views);
  EXPECT_EQ(a.psnr, b.psnr);
  EXPECT_EQ(a.ssim, b.ssim);
  EXPECT_EQ(a.nll, b.nll);
  EXPECT_EQ(a.ause, b.ause);
  EXPECT_EQ(a.auce, b.auce);
  EXPECT_EQ(a.mean_variance, b.mean_variance);
  EXPECT_EQ(a.depth_rmse, b.depth_rmse);
  EXPECT_EQ(a.final_loss, b.final_loss);
}

int cli(const std::vector<std::string>& args, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (err_text) *err_text = err.str();
  return code;
}

}  // namespace

TEST(ExperimentConfig, DefaultsAreValid) { EXPECT_NO_THROW(ExperimentConfig{}.validate()); }

TEST(ExperimentConfig, JsonRoundTrip) {
  ExperimentConfig c = tiny_config();
  c.methods = {Method::kVanilla, Method::kLaplace};
  c.aleatoric.noise = {0.0, 0.3};
  c.pose.constant_radiance = true;
  const std::string text = experiment_config_to_json(c);
  const ExperimentConfig back = parse_experiment_config(text);
  EXPECT_EQ(experiment_config_to_json(back), text);
  EXPECT_EQ(back.methods, c.methods);
  EXPECT_EQ(back.train.architecture, c.train.architecture);
}

TEST(ExperimentConfig, PartialDocumentKeepsDefaults) {
  const auto c = parse_experiment_config(R"({"method": "ensemble", "seed": 5})");
  EXPECT_EQ(c.methods, std::vector<Method>{Method::kEnsemble});
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.scene.resolution, 64);
  EXPECT_EQ(c.eval.rgb_min_std, 0.03);
  EXPECT_EQ(c.eval.depth_min_std, 2.0);
}

TEST(ExperimentConfig, RejectsMalformedInput) {
  EXPECT_THROW(parse_experiment_config("{"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"sede": 1})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"train": {"steps": "many"}})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"method": "bayes"})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"method": "active", "methods": ["active"]})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"representation": "cloud", "method": "laplace"})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"representation": "cloud", "method": "mc_dropout"})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"protocol": {"aleatoric": {"blur": [4]}}})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"protocol": {"aleatoric": {"noise": [-0.1]}}})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"protocol": {"views": {"fractions": [0]}}})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"protocol": {"clutter": {"proportions": [1.5]}}})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"protocol": {"pose": {"percentile": 100}}})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"eval": {"ensemble_members": 1}})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"eval": {"laplace": {"prior_precision": 0}}})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"train": {"ssim_weight": 2}})"), ConfigError);
  EXPECT_THROW(parse_experiment_config(R"({"scene": {"kind": "dataset"}})"), ConfigError);
}

TEST(ResultsTable, EmptyTableIsHeaderOnly) {
  const std::string csv = ResultsTable{}.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
  EXPECT_EQ(csv.rfind("protocol,variable,value,method,representation,status,", 0), 0u);
}

TEST(ResultsTable, SentinelsAndRoundTrip) {
  ResultsTable t;
  ResultsRow r;
  r.protocol = "aleatoric";
  r.variable = "noise";
  r.value = "0.1";
  r.method = "active";
  r.representation = "field";
  r.psnr = std::numeric_limits<double>::infinity();
  r.nll = -2.5;
  r.final_loss = std::numeric_limits<double>::quiet_NaN();
  t.rows.push_back(r);
  const std::string csv = t.to_csv();
  EXPECT_NE(csv.find(",inf,"), std::string::npos);
  EXPECT_NE(csv.find(",NA"), std::string::npos);
  const ResultsTable back = ResultsTable::from_csv(csv);
  ASSERT_EQ(back.rows.size(), 1u);
  EXPECT_TRUE(std::isinf(*back.rows[0].psnr));
  EXPECT_EQ(*back.rows[0].nll, -2.5);
  EXPECT_FALSE(back.rows[0].ssim.has_value());
  EXPECT_FALSE(back.rows[0].final_loss.has_value());
  EXPECT_EQ(back.to_csv(), csv);
  EXPECT_THROW(ResultsTable::from_csv("a,b\n"), InvalidArgument);
}

TEST(Heatmap, JetEndpoints) {
  EXPECT_TRUE(jet_color(0.0).isApprox(Vec3(0.0, 0.0, 0.5)));
  EXPECT_TRUE(jet_color(1.0).isApprox(Vec3(0.5, 0.0, 0.0)));
  EXPECT_TRUE(jet_color(0.5).isApprox(Vec3(0.5, 1.0, 0.5)));
}

TEST(Heatmap, ConstantFieldIsColormapMinimum) {
  const Image constant(9, 7, 1, 0.42);
  const Image map = jet_heatmap(constant, 0.42, 0.42);
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 9; ++x) {
      for (int c = 0; c < 3; ++c) EXPECT_EQ(map.at(x, y, c), jet_color(0.0)[c]);
    }
  }
  // Through the report writer with the default data range.
  const auto dir = temp_dir("heatmap");
  ProtocolResult result;
  result.artifacts.push_back({"h.png", Artifact::Kind::kHeatmap, constant, std::nullopt});
  emit_report(result, dir);
  const Image png = read_png_rgb(dir / "h.png");
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 9; ++x) {
      EXPECT_EQ(png.at(x, y, 0), 0.0);
      EXPECT_EQ(png.at(x, y, 1), 0.0);
      EXPECT_NEAR(png.at(x, y, 2), 0.5, 0.5 / 255.0 + 1e-12);
    }
  }
  EXPECT_NE(slurp(dir / "artifacts.json").find("\"range\""), std::string::npos);
}

TEST(EmitReport, UnwritableDirectoryThrows) {
  const auto dir = temp_dir("unwritable");
  std::ofstream(dir / "file") << "x";
  EXPECT_THROW(emit_report(ProtocolResult{}, dir / "file" / "sub"), std::runtime_error);
}

TEST(Harness, DefaultSplitHoldsOutEveryTenthView) {
  const auto c = tiny_config();
  const ViewDataset ds = default_split(build_dataset(c.scene), c.seed);
  EXPECT_EQ(ds.indices(SplitTag::kTest).size(), 1u);
  EXPECT_EQ(ds.indices(SplitTag::kTrain).size(), 9u);
}

TEST(Harness, AleatoricCleanPointsMatchStandaloneRun) {
  ExperimentConfig c = tiny_config();
  c.aleatoric.noise = {0.0};
  c.aleatoric.blur = {1};
  const auto protocol = run_protocol_aleatoric(c);
  const auto standalone = run_train_eval(c, Method::kActive);
  ASSERT_EQ(protocol.table.rows.size(), 2u);
  expect_same_metrics(protocol.table.rows[0], standalone.table.rows[0]);
  expect_same_metrics(protocol.table.rows[1], standalone.table.rows[0]);
  EXPECT_EQ(protocol.table.rows[0].variable, "noise");
  EXPECT_EQ(protocol.table.rows[1].variable, "blur");
}

TEST(Harness, NoiseChangesTheTrainedModel) {
  ExperimentConfig c = tiny_config();
  c.aleatoric.noise = {0.0, 0.2};
  c.aleatoric.blur = {};
  const auto rows = run_protocol_aleatoric(c).table.rows;
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_NE(rows[0].final_loss, rows[1].final_loss);
}

TEST(Harness, ViewsFullFractionIsDeterministicAndMatchesStandalone) {
  ExperimentConfig c = tiny_config();
  c.views.fractions = {1.0};
  const auto a = run_protocol_views(c);
  const auto b = run_protocol_views(c);
  EXPECT_EQ(a.table.to_csv(), b.table.to_csv());
  expect_same_metrics(a.table.rows[0], run_train_eval(c, Method::kActive).table.rows[0]);
}

TEST(Harness, ViewsOodAndFewView) {
  ExperimentConfig c = tiny_config();
  c.views.fractions = {};
  c.views.ood = true;
  c.views.few_view = {2};
  c.methods = {Method::kVanilla};
  const auto rows = run_protocol_views(c).table.rows;
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].value, "ood");
  EXPECT_LE(std::abs(rows[0].train_views - rows[0].test_views), 1);
  EXPECT_EQ(rows[1].train_views, 2);
  EXPECT_EQ(rows[1].test_views, 2);
}

TEST(Harness, ClutterZeroMatchesCleanAndReportsDistractors) {
  ExperimentConfig c = tiny_config();
  c.clutter.proportions = {0.0, 0.5};
  const auto rows = run_protocol_clutter(c).table.rows;
  ASSERT_EQ(rows.size(), 2u);
  expect_same_metrics(rows[0], run_train_eval(c, Method::kActive).table.rows[0]);
  EXPECT_FALSE(rows[0].distractor_std.has_value());
  ASSERT_TRUE(rows[1].distractor_std.has_value());
  ASSERT_TRUE(rows[1].clean_std.has_value());
  EXPECT_GE(*rows[1].distractor_std, 0.0);
}

TEST(Harness, ClutterNeedsSyntheticScene) {
  ExperimentConfig c = tiny_config();
  const auto dir = temp_dir("clutter_dataset");
  ASSERT_EQ(cli({"generate", "--out", (dir / "ds").string()}), 0);
  c.scene.kind = "dataset";
  c.scene.dataset = dir / "ds" / "transforms.json";
  EXPECT_THROW(run_protocol_clutter(c), ConfigError);
}

TEST(Harness, PoseZeroShiftGivesZeroDifference) {
  ExperimentConfig c = tiny_config();
  c.methods = {Method::kVanilla};
  c.pose.shifts = {0.0, 1e-4};
  const auto result = run_protocol_pose(c);
  ASSERT_EQ(result.table.rows.size(), 2u);
  EXPECT_EQ(*result.table.rows[0].grad_diff_mean, 0.0);
  EXPECT_GT(*result.table.rows[1].grad_diff_mean, 0.0);
  for (const auto& a : result.artifacts) {
    if (a.path.find("difference_shift_0.png") != std::string::npos) {
      for (double v : a.image.values()) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(Harness, PoseConstantRadianceMapsVanish) {
  ExperimentConfig c = tiny_config();
  c.scene.kind = "constant";
  c.scene.color = Vec3(0.3, 0.6, 0.2);
  c.methods = {Method::kVanilla};
  c.pose.constant_radiance = true;
  const auto result = run_protocol_pose(c);
  int maps = 0;
  for (const auto& a : result.artifacts) {
    if (a.path.find("gradient_shift") == std::string::npos) continue;
    ++maps;
    for (double v : a.image.values()) EXPECT_LT(v, 1e-8);
  }
  EXPECT_EQ(maps, 3);
}

TEST(Harness, PoseRequiresField) {
  ExperimentConfig c = tiny_config();
  c.representation = Representation::kCloud;
  c.methods = {Method::kVanilla};
  EXPECT_THROW(run_protocol_pose(c), ConfigError);
}

TEST(Harness, DivergedCellIsRecordedAndSweepContinues) {
  ExperimentConfig c = tiny_config();
  c.methods = {Method::kVanilla};
  c.train.field_lr = 1e300;
  c.train.field_lr_final = 1e300;
  c.aleatoric.noise = {0.0, 0.1};
  c.aleatoric.blur = {};
  const auto rows = run_protocol_aleatoric(c).table.rows;
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.status, "diverged");
    EXPECT_FALSE(r.psnr.has_value());
  }
  EXPECT_NE(ResultsTable{rows}.to_csv().find("diverged"), std::string::npos);
}

TEST(Harness, EveryMethodEmitsValidPredictions) {
  for (Method m : {Method::kVanilla, Method::kActive, Method::kMcDropout, Method::kLaplace, Method::kEnsemble}) {
    ExperimentConfig c = tiny_config();
    c.methods = {m};
    const auto row = run_train_eval(c, m).table.rows.at(0);
    SCOPED_TRACE(to_string(m));
    EXPECT_EQ(row.status, "ok");
    EXPECT_GE(*row.mean_variance, 0.0);
    EXPECT_GE(*row.ause, 0.0);
    EXPECT_GE(*row.auce, 0.0);
    EXPECT_TRUE(row.depth_rmse.has_value());
  }
}

TEST(Harness, CloudMethodsRun) {
  for (Method m : {Method::kVanilla, Method::kActive, Method::kEnsemble}) {
    ExperimentConfig c = tiny_config();
    c.representation = Representation::kCloud;
    c.methods = {m};
    const auto row = run_train_eval(c, m).table.rows.at(0);
    SCOPED_TRACE(to_string(m));
    EXPECT_EQ(row.status, "ok");
    EXPECT_EQ(row.representation, "cloud");
    EXPECT_TRUE(row.psnr.has_value());
  }
}

TEST(Harness, ModelRoundTripPreservesPredictions) {
  for (auto [rep, m] : std::vector<std::pair<Representation, Method>>{
           {Representation::kField, Method::kActive},
           {Representation::kField, Method::kLaplace},
           {Representation::kField, Method::kEnsemble},
           {Representation::kField, Method::kMcDropout},
           {Representation::kCloud, Method::kVanilla},
           {Representation::kCloud, Method::kEnsemble}}) {
    ExperimentConfig c = tiny_config();
    c.representation = rep;
    const ViewDataset ds = default_split(build_dataset(c.scene), c.seed);
    const TrainedMethod model = train_method(ds, c, m);
    const auto dir = temp_dir("model_" + to_string(m) + to_string(rep));
    save_model(model, dir);
    const TrainedMethod back = load_model(dir);
    SCOPED_TRACE(to_string(m) + " " + to_string(rep));
    EXPECT_EQ(back.method, m);
    EXPECT_EQ(back.representation, rep);
    const auto& pose = ds.views.back().pose;
    const auto a = predict_view(model, pose, c, 3);
    const auto b = predict_view(back, pose, c, 3);
    EXPECT_EQ(a.color, b.color);
    EXPECT_EQ(a.color_variance, b.color_variance);
    EXPECT_EQ(a.depth_variance, b.depth_variance);
  }
  EXPECT_THROW(load_model(temp_dir("empty_model")), IoError);
}

TEST(Harness, ConstantColorFieldIgnoresInputs) {
  const MlpField f = with_constant_color(MlpField::initialized(FieldArchitecture{}, 2), Vec3(0.25, 0.5, 0.75));
  Eigen::Matrix3Xd x = Eigen::Matrix3Xd::Random(3, 5), d = Eigen::Matrix3Xd::Random(3, 5);
  const auto out = field_forward(f, x, d);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(out.color(0, i), 0.25, 1e-12);
    EXPECT_NEAR(out.color(1, i), 0.5, 1e-12);
    EXPECT_NEAR(out.color(2, i), 0.75, 1e-12);
  }
}

TEST(Harness, EvaluateViewOfPerfectPrediction) {
  const auto c = tiny_config();
  const ViewDataset ds = build_dataset(c.scene);
  const View& v = ds.views[0];
  UncertainPrediction p(v.rgb.width(), v.rgb.height());
  p.color = v.rgb;
  p.depth = *v.depth;
  const auto m = evaluate_view(p, v, Representation::kField, c.eval);
  EXPECT_TRUE(std::isinf(m.report.psnr));
  EXPECT_NEAR(m.report.ssim, 1.0, 1e-12);
  EXPECT_NEAR(m.report.nll, 0.5 * std::log(2.0 * M_PI * 0.0009), 1e-12);
  EXPECT_EQ(m.report.ause, 0.0);
  EXPECT_NEAR(m.report.auce, 0.5, 1e-12);
  EXPECT_EQ(*m.report.depth_rmse, 0.0);
  EXPECT_EQ(m.mean_variance, 0.0);
}

TEST(Harness, CloudDepthUsesZDepth) {
  const auto c = tiny_config();
  const ViewDataset ds = build_dataset(c.scene);
  const View& v = ds.views[0];
  UncertainPrediction p(v.rgb.width(), v.rgb.height());
  p.color = v.rgb;
  const Vec3 axis = v.pose.optical_axis();
  for (int y = 0; y < v.pose.height; ++y) {
    for (int x = 0; x < v.pose.width; ++x) {
      p.depth.at(x, y) = v.depth->at(x, y) * generate_ray(v.pose, x, y, 1e-6, 1.0).direction.dot(axis);
    }
  }
  EXPECT_NEAR(*evaluate_view(p, v, Representation::kCloud, c.eval).report.depth_rmse, 0.0, 1e-12);
  EXPECT_GT(*evaluate_view(p, v, Representation::kField, c.eval).report.depth_rmse, 1e-3);
}

TEST(Cli, ExitCodes) {
  std::string err;
  EXPECT_EQ(cli({}, &err), 1);
  EXPECT_EQ(cli({"experiment", "aleatoric", "--bogus"}), 1);
  EXPECT_EQ(cli({"experiment", "nonsense"}), 1);
  EXPECT_EQ(cli({"experiment", "aleatoric", "--config", "/nonexistent/c.json"}, &err), 1);
  EXPECT_NE(err.find("c.json"), std::string::npos);
  EXPECT_EQ(cli({"eval", "--model", "/nonexistent/model"}), 1);
  EXPECT_EQ(cli({"report", "--out", "/nonexistent/dir"}), 1);
  EXPECT_EQ(cli({"--help"}), 0);

  const auto dir = temp_dir("cli_codes");
  std::ofstream(dir / "bad.json") << R"({"seed": 1, "typo": 2})";
  EXPECT_EQ(cli({"experiment", "views", "--config", (dir / "bad.json").string()}), 1);
  // Output path below a regular file cannot be created: runtime failure.
  std::ofstream(dir / "file") << "x";
  std::ofstream(dir / "tiny.json") << experiment_config_to_json(tiny_config());
  ExperimentConfig c = tiny_config();
  c.aleatoric.noise = {0.0};
  c.aleatoric.blur = {};
  std::ofstream(dir / "one.json") << experiment_config_to_json(c);
  EXPECT_EQ(cli({"experiment", "aleatoric", "--config", (dir / "one.json").string(), "--out",
                 (dir / "file" / "out").string()}),
            2);
}

TEST(Cli, ExperimentSeedAndReport) {
  const auto dir = temp_dir("cli_experiment");
  ExperimentConfig c = tiny_config();
  c.aleatoric.noise = {0.0, 0.1};
  c.aleatoric.blur = {};
  std::ofstream(dir / "c.json") << experiment_config_to_json(c);
  const std::string cfg = (dir / "c.json").string();
  ASSERT_EQ(cli({"experiment", "aleatoric", "--config", cfg, "--seed", "7", "--out", (dir / "a").string()}), 0);
  ASSERT_EQ(cli({"experiment", "aleatoric", "--config", cfg, "--seed", "7", "--out", (dir / "b").string()}), 0);
  ASSERT_EQ(cli({"experiment", "aleatoric", "--config", cfg, "--seed", "8", "--out", (dir / "c").string()}), 0);
  const std::string a = slurp(dir / "a" / "results.csv");
  EXPECT_EQ(a, slurp(dir / "b" / "results.csv"));
  EXPECT_NE(a, slurp(dir / "c" / "results.csv"));
  EXPECT_EQ(parse_experiment_config(slurp(dir / "a" / "config.json")).seed, 7u);
  EXPECT_TRUE(std::filesystem::exists(dir / "a" / "artifacts.json"));

  ASSERT_EQ(cli({"report", "--out", (dir / "a").string()}), 0);
  const std::string summary = slurp(dir / "a" / "summary.md");
  EXPECT_NE(summary.find("## aleatoric"), std::string::npos);
  EXPECT_NE(summary.find("noise=0.1"), std::string::npos);
}

TEST(Cli, TrainEvalMatchesProtocolCleanPoint) {
  const auto dir = temp_dir("cli_train_eval");
  ExperimentConfig c = tiny_config();
  c.aleatoric.noise = {0.0};
  c.aleatoric.blur = {};
  std::ofstream(dir / "c.json") << experiment_config_to_json(c);
  const std::string cfg = (dir / "c.json").string();
  ASSERT_EQ(cli({"train", "--config", cfg, "--out", (dir / "model").string()}), 0);
  ASSERT_EQ(cli({"eval", "--config", cfg, "--model", (dir / "model").string(), "--out", (dir / "eval").string()}), 0);
  ASSERT_EQ(cli({"render", "--config", cfg, "--model", (dir / "model").string(), "--out", (dir / "render").string()}), 0);
  ASSERT_EQ(cli({"experiment", "aleatoric", "--config", cfg, "--out", (dir / "exp").string()}), 0);
  const auto eval_rows = ResultsTable::from_csv(slurp(dir / "eval" / "results.csv")).rows;
  const auto exp_rows = ResultsTable::from_csv(slurp(dir / "exp" / "results.csv")).rows;
  ASSERT_EQ(eval_rows.size(), 1u);
  ASSERT_EQ(exp_rows.size(), 1u);
  expect_same_metrics(eval_rows[0], exp_rows[0]);
  EXPECT_TRUE(std::filesystem::exists(dir / "render" / "eval" / "none_0" / "active" / "view009_render.png"));
}

TEST(Cli, GenerateWritesLoadableDataset) {
  const auto dir = temp_dir("cli_generate");
  ASSERT_EQ(cli({"generate", "--out", (dir / "ds").string(), "--seed", "2"}), 0);
  ExperimentConfig c = tiny_config();
  c.scene.kind = "dataset";
  c.scene.dataset = dir / "ds" / "transforms.json";
  const ViewDataset loaded = build_dataset(c.scene);
  EXPECT_EQ(loaded.views.size(), 20u);
  EXPECT_EQ(loaded.indices(SplitTag::kTest).size(), 2u);
  // Stored tags win over the default split.
  EXPECT_EQ(default_split(loaded, 99).indices(SplitTag::kTest), loaded.indices(SplitTag::kTest));
}

TEST(Cli, CloudCannotTrainLaplace) {
  const auto dir = temp_dir("cli_cloud");
  std::ofstream(dir / "c.json") << R"({"representation": "cloud"})";
  EXPECT_EQ(cli({"train", "--config", (dir / "c.json").string(), "--method", "laplace", "--out",
                 (dir / "m").string()}),
            1);
}
