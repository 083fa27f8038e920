#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "uqrecon/dataset.hpp"
#include "uqrecon/methods.hpp"
#include "uqrecon/metrics.hpp"
#include "uqrecon/scene.hpp"

namespace uqr {

// A configuration file or value the user supplied is malformed.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

enum class Method { kVanilla, kActive, kMcDropout, kLaplace, kEnsemble };
enum class Protocol { kAleatoric, kViews, kClutter, kPose };

std::string to_string(Method method);
std::string to_string(Protocol protocol);
std::string to_string(Representation representation);
Method parse_method(const std::string& name);
Protocol parse_protocol(const std::string& name);
Representation parse_representation(const std::string& name);

struct SceneSpec {
  std::string kind = "default";  // default | sphere | constant | dataset
  std::filesystem::path dataset;  // transforms.json, kind == "dataset"
  int views = 20;
  int resolution = 64;
  double ring_radius = 4.0;
  double elevation = 0.3;
  double focal_factor = 1.2;  // focal length in units of the resolution
  double sphere_radius = 1.0;
  Vec3 color = Vec3(0.8, 0.35, 0.2);  // sphere albedo, or the constant colour
};

struct AleatoricParams {
  std::vector<double> noise{0.0, 0.1, 0.2};
  std::vector<int> blur{1, 7, 15};
};

struct ViewsParams {
  std::vector<double> fractions{0.1, 0.25, 0.5, 1.0};
  bool ood = false;
  std::vector<int> few_view;
};

struct ClutterParams {
  std::vector<double> proportions{0.0, 0.25, 0.5, 0.75, 1.0};
};

struct PoseParams {
  std::vector<double> shifts{1e-6, 1e-4};
  double percentile = 95.0;
  int view = -1;  // dataset view index; -1 = first test view
  // Replace the trained colour head by the constant scene colour (density is
  // kept), which makes the rendered radiance independent of the pose.
  bool constant_radiance = false;
};

struct LaplaceSettings {
  int batches = 100;
  int rays_per_batch = 4096;
  double prior_precision = 1.0;
  int weight_draws = 100;
  int density_draws = 100;
};

struct EvalSettings {
  int samples_per_ray = 64;
  int mc_passes = 5;
  double dropout = 0.2;
  int ensemble_members = 5;
  LaplaceSettings laplace;
  double rgb_min_std = 0.03;
  double depth_min_std = 2.0;
  int ause_steps = 100;
  int auce_levels = 100;
  int image_views = 1;  // test views written as PNGs per cell
};

struct ExperimentConfig {
  SceneSpec scene;
  Representation representation = Representation::kField;
  std::vector<Method> methods{Method::kActive};
  AleatoricParams aleatoric;
  ViewsParams views;
  ClutterParams clutter;
  PoseParams pose;
  TrainConfig train;
  EvalSettings eval;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

// Reads a JSON document; absent keys keep their defaults, unknown keys and
// wrong types throw ConfigError.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
// Every resolved setting, suitable for parse_experiment_config.
std::string experiment_config_to_json(const ExperimentConfig& config);

// Ground-truth dataset of the configured scene (all views tagged train), or
// the loaded dataset with its stored tags.
ViewDataset build_dataset(const SceneSpec& scene);
// Synthetic scene described by these settings; nullopt for external datasets.
std::optional<SceneModel> scene_model(const SceneSpec& scene);
// Train/test assignment used by every protocol except `views`: stored tags
// when the dataset has test views, otherwise every 10th view is test.
ViewDataset default_split(const ViewDataset& dataset, std::uint64_t seed);

// A trained model of one method.
struct TrainedMethod {
  Method method = Method::kVanilla;
  Representation representation = Representation::kField;
  std::variant<MlpField, GaussianCloud, FieldEnsemble, CloudEnsemble, LaplacePosterior> model;
  double final_loss = 0.0;
};

// Trains on the train views of `dataset`. mc_dropout trains with the
// evaluation dropout rate; laplace fits its posterior afterwards.
TrainedMethod train_method(const ViewDataset& dataset, const ExperimentConfig& config, Method method);
UncertainPrediction predict_view(const TrainedMethod& model, const CameraPose& camera,
                                 const ExperimentConfig& config, std::uint64_t seed);
// The field used for pose gradients (the mode for laplace, member 0 for
// ensembles). Throws for clouds.
const MlpField& representative_field(const TrainedMethod& model);

void save_model(const TrainedMethod& model, const std::filesystem::path& dir);
TrainedMethod load_model(const std::filesystem::path& dir);

// Colour weights of the last colour layer zeroed and its bias set so the
// field emits `color` everywhere; density is untouched.
MlpField with_constant_color(const MlpField& field, const Vec3& color);

struct ViewMetrics {
  MetricsReport report;
  double mean_variance = 0.0;
};

// Metrics of one prediction against one ground-truth view. Depth metrics are
// computed on pixels with ground-truth depth; for clouds the ray-distance
// ground truth is converted to z-depth.
ViewMetrics evaluate_view(const UncertainPrediction& prediction, const View& truth,
                          Representation representation, const EvalSettings& settings);

struct ResultsRow {
  std::string protocol;
  std::string variable;
  std::string value;
  std::string method;
  std::string representation;
  std::string status = "ok";
  int train_views = 0;
  int test_views = 0;
  std::optional<double> psnr;
  std::optional<double> ssim;
  std::optional<double> nll;
  std::optional<double> ause;
  std::optional<double> auce;
  std::optional<double> mean_variance;
  std::optional<double> depth_rmse;
  std::optional<double> depth_nll;
  std::optional<double> depth_ause;
  std::optional<double> depth_auce;
  std::optional<double> distractor_std;
  std::optional<double> clean_std;
  std::optional<double> grad_diff_mean;
  std::optional<double> final_loss;
};

struct ResultsTable {
  std::vector<ResultsRow> rows;

  static const std::vector<std::string>& columns();
  // Fixed column order; absent cells are "NA", infinities "inf"/"-inf".
  std::string to_csv() const;
  static ResultsTable from_csv(const std::string& text);
};

// An image produced by a protocol, written by emit_report.
struct Artifact {
  enum class Kind { kColor, kHeatmap, kGray };
  std::string path;  // relative to the output directory
  Kind kind = Kind::kColor;
  Image image;       // single channel for heatmaps
  // Heatmap/gray range; defaults to the data min/max.
  std::optional<std::pair<double, double>> range;
};

struct ProtocolResult {
  ResultsTable table;
  std::vector<Artifact> artifacts;
};

using ProgressSink = std::function<void(const std::string&)>;

ProtocolResult run_protocol_aleatoric(const ExperimentConfig& config, const ProgressSink& log = {});
ProtocolResult run_protocol_views(const ExperimentConfig& config, const ProgressSink& log = {});
ProtocolResult run_protocol_clutter(const ExperimentConfig& config, const ProgressSink& log = {});
ProtocolResult run_protocol_pose(const ExperimentConfig& config, const ProgressSink& log = {});
ProtocolResult run_protocol(Protocol protocol, const ExperimentConfig& config,
                            const ProgressSink& log = {});

// Train once on the default split and evaluate on its test views; the row
// matches the clean point of every protocol.
ProtocolResult run_train_eval(const ExperimentConfig& config, Method method,
                              const ProgressSink& log = {});
// Evaluation of an already trained model on the default split's test views.
ProtocolResult evaluate_model(const TrainedMethod& model, const ExperimentConfig& config);

// RGB for t in [0,1]: dark blue at 0 through cyan, yellow to dark red at 1.
Vec3 jet_color(double t);
// Jet rendering of a single-channel image over [lo, hi]; hi <= lo maps
// everything to the colormap minimum.
Image jet_heatmap(const Image& values, double lo, double hi);

// Writes results.csv, every artifact as PNG, artifacts.json (path, kind and
// value range of each image) and, when given, config.json. Throws
// std::runtime_error when the directory cannot be written.
void emit_report(const ProtocolResult& result, const std::filesystem::path& out_dir,
                 const ExperimentConfig* config = nullptr);

// Markdown summary of a results table, one section per protocol.
std::string summarize_results(const ResultsTable& table);

// Process-wide allocator setting for long training runs: keeps the
// per-step matrices (a few MB each) on the heap instead of mapping and
// unmapping them on every step, which otherwise costs about a third of the
// run in page faults. No-op outside glibc. Call once from main().
void tune_process_allocator();

}  // namespace uqr
