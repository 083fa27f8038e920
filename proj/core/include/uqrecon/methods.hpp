#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "uqrecon/dataset.hpp"
#include "uqrecon/field.hpp"
#include "uqrecon/gaussians.hpp"
#include "uqrecon/render.hpp"

namespace uqr {

// Per-group Adam learning rates for a Gaussian cloud. The mean rate is
// multiplied by the scene extent and decays exponentially to mean_final.
struct CloudLearningRates {
  double mean = 1.6e-4;
  double mean_final = 1.6e-6;
  double log_scale = 5e-3;
  double rotation = 1e-3;
  double opacity_raw = 5e-2;
  double color = 2.5e-3;
  double beta_raw = 5e-3;
};

struct TrainConfig {
  int steps = 2000;
  int rays_per_batch = 256;
  double field_lr = 1e-3;
  double field_lr_final = 1e-4;  // exponential decay target
  CloudLearningRates cloud_lr;
  double density_l1 = 0.01;      // lambda, active field
  double opacity_l1 = 0.01;      // lambda_r, active cloud
  double ssim_weight = 0.2;      // lambda_ssim, cloud objectives
  double dropout = 0.0;          // MC-dropout training rate (field)
  // Variance floor inside the heteroscedastic losses only. It decays
  // exponentially from the initial to the final value over the run; a large
  // early floor keeps the log-variance term from emptying the scene before
  // any geometry has formed.
  double loss_variance_floor_initial = 0.1;
  double loss_variance_floor = 1e-4;
  FieldArchitecture architecture;
  RenderConfig render{.samples_per_ray = 32, .stratified = true};
  RasterConfig raster;
  // Gaussian cloud schedule.
  int initial_gaussians = 1500;
  double initial_opacity = 0.1;
  double initial_beta = 0.01;
  int densify_interval = 100;
  int densify_from = 100;
  int densify_until = -1;  // -1: half of the steps
  DensifyThresholds densify;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Representation { kField, kCloud };

struct FieldTrainResult {
  MlpField field;
  double final_loss = 0.0;
};

struct CloudTrainResult {
  GaussianCloud cloud;
  double final_loss = 0.0;
};

// MSE on colours (field) or (1-l) L1 + l D-SSIM (cloud). With
// cfg.dropout > 0 the field trains with per-ray dropout masks.
FieldTrainResult train_vanilla_field(const ViewDataset& dataset, const TrainConfig& cfg);
CloudTrainResult train_vanilla_cloud(const ViewDataset& dataset, const TrainConfig& cfg);

using TrainedModel = std::variant<MlpField, GaussianCloud>;
TrainedModel train_vanilla(const ViewDataset& dataset, const TrainConfig& cfg,
                           Representation representation);

// Heteroscedastic NLL with the rendered variance (squared weights) plus a
// density L1 term; the field gets a beta head.
FieldTrainResult train_active_field(const ViewDataset& dataset, const TrainConfig& cfg);
// (1-l) NLL with the rasterized variance (linear weights) + l D-SSIM plus an
// opacity L1 term.
CloudTrainResult train_active_cloud(const ViewDataset& dataset, const TrainConfig& cfg);

struct UncertainPrediction {
  Image color;           // 3 channels
  Image color_variance;  // 3 channels
  Image depth;           // 1 channel
  Image depth_variance;  // 1 channel

  UncertainPrediction() = default;
  UncertainPrediction(int width, int height)
      : color(width, height, 3), color_variance(width, height, 3), depth(width, height, 1),
        depth_variance(width, height, 1) {}
  static UncertainPrediction from_render(const RenderedImage& image);
};

// Deterministic render; variance is the rendered beta variance when the
// model carries one, zero otherwise.
UncertainPrediction predict_single(const MlpField& field, const CameraPose& camera,
                                   const RenderConfig& config);
UncertainPrediction predict_single(const GaussianCloud& cloud, const CameraPose& camera,
                                   const RasterConfig& config);

// Sample mean and biased variance (1/M normalization) of M renders, each
// with one dropout mask pair shared by every ray of the pass.
UncertainPrediction predict_mc_dropout(const MlpField& field, const CameraPose& camera,
                                       const RenderConfig& config, int passes = 5, double p = 0.2,
                                       std::uint64_t seed = 0);

// Diagonal generalized Gauss-Newton accumulator: add() takes per-example
// Jacobian rows (outputs x params) under a unit-variance Gaussian likelihood.
class GgnAccumulator {
 public:
  explicit GgnAccumulator(std::size_t params) : diagonal_(params, 0.0) {}
  void add(const Eigen::MatrixXd& jacobian);
  const std::vector<double>& diagonal() const noexcept { return diagonal_; }
  std::vector<double>& diagonal() noexcept { return diagonal_; }

 private:
  std::vector<double> diagonal_;
};

// Index of every parameter treated probabilistically: the weights and
// biases of the last density layer and the last colour layer.
std::vector<std::size_t> last_layer_parameters(const MlpField& field);

struct LaplacePosterior {
  MlpField mode;
  std::vector<std::size_t> indices;  // into mode.params()
  std::vector<double> ggn;           // diagonal GGN per index
  double prior_precision = 1.0;

  double precision(std::size_t k) const { return ggn[k] + prior_precision; }
  double variance(std::size_t k) const { return 1.0 / precision(k); }
};

struct LaplaceFitConfig {
  int batches = 100;
  int rays_per_batch = 4096;
  double prior_precision = 1.0;
  RenderConfig render{.samples_per_ray = 32};
  std::uint64_t seed = 0;
};

// Accumulates the diagonal GGN of the rendered train-pixel colours w.r.t.
// the last-layer parameters from per-ray Jacobians.
LaplacePosterior fit_laplace(const MlpField& field, const ViewDataset& dataset,
                             const LaplaceFitConfig& config);

// M weight draws give each sample point an empirical colour mean and
// variance, composited with squared weights of the mode density. Depth uses
// L density draws per point (Gaussian in the mean/variance of the M draws,
// clamped at 0) whose rendering weights are averaged.
UncertainPrediction predict_laplace(const LaplacePosterior& posterior, const CameraPose& camera,
                                    const RenderConfig& config, int weight_draws = 100,
                                    int density_draws = 100, std::uint64_t seed = 0);

template <typename Model>
struct Ensemble {
  std::vector<Model> members;
  std::vector<std::uint64_t> seeds;
};

using FieldEnsemble = Ensemble<MlpField>;
using CloudEnsemble = Ensemble<GaussianCloud>;

// Member m trains the vanilla objective with its own seed derived from
// (cfg.seed, m); a failing member is reported by index.
FieldEnsemble train_field_ensemble(const ViewDataset& dataset, const TrainConfig& cfg,
                                   int members = 5);
CloudEnsemble train_cloud_ensemble(const ViewDataset& dataset, const TrainConfig& cfg,
                                   int members = 5);

UncertainPrediction predict_ensemble(const FieldEnsemble& ensemble, const CameraPose& camera,
                                     const RenderConfig& config);
UncertainPrediction predict_ensemble(const CloudEnsemble& ensemble, const CameraPose& camera,
                                     const RasterConfig& config);

// Per-pixel mean and biased variance over a set of renders (fixed order).
UncertainPrediction combine_renders(const std::vector<RenderedImage>& renders);

}  // namespace uqr
