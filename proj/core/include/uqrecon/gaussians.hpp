#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "uqrecon/camera.hpp"
#include "uqrecon/compositing.hpp"
#include "uqrecon/dataset.hpp"

namespace uqr {

using Quat = Eigen::Vector4d;  // (w, x, y, z)

struct Gaussian3D {
  Vec3 mean = Vec3::Zero();
  Vec3 scale = Vec3::Constant(0.1);
  Quat rotation = Quat(1.0, 0.0, 0.0, 0.0);
  double opacity_raw = 0.0;  // opacity = sigmoid(opacity_raw)
  Vec3 color = Vec3::Constant(0.5);
  double beta_raw = -5.0;    // beta = softplus(beta_raw) + floor

  double opacity() const;
  double beta(double floor) const;
  // R diag(s^2) R^T with R from the normalized quaternion.
  Mat3 covariance() const;
};

Mat3 quaternion_to_rotation(const Quat& q);

struct GaussianCloud {
  std::vector<Gaussian3D> gaussians;
  // Densification statistics: summed screen-space positional gradient norms
  // and the number of views each Gaussian was visible in.
  std::vector<double> grad_accum;
  std::vector<int> grad_count;
  double beta_floor = 1e-6;

  std::size_t size() const noexcept { return gaussians.size(); }
  void reset_statistics();
};

struct ProjectedGaussian {
  Vec2 mean = Vec2::Zero();        // pixels
  Mat2 covariance = Mat2::Zero();  // pixels^2, unregularized J W Sigma W^T J^T
  double depth = 0.0;              // camera-space depth along the viewing axis
  std::size_t source = 0;
};

struct RasterConfig {
  Vec3 background = Vec3::Ones();
  double eps2d = 0.3;       // added to the 2D covariance diagonal
  double z_min = 0.01;      // Gaussians closer than this are culled
  double alpha_max = 0.999;
  double alpha_min = 1.0 / 255.0;  // contributions below are skipped (0 disables)
  double extent_sigmas = 3.0;      // footprint radius in std devs (0 = whole image)
  VarianceWeighting variance_weighting = VarianceWeighting::kLinear;
};

// Perspective projection with the affine (Jacobian) approximation of the
// covariance. Returns nullopt when the mean is closer than z_min (culled).
std::optional<ProjectedGaussian> project_gaussian(const Gaussian3D& g, const CameraPose& camera,
                                                  double z_min = 0.01);

// o * exp(-1/2 (p - mu')^T (Sigma' + eps I)^{-1} (p - mu')), capped at alpha_max.
double splat_alpha(const ProjectedGaussian& pg, double opacity, const Vec2& pixel,
                   double eps2d = 0.3, double alpha_max = 0.999);

// Everything rasterize_backward needs from the forward pass.
struct RasterState {
  int width = 0;
  int height = 0;
  std::size_t cloud_size = 0;
  std::vector<std::optional<ProjectedGaussian>> projected;
  std::vector<std::vector<std::uint32_t>> pixel_lists;  // sorted front to back
};

struct RasterOutput {
  RenderedImage image;
  RasterState state;
};

// Global per-view depth sort (ties by index) and front-to-back alpha
// compositing of colour, variance (beta weighting per config), z-depth and
// z-depth variance. Remaining transmittance composites the background.
RasterOutput rasterize(const GaussianCloud& cloud, const CameraPose& camera,
                       const RasterConfig& config = {});

struct GaussianGradient {
  Vec3 mean = Vec3::Zero();
  Vec3 scale = Vec3::Zero();
  Quat rotation = Quat::Zero();
  double opacity_raw = 0.0;
  Vec3 color = Vec3::Zero();
  double beta_raw = 0.0;
  Vec2 mean2d = Vec2::Zero();  // dL/d(projected mean), for densification
};

// Exact gradients of sum(upstream . rendered) w.r.t. every Gaussian
// parameter. `upstream` must have the rendered image's shape.
std::vector<GaussianGradient> rasterize_backward(const GaussianCloud& cloud,
                                                 const CameraPose& camera,
                                                 const RasterConfig& config,
                                                 const RasterState& state,
                                                 const RenderedImage& upstream);

struct DensifyThresholds {
  double grad = 2e-4;          // mean NDC positional-gradient norm
  double opacity = 0.005;      // prune below
  double max_size = 1.0;       // prune when max scale exceeds (world units)
  double dense_scale = 0.01;   // clone at or below this max scale, split above
  double split_divisor = 1.6;
  std::uint64_t seed = 0;
};

// Clones/splits Gaussians whose mean accumulated gradient exceeds the
// threshold, prunes transparent and oversized ones, and resets statistics.
// Throws std::runtime_error if nothing survives. `origin`, when given,
// receives the source index of every output Gaussian.
GaussianCloud densify_and_prune(const GaussianCloud& cloud, const DensifyThresholds& thresholds,
                                std::vector<std::size_t>* origin = nullptr);

// N0 Gaussians at random ground-truth surface points of the views (from
// their depth images), coloured by the pixel, with isotropic scale equal to
// the mean distance to the three nearest neighbours.
GaussianCloud init_cloud_from_views(const ViewDataset& dataset, int count, std::uint64_t seed,
                                    double initial_opacity = 0.1, double initial_beta = 0.01);

void save_cloud(const GaussianCloud& cloud, const std::filesystem::path& path);
GaussianCloud load_cloud(const std::filesystem::path& path);
// ASCII PLY with vertex positions and 8-bit colours.
void export_cloud_ply(const GaussianCloud& cloud, const std::filesystem::path& path);

}  // namespace uqr
