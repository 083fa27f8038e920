#pragma once

#include <optional>
#include <span>
#include <vector>

#include "uqrecon/image.hpp"

namespace uqr {

// 10 log10(1 / MSE) for [0,1] images; +inf when the images are identical.
double psnr(const Image& pred, const Image& gt);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

// Gaussian-windowed SSIM over every fully contained window position
// (no padding), averaged over positions and channels.
double ssim(const Image& pred, const Image& gt, const SsimParams& params = {});
// Same, also writing d(ssim)/d(pred) into `grad` (pred's shape).
double ssim_with_gradient(const Image& pred, const Image& gt, Image& grad,
                          const SsimParams& params = {});

// Mean over pixels and channels of 0.5 log(2 pi s^2) + (y - mu)^2 / (2 s^2),
// s = max(sqrt(variance), min_std). `mask`, when given, selects pixels.
double gaussian_nll(const Image& mean, const Image& variance, const Image& gt, double min_std,
                    const Mask* mask = nullptr);

struct SparsificationCurve {
  std::vector<double> fractions;
  std::vector<double> by_uncertainty;  // normalized by the full-set mean error
  std::vector<double> by_oracle;
};

struct AuseResult {
  SparsificationCurve curve;
  double value = 0.0;
};

// Area between the uncertainty- and error-ranked sparsification curves on
// the grid j/steps, j = 0..steps-1 (trapezoid). All-zero errors give 0.
AuseResult ause(std::span<const double> errors, std::span<const double> uncertainties,
                int steps = 100);

struct CoverageCurve {
  std::vector<double> levels;     // k/(n+1), k = 1..n
  std::vector<double> coverages;  // fraction inside mu +- z_{(p+1)/2} std
};

struct AuceResult {
  CoverageCurve curve;
  double value = 0.0;
};

// Area of |coverage - p| over p in [0,1] by trapezoid on the level grid,
// with the coverage held constant from the outermost levels to 0 and 1.
AuceResult auce(std::span<const double> mean, std::span<const double> std_dev,
                std::span<const double> target, int levels = 100);

// Standard normal quantile.
double normal_quantile(double p);

// RMSE over the pixels selected by `mask`.
double depth_rmse(const Image& pred, const Image& gt, const Mask& mask);

struct MetricsReport {
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> lpips;  // not computed
  double nll = 0.0;
  double ause = 0.0;
  double auce = 0.0;
  std::optional<double> depth_rmse;
  std::optional<double> depth_nll;
  std::optional<double> depth_ause;
  std::optional<double> depth_auce;
};

}  // namespace uqr
