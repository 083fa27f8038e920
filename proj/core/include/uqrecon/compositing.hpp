#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "uqrecon/camera.hpp"
#include "uqrecon/image.hpp"
#include "uqrecon/rng.hpp"

namespace uqr {

struct RaySamples {
  std::vector<double> t;      // strictly increasing, inside [t_near, t_far]
  std::vector<double> delta;  // t[i+1] - t[i]; last is t_far - t[n-1]
};

// N uniform bins over [t_near, t_far]; one sample per bin at the bin
// midpoint, or uniformly jittered inside the bin when `stratified`.
RaySamples sample_ray(const Ray& ray, int n, bool stratified, Rng& rng);
RaySamples sample_ray(const Ray& ray, int n, bool stratified, std::uint64_t seed);

struct CompositeWeights {
  std::vector<double> transmittance;  // T_i = prod_{j<i} (1 - alpha_j)
  std::vector<double> alpha;          // 1 - exp(-sigma_i delta_i)
  double residual = 1.0;              // T_{N+1}
};

CompositeWeights composite_weights(std::span<const double> sigma, std::span<const double> delta);

// Variance compositing: squared weights sum T^2 a^2 beta (field rendering)
// or linear weights sum T a beta (splat rasterization).
enum class VarianceWeighting { kSquared, kLinear };

struct RenderedPixel {
  Vec3 color = Vec3::Zero();
  Vec3 color_variance = Vec3::Zero();
  double depth = 0.0;
  double depth_variance = 0.0;
  double accumulation = 0.0;
};

// Per-sample values along one ray. `beta` holds one value per sample
// (shared by the three channels) or is empty (variance reported as 0).
struct PixelSamples {
  std::span<const double> sigma;
  const Eigen::Matrix3Xd* color = nullptr;  // 3 x n, or a block of a wider matrix via `color_offset`
  Eigen::Index color_offset = 0;
  std::span<const double> beta;
  std::span<const double> t;
  std::span<const double> delta;
};

// color = sum w_i c_i + T_{N+1} background, w_i = T_i alpha_i;
// color_variance = sum w_i^2 beta_i (squared) or sum w_i beta_i (linear);
// depth = sum w_i t_i; depth_variance = sum w_i (t_i - depth)^2;
// accumulation = sum w_i.
RenderedPixel composite_pixel(const PixelSamples& samples, const Vec3& background,
                              VarianceWeighting weighting = VarianceWeighting::kSquared);

// Upstream gradient of a scalar loss w.r.t. each RenderedPixel output.
struct PixelGradient {
  Vec3 color = Vec3::Zero();
  Vec3 color_variance = Vec3::Zero();
  double depth = 0.0;
  double depth_variance = 0.0;
  double accumulation = 0.0;
};

struct SampleGradients {
  std::vector<double> sigma;
  Eigen::Matrix3Xd color;
  std::vector<double> beta;
};

// Exact reverse pass of composite_pixel.
SampleGradients composite_pixel_backward(const PixelSamples& samples, const Vec3& background,
                                         const PixelGradient& upstream,
                                         VarianceWeighting weighting = VarianceWeighting::kSquared);

// Whole-image render products.
struct RenderedImage {
  Image color;           // 3 channels
  Image color_variance;  // 3 channels
  Image depth;           // 1 channel
  Image depth_variance;  // 1 channel
  Image accumulation;    // 1 channel

  RenderedImage() = default;
  RenderedImage(int width, int height)
      : color(width, height, 3),
        color_variance(width, height, 3),
        depth(width, height, 1),
        depth_variance(width, height, 1),
        accumulation(width, height, 1) {}
  void set(int x, int y, const RenderedPixel& p);
};

}  // namespace uqr
