#pragma once

#include <cstdint>

#include "uqrecon/compositing.hpp"
#include "uqrecon/field.hpp"

namespace uqr {

struct RenderConfig {
  int samples_per_ray = 64;
  double t_near = 2.0;
  double t_far = 6.0;
  bool stratified = false;
  std::uint64_t seed = 0;
  Vec3 background = Vec3::Ones();
  VarianceWeighting variance_weighting = VarianceWeighting::kSquared;
  int rays_per_chunk = 128;
};

// Renders every pixel of `camera` through the field: ray generation,
// sampling, batched field evaluation and compositing. Deterministic for a
// fixed config (stratified jitter is seeded per pixel from config.seed).
RenderedImage render_field(const MlpField& field, const CameraPose& camera,
                           const RenderConfig& config, const DropoutMasks* masks = nullptr);

// Per-pixel sample positions/directions for a set of rays, laid out ray-major.
struct RayBatch {
  std::vector<Ray> rays;
  std::vector<RaySamples> samples;
  Eigen::Matrix3Xd positions;
  Eigen::Matrix3Xd directions;
  int samples_per_ray = 0;
};
RayBatch make_ray_batch(std::vector<Ray> rays, const RenderConfig& config,
                        const std::vector<std::uint64_t>& ray_seeds);

enum class PoseGradientNorm {
  kStacked,          // 2-norm of all 3 x 12 partials
  kPerChannelMean,   // mean over channels of each channel's 12-entry 2-norm
};

// Per-pixel norm of d(rendered colour)/d(P) for the 12 extrinsic entries.
Image pose_gradient_map(const MlpField& field, const CameraPose& camera, const RenderConfig& config,
                        PoseGradientNorm norm = PoseGradientNorm::kStacked);

// Full 3 x 12 Jacobian of one pixel's colour w.r.t. P (row-major entries).
Eigen::Matrix<double, 3, 12> pixel_pose_jacobian(const MlpField& field, const CameraPose& camera,
                                                 int u, int v, const RenderConfig& config);

// |a - b| with all but the largest ceil((1 - percentile/100) * N) entries
// zeroed. Entries are ranked by value, ties broken by pixel index, so the
// survivor count is exact. percentile = 0 keeps the raw difference.
Image gradient_norm_difference(const Image& a, const Image& b, double percentile = 95.0);

}  // namespace uqr
