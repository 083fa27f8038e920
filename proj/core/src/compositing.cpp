#include "uqrecon/compositing.hpp"

#include <cmath>
#include <random>

namespace uqr {

RaySamples sample_ray(const Ray& ray, int n, bool stratified, Rng& rng) {
  require(n >= 1, "sample_ray: need at least one sample");
  require(ray.t_near < ray.t_far, "sample_ray: empty interval");
  RaySamples s;
  s.t.resize(static_cast<std::size_t>(n));
  s.delta.resize(static_cast<std::size_t>(n));
  const double width = (ray.t_far - ray.t_near) / n;
  std::uniform_real_distribution<double> jitter(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const double offset = stratified ? jitter(rng) : 0.5;
    s.t[i] = ray.t_near + (i + offset) * width;
  }
  for (int i = 0; i + 1 < n; ++i) s.delta[i] = s.t[i + 1] - s.t[i];
  s.delta[n - 1] = ray.t_far - s.t[n - 1];
  return s;
}

RaySamples sample_ray(const Ray& ray, int n, bool stratified, std::uint64_t seed) {
  Rng rng(seed);
  return sample_ray(ray, n, stratified, rng);
}

CompositeWeights composite_weights(std::span<const double> sigma, std::span<const double> delta) {
  require(sigma.size() == delta.size(), "composite_weights: length mismatch");
  CompositeWeights w;
  w.transmittance.resize(sigma.size());
  w.alpha.resize(sigma.size());
  double t = 1.0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    w.transmittance[i] = t;
    w.alpha[i] = -std::expm1(-sigma[i] * delta[i]);
    t *= 1.0 - w.alpha[i];
  }
  w.residual = t;
  return w;
}

namespace {

void check_samples(const PixelSamples& s) {
  const auto n = s.sigma.size();
  require(s.delta.size() == n && s.t.size() == n, "composite_pixel: length mismatch");
  require(s.color != nullptr && s.color->cols() >= s.color_offset + static_cast<Eigen::Index>(n),
          "composite_pixel: colour block too small");
  require(s.beta.empty() || s.beta.size() == n, "composite_pixel: beta length mismatch");
}

}  // namespace

RenderedPixel composite_pixel(const PixelSamples& s, const Vec3& background,
                              VarianceWeighting weighting) {
  check_samples(s);
  const auto w = composite_weights(s.sigma, s.delta);
  const auto n = s.sigma.size();
  RenderedPixel p;
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = w.transmittance[i] * w.alpha[i];
    p.color += wi * s.color->col(s.color_offset + static_cast<Eigen::Index>(i));
    if (!s.beta.empty()) {
      const double vw = weighting == VarianceWeighting::kSquared ? wi * wi : wi;
      p.color_variance += Vec3::Constant(vw * s.beta[i]);
    }
    p.depth += wi * s.t[i];
    p.accumulation += wi;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = w.transmittance[i] * w.alpha[i];
    const double r = s.t[i] - p.depth;
    p.depth_variance += wi * r * r;
  }
  p.color += w.residual * background;
  return p;
}

SampleGradients composite_pixel_backward(const PixelSamples& s, const Vec3& background,
                                         const PixelGradient& up, VarianceWeighting weighting) {
  check_samples(s);
  const auto n = s.sigma.size();
  const auto w = composite_weights(s.sigma, s.delta);
  std::vector<double> weight(n);
  double depth = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    weight[i] = w.transmittance[i] * w.alpha[i];
    depth += weight[i] * s.t[i];
    acc += weight[i];
  }
  const double g_var = up.color_variance.sum();

  SampleGradients g;
  g.sigma.assign(n, 0.0);
  g.color.resize(3, static_cast<Eigen::Index>(n));
  if (!s.beta.empty()) g.beta.assign(n, 0.0);

  // dL/dw_i, then dL/dsigma_k = delta_k [T_{k+1} g_k - sum_{i>k} g_i w_i - g_T T_{N+1}].
  std::vector<double> g_w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto col = s.color_offset + static_cast<Eigen::Index>(i);
    double gi = up.color.dot(s.color->col(col)) + up.depth * s.t[i] + up.accumulation;
    const double r = s.t[i] - depth;
    gi += up.depth_variance * (r * r - 2.0 * s.t[i] * depth * (1.0 - acc));
    if (!s.beta.empty()) {
      if (weighting == VarianceWeighting::kSquared) {
        gi += g_var * 2.0 * weight[i] * s.beta[i];
        g.beta[i] = g_var * weight[i] * weight[i];
      } else {
        gi += g_var * s.beta[i];
        g.beta[i] = g_var * weight[i];
      }
    }
    g_w[i] = gi;
    g.color.col(static_cast<Eigen::Index>(i)) = weight[i] * up.color;
  }
  const double g_residual = up.color.dot(background) * w.residual;
  double suffix = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double t_next = w.transmittance[k] * (1.0 - w.alpha[k]);
    g.sigma[k] = s.delta[k] * (t_next * g_w[k] - suffix - g_residual);
    suffix += g_w[k] * weight[k];
  }
  return g;
}

void RenderedImage::set(int x, int y, const RenderedPixel& p) {
  for (int c = 0; c < 3; ++c) {
    color.at(x, y, c) = p.color(c);
    color_variance.at(x, y, c) = p.color_variance(c);
  }
  depth.at(x, y) = p.depth;
  depth_variance.at(x, y) = p.depth_variance;
  accumulation.at(x, y) = p.accumulation;
}

}  // namespace uqr
