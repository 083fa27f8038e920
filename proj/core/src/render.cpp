#include "uqrecon/render.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace uqr {

RayBatch make_ray_batch(std::vector<Ray> rays, const RenderConfig& config,
                        const std::vector<std::uint64_t>& ray_seeds) {
  const int ns = config.samples_per_ray;
  require(ns >= 1, "make_ray_batch: samples_per_ray must be >= 1");
  RayBatch batch;
  batch.samples_per_ray = ns;
  const auto n_rays = static_cast<Eigen::Index>(rays.size());
  batch.positions.resize(3, n_rays * ns);
  batch.directions.resize(3, n_rays * ns);
  batch.samples.reserve(rays.size());
  for (Eigen::Index r = 0; r < n_rays; ++r) {
    const Ray& ray = rays[static_cast<std::size_t>(r)];
    batch.samples.push_back(
        sample_ray(ray, ns, config.stratified, config.stratified ? ray_seeds.at(r) : 0));
    const auto& t = batch.samples.back().t;
    for (int i = 0; i < ns; ++i) {
      batch.positions.col(r * ns + i) = ray.origin + t[i] * ray.direction;
      batch.directions.col(r * ns + i) = ray.direction;
    }
  }
  batch.rays = std::move(rays);
  return batch;
}

namespace {

std::uint64_t pixel_seed(std::uint64_t seed, const CameraPose& camera, int u, int v) {
  return mix_seed(seed, static_cast<std::uint64_t>(v) * camera.width + u);
}

PixelSamples pixel_samples(const RayBatch& batch, const FieldOutput& out, std::size_t r) {
  const int ns = batch.samples_per_ray;
  const auto off = static_cast<Eigen::Index>(r) * ns;
  PixelSamples s;
  s.sigma = std::span<const double>(out.sigma.data() + off, static_cast<std::size_t>(ns));
  s.color = &out.color;
  s.color_offset = off;
  if (out.beta.size() > 0) {
    s.beta = std::span<const double>(out.beta.data() + off, static_cast<std::size_t>(ns));
  }
  s.t = batch.samples[r].t;
  s.delta = batch.samples[r].delta;
  return s;
}

template <typename PerChunk>
void for_each_chunk(const CameraPose& camera, const RenderConfig& config, bool with_jacobian,
                    PerChunk&& fn) {
  camera.validate();
  const int total = camera.width * camera.height;
  const int chunk = std::max(1, config.rays_per_chunk);
  for (int start = 0; start < total; start += chunk) {
    const int end = std::min(total, start + chunk);
    std::vector<Ray> rays;
    std::vector<std::uint64_t> seeds;
    std::vector<RayPoseJacobian> jacobians;
    for (int p = start; p < end; ++p) {
      const int u = p % camera.width, v = p / camera.width;
      RayPoseJacobian jac;
      rays.push_back(generate_ray(camera, u, v, config.t_near, config.t_far,
                                  with_jacobian ? &jac : nullptr));
      if (with_jacobian) jacobians.push_back(jac);
      seeds.push_back(pixel_seed(config.seed, camera, u, v));
    }
    fn(start, make_ray_batch(std::move(rays), config, seeds), jacobians);
  }
}

}  // namespace

RenderedImage render_field(const MlpField& field, const CameraPose& camera,
                           const RenderConfig& config, const DropoutMasks* masks) {
  RenderedImage image(camera.width, camera.height);
  for_each_chunk(camera, config, false,
                 [&](int start, const RayBatch& batch, const std::vector<RayPoseJacobian>&) {
                   const auto out = field_forward(field, batch.positions, batch.directions, masks);
                   for (std::size_t r = 0; r < batch.rays.size(); ++r) {
                     const int p = start + static_cast<int>(r);
                     image.set(p % camera.width, p / camera.width,
                               composite_pixel(pixel_samples(batch, out, r), config.background,
                                               config.variance_weighting));
                   }
                 });
  return image;
}

namespace {

// d(colour channel c)/dP for every ray of a batch: 3 x 12 per ray.
std::vector<Eigen::Matrix<double, 3, 12>> batch_pose_jacobians(
    const MlpField& field, const RayBatch& batch, const std::vector<RayPoseJacobian>& ray_jacs,
    const RenderConfig& config) {
  const auto out = field_forward(field, batch.positions, batch.directions);
  const int ns = batch.samples_per_ray;
  const auto n_points = batch.positions.cols();
  std::vector<Eigen::Matrix<double, 3, 12>> result(batch.rays.size());
  for (int channel = 0; channel < 3; ++channel) {
    Eigen::RowVectorXd d_sigma(n_points);
    Eigen::Matrix3Xd d_color(3, n_points);
    PixelGradient up;
    up.color(channel) = 1.0;
    for (std::size_t r = 0; r < batch.rays.size(); ++r) {
      const auto g = composite_pixel_backward(pixel_samples(batch, out, r), config.background, up,
                                              config.variance_weighting);
      const auto off = static_cast<Eigen::Index>(r) * ns;
      for (int i = 0; i < ns; ++i) d_sigma(off + i) = g.sigma[i];
      d_color.middleCols(off, ns) = g.color;
    }
    const auto grads = field_backward(field, out.tape, d_sigma, d_color, Eigen::RowVectorXd(),
                                      BackwardOptions{.parameters = false, .inputs = true});
    for (std::size_t r = 0; r < batch.rays.size(); ++r) {
      const auto off = static_cast<Eigen::Index>(r) * ns;
      Vec3 d_origin = Vec3::Zero(), d_direction = Vec3::Zero();
      for (int i = 0; i < ns; ++i) {
        const Vec3 dx = grads.positions.col(off + i);
        d_origin += dx;
        d_direction += batch.samples[r].t[i] * dx + grads.directions.col(off + i);
      }
      result[r].row(channel) = d_origin.transpose() * ray_jacs[r].d_origin +
                               d_direction.transpose() * ray_jacs[r].d_direction;
    }
  }
  return result;
}

}  // namespace

Image pose_gradient_map(const MlpField& field, const CameraPose& camera, const RenderConfig& config,
                        PoseGradientNorm norm) {
  Image map(camera.width, camera.height, 1);
  for_each_chunk(camera, config, true,
                 [&](int start, const RayBatch& batch, const std::vector<RayPoseJacobian>& jacs) {
                   const auto j = batch_pose_jacobians(field, batch, jacs, config);
                   for (std::size_t r = 0; r < j.size(); ++r) {
                     const int p = start + static_cast<int>(r);
                     double value = 0.0;
                     if (norm == PoseGradientNorm::kStacked) {
                       value = j[r].norm();
                     } else {
                       value = (j[r].row(0).norm() + j[r].row(1).norm() + j[r].row(2).norm()) / 3.0;
                     }
                     map.at(p % camera.width, p / camera.width) = value;
                   }
                 });
  return map;
}

Eigen::Matrix<double, 3, 12> pixel_pose_jacobian(const MlpField& field, const CameraPose& camera,
                                                 int u, int v, const RenderConfig& config) {
  RayPoseJacobian jac;
  std::vector<Ray> rays{generate_ray(camera, u, v, config.t_near, config.t_far, &jac)};
  const auto batch = make_ray_batch(std::move(rays), config, {pixel_seed(config.seed, camera, u, v)});
  return batch_pose_jacobians(field, batch, {jac}, config).front();
}

Image gradient_norm_difference(const Image& a, const Image& b, double percentile) {
  require(a.same_shape(b), "gradient_norm_difference: dimension mismatch");
  require(percentile >= 0.0 && percentile <= 100.0, "gradient_norm_difference: bad percentile");
  Image d = a;
  auto values = d.values();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = std::abs(a.values()[i] - b.values()[i]);
  const auto n = values.size();
  const auto drop = static_cast<std::size_t>(std::floor(percentile * static_cast<double>(n) / 100.0));
  if (drop == 0) return d;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  for (std::size_t k = 0; k < drop && k < n; ++k) values[order[k]] = 0.0;
  return d;
}

}  // namespace uqr
