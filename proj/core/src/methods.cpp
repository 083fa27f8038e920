#include "uqrecon/methods.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "uqrecon/metrics.hpp"
#include "uqrecon/optim.hpp"
#include "uqrecon/rng.hpp"

namespace uqr {

void TrainConfig::validate() const {
  require(steps >= 0, "TrainConfig: steps must be >= 0");
  require(rays_per_batch >= 1, "TrainConfig: rays_per_batch must be >= 1");
  require(field_lr > 0.0 && field_lr_final > 0.0, "TrainConfig: learning rates must be positive");
  require(density_l1 >= 0.0 && opacity_l1 >= 0.0, "TrainConfig: regularizer strengths must be >= 0");
  require(ssim_weight >= 0.0 && ssim_weight <= 1.0, "TrainConfig: ssim weight must be in [0,1]");
  require(dropout >= 0.0 && dropout < 1.0, "TrainConfig: dropout must be in [0,1)");
  require(loss_variance_floor > 0.0 && loss_variance_floor_initial > 0.0,
          "TrainConfig: loss variance floors must be positive");
  require(render.samples_per_ray >= 1, "TrainConfig: samples_per_ray must be >= 1");
  require(initial_gaussians >= 1, "TrainConfig: initial_gaussians must be >= 1");
  require(densify_interval >= 1, "TrainConfig: densify_interval must be >= 1");
}

namespace {

enum class Objective { kPlain, kActive };

std::vector<const View*> train_views(const ViewDataset& dataset) {
  std::vector<const View*> views;
  for (const auto& v : dataset.views) {
    if (v.split == SplitTag::kTrain) views.push_back(&v);
  }
  if (views.empty()) throw InvalidArgument("training needs at least one train view");
  return views;
}

double decayed(double start, double end, int step, int steps) {
  if (steps <= 1) return start;
  const double t = static_cast<double>(step) / (steps - 1);
  return start * std::pow(end / start, t);
}

// Uniform random (view, pixel) picks over all train pixels.
class PixelSampler {
 public:
  PixelSampler(std::vector<const View*> views, std::uint64_t seed)
      : views_(std::move(views)), rng_(seed) {
    for (const View* v : views_) {
      offsets_.push_back(total_);
      total_ += v->rgb.pixel_count();
    }
  }

  struct Pick {
    const View* view;
    int x, y;
  };

  Pick next() {
    std::uniform_int_distribution<std::size_t> dist(0, total_ - 1);
    const std::size_t k = dist(rng_);
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), k) - 1;
    const View* v = views_[static_cast<std::size_t>(it - offsets_.begin())];
    const std::size_t local = k - *it;
    return {v, static_cast<int>(local % v->rgb.width()), static_cast<int>(local / v->rgb.width())};
  }

 private:
  std::vector<const View*> views_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
  Rng rng_;
};

PixelSamples samples_of(const RayBatch& batch, const FieldOutput& out, std::size_t r) {
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

FieldTrainResult train_field(const ViewDataset& dataset, const TrainConfig& cfg,
                             Objective objective) {
  cfg.validate();
  FieldArchitecture arch = cfg.architecture;
  arch.beta_head = objective == Objective::kActive;
  FieldTrainResult result{MlpField::initialized(arch, mix_seed(cfg.seed, 1)),
                          std::numeric_limits<double>::quiet_NaN()};
  MlpField& field = result.field;
  PixelSampler sampler(train_views(dataset), mix_seed(cfg.seed, 2));
  Adam adam(field.params().size());
  const int ns = cfg.render.samples_per_ray;
  const int rays = cfg.rays_per_batch;
  RenderConfig render = cfg.render;
  const VarianceWeighting weighting = VarianceWeighting::kSquared;

  for (int step = 0; step < cfg.steps; ++step) {
    const double floor = decayed(cfg.loss_variance_floor_initial, cfg.loss_variance_floor, step, cfg.steps);
    const std::uint64_t step_seed = mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(step));
    std::vector<Ray> batch_rays;
    std::vector<std::uint64_t> seeds;
    std::vector<Vec3> targets;
    for (int r = 0; r < rays; ++r) {
      const auto pick = sampler.next();
      batch_rays.push_back(generate_ray(pick.view->pose, pick.x, pick.y, render.t_near, render.t_far));
      seeds.push_back(mix_seed(step_seed, static_cast<std::uint64_t>(r)));
      targets.emplace_back(pick.view->rgb.at(pick.x, pick.y, 0), pick.view->rgb.at(pick.x, pick.y, 1),
                           pick.view->rgb.at(pick.x, pick.y, 2));
    }
    const RayBatch batch = make_ray_batch(std::move(batch_rays), render, seeds);

    DropoutMasks masks;
    const DropoutMasks* mask_ptr = nullptr;
    if (cfg.dropout > 0.0) {
      const DropoutMasks per_ray = sample_dropout_masks(field, cfg.dropout, rays, step_seed);
      masks.density.resize(per_ray.density.rows(), static_cast<Eigen::Index>(rays) * ns);
      masks.color.resize(per_ray.color.rows(), static_cast<Eigen::Index>(rays) * ns);
      for (int r = 0; r < rays; ++r) {
        for (int i = 0; i < ns; ++i) {
          masks.density.col(r * ns + i) = per_ray.density.col(r);
          masks.color.col(r * ns + i) = per_ray.color.col(r);
        }
      }
      mask_ptr = &masks;
    }

    const FieldOutput out = field_forward(field, batch.positions, batch.directions, mask_ptr);
    const auto n_points = batch.positions.cols();
    Eigen::RowVectorXd d_sigma(n_points);
    Eigen::Matrix3Xd d_color(3, n_points);
    Eigen::RowVectorXd d_beta;
    if (arch.beta_head) d_beta.resize(n_points);
    double loss = 0.0;
    const double inv_r = 1.0 / rays;
    for (int r = 0; r < rays; ++r) {
      const PixelSamples s = samples_of(batch, out, static_cast<std::size_t>(r));
      const RenderedPixel px = composite_pixel(s, render.background, weighting);
      const Vec3 resid = px.color - targets[static_cast<std::size_t>(r)];
      PixelGradient up;
      if (objective == Objective::kPlain) {
        loss += inv_r * resid.squaredNorm() / 3.0;
        up.color = inv_r * 2.0 * resid / 3.0;
      } else {
        const double var = px.color_variance.x() + floor;
        loss += inv_r * (resid.squaredNorm() / (6.0 * var) + 0.5 * std::log(var));
        up.color = inv_r * resid / (3.0 * var);
        const double d_var = inv_r * (-resid.squaredNorm() / (6.0 * var * var) + 0.5 / var);
        up.color_variance = Vec3::Constant(d_var / 3.0);
        double sigma_sum = 0.0;
        for (double v : s.sigma) sigma_sum += v;
        loss += inv_r * cfg.density_l1 * sigma_sum / ns;
      }
      const SampleGradients g = composite_pixel_backward(s, render.background, up, weighting);
      const auto off = static_cast<Eigen::Index>(r) * ns;
      const double l1 = objective == Objective::kActive ? inv_r * cfg.density_l1 / ns : 0.0;
      for (int i = 0; i < ns; ++i) d_sigma(off + i) = g.sigma[i] + l1;
      d_color.middleCols(off, ns) = g.color;
      if (arch.beta_head) {
        for (int i = 0; i < ns; ++i) d_beta(off + i) = g.beta[i];
      }
    }
    if (!std::isfinite(loss)) throw TrainingDiverged(step);
    const FieldGradients grads = field_backward(field, out.tape, d_sigma, d_color, d_beta,
                                                BackwardOptions{.parameters = true, .inputs = false});
    adam.step(field.params(), grads.params, decayed(cfg.field_lr, cfg.field_lr_final, step, cfg.steps));
    result.final_loss = loss;
  }
  return result;
}

// Flat optimizer layout per Gaussian: mean(3) log-scale(3) rotation(4)
// opacity_raw(1) color(3) beta_raw(1).
constexpr std::size_t kStride = 15;

void pack(const GaussianCloud& cloud, std::vector<double>& x) {
  x.resize(cloud.size() * kStride);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& g = cloud.gaussians[i];
    double* p = x.data() + i * kStride;
    for (int k = 0; k < 3; ++k) {
      p[k] = g.mean[k];
      p[3 + k] = std::log(g.scale[k]);
      p[11 + k] = g.color[k];
    }
    for (int k = 0; k < 4; ++k) p[6 + k] = g.rotation[k];
    p[10] = g.opacity_raw;
    p[14] = g.beta_raw;
  }
}

void unpack(const std::vector<double>& x, GaussianCloud& cloud) {
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto& g = cloud.gaussians[i];
    const double* p = x.data() + i * kStride;
    for (int k = 0; k < 3; ++k) {
      g.mean[k] = p[k];
      g.scale[k] = std::exp(p[3 + k]);
      g.color[k] = std::clamp(p[11 + k], 0.0, 1.0);
    }
    Quat q(p[6], p[7], p[8], p[9]);
    const double n = q.norm();
    g.rotation = n > 0.0 ? Quat(q / n) : Quat(1.0, 0.0, 0.0, 0.0);
    g.opacity_raw = p[10];
    g.beta_raw = p[14];
  }
}

void pack_gradients(const GaussianCloud& cloud, const std::vector<GaussianGradient>& grads,
                    std::vector<double>& out) {
  out.assign(cloud.size() * kStride, 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& g = grads[i];
    double* p = out.data() + i * kStride;
    for (int k = 0; k < 3; ++k) {
      p[k] = g.mean[k];
      p[3 + k] = g.scale[k] * cloud.gaussians[i].scale[k];
      p[11 + k] = g.color[k];
    }
    for (int k = 0; k < 4; ++k) p[6 + k] = g.rotation[k];
    p[10] = g.opacity_raw;
    p[14] = g.beta_raw;
  }
}

// Radius of the initial point set about its centroid.
double cloud_extent(const GaussianCloud& cloud) {
  Vec3 centroid = Vec3::Zero();
  for (const auto& g : cloud.gaussians) centroid += g.mean;
  centroid /= static_cast<double>(cloud.size());
  double r = 0.0;
  for (const auto& g : cloud.gaussians) r = std::max(r, (g.mean - centroid).norm());
  return std::max(r, 1e-3);
}

CloudTrainResult train_cloud(const ViewDataset& dataset, const TrainConfig& cfg, Objective objective) {
  cfg.validate();
  const auto views = train_views(dataset);
  CloudTrainResult result{init_cloud_from_views(dataset, cfg.initial_gaussians, mix_seed(cfg.seed, 3),
                                                cfg.initial_opacity, cfg.initial_beta),
                          std::numeric_limits<double>::quiet_NaN()};
  GaussianCloud& cloud = result.cloud;
  const double extent = cloud_extent(cloud);
  DensifyThresholds thresholds = cfg.densify;
  thresholds.max_size = 0.5 * extent;
  thresholds.dense_scale = 0.01 * extent;
  const int densify_until = cfg.densify_until < 0 ? cfg.steps / 2 : cfg.densify_until;

  Rng rng(mix_seed(cfg.seed, 4));
  std::uniform_int_distribution<std::size_t> pick_view(0, views.size() - 1);
  std::vector<double> x;
  std::vector<double> gx;
  pack(cloud, x);
  Adam adam(x.size(), AdamParams{.eps = 1e-15});
  const double lambda = cfg.ssim_weight;

  for (int step = 0; step < cfg.steps; ++step) {
    const double floor = decayed(cfg.loss_variance_floor_initial, cfg.loss_variance_floor, step, cfg.steps);
    const View& view = *views[pick_view(rng)];
    const RasterOutput out = rasterize(cloud, view.pose, cfg.raster);
    const Image& pred = out.image.color;
    const Image& gt = view.rgb;
    RenderedImage up(pred.width(), pred.height());
    const double n_values = static_cast<double>(pred.size());

    Image ssim_grad;
    const double s = ssim_with_gradient(pred, gt, ssim_grad);
    double loss = lambda * 0.5 * (1.0 - s);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      up.color.values()[i] = -lambda * 0.5 * ssim_grad.values()[i];
    }
    if (objective == Objective::kPlain) {
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = pred.values()[i] - gt.values()[i];
        loss += (1.0 - lambda) * std::abs(r) / n_values;
        up.color.values()[i] += (1.0 - lambda) * (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) / n_values;
      }
    } else {
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = pred.values()[i] - gt.values()[i];
        const double var = out.image.color_variance.values()[i] + floor;
        loss += (1.0 - lambda) * (r * r / (2.0 * var) + 0.5 * std::log(var)) / n_values;
        up.color.values()[i] += (1.0 - lambda) * r / var / n_values;
        up.color_variance.values()[i] =
            (1.0 - lambda) * (-r * r / (2.0 * var * var) + 0.5 / var) / n_values;
      }
      double opacity_sum = 0.0;
      for (const auto& g : cloud.gaussians) opacity_sum += g.opacity();
      loss += cfg.opacity_l1 * opacity_sum / static_cast<double>(cloud.size());
    }
    if (!std::isfinite(loss)) throw TrainingDiverged(step);

    auto grads = rasterize_backward(cloud, view.pose, cfg.raster, out.state, up);
    const double half_w = 0.5 * view.pose.width;
    const double half_h = 0.5 * view.pose.height;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      if (objective == Objective::kActive) {
        const double o = cloud.gaussians[i].opacity();
        grads[i].opacity_raw += cfg.opacity_l1 / static_cast<double>(cloud.size()) * o * (1.0 - o);
      }
      const Vec2 ndc(grads[i].mean2d.x() * half_w, grads[i].mean2d.y() * half_h);
      if (out.state.projected[i] && (ndc.squaredNorm() > 0.0 || grads[i].color.squaredNorm() > 0.0)) {
        cloud.grad_accum[i] += ndc.norm();
        cloud.grad_count[i] += 1;
      }
    }
    pack_gradients(cloud, grads, gx);
    const auto& lr = cfg.cloud_lr;
    const double mean_lr = extent * decayed(lr.mean, lr.mean_final, step, cfg.steps);
    const std::vector<double> rates{mean_lr, mean_lr, mean_lr,
                                    lr.log_scale, lr.log_scale, lr.log_scale,
                                    lr.rotation, lr.rotation, lr.rotation, lr.rotation,
                                    lr.opacity_raw,
                                    lr.color, lr.color, lr.color,
                                    lr.beta_raw};
    adam.step(x, gx, rates);
    unpack(x, cloud);
    result.final_loss = loss;

    const int done = step + 1;
    if (done >= cfg.densify_from && done <= densify_until && done % cfg.densify_interval == 0 &&
        done < cfg.steps) {
      thresholds.seed = mix_seed(cfg.seed, 5000 + static_cast<std::uint64_t>(step));
      std::vector<std::size_t> origin;
      cloud = densify_and_prune(cloud, thresholds, &origin);
      adam.remap(origin, kStride);
      pack(cloud, x);
    }
  }
  return result;
}

}  // namespace

FieldTrainResult train_vanilla_field(const ViewDataset& dataset, const TrainConfig& cfg) {
  return train_field(dataset, cfg, Objective::kPlain);
}

CloudTrainResult train_vanilla_cloud(const ViewDataset& dataset, const TrainConfig& cfg) {
  return train_cloud(dataset, cfg, Objective::kPlain);
}

TrainedModel train_vanilla(const ViewDataset& dataset, const TrainConfig& cfg,
                           Representation representation) {
  if (representation == Representation::kField) return train_vanilla_field(dataset, cfg).field;
  return train_vanilla_cloud(dataset, cfg).cloud;
}

FieldTrainResult train_active_field(const ViewDataset& dataset, const TrainConfig& cfg) {
  return train_field(dataset, cfg, Objective::kActive);
}

CloudTrainResult train_active_cloud(const ViewDataset& dataset, const TrainConfig& cfg) {
  return train_cloud(dataset, cfg, Objective::kActive);
}

UncertainPrediction UncertainPrediction::from_render(const RenderedImage& image) {
  UncertainPrediction p;
  p.color = image.color;
  p.color_variance = image.color_variance;
  p.depth = image.depth;
  p.depth_variance = image.depth_variance;
  return p;
}

UncertainPrediction predict_single(const MlpField& field, const CameraPose& camera,
                                   const RenderConfig& config) {
  return UncertainPrediction::from_render(render_field(field, camera, config));
}

UncertainPrediction predict_single(const GaussianCloud& cloud, const CameraPose& camera,
                                   const RasterConfig& config) {
  return UncertainPrediction::from_render(rasterize(cloud, camera, config).image);
}

UncertainPrediction combine_renders(const std::vector<RenderedImage>& renders) {
  require(renders.size() >= 2, "combine_renders: need at least two renders");
  const int w = renders.front().color.width();
  const int h = renders.front().color.height();
  for (const auto& r : renders) {
    require(r.color.width() == w && r.color.height() == h, "combine_renders: shape mismatch");
  }
  UncertainPrediction out(w, h);
  const double inv_m = 1.0 / static_cast<double>(renders.size());
  const auto moments = [&](auto get, Image& mean, Image& var) {
    for (std::size_t i = 0; i < mean.size(); ++i) {
      // Shifted by the first member so identical members give exactly 0.
      const double ref = get(renders.front()).values()[i];
      double m = 0.0;
      for (const auto& r : renders) m += get(r).values()[i] - ref;
      m = ref + m * inv_m;
      double v = 0.0;
      for (const auto& r : renders) {
        const double d = get(r).values()[i] - m;
        v += d * d;
      }
      mean.values()[i] = m;
      var.values()[i] = v * inv_m;
    }
  };
  moments([](const RenderedImage& r) -> const Image& { return r.color; }, out.color, out.color_variance);
  moments([](const RenderedImage& r) -> const Image& { return r.depth; }, out.depth, out.depth_variance);
  return out;
}

UncertainPrediction predict_mc_dropout(const MlpField& field, const CameraPose& camera,
                                       const RenderConfig& config, int passes, double p,
                                       std::uint64_t seed) {
  require(passes >= 2, "predict_mc_dropout: need at least two passes");
  std::vector<RenderedImage> renders;
  for (int m = 0; m < passes; ++m) {
    const DropoutMasks masks = sample_dropout_masks(field, p, 1, mix_seed(seed, static_cast<std::uint64_t>(m)));
    renders.push_back(render_field(field, camera, config, &masks));
  }
  return combine_renders(renders);
}

void GgnAccumulator::add(const Eigen::MatrixXd& jacobian) {
  require(static_cast<std::size_t>(jacobian.cols()) == diagonal_.size(),
          "GgnAccumulator::add: Jacobian width mismatch");
  for (Eigen::Index j = 0; j < jacobian.cols(); ++j) diagonal_[j] += jacobian.col(j).squaredNorm();
}

namespace {

// Parameter indices of a last layer restricted to its first `rows` outputs:
// weights row-major, then biases.
void append_layer(const LayerSlot& slot, int rows, std::vector<std::size_t>& out) {
  for (int o = 0; o < rows; ++o) {
    for (int i = 0; i < slot.in; ++i) {
      out.push_back(slot.weight_offset + static_cast<std::size_t>(o) * slot.in + i);
    }
  }
  for (int o = 0; o < rows; ++o) out.push_back(slot.bias_offset + o);
}

}  // namespace

std::vector<std::size_t> last_layer_parameters(const MlpField& field) {
  std::vector<std::size_t> idx;
  const auto& d = field.layers(Net::kDensity).back();
  const auto& c = field.layers(Net::kColor).back();
  append_layer(d, d.out, idx);
  append_layer(c, 3, idx);
  return idx;
}

LaplacePosterior fit_laplace(const MlpField& field, const ViewDataset& dataset,
                             const LaplaceFitConfig& config) {
  require(config.prior_precision > 0.0, "fit_laplace: prior precision must be positive");
  require(config.batches >= 1 && config.rays_per_batch >= 1, "fit_laplace: empty batch schedule");
  LaplacePosterior post;
  post.mode = field;
  post.indices = last_layer_parameters(field);
  post.prior_precision = config.prior_precision;
  post.ggn.assign(post.indices.size(), 0.0);

  const auto& dslot = field.layers(Net::kDensity).back();
  const auto& cslot = field.layers(Net::kColor).back();
  PixelSampler sampler(train_views(dataset), mix_seed(config.seed, 7));
  const RenderConfig& render = config.render;
  const int ns = render.samples_per_ray;

  for (int b = 0; b < config.batches; ++b) {
    std::vector<Ray> rays;
    std::vector<std::uint64_t> seeds;
    for (int r = 0; r < config.rays_per_batch; ++r) {
      const auto pick = sampler.next();
      rays.push_back(generate_ray(pick.view->pose, pick.x, pick.y, render.t_near, render.t_far));
      seeds.push_back(mix_seed(config.seed, static_cast<std::uint64_t>(b) * config.rays_per_batch + r));
    }
    const RayBatch batch = make_ray_batch(std::move(rays), render, seeds);
    const FieldOutput out = field_forward(field, batch.positions, batch.directions);
    const Eigen::MatrixXd& hd = out.tape.density_inputs.back();
    const Eigen::MatrixXd& hc = out.tape.color_inputs.back();
    const auto n_points = batch.positions.cols();
    for (int channel = 0; channel < 3; ++channel) {
      Eigen::RowVectorXd d_sigma(n_points);
      Eigen::Matrix3Xd d_color(3, n_points);
      PixelGradient up;
      up.color(channel) = 1.0;
      for (std::size_t r = 0; r < batch.rays.size(); ++r) {
        const auto g = composite_pixel_backward(samples_of(batch, out, r), render.background, up,
                                                render.variance_weighting);
        const auto off = static_cast<Eigen::Index>(r) * ns;
        for (int i = 0; i < ns; ++i) d_sigma(off + i) = g.sigma[i];
        d_color.middleCols(off, ns) = g.color;
      }
      const auto grads = field_backward(field, out.tape, d_sigma, d_color, Eigen::RowVectorXd(),
                                        BackwardOptions{.parameters = false, .inputs = false});
      for (std::size_t r = 0; r < batch.rays.size(); ++r) {
        const auto off = static_cast<Eigen::Index>(r) * ns;
        const Eigen::MatrixXd jd = grads.density_head.middleCols(off, ns) * hd.middleCols(off, ns).transpose();
        const Eigen::VectorXd bd = grads.density_head.middleCols(off, ns).rowwise().sum();
        const Eigen::MatrixXd jc =
            grads.color_head.topRows(3).middleCols(off, ns) * hc.middleCols(off, ns).transpose();
        const Eigen::VectorXd bc = grads.color_head.topRows(3).middleCols(off, ns).rowwise().sum();
        std::size_t k = 0;
        for (int o = 0; o < dslot.out; ++o) {
          for (int i = 0; i < dslot.in; ++i) post.ggn[k++] += jd(o, i) * jd(o, i);
        }
        for (int o = 0; o < dslot.out; ++o) post.ggn[k++] += bd(o) * bd(o);
        for (int o = 0; o < 3; ++o) {
          for (int i = 0; i < cslot.in; ++i) post.ggn[k++] += jc(o, i) * jc(o, i);
        }
        for (int o = 0; o < 3; ++o) post.ggn[k++] += bc(o) * bc(o);
      }
    }
  }
  return post;
}

namespace {

// Colour-net forward from given input features with the last layer
// replaced by (weight, bias). Returns the activated colour (3 x n).
Eigen::Matrix3Xd color_head_forward(const MlpField& field, Eigen::MatrixXd input,
                                    const RowMatrix& last_w, const Eigen::VectorXd& last_b) {
  const int n_layers = field.layer_count(Net::kColor);
  for (int l = 0; l + 1 < n_layers; ++l) {
    Eigen::MatrixXd z = field.weight(Net::kColor, l) * input;
    z.colwise() += field.bias(Net::kColor, l);
    input = z.cwiseMax(0.0);
  }
  Eigen::MatrixXd raw = last_w * input;
  raw.colwise() += last_b;
  if (field.architecture().color_activation == ColorActivation::kSigmoid) {
    return raw.unaryExpr([](double v) { return sigmoid(v); });
  }
  return raw;
}

}  // namespace

UncertainPrediction predict_laplace(const LaplacePosterior& posterior, const CameraPose& camera,
                                    const RenderConfig& config, int weight_draws, int density_draws,
                                    std::uint64_t seed) {
  require(weight_draws >= 2 && density_draws >= 2, "predict_laplace: need at least two draws");
  const MlpField& mode = posterior.mode;
  require(posterior.indices == last_layer_parameters(mode) &&
              posterior.ggn.size() == posterior.indices.size(),
          "predict_laplace: posterior does not match the field");
  camera.validate();
  const auto& arch = mode.architecture();
  const int n_color_layers = mode.layer_count(Net::kColor);

  // Weight draws shared by every pixel of the image.
  struct Draw {
    RowMatrix dw;
    Eigen::VectorXd db;
    RowMatrix cw;
    Eigen::VectorXd cb;
  };
  std::vector<Draw> draws(static_cast<std::size_t>(weight_draws));
  {
    Rng rng(mix_seed(seed, 0x1a91ace));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& d : draws) {
      MlpField sample = mode;
      auto params = sample.params();
      for (std::size_t k = 0; k < posterior.indices.size(); ++k) {
        params[posterior.indices[k]] += std::sqrt(posterior.variance(k)) * normal(rng);
      }
      d.dw = sample.weight(Net::kDensity, mode.layer_count(Net::kDensity) - 1);
      d.db = sample.bias(Net::kDensity, mode.layer_count(Net::kDensity) - 1);
      d.cw = sample.weight(Net::kColor, n_color_layers - 1).topRows(3);
      d.cb = sample.bias(Net::kColor, n_color_layers - 1).head(3);
    }
  }

  UncertainPrediction pred(camera.width, camera.height);
  const int ns = config.samples_per_ray;
  const int total = camera.width * camera.height;
  const int chunk = std::max(1, config.rays_per_chunk);
  const double inv_m = 1.0 / weight_draws;
  for (int start = 0; start < total; start += chunk) {
    const int end = std::min(total, start + chunk);
    std::vector<Ray> rays;
    std::vector<std::uint64_t> seeds;
    for (int p = start; p < end; ++p) {
      rays.push_back(generate_ray(camera, p % camera.width, p / camera.width, config.t_near, config.t_far));
      seeds.push_back(mix_seed(config.seed, static_cast<std::uint64_t>(p)));
    }
    const RayBatch batch = make_ray_batch(std::move(rays), config, seeds);
    const FieldOutput out = field_forward(mode, batch.positions, batch.directions);
    const Eigen::MatrixXd& hd = out.tape.density_inputs.back();
    const Eigen::MatrixXd dir_enc = out.tape.color_inputs.front().bottomRows(arch.direction_encoding_dim());
    const auto n = batch.positions.cols();

    std::vector<Eigen::Matrix3Xd> colors;
    std::vector<Eigen::RowVectorXd> sigmas;
    colors.reserve(draws.size());
    sigmas.reserve(draws.size());
    for (const auto& d : draws) {
      Eigen::MatrixXd raw = d.dw * hd;
      raw.colwise() += d.db;
      sigmas.push_back(raw.row(0).unaryExpr([](double v) { return softplus(v); }));
      Eigen::MatrixXd color_in(arch.geo_features + arch.direction_encoding_dim(), n);
      color_in.topRows(arch.geo_features) = raw.bottomRows(arch.geo_features);
      color_in.bottomRows(arch.direction_encoding_dim()) = dir_enc;
      colors.push_back(color_head_forward(mode, std::move(color_in), d.cw, d.cb));
    }
    Eigen::Matrix3Xd c_mean = Eigen::Matrix3Xd::Zero(3, n);
    Eigen::RowVectorXd s_mean = Eigen::RowVectorXd::Zero(n);
    for (std::size_t m = 0; m < draws.size(); ++m) {
      c_mean += colors[m];
      s_mean += sigmas[m];
    }
    c_mean *= inv_m;
    s_mean *= inv_m;
    Eigen::Matrix3Xd c_var = Eigen::Matrix3Xd::Zero(3, n);
    Eigen::RowVectorXd s_var = Eigen::RowVectorXd::Zero(n);
    for (std::size_t m = 0; m < draws.size(); ++m) {
      c_var += (colors[m] - c_mean).cwiseAbs2();
      s_var += (sigmas[m] - s_mean).cwiseAbs2();
    }
    c_var *= inv_m;
    s_var *= inv_m;

    for (std::size_t r = 0; r < batch.rays.size(); ++r) {
      const int p = start + static_cast<int>(r);
      const int u = p % camera.width, v = p / camera.width;
      const auto off = static_cast<Eigen::Index>(r) * ns;
      const auto& t = batch.samples[r].t;
      const auto& delta = batch.samples[r].delta;
      const auto cw = composite_weights(
          std::span<const double>(out.sigma.data() + off, static_cast<std::size_t>(ns)), delta);
      Vec3 color = cw.residual * config.background;
      Vec3 var = Vec3::Zero();
      for (int i = 0; i < ns; ++i) {
        const double w = cw.transmittance[i] * cw.alpha[i];
        color += w * c_mean.col(off + i);
        var += w * w * c_var.col(off + i);
      }
      // Rendering weights averaged over density draws.
      Rng rng(mix_seed(seed, 0x5eed0000ULL + static_cast<std::uint64_t>(p)));
      std::normal_distribution<double> normal(0.0, 1.0);
      std::vector<double> w_mean(static_cast<std::size_t>(ns), 0.0);
      std::vector<double> sig(static_cast<std::size_t>(ns));
      for (int l = 0; l < density_draws; ++l) {
        for (int i = 0; i < ns; ++i) {
          sig[i] = std::max(0.0, s_mean(off + i) + std::sqrt(s_var(off + i)) * normal(rng));
        }
        const auto wl = composite_weights(sig, delta);
        for (int i = 0; i < ns; ++i) w_mean[i] += wl.transmittance[i] * wl.alpha[i] / density_draws;
      }
      double depth = 0.0;
      for (int i = 0; i < ns; ++i) depth += w_mean[i] * t[i];
      double depth_var = 0.0;
      for (int i = 0; i < ns; ++i) depth_var += w_mean[i] * (t[i] - depth) * (t[i] - depth);
      for (int c = 0; c < 3; ++c) {
        pred.color.at(u, v, c) = color(c);
        pred.color_variance.at(u, v, c) = var(c);
      }
      pred.depth.at(u, v) = depth;
      pred.depth_variance.at(u, v) = depth_var;
    }
  }
  return pred;
}

namespace {

template <typename Model, typename TrainFn>
Ensemble<Model> train_members(const ViewDataset& dataset, const TrainConfig& cfg, int members,
                              TrainFn train) {
  require(members >= 2, "ensemble: need at least two members");
  Ensemble<Model> ensemble;
  for (int m = 0; m < members; ++m) {
    TrainConfig member_cfg = cfg;
    member_cfg.seed = mix_seed(cfg.seed, 0xe750000ULL + static_cast<std::uint64_t>(m));
    try {
      ensemble.members.push_back(train(dataset, member_cfg));
    } catch (const TrainingDiverged& e) {
      throw std::runtime_error("ensemble member " + std::to_string(m) + ": " + e.what());
    }
    ensemble.seeds.push_back(member_cfg.seed);
  }
  return ensemble;
}

}  // namespace

FieldEnsemble train_field_ensemble(const ViewDataset& dataset, const TrainConfig& cfg, int members) {
  return train_members<MlpField>(dataset, cfg, members, [](const ViewDataset& d, const TrainConfig& c) {
    return train_vanilla_field(d, c).field;
  });
}

CloudEnsemble train_cloud_ensemble(const ViewDataset& dataset, const TrainConfig& cfg, int members) {
  return train_members<GaussianCloud>(dataset, cfg, members, [](const ViewDataset& d, const TrainConfig& c) {
    return train_vanilla_cloud(d, c).cloud;
  });
}

UncertainPrediction predict_ensemble(const FieldEnsemble& ensemble, const CameraPose& camera,
                                     const RenderConfig& config) {
  std::vector<RenderedImage> renders;
  for (const auto& m : ensemble.members) renders.push_back(render_field(m, camera, config));
  return combine_renders(renders);
}

UncertainPrediction predict_ensemble(const CloudEnsemble& ensemble, const CameraPose& camera,
                                     const RasterConfig& config) {
  std::vector<RenderedImage> renders;
  for (const auto& m : ensemble.members) renders.push_back(rasterize(m, camera, config).image);
  return combine_renders(renders);
}

}  // namespace uqr
