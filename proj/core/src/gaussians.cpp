#include "uqrecon/gaussians.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "uqrecon/field.hpp"
#include "uqrecon/rng.hpp"

namespace uqr {

double Gaussian3D::opacity() const { return sigmoid(opacity_raw); }

double Gaussian3D::beta(double floor) const { return softplus(beta_raw) + floor; }

Mat3 quaternion_to_rotation(const Quat& q) {
  const Quat n = q / q.norm();
  const double w = n[0], x = n[1], y = n[2], z = n[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Mat3 Gaussian3D::covariance() const {
  const Mat3 m = quaternion_to_rotation(rotation) * scale.asDiagonal();
  return m * m.transpose();
}

void GaussianCloud::reset_statistics() {
  grad_accum.assign(gaussians.size(), 0.0);
  grad_count.assign(gaussians.size(), 0);
}

namespace {

struct ProjectionTerms {
  Vec3 p_cam;
  double depth;
  Eigen::Matrix<double, 2, 3> jac;
  Mat3 cov_cam;  // W Sigma W^T
};

ProjectionTerms projection_terms(const Gaussian3D& g, const CameraPose& camera) {
  ProjectionTerms t;
  t.p_cam = camera.rotation * g.mean + camera.translation;
  t.depth = -t.p_cam.z();
  const double f = camera.focal;
  const double d = t.depth;
  t.jac << f / d, 0.0, f * t.p_cam.x() / (d * d), 0.0, f / d, f * t.p_cam.y() / (d * d);
  t.cov_cam = camera.rotation * g.covariance() * camera.rotation.transpose();
  return t;
}

}  // namespace

std::optional<ProjectedGaussian> project_gaussian(const Gaussian3D& g, const CameraPose& camera,
                                                  double z_min) {
  const Vec3 p = camera.rotation * g.mean + camera.translation;
  if (-p.z() <= z_min) return std::nullopt;
  const ProjectionTerms t = projection_terms(g, camera);
  ProjectedGaussian pg;
  pg.mean = camera.principal_point + camera.focal * t.p_cam.head<2>() / t.depth;
  pg.covariance = t.jac * t.cov_cam * t.jac.transpose();
  pg.covariance = 0.5 * (pg.covariance + pg.covariance.transpose()).eval();
  pg.depth = t.depth;
  return pg;
}

namespace {

Mat2 regularized_inverse(const Mat2& cov, double eps2d) {
  return (cov + eps2d * Mat2::Identity()).inverse();
}

}  // namespace

double splat_alpha(const ProjectedGaussian& pg, double opacity, const Vec2& pixel, double eps2d,
                   double alpha_max) {
  const Vec2 d = pixel - pg.mean;
  const double q = d.dot(regularized_inverse(pg.covariance, eps2d) * d);
  return std::min(opacity * std::exp(-0.5 * q), alpha_max);
}

namespace {

struct Contribution {
  std::uint32_t index;
  double alpha;
  double falloff;  // exp(-q/2)
  bool clamped;
  Vec2 offset;     // pixel - mu'
};

// Front-to-back contributions of one pixel.
void gather(const GaussianCloud& cloud, const RasterState& state,
            const std::vector<Mat2>& conics, const RasterConfig& cfg, int x, int y,
            std::vector<Contribution>& out) {
  out.clear();
  const Vec2 pixel(x + 0.5, y + 0.5);
  for (std::uint32_t idx : state.pixel_lists[static_cast<std::size_t>(y) * state.width + x]) {
    const auto& pg = *state.projected[idx];
    const Vec2 d = pixel - pg.mean;
    const double falloff = std::exp(-0.5 * d.dot(conics[idx] * d));
    const double raw = cloud.gaussians[idx].opacity() * falloff;
    if (raw < cfg.alpha_min) continue;
    const bool clamped = raw > cfg.alpha_max;
    out.push_back({idx, clamped ? cfg.alpha_max : raw, falloff, clamped, d});
  }
}

std::vector<Mat2> conics_of(const RasterState& state, double eps2d) {
  std::vector<Mat2> conics(state.projected.size(), Mat2::Zero());
  for (std::size_t i = 0; i < state.projected.size(); ++i) {
    if (state.projected[i]) conics[i] = regularized_inverse(state.projected[i]->covariance, eps2d);
  }
  return conics;
}

}  // namespace

RasterOutput rasterize(const GaussianCloud& cloud, const CameraPose& camera,
                       const RasterConfig& cfg) {
  if (cloud.gaussians.empty()) throw InvalidArgument("rasterize: empty cloud");
  const int w = camera.width;
  const int h = camera.height;
  RasterOutput out;
  RasterState& state = out.state;
  state.width = w;
  state.height = h;
  state.cloud_size = cloud.size();
  state.projected.resize(cloud.size());
  std::vector<std::uint32_t> order;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    state.projected[i] = project_gaussian(cloud.gaussians[i], camera, cfg.z_min);
    if (state.projected[i]) {
      state.projected[i]->source = i;
      order.push_back(static_cast<std::uint32_t>(i));
    }
  }
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return state.projected[a]->depth < state.projected[b]->depth;
  });

  state.pixel_lists.assign(static_cast<std::size_t>(w) * h, {});
  for (std::uint32_t idx : order) {
    const auto& pg = *state.projected[idx];
    int x0 = 0, x1 = w - 1, y0 = 0, y1 = h - 1;
    if (cfg.extent_sigmas > 0.0) {
      const Mat2 reg = pg.covariance + cfg.eps2d * Mat2::Identity();
      const double mid = 0.5 * reg.trace();
      const double det = reg.determinant();
      const double lambda = mid + std::sqrt(std::max(mid * mid - det, 0.0));
      const double radius = cfg.extent_sigmas * std::sqrt(lambda);
      const auto lo = [](double v) { return static_cast<int>(std::floor(v)); };
      x0 = std::max(x0, lo(pg.mean.x() - radius - 0.5));
      x1 = std::min(x1, lo(pg.mean.x() + radius - 0.5) + 1);
      y0 = std::max(y0, lo(pg.mean.y() - radius - 0.5));
      y1 = std::min(y1, lo(pg.mean.y() + radius - 0.5) + 1);
    }
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        state.pixel_lists[static_cast<std::size_t>(y) * w + x].push_back(idx);
      }
    }
  }

  const std::vector<Mat2> conics = conics_of(state, cfg.eps2d);
  out.image = RenderedImage(w, h);
  std::vector<Contribution> contribs;
  const bool squared = cfg.variance_weighting == VarianceWeighting::kSquared;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      gather(cloud, state, conics, cfg, x, y, contribs);
      RenderedPixel px;
      double trans = 1.0;
      for (const auto& c : contribs) {
        const auto& g = cloud.gaussians[c.index];
        const double wgt = trans * c.alpha;
        px.color += wgt * g.color;
        px.color_variance += Vec3::Constant((squared ? wgt * wgt : wgt) * g.beta(cloud.beta_floor));
        px.depth += wgt * state.projected[c.index]->depth;
        px.accumulation += wgt;
        trans *= 1.0 - c.alpha;
      }
      px.color += trans * cfg.background;
      trans = 1.0;
      for (const auto& c : contribs) {
        const double wgt = trans * c.alpha;
        const double dz = state.projected[c.index]->depth - px.depth;
        px.depth_variance += wgt * dz * dz;
        trans *= 1.0 - c.alpha;
      }
      out.image.set(x, y, px);
    }
  }
  return out;
}

namespace {

Quat quaternion_backward(const Quat& q, const Mat3& dr) {
  const double norm = q.norm();
  const Quat n = q / norm;
  const double w = n[0], x = n[1], y = n[2], z = n[3];
  Quat dn;
  dn[0] = 2 * (-z * dr(0, 1) + y * dr(0, 2) + z * dr(1, 0) - x * dr(1, 2) - y * dr(2, 0) +
               x * dr(2, 1));
  dn[1] = 2 * (y * dr(0, 1) + z * dr(0, 2) + y * dr(1, 0) - 2 * x * dr(1, 1) - w * dr(1, 2) +
               z * dr(2, 0) + w * dr(2, 1) - 2 * x * dr(2, 2));
  dn[2] = 2 * (-2 * y * dr(0, 0) + x * dr(0, 1) + w * dr(0, 2) + x * dr(1, 0) + z * dr(1, 2) -
               w * dr(2, 0) + z * dr(2, 1) - 2 * y * dr(2, 2));
  dn[3] = 2 * (-2 * z * dr(0, 0) - w * dr(0, 1) + x * dr(0, 2) + w * dr(1, 0) -
               2 * z * dr(1, 1) + y * dr(1, 2) + x * dr(2, 0) + y * dr(2, 1));
  return (dn - n * n.dot(dn)) / norm;
}

}  // namespace

std::vector<GaussianGradient> rasterize_backward(const GaussianCloud& cloud,
                                                 const CameraPose& camera,
                                                 const RasterConfig& cfg,
                                                 const RasterState& state,
                                                 const RenderedImage& upstream) {
  require(state.cloud_size == cloud.size() && state.projected.size() == cloud.size(),
          "rasterize_backward: state does not match the cloud");
  require(state.width == camera.width && state.height == camera.height,
          "rasterize_backward: state does not match the camera");
  const int w = state.width;
  const int h = state.height;
  const auto shape_ok = [&](const Image& img, int ch) {
    return img.width() == w && img.height() == h && img.channels() == ch;
  };
  require(shape_ok(upstream.color, 3) && shape_ok(upstream.color_variance, 3) &&
              shape_ok(upstream.depth, 1) && shape_ok(upstream.depth_variance, 1) &&
              shape_ok(upstream.accumulation, 1),
          "rasterize_backward: upstream gradient shape mismatch");

  const std::size_t n = cloud.size();
  std::vector<GaussianGradient> grads(n);
  std::vector<Mat2> d_conic(n, Mat2::Zero());
  std::vector<double> d_depth(n, 0.0);
  std::vector<double> d_opacity(n, 0.0);
  std::vector<double> d_beta(n, 0.0);
  const std::vector<Mat2> conics = conics_of(state, cfg.eps2d);
  const bool squared = cfg.variance_weighting == VarianceWeighting::kSquared;

  std::vector<Contribution> contribs;
  std::vector<double> trans;
  std::vector<double> g_w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      gather(cloud, state, conics, cfg, x, y, contribs);
      const std::size_t k = contribs.size();
      if (k == 0) continue;
      const Vec3 gc(upstream.color.at(x, y, 0), upstream.color.at(x, y, 1),
                    upstream.color.at(x, y, 2));
      const double gv = upstream.color_variance.at(x, y, 0) +
                        upstream.color_variance.at(x, y, 1) +
                        upstream.color_variance.at(x, y, 2);
      const double gd = upstream.depth.at(x, y);
      const double gvd = upstream.depth_variance.at(x, y);
      const double ga = upstream.accumulation.at(x, y);

      trans.resize(k + 1);
      trans[0] = 1.0;
      double depth = 0.0, acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        const double wgt = trans[i] * contribs[i].alpha;
        depth += wgt * state.projected[contribs[i].index]->depth;
        acc += wgt;
        trans[i + 1] = trans[i] * (1.0 - contribs[i].alpha);
      }

      g_w.resize(k);
      for (std::size_t i = 0; i < k; ++i) {
        const auto idx = contribs[i].index;
        const auto& g = cloud.gaussians[idx];
        const double wgt = trans[i] * contribs[i].alpha;
        const double z = state.projected[idx]->depth;
        const double beta = g.beta(cloud.beta_floor);
        const double dz = z - depth;
        g_w[i] = gc.dot(g.color) + gv * (squared ? 2.0 * wgt * beta : beta) + gd * z + ga +
                 gvd * (dz * dz - 2.0 * z * depth * (1.0 - acc));
        grads[idx].color += wgt * gc;
        d_beta[idx] += gv * (squared ? wgt * wgt : wgt);
        d_depth[idx] += gd * wgt + gvd * 2.0 * wgt * (dz - depth * (1.0 - acc));
      }

      // r_i = d(outputs behind i, incl. background)/d(T_{i+1}), division free.
      double r = gc.dot(cfg.background);
      for (std::size_t ii = k; ii-- > 0;) {
        const auto& c = contribs[ii];
        const double g_alpha = trans[ii] * (g_w[ii] - r);
        r = g_w[ii] * c.alpha + (1.0 - c.alpha) * r;
        if (c.clamped) continue;
        const double o = cloud.gaussians[c.index].opacity();
        d_opacity[c.index] += c.falloff * g_alpha;
        const double g_fall = o * g_alpha;
        const Vec2 ad = conics[c.index] * c.offset;
        grads[c.index].mean2d += c.falloff * g_fall * ad;
        d_conic[c.index] += -0.5 * c.falloff * g_fall * c.offset * c.offset.transpose();
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!state.projected[i]) continue;
    const auto& g = cloud.gaussians[i];
    auto& out = grads[i];
    const double o = g.opacity();
    out.opacity_raw = d_opacity[i] * o * (1.0 - o);
    out.beta_raw = d_beta[i] * sigmoid(g.beta_raw);

    const ProjectionTerms t = projection_terms(g, camera);
    const double f = camera.focal;
    const double d = t.depth;
    const Mat2 d_cov2 = -conics[i] * d_conic[i] * conics[i];
    const Mat2 d_cov2_sym = 0.5 * (d_cov2 + d_cov2.transpose());

    Vec3 dp = t.jac.transpose() * out.mean2d;
    dp.z() -= d_depth[i];
    const Eigen::Matrix<double, 2, 3> dj = 2.0 * d_cov2_sym * t.jac * t.cov_cam;
    dp.x() += dj(0, 2) * f / (d * d);
    dp.y() += dj(1, 2) * f / (d * d);
    dp.z() += (dj(0, 0) + dj(1, 1)) * f / (d * d) +
              dj(0, 2) * 2.0 * f * t.p_cam.x() / (d * d * d) +
              dj(1, 2) * 2.0 * f * t.p_cam.y() / (d * d * d);
    out.mean = camera.rotation.transpose() * dp;

    const Mat3 d_cov_cam = t.jac.transpose() * d_cov2_sym * t.jac;
    const Mat3 d_cov = camera.rotation.transpose() * d_cov_cam * camera.rotation;
    const Mat3 rot = quaternion_to_rotation(g.rotation);
    const Mat3 m = rot * g.scale.asDiagonal();
    const Mat3 dm = 2.0 * d_cov * m;
    for (int c = 0; c < 3; ++c) out.scale[c] = dm.col(c).dot(rot.col(c));
    const Mat3 drot = dm * g.scale.asDiagonal();
    out.rotation = quaternion_backward(g.rotation, drot);
  }
  return grads;
}

GaussianCloud densify_and_prune(const GaussianCloud& cloud, const DensifyThresholds& th,
                                std::vector<std::size_t>* origin) {
  const std::size_t n = cloud.size();
  require(cloud.grad_accum.size() == n && cloud.grad_count.size() == n,
          "densify_and_prune: missing gradient statistics");
  Rng rng(mix_seed(th.seed, 0xd3));
  std::normal_distribution<double> normal(0.0, 1.0);
  GaussianCloud out;
  out.beta_floor = cloud.beta_floor;
  if (origin) origin->clear();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t before = out.gaussians.size();
    const Gaussian3D& g = cloud.gaussians[i];
    const double mean_grad =
        cloud.grad_count[i] > 0 ? cloud.grad_accum[i] / cloud.grad_count[i] : 0.0;
    const double max_scale = g.scale.maxCoeff();
    if (g.opacity() < th.opacity || max_scale > th.max_size) continue;
    if (mean_grad <= th.grad) {
      out.gaussians.push_back(g);
    } else if (max_scale <= th.dense_scale) {
      out.gaussians.push_back(g);
      out.gaussians.push_back(g);
    } else {
      const Mat3 rot = quaternion_to_rotation(g.rotation);
      for (int k = 0; k < 2; ++k) {
        Gaussian3D child = g;
        const Vec3 local(normal(rng) * g.scale.x(), normal(rng) * g.scale.y(),
                         normal(rng) * g.scale.z());
        child.mean = g.mean + rot * local;
        child.scale = g.scale / th.split_divisor;
        out.gaussians.push_back(child);
      }
    }
    if (origin) origin->insert(origin->end(), out.gaussians.size() - before, i);
  }
  if (out.gaussians.empty()) throw std::runtime_error("densify_and_prune: every Gaussian was pruned");
  out.reset_statistics();
  return out;
}

GaussianCloud init_cloud_from_views(const ViewDataset& dataset, int count, std::uint64_t seed,
                                    double initial_opacity, double initial_beta) {
  require(count > 0, "init_cloud_from_views: count must be positive");
  require(initial_opacity > 0.0 && initial_opacity < 1.0,
          "init_cloud_from_views: opacity must be in (0,1)");
  struct Candidate {
    std::size_t view;
    int x, y;
  };
  std::vector<Candidate> candidates;
  for (std::size_t v = 0; v < dataset.views.size(); ++v) {
    const auto& view = dataset.views[v];
    if (view.split != SplitTag::kTrain || !view.depth) continue;
    for (int y = 0; y < view.depth->height(); ++y) {
      for (int x = 0; x < view.depth->width(); ++x) {
        if (view.depth->at(x, y) > 0.0) candidates.push_back({v, x, y});
      }
    }
  }
  if (candidates.empty()) throw InvalidArgument("init_cloud_from_views: no surface pixels");
  Rng rng(mix_seed(seed, 0x1417));
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  GaussianCloud cloud;
  cloud.gaussians.resize(static_cast<std::size_t>(count));
  // Invert softplus: beta_raw = log(expm1(beta - floor)).
  const double beta_raw = std::log(std::expm1(std::max(initial_beta - cloud.beta_floor, 1e-12)));
  const double opacity_raw = std::log(initial_opacity / (1.0 - initial_opacity));
  for (auto& g : cloud.gaussians) {
    const Candidate c = candidates[pick(rng)];
    const auto& view = dataset.views[c.view];
    const Ray ray = generate_ray(view.pose, c.x, c.y, 1e-6, 1.0);
    g.mean = ray.origin + view.depth->at(c.x, c.y) * ray.direction;
    g.color = Vec3(view.rgb.at(c.x, c.y, 0), view.rgb.at(c.x, c.y, 1), view.rgb.at(c.x, c.y, 2));
    g.opacity_raw = opacity_raw;
    g.beta_raw = beta_raw;
  }
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    std::array<double, 3> nearest{std::numeric_limits<double>::infinity(),
                                  std::numeric_limits<double>::infinity(),
                                  std::numeric_limits<double>::infinity()};
    for (std::size_t j = 0; j < cloud.size(); ++j) {
      if (j == i) continue;
      const double dist = (cloud.gaussians[i].mean - cloud.gaussians[j].mean).norm();
      if (dist < nearest[2]) {
        nearest[2] = dist;
        std::sort(nearest.begin(), nearest.end());
      }
    }
    double sum = 0.0;
    int used = 0;
    for (double v : nearest) {
      if (std::isfinite(v)) {
        sum += v;
        ++used;
      }
    }
    const double s = used > 0 ? std::max(sum / used, 1e-4) : 0.05;
    cloud.gaussians[i].scale = Vec3::Constant(s);
  }
  cloud.reset_statistics();
  return cloud;
}

namespace {

using json = nlohmann::json;
constexpr int kCloudVersion = 1;

}  // namespace

void save_cloud(const GaussianCloud& cloud, const std::filesystem::path& path) {
  json doc;
  doc["format"] = "uqrecon-cloud";
  doc["version"] = kCloudVersion;
  doc["beta_floor"] = cloud.beta_floor;
  json records = json::array();
  for (const auto& g : cloud.gaussians) {
    records.push_back({{"mean", {g.mean.x(), g.mean.y(), g.mean.z()}},
                       {"scale", {g.scale.x(), g.scale.y(), g.scale.z()}},
                       {"rotation", {g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]}},
                       {"opacity_raw", g.opacity_raw},
                       {"color", {g.color.x(), g.color.y(), g.color.z()}},
                       {"beta_raw", g.beta_raw}});
  }
  doc["gaussians"] = records;
  std::ofstream out(path);
  if (!out) throw IoError("save_cloud: cannot write " + path.string());
  out << doc.dump() << '\n';
}

GaussianCloud load_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_cloud: cannot open " + path.string());
  GaussianCloud cloud;
  try {
    const json doc = json::parse(in);
    if (doc.value("format", "") != "uqrecon-cloud") throw IoError("load_cloud: not a cloud checkpoint");
    if (doc.value("version", 0) != kCloudVersion) throw IoError("load_cloud: unsupported version");
    cloud.beta_floor = doc.at("beta_floor").get<double>();
    for (const auto& r : doc.at("gaussians")) {
      Gaussian3D g;
      const auto vec3 = [&](const char* key) {
        const auto v = r.at(key).get<std::vector<double>>();
        if (v.size() != 3) throw IoError("load_cloud: bad field " + std::string(key));
        return Vec3(v[0], v[1], v[2]);
      };
      g.mean = vec3("mean");
      g.scale = vec3("scale");
      g.color = vec3("color");
      const auto q = r.at("rotation").get<std::vector<double>>();
      if (q.size() != 4) throw IoError("load_cloud: bad rotation");
      g.rotation = Quat(q[0], q[1], q[2], q[3]);
      g.opacity_raw = r.at("opacity_raw").get<double>();
      g.beta_raw = r.at("beta_raw").get<double>();
      cloud.gaussians.push_back(g);
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("load_cloud: malformed checkpoint: ") + e.what());
  }
  cloud.reset_statistics();
  return cloud;
}

void export_cloud_ply(const GaussianCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("export_cloud_ply: cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  out.precision(9);
  for (const auto& g : cloud.gaussians) {
    const auto byte = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
    out << g.mean.x() << ' ' << g.mean.y() << ' ' << g.mean.z() << ' ' << byte(g.color.x()) << ' '
        << byte(g.color.y()) << ' ' << byte(g.color.z()) << '\n';
  }
}

}  // namespace uqr
