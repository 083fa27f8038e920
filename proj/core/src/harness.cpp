#include "uqrecon/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include <nlohmann/json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "uqrecon/rng.hpp"
#include "uqrecon/transforms_io.hpp"

namespace uqr {

using json = nlohmann::json;

namespace {

// Stream labels for mix_seed; every random choice of a run derives from the
// master seed through one of these.
constexpr std::uint64_t kSplitStream = 0x5b117;
constexpr std::uint64_t kTrainStream = 0x7a11;
constexpr std::uint64_t kLaplaceStream = 0x1a91;
constexpr std::uint64_t kClutterStream = 0xc1a7;
constexpr std::uint64_t kNoiseStream = 0x401500000ULL;
constexpr std::uint64_t kPredictStream = 0xe7a1000000ULL;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void say(const ProgressSink& log, const std::string& message) {
  if (log) log(message);
}

Vec3 scene_background(const ExperimentConfig& config) {
  if (auto model = scene_model(config.scene)) return model->background;
  return Vec3::Ones();
}

TrainConfig effective_train(const ExperimentConfig& config) {
  TrainConfig t = config.train;
  t.seed = mix_seed(config.seed, kTrainStream);
  t.render.background = scene_background(config);
  t.raster.background = t.render.background;
  return t;
}

RenderConfig eval_render(const ExperimentConfig& config) {
  RenderConfig rc;
  rc.samples_per_ray = config.eval.samples_per_ray;
  rc.t_near = config.train.render.t_near;
  rc.t_far = config.train.render.t_far;
  rc.background = scene_background(config);
  return rc;
}

RasterConfig eval_raster(const ExperimentConfig& config) {
  RasterConfig rc = config.train.raster;
  rc.background = scene_background(config);
  return rc;
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? kNaN : s / static_cast<double>(v.size());
}

// Per-pixel channel means of an interleaved image.
std::vector<double> channel_mean(const Image& image) {
  std::vector<double> out(image.pixel_count());
  const int c = image.channels();
  const auto v = image.values();
  for (std::size_t p = 0; p < out.size(); ++p) {
    double s = 0.0;
    for (int k = 0; k < c; ++k) s += v[p * c + k];
    out[p] = s / c;
  }
  return out;
}

Image single_channel(const std::vector<double>& values, int width, int height) {
  Image out(width, height, 1);
  std::copy(values.begin(), values.end(), out.values().begin());
  return out;
}

std::uint64_t predict_seed(const ExperimentConfig& config, std::size_t view) {
  return mix_seed(config.seed, kPredictStream + view);
}

struct MetricSums {
  int n = 0;
  double psnr = 0, ssim = 0, nll = 0, ause = 0, auce = 0, variance = 0;
  int depth_n = 0;
  double depth_rmse = 0, depth_nll = 0;
  int depth_rank_n = 0;
  double depth_ause = 0, depth_auce = 0;

  void add(const ViewMetrics& m) {
    ++n;
    psnr += m.report.psnr;
    ssim += m.report.ssim;
    nll += m.report.nll;
    ause += m.report.ause;
    auce += m.report.auce;
    variance += m.mean_variance;
    if (m.report.depth_rmse) {
      ++depth_n;
      depth_rmse += *m.report.depth_rmse;
      depth_nll += *m.report.depth_nll;
    }
    if (m.report.depth_ause) {
      ++depth_rank_n;
      depth_ause += *m.report.depth_ause;
      depth_auce += *m.report.depth_auce;
    }
  }

  void fill(ResultsRow& row) const {
    if (n == 0) return;
    row.psnr = psnr / n;
    row.ssim = ssim / n;
    row.nll = nll / n;
    row.ause = ause / n;
    row.auce = auce / n;
    row.mean_variance = variance / n;
    if (depth_n > 0) {
      row.depth_rmse = depth_rmse / depth_n;
      row.depth_nll = depth_nll / depth_n;
    }
    if (depth_rank_n > 0) {
      row.depth_ause = depth_ause / depth_rank_n;
      row.depth_auce = depth_auce / depth_rank_n;
    }
  }
};

std::string cell_dir(const ResultsRow& row) {
  return row.protocol + "/" + row.variable + "_" + row.value + "/" + row.method;
}

void add_view_artifacts(std::vector<Artifact>& artifacts, const std::string& dir, std::size_t view,
                        const UncertainPrediction& p, const ExperimentConfig& config) {
  char name[32];
  std::snprintf(name, sizeof(name), "/view%03zu_", view);
  const std::string stem = dir + name;
  artifacts.push_back({stem + "render.png", Artifact::Kind::kColor, p.color, std::nullopt});
  artifacts.push_back({stem + "variance.png", Artifact::Kind::kHeatmap,
                       single_channel(channel_mean(p.color_variance), p.color.width(),
                                      p.color.height()),
                       std::nullopt});
  artifacts.push_back({stem + "depth.png", Artifact::Kind::kGray, p.depth,
                       std::pair{config.train.render.t_near, config.train.render.t_far}});
}

// Test-view evaluation of a trained model into `row`.
void evaluate_into(ResultsRow& row, const TrainedMethod& model, const ViewDataset& dataset,
                   const ExperimentConfig& config, std::vector<Artifact>* artifacts) {
  MetricSums sums;
  int written = 0;
  for (std::size_t i : dataset.indices(SplitTag::kTest)) {
    const View& view = dataset.views[i];
    const auto p = predict_view(model, view.pose, config, predict_seed(config, i));
    sums.add(evaluate_view(p, view, model.representation, config.eval));
    if (artifacts && written < config.eval.image_views) {
      add_view_artifacts(*artifacts, cell_dir(row), i, p, config);
      ++written;
    }
  }
  sums.fill(row);
  row.final_loss = model.final_loss;
}

ResultsRow make_row(Protocol protocol, std::string variable, std::string value, Method method,
                    const ExperimentConfig& config, const ViewDataset& dataset) {
  ResultsRow row;
  row.protocol = to_string(protocol);
  row.variable = std::move(variable);
  row.value = std::move(value);
  row.method = to_string(method);
  row.representation = to_string(config.representation);
  row.train_views = static_cast<int>(dataset.indices(SplitTag::kTrain).size());
  row.test_views = static_cast<int>(dataset.indices(SplitTag::kTest).size());
  return row;
}

// Trains one method; on divergence the row is marked and nullopt returned.
std::optional<TrainedMethod> train_cell(ResultsRow& row, const ViewDataset& dataset,
                                        const ExperimentConfig& config, Method method,
                                        const ProgressSink& log) {
  say(log, row.protocol + " " + row.variable + "=" + row.value + " " + row.method + ": training on " +
               std::to_string(row.train_views) + " views");
  try {
    return train_method(dataset, config, method);
  } catch (const InvalidArgument&) {
    throw;
  } catch (const std::runtime_error& e) {
    // Divergence (non-finite loss or activations, or a failed member).
    row.status = "diverged";
    say(log, std::string("  diverged: ") + e.what());
    return std::nullopt;
  }
}

ViewDataset degrade_train_views(const ViewDataset& dataset, double noise, int blur,
                                std::uint64_t seed) {
  ViewDataset out = dataset;
  for (std::size_t i = 0; i < out.views.size(); ++i) {
    View& v = out.views[i];
    if (v.split != SplitTag::kTrain) continue;
    if (blur > 1) v.rgb = apply_gaussian_blur(v.rgb, blur);
    if (noise > 0.0) v.rgb = apply_gaussian_noise(v.rgb, noise, mix_seed(seed, kNoiseStream + i));
  }
  return out;
}

}  // namespace

std::optional<SceneModel> scene_model(const SceneSpec& scene) {
  if (scene.kind == "default") return make_default_scene();
  if (scene.kind == "sphere") return make_sphere_scene(scene.sphere_radius, scene.color);
  if (scene.kind == "constant") {
    SceneModel model;
    model.background = scene.color;
    return model;
  }
  return std::nullopt;
}

ViewDataset build_dataset(const SceneSpec& scene) {
  if (scene.kind == "dataset") {
    ViewDataset ds = load_transforms_dataset(scene.dataset);
    ds.validate();
    return ds;
  }
  const auto model = scene_model(scene);
  if (!model) throw ConfigError("unknown scene kind '" + scene.kind + "'");
  const double focal = scene.focal_factor * scene.resolution;
  return render_dataset(*model, make_pose_ring(scene.views, scene.ring_radius, scene.elevation,
                                               Vec3::Zero(), focal, scene.resolution,
                                               scene.resolution));
}

ViewDataset default_split(const ViewDataset& dataset, std::uint64_t seed) {
  if (!dataset.indices(SplitTag::kTest).empty()) return dataset;
  return apply_split(dataset, split_views(dataset, FractionSplit{1.0}, mix_seed(seed, kSplitStream)));
}

TrainedMethod train_method(const ViewDataset& dataset, const ExperimentConfig& config, Method method) {
  TrainConfig t = effective_train(config);
  TrainedMethod out;
  out.method = method;
  out.representation = config.representation;
  const bool field = config.representation == Representation::kField;
  switch (method) {
    case Method::kVanilla:
    case Method::kActive: {
      const bool active = method == Method::kActive;
      if (field) {
        auto r = active ? train_active_field(dataset, t) : train_vanilla_field(dataset, t);
        out.model = std::move(r.field);
        out.final_loss = r.final_loss;
      } else {
        auto r = active ? train_active_cloud(dataset, t) : train_vanilla_cloud(dataset, t);
        out.model = std::move(r.cloud);
        out.final_loss = r.final_loss;
      }
      break;
    }
    case Method::kMcDropout: {
      require(field, "mc_dropout requires a field");
      t.dropout = config.eval.dropout;
      auto r = train_vanilla_field(dataset, t);
      out.model = std::move(r.field);
      out.final_loss = r.final_loss;
      break;
    }
    case Method::kLaplace: {
      require(field, "laplace requires a field");
      auto r = train_vanilla_field(dataset, t);
      LaplaceFitConfig fit;
      fit.batches = config.eval.laplace.batches;
      fit.rays_per_batch = config.eval.laplace.rays_per_batch;
      fit.prior_precision = config.eval.laplace.prior_precision;
      fit.render = t.render;
      fit.render.stratified = false;
      fit.seed = mix_seed(config.seed, kLaplaceStream);
      out.model = fit_laplace(r.field, dataset, fit);
      out.final_loss = r.final_loss;
      break;
    }
    case Method::kEnsemble: {
      const int m = config.eval.ensemble_members;
      if (field) {
        out.model = train_field_ensemble(dataset, t, m);
      } else {
        out.model = train_cloud_ensemble(dataset, t, m);
      }
      out.final_loss = kNaN;
      break;
    }
  }
  return out;
}

UncertainPrediction predict_view(const TrainedMethod& model, const CameraPose& camera,
                                 const ExperimentConfig& config, std::uint64_t seed) {
  const RenderConfig rc = eval_render(config);
  const RasterConfig raster = eval_raster(config);
  const auto& e = config.eval;
  return std::visit(
      [&](const auto& m) -> UncertainPrediction {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, MlpField>) {
          if (model.method == Method::kMcDropout) {
            return predict_mc_dropout(m, camera, rc, e.mc_passes, e.dropout, seed);
          }
          return predict_single(m, camera, rc);
        } else if constexpr (std::is_same_v<T, GaussianCloud>) {
          return predict_single(m, camera, raster);
        } else if constexpr (std::is_same_v<T, FieldEnsemble>) {
          return predict_ensemble(m, camera, rc);
        } else if constexpr (std::is_same_v<T, CloudEnsemble>) {
          return predict_ensemble(m, camera, raster);
        } else {
          return predict_laplace(m, camera, rc, e.laplace.weight_draws, e.laplace.density_draws, seed);
        }
      },
      model.model);
}

const MlpField& representative_field(const TrainedMethod& model) {
  if (const auto* f = std::get_if<MlpField>(&model.model)) return *f;
  if (const auto* p = std::get_if<LaplacePosterior>(&model.model)) return p->mode;
  if (const auto* e = std::get_if<FieldEnsemble>(&model.model)) return e->members.front();
  throw InvalidArgument("pose gradients need a field representation");
}

MlpField with_constant_color(const MlpField& field, const Vec3& color) {
  MlpField out = field;
  const int last = out.layer_count(Net::kColor) - 1;
  auto w = out.weight(Net::kColor, last);
  auto b = out.bias(Net::kColor, last);
  const bool sigmoid_head = out.architecture().color_activation == ColorActivation::kSigmoid;
  for (int c = 0; c < 3; ++c) {
    w.row(c).setZero();
    const double v = std::clamp(color[c], 1e-12, 1.0 - 1e-12);
    b[c] = sigmoid_head ? std::log(v / (1.0 - v)) : color[c];
  }
  return out;
}

ViewMetrics evaluate_view(const UncertainPrediction& p, const View& truth,
                          Representation representation, const EvalSettings& settings) {
  require(p.color.same_shape(truth.rgb), "evaluate_view: prediction and ground truth differ in shape");
  ViewMetrics m;
  m.report.psnr = psnr(p.color, truth.rgb);
  m.report.ssim = ssim(p.color, truth.rgb);
  m.report.nll = gaussian_nll(p.color, p.color_variance, truth.rgb, settings.rgb_min_std);

  const auto mu = p.color.values();
  const auto var = p.color_variance.values();
  const auto gt = truth.rgb.values();
  const std::size_t pixels = p.color.pixel_count();
  std::vector<double> err(pixels, 0.0), unc(pixels, 0.0), sd(var.size());
  for (std::size_t i = 0; i < pixels; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double r = mu[3 * i + c] - gt[3 * i + c];
      err[i] += r * r / 3.0;
      unc[i] += var[3 * i + c] / 3.0;
    }
  }
  for (std::size_t k = 0; k < var.size(); ++k) sd[k] = std::sqrt(std::max(var[k], 0.0));
  m.report.ause = ause(err, unc, settings.ause_steps).value;
  m.report.auce = auce(mu, sd, gt, settings.auce_levels).value;
  m.mean_variance = mean_of(var);

  if (truth.depth) {
    const CameraPose& pose = truth.pose;
    Mask mask(pose.width, pose.height);
    Image gt_depth = *truth.depth;
    const Vec3 axis = pose.optical_axis();
    for (int y = 0; y < pose.height; ++y) {
      for (int x = 0; x < pose.width; ++x) {
        const double d = truth.depth->at(x, y);
        if (!(d > 0.0)) continue;
        mask.set(x, y, true);
        if (representation == Representation::kCloud) {
          gt_depth.at(x, y) = d * generate_ray(pose, x, y, 1e-6, 1.0).direction.dot(axis);
        }
      }
    }
    const std::size_t n = mask.count();
    if (n >= 1) {
      m.report.depth_rmse = depth_rmse(p.depth, gt_depth, mask);
      m.report.depth_nll = gaussian_nll(p.depth, p.depth_variance, gt_depth, settings.depth_min_std, &mask);
    }
    if (n >= 2) {
      std::vector<double> d_err, d_unc, d_mu, d_sd, d_gt;
      for (std::size_t i = 0; i < mask.data.size(); ++i) {
        if (!mask.data[i]) continue;
        const double mu_d = p.depth.values()[i];
        const double v_d = std::max(p.depth_variance.values()[i], 0.0);
        const double g = gt_depth.values()[i];
        d_err.push_back((mu_d - g) * (mu_d - g));
        d_unc.push_back(v_d);
        d_mu.push_back(mu_d);
        d_sd.push_back(std::sqrt(v_d));
        d_gt.push_back(g);
      }
      m.report.depth_ause = ause(d_err, d_unc, settings.ause_steps).value;
      m.report.depth_auce = auce(d_mu, d_sd, d_gt, settings.auce_levels).value;
    }
  }
  return m;
}

ProtocolResult run_protocol_aleatoric(const ExperimentConfig& config, const ProgressSink& log) {
  config.validate();
  const ViewDataset base = default_split(build_dataset(config.scene), config.seed);
  struct Point {
    std::string variable;
    double noise;
    int blur;
    std::string value;
  };
  std::vector<Point> points;
  for (double nu : config.aleatoric.noise) points.push_back({"noise", nu, 1, format_value(nu)});
  for (int k : config.aleatoric.blur) points.push_back({"blur", 0.0, k, std::to_string(k)});

  ProtocolResult result;
  for (Method method : config.methods) {
    // The clean dataset is shared by noise 0 and blur 1; train it once.
    std::optional<ResultsRow> clean;
    for (const auto& pt : points) {
      const bool is_clean = pt.noise == 0.0 && pt.blur == 1;
      ResultsRow row = make_row(Protocol::kAleatoric, pt.variable, pt.value, method, config, base);
      if (is_clean && clean) {
        ResultsRow copy = *clean;
        copy.variable = row.variable;
        copy.value = row.value;
        result.table.rows.push_back(copy);
        continue;
      }
      const ViewDataset ds = degrade_train_views(base, pt.noise, pt.blur, config.seed);
      if (auto model = train_cell(row, ds, config, method, log)) {
        evaluate_into(row, *model, ds, config, &result.artifacts);
      }
      if (is_clean) clean = row;
      result.table.rows.push_back(row);
    }
  }
  return result;
}

ProtocolResult run_protocol_views(const ExperimentConfig& config, const ProgressSink& log) {
  config.validate();
  ViewDataset full = build_dataset(config.scene);
  for (auto& v : full.views) v.split = SplitTag::kTrain;
  struct Point {
    std::string variable;
    std::string value;
    SplitMode mode;
  };
  std::vector<Point> points;
  for (double f : config.views.fractions) points.push_back({"fraction", format_value(f), FractionSplit{f}});
  if (config.views.ood) points.push_back({"split", "ood", OodPositiveXSplit{}});
  for (int n : config.views.few_view) points.push_back({"few_view", std::to_string(n), FewViewSplit{n}});

  ProtocolResult result;
  for (Method method : config.methods) {
    for (const auto& pt : points) {
      const ViewDataset ds =
          apply_split(full, split_views(full, pt.mode, mix_seed(config.seed, kSplitStream)));
      ResultsRow row = make_row(Protocol::kViews, pt.variable, pt.value, method, config, ds);
      if (auto model = train_cell(row, ds, config, method, log)) {
        evaluate_into(row, *model, ds, config, &result.artifacts);
      }
      result.table.rows.push_back(row);
    }
  }
  return result;
}

ProtocolResult run_protocol_clutter(const ExperimentConfig& config, const ProgressSink& log) {
  config.validate();
  const auto scene = scene_model(config.scene);
  if (!scene) throw ConfigError("the clutter protocol needs a synthetic scene");
  const ViewDataset base = default_split(build_dataset(config.scene), config.seed);

  ProtocolResult result;
  for (Method method : config.methods) {
    for (double proportion : config.clutter.proportions) {
      const ClutterResult cluttered =
          inject_clutter(base, *scene, proportion, mix_seed(config.seed, kClutterStream));
      const ViewDataset& ds = cluttered.dataset;
      ResultsRow row =
          make_row(Protocol::kClutter, "proportion", format_value(proportion), method, config, ds);
      auto model = train_cell(row, ds, config, method, log);
      if (!model) {
        result.table.rows.push_back(row);
        continue;
      }
      evaluate_into(row, *model, ds, config, &result.artifacts);

      // Predicted std at the cluttered train views, split by whether the
      // distractors changed the ground-truth pixel.
      double dist_sum = 0.0, clean_sum = 0.0;
      std::size_t dist_n = 0, clean_n = 0;
      int written = 0;
      for (std::size_t i : cluttered.cluttered_views) {
        const View& view = ds.views[i];
        const Image& original = base.views[i].rgb;
        const auto p = predict_view(*model, view.pose, config, predict_seed(config, i));
        const auto var = channel_mean(p.color_variance);
        std::vector<double> mask_values(var.size(), 0.0);
        for (std::size_t px = 0; px < var.size(); ++px) {
          bool differs = false;
          for (int c = 0; c < 3; ++c) {
            differs |= view.rgb.values()[3 * px + c] != original.values()[3 * px + c];
          }
          const double sd = std::sqrt(std::max(var[px], 0.0));
          if (differs) {
            dist_sum += sd;
            ++dist_n;
            mask_values[px] = 1.0;
          } else {
            clean_sum += sd;
            ++clean_n;
          }
        }
        if (written < config.eval.image_views) {
          char name[48];
          std::snprintf(name, sizeof(name), "/train%03zu_", i);
          const std::string stem = cell_dir(row) + name;
          result.artifacts.push_back({stem + "gt.png", Artifact::Kind::kColor, view.rgb, std::nullopt});
          result.artifacts.push_back({stem + "render.png", Artifact::Kind::kColor, p.color, std::nullopt});
          result.artifacts.push_back({stem + "variance.png", Artifact::Kind::kHeatmap,
                                      single_channel(var, view.pose.width, view.pose.height),
                                      std::nullopt});
          result.artifacts.push_back({stem + "distractors.png", Artifact::Kind::kGray,
                                      single_channel(mask_values, view.pose.width, view.pose.height),
                                      std::pair{0.0, 1.0}});
          ++written;
        }
      }
      if (dist_n > 0) row.distractor_std = dist_sum / static_cast<double>(dist_n);
      if (clean_n > 0 && dist_n > 0) row.clean_std = clean_sum / static_cast<double>(clean_n);
      result.table.rows.push_back(row);
    }
  }
  return result;
}

ProtocolResult run_protocol_pose(const ExperimentConfig& config, const ProgressSink& log) {
  config.validate();
  if (config.representation != Representation::kField) {
    throw ConfigError("the pose protocol needs representation 'field'");
  }
  const ViewDataset base = default_split(build_dataset(config.scene), config.seed);
  std::size_t view_index = 0;
  if (config.pose.view >= 0) {
    if (static_cast<std::size_t>(config.pose.view) >= base.views.size()) {
      throw ConfigError("pose.view is out of range");
    }
    view_index = static_cast<std::size_t>(config.pose.view);
  } else {
    view_index = base.indices(SplitTag::kTest).front();
  }
  const CameraPose camera = base.views[view_index].pose;
  const RenderConfig rc = eval_render(config);

  ProtocolResult result;
  for (Method method : config.methods) {
    ResultsRow proto = make_row(Protocol::kPose, "shift", "0", method, config, base);
    auto model = train_cell(proto, base, config, method, log);
    if (!model) {
      for (double shift : config.pose.shifts) {
        ResultsRow row = proto;
        row.value = format_value(shift);
        result.table.rows.push_back(row);
      }
      continue;
    }
    proto.final_loss = model->final_loss;
    const MlpField field = config.pose.constant_radiance
                               ? with_constant_color(representative_field(*model), rc.background)
                               : representative_field(*model);
    say(log, "pose " + to_string(method) + ": gradient map at zero shift");
    const Image base_map = pose_gradient_map(field, camera, rc);
    const std::string dir = proto.protocol + "/" + proto.method;
    result.artifacts.push_back(
        {dir + "/render.png", Artifact::Kind::kColor, render_field(field, camera, rc).color, std::nullopt});
    result.artifacts.push_back({dir + "/gradient_shift_0.png", Artifact::Kind::kHeatmap, base_map, std::nullopt});
    for (double shift : config.pose.shifts) {
      ResultsRow row = proto;
      row.value = format_value(shift);
      say(log, "pose " + to_string(method) + ": shift " + row.value);
      const Image map = pose_gradient_map(field, perturb_pose_z(camera, shift), rc);
      const Image raw = gradient_norm_difference(base_map, map, 0.0);
      row.grad_diff_mean = mean_of(raw.values());
      result.artifacts.push_back(
          {dir + "/gradient_shift_" + row.value + ".png", Artifact::Kind::kHeatmap, map, std::nullopt});
      result.artifacts.push_back({dir + "/difference_shift_" + row.value + ".png", Artifact::Kind::kHeatmap,
                                  gradient_norm_difference(base_map, map, config.pose.percentile),
                                  std::nullopt});
      result.table.rows.push_back(row);
    }
  }
  return result;
}

ProtocolResult run_protocol(Protocol protocol, const ExperimentConfig& config, const ProgressSink& log) {
  switch (protocol) {
    case Protocol::kAleatoric:
      return run_protocol_aleatoric(config, log);
    case Protocol::kViews:
      return run_protocol_views(config, log);
    case Protocol::kClutter:
      return run_protocol_clutter(config, log);
    case Protocol::kPose:
      return run_protocol_pose(config, log);
  }
  throw InvalidArgument("unknown protocol");
}

ProtocolResult run_train_eval(const ExperimentConfig& config, Method method, const ProgressSink& log) {
  config.validate();
  const ViewDataset ds = default_split(build_dataset(config.scene), config.seed);
  ProtocolResult result;
  ResultsRow row;
  row = make_row(Protocol::kAleatoric, "none", "0", method, config, ds);
  row.protocol = "eval";
  if (auto model = train_cell(row, ds, config, method, log)) {
    evaluate_into(row, *model, ds, config, &result.artifacts);
  }
  result.table.rows.push_back(row);
  return result;
}

ProtocolResult evaluate_model(const TrainedMethod& model, const ExperimentConfig& config) {
  const ViewDataset ds = default_split(build_dataset(config.scene), config.seed);
  ProtocolResult result;
  ResultsRow row = make_row(Protocol::kAleatoric, "none", "0", model.method, config, ds);
  row.protocol = "eval";
  row.representation = to_string(model.representation);
  evaluate_into(row, model, ds, config, &result.artifacts);
  result.table.rows.push_back(row);
  return result;
}

void tune_process_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace uqr
