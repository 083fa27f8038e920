#include "uqrecon/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "uqrecon/rng.hpp"

namespace uqr {

std::vector<std::size_t> ViewDataset::indices(SplitTag tag) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i].split == tag) out.push_back(i);
  }
  return out;
}

void ViewDataset::validate() const {
  for (const auto& view : views) {
    view.pose.validate();
    require(view.rgb.width() == view.pose.width && view.rgb.height() == view.pose.height &&
                view.rgb.channels() == 3,
            "ViewDataset: image does not match pose resolution");
    for (double x : view.rgb.values()) {
      require(x >= 0.0 && x <= 1.0, "ViewDataset: pixel value outside [0,1]");
    }
    if (view.depth) {
      require(view.depth->width() == view.pose.width && view.depth->height() == view.pose.height,
              "ViewDataset: depth does not match pose resolution");
    }
  }
}

ViewDataset render_dataset(const SceneModel& scene, const std::vector<CameraPose>& poses) {
  scene.validate();
  ViewDataset dataset;
  dataset.views.reserve(poses.size());
  for (const auto& pose : poses) {
    auto gt = trace_ground_truth(scene, pose);
    dataset.views.push_back({pose, std::move(gt.rgb), std::move(gt.depth), SplitTag::kTrain});
  }
  return dataset;
}

Image apply_gaussian_noise(const Image& image, double nu, std::uint64_t seed) {
  require(nu >= 0.0, "apply_gaussian_noise: noise scale must be >= 0");
  Image out = image;
  if (nu == 0.0) return out;
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, nu);
  for (double& x : out.values()) x = std::clamp(x + noise(rng), 0.0, 1.0);
  return out;
}

std::vector<double> gaussian_kernel(int k) {
  require(k >= 1 && k % 2 == 1, "gaussian_kernel: kernel size must be odd and positive");
  const double sigma = k / 4.0;
  const int half = k / 2;
  std::vector<double> w(static_cast<std::size_t>(k));
  double sum = 0.0;
  for (int i = -half; i <= half; ++i) {
    w[i + half] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += w[i + half];
  }
  for (double& x : w) x /= sum;
  return w;
}

Image apply_gaussian_blur(const Image& image, int k) {
  const auto kernel = gaussian_kernel(k);
  if (k == 1) return image;
  const int half = k / 2;
  const int w = image.width(), h = image.height(), ch = image.channels();
  Image tmp(w, h, ch), out(w, h, ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int i = -half; i <= half; ++i) {
          acc += kernel[i + half] * image.at(std::clamp(x + i, 0, w - 1), y, c);
        }
        tmp.at(x, y, c) = acc;
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int i = -half; i <= half; ++i) {
          acc += kernel[i + half] * tmp.at(x, std::clamp(y + i, 0, h - 1), c);
        }
        out.at(x, y, c) = acc;
      }
    }
  }
  return out;
}

namespace {

Vec3 saturated_color(Rng& rng) {
  std::uniform_int_distribution<int> pick(0, 5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int sector = pick(rng);
  const double mid = unit(rng);
  // One channel at 1, one at 0, one free: the six hue sectors.
  switch (sector) {
    case 0: return {1.0, mid, 0.0};
    case 1: return {mid, 1.0, 0.0};
    case 2: return {0.0, 1.0, mid};
    case 3: return {0.0, mid, 1.0};
    case 4: return {mid, 0.0, 1.0};
    default: return {1.0, 0.0, mid};
  }
}

}  // namespace

ClutterResult inject_clutter(const ViewDataset& dataset, const SceneModel& scene,
                             double proportion, std::uint64_t seed) {
  require(proportion >= 0.0 && proportion <= 1.0, "inject_clutter: proportion outside [0,1]");
  const auto train = dataset.indices(SplitTag::kTrain);
  require(!train.empty(), "inject_clutter: dataset has no train views");
  ClutterResult result{dataset, {}};
  const auto count = static_cast<std::size_t>(
      std::ceil(proportion * static_cast<double>(train.size()) - 1e-12));
  if (count == 0) return result;

  Rng rng(seed);
  std::vector<std::size_t> chosen = train;
  std::shuffle(chosen.begin(), chosen.end(), rng);
  chosen.resize(count);
  std::sort(chosen.begin(), chosen.end());

  const auto [scene_center, scene_radius] = scene.bounding_sphere();
  std::uniform_int_distribution<int> how_many(1, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t index : chosen) {
    View& view = result.dataset.views[index];
    const CameraPose& pose = view.pose;
    const double distance = (pose.center() - scene_center).norm();
    SceneModel cluttered = scene;
    const int n = how_many(rng);
    for (int k = 0; k < n; ++k) {
      // A pixel in the central 60% of the image, pushed 35-65% of the way to
      // the scene centre.
      const int u = static_cast<int>((0.2 + 0.6 * unit(rng)) * pose.width);
      const int v = static_cast<int>((0.2 + 0.6 * unit(rng)) * pose.height);
      const Ray ray = generate_ray(pose, std::min(u, pose.width - 1), std::min(v, pose.height - 1),
                                   1e-3, 1.0);
      const double t = (0.35 + 0.3 * unit(rng)) * distance;
      const double radius = (0.06 + 0.08 * unit(rng)) * distance * 0.5;
      cluttered.primitives.push_back(
          {Sphere{ray.origin + t * ray.direction, radius}, saturated_color(rng)});
    }
    auto gt = trace_ground_truth(cluttered, pose);
    view.rgb = std::move(gt.rgb);
    view.depth = std::move(gt.depth);
  }
  result.cluttered_views = std::move(chosen);
  return result;
}

namespace {

double angular_gap(double a, double b) {
  double d = std::fmod(std::abs(a - b), 2.0 * std::numbers::pi);
  return d > std::numbers::pi ? 2.0 * std::numbers::pi - d : d;
}

}  // namespace

ViewSplit split_views(const ViewDataset& dataset, const SplitMode& mode, std::uint64_t seed) {
  const std::size_t n = dataset.views.size();
  ViewSplit split;
  if (const auto* fraction = std::get_if<FractionSplit>(&mode)) {
    require(fraction->fraction > 0.0 && fraction->fraction <= 1.0,
            "split_views: fraction must be in (0, 1]");
    std::vector<std::size_t> remaining;
    for (std::size_t i = 0; i < n; ++i) (i % 10 == 0 ? split.test : remaining).push_back(i);
    const auto keep = static_cast<std::size_t>(
        std::ceil(fraction->fraction * static_cast<double>(remaining.size()) - 1e-12));
    Rng rng(seed);
    std::shuffle(remaining.begin(), remaining.end(), rng);
    remaining.resize(std::min(keep, remaining.size()));
    std::sort(remaining.begin(), remaining.end());
    split.train = std::move(remaining);
  } else if (std::holds_alternative<OodPositiveXSplit>(mode)) {
    for (std::size_t i = 0; i < n; ++i) {
      (dataset.views[i].pose.center().x() > 0.0 ? split.train : split.test).push_back(i);
    }
  } else {
    const int k = std::get<FewViewSplit>(mode).n;
    require(k >= 1, "split_views: few-view count must be >= 1");
    require(n >= 1, "split_views: empty dataset");
    const double reference = camera_azimuth(dataset.views[0].pose);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return angular_gap(camera_azimuth(dataset.views[a].pose), reference) <
             angular_gap(camera_azimuth(dataset.views[b].pose), reference);
    });
    const auto kk = static_cast<std::size_t>(k);
    for (std::size_t i = 0; i < order.size() && i < 2 * kk; ++i) {
      (i < kk ? split.train : split.test).push_back(order[i]);
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
  }
  require(!split.train.empty(), "split_views: empty train set");
  require(!split.test.empty(), "split_views: empty test set");
  return split;
}

ViewDataset apply_split(const ViewDataset& dataset, const ViewSplit& split) {
  ViewDataset out;
  for (std::size_t i : split.train) {
    out.views.push_back(dataset.views.at(i));
    out.views.back().split = SplitTag::kTrain;
  }
  for (std::size_t i : split.test) {
    out.views.push_back(dataset.views.at(i));
    out.views.back().split = SplitTag::kTest;
  }
  return out;
}

}  // namespace uqr
