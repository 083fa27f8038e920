#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "uqrecon/camera.hpp"
#include "uqrecon/image.hpp"
#include "uqrecon/scene.hpp"

namespace uqr {

enum class SplitTag { kTrain, kTest };

struct View {
  CameraPose pose;
  Image rgb;                   // 3 channels in [0,1]
  std::optional<Image> depth;  // ray distance, 0 marks "no surface"
  SplitTag split = SplitTag::kTrain;
};

struct ViewDataset {
  std::vector<View> views;

  std::vector<std::size_t> indices(SplitTag tag) const;
  // Throws InvalidArgument if an image does not match its pose or holds
  // values outside [0,1].
  void validate() const;
};

// Ground-truth renders of `scene` from every pose; all views tagged train.
ViewDataset render_dataset(const SceneModel& scene, const std::vector<CameraPose>& poses);

// clamp(in + eps, 0, 1), eps ~ N(0, nu^2) i.i.d. per pixel and channel.
Image apply_gaussian_noise(const Image& image, double nu, std::uint64_t seed);

// Normalized 1-D Gaussian kernel of odd width k with sigma = k / 4.
std::vector<double> gaussian_kernel(int k);

// Separable Gaussian blur with the kernel above and clamp-to-edge borders.
Image apply_gaussian_blur(const Image& image, int k);

struct ClutterResult {
  ViewDataset dataset;
  std::vector<std::size_t> cluttered_views;  // indices into dataset.views
};

// Adds 1-3 distractor spheres (random frustum position, saturated colour) to
// ceil(proportion * |train|) randomly chosen train views by re-tracing those
// views with the distractors present. Test views are untouched.
ClutterResult inject_clutter(const ViewDataset& dataset, const SceneModel& scene,
                             double proportion, std::uint64_t seed);

struct FractionSplit {
  double fraction = 1.0;  // in (0, 1]
};
struct OodPositiveXSplit {};
struct FewViewSplit {
  int n = 4;
};
using SplitMode = std::variant<FractionSplit, OodPositiveXSplit, FewViewSplit>;

struct ViewSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// fraction: every 10th view (starting at index 0) is test, then
//   ceil(p * remaining) of the rest are sampled as train.
// ood_positive_x: train = views whose camera centre has x > 0.
// few_view: train = the n views nearest in azimuth to view 0 (itself
//   included), test = the next n nearest.
// Throws InvalidArgument when either side comes out empty.
ViewSplit split_views(const ViewDataset& dataset, const SplitMode& mode, std::uint64_t seed);

// Copy of `dataset` holding only the listed views, re-tagged.
ViewDataset apply_split(const ViewDataset& dataset, const ViewSplit& split);

}  // namespace uqr
