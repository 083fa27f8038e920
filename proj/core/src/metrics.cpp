#include "uqrecon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

namespace uqr {

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw InvalidArgument(std::string(what) + ": dimension mismatch");
}

std::vector<double> ssim_kernel(const SsimParams& p) {
  std::vector<double> k(static_cast<std::size_t>(p.window));
  const double c = 0.5 * (p.window - 1);
  double sum = 0.0;
  for (int i = 0; i < p.window; ++i) {
    k[i] = std::exp(-0.5 * (i - c) * (i - c) / (p.sigma * p.sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Valid-mode separable filtering of a (w x h) plane: output (w-k+1 x h-k+1).
std::vector<double> filter_valid(const std::vector<double>& in, int w, int h,
                                 const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1;
  const int oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * in[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

// Adjoint of filter_valid: scatters a (w-k+1 x h-k+1) map back to (w x h).
std::vector<double> filter_full(const std::vector<double>& in, int w, int h,
                                const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1;
  const int oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const double v = in[static_cast<std::size_t>(y) * ow + x];
      for (int i = 0; i < n; ++i) tmp[static_cast<std::size_t>(y + i) * ow + x] += k[i] * v;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      const double v = tmp[static_cast<std::size_t>(y) * ow + x];
      for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(y) * w + x + i] += k[i] * v;
    }
  }
  return out;
}

double ssim_impl(const Image& pred, const Image& gt, Image* grad, const SsimParams& params) {
  require_same(pred, gt, "ssim");
  require(params.window >= 1 && params.window % 2 == 1, "ssim: window must be odd");
  if (pred.width() < params.window || pred.height() < params.window) {
    throw InvalidArgument("ssim: image smaller than the window");
  }
  const int w = pred.width();
  const int h = pred.height();
  const int ch = pred.channels();
  const auto kernel = ssim_kernel(params);
  const double c1 = params.k1 * params.k1;
  const double c2 = params.k2 * params.k2;
  const std::size_t np = pred.pixel_count();
  const std::size_t windows =
      static_cast<std::size_t>(w - params.window + 1) * (h - params.window + 1);
  if (grad) *grad = Image(w, h, ch);

  double total = 0.0;
  std::vector<double> x(np), y(np), xx(np), yy(np), xy(np);
  for (int c = 0; c < ch; ++c) {
    for (std::size_t i = 0; i < np; ++i) {
      x[i] = pred.values()[i * ch + c];
      y[i] = gt.values()[i * ch + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, w, h, kernel);
    const auto my = filter_valid(y, w, h, kernel);
    const auto mxx = filter_valid(xx, w, h, kernel);
    const auto myy = filter_valid(yy, w, h, kernel);
    const auto mxy = filter_valid(xy, w, h, kernel);
    std::vector<double> da, db, dc;
    if (grad) {
      da.resize(windows);
      db.resize(windows);
      dc.resize(windows);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < windows; ++i) {
      const double vx = mxx[i] - mx[i] * mx[i];
      const double vy = myy[i] - my[i] * my[i];
      const double cov = mxy[i] - mx[i] * my[i];
      const double lum = 2.0 * mx[i] * my[i] + c1;
      const double d1 = mx[i] * mx[i] + my[i] * my[i] + c1;
      const double con = 2.0 * cov + c2;
      const double d2 = vx + vy + c2;
      const double s = lum * con / (d1 * d2);
      sum += s;
      if (grad) {
        const double d_mx = 2.0 * my[i] * con / (d1 * d2) - s * 2.0 * mx[i] / d1;
        const double d_vx = -s / d2;
        const double d_cov = 2.0 * lum / (d1 * d2);
        db[i] = d_vx;
        dc[i] = d_cov;
        da[i] = d_mx - 2.0 * mx[i] * d_vx - my[i] * d_cov;
      }
    }
    total += sum / static_cast<double>(windows);
    if (grad) {
      const auto fa = filter_full(da, w, h, kernel);
      const auto fb = filter_full(db, w, h, kernel);
      const auto fc = filter_full(dc, w, h, kernel);
      const double scale = 1.0 / (static_cast<double>(windows) * ch);
      for (std::size_t i = 0; i < np; ++i) {
        grad->values()[i * ch + c] = scale * (fa[i] + 2.0 * x[i] * fb[i] + y[i] * fc[i]);
      }
    }
  }
  return total / ch;
}

}  // namespace

double psnr(const Image& pred, const Image& gt) {
  require_same(pred, gt, "psnr");
  require(!pred.empty(), "psnr: empty image");
  double mse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.values()[i] - gt.values()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double ssim(const Image& pred, const Image& gt, const SsimParams& params) {
  return ssim_impl(pred, gt, nullptr, params);
}

double ssim_with_gradient(const Image& pred, const Image& gt, Image& grad,
                          const SsimParams& params) {
  return ssim_impl(pred, gt, &grad, params);
}

double gaussian_nll(const Image& mean, const Image& variance, const Image& gt, double min_std,
                    const Mask* mask) {
  require_same(mean, gt, "gaussian_nll");
  require_same(mean, variance, "gaussian_nll");
  require(min_std >= 0.0, "gaussian_nll: negative min_std");
  if (mask) require(mask->width == mean.width() && mask->height == mean.height(), "gaussian_nll: mask shape");
  const int ch = mean.channels();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < mean.pixel_count(); ++p) {
    if (mask && !mask->data[p]) continue;
    for (int c = 0; c < ch; ++c) {
      const std::size_t i = p * ch + c;
      const double var = variance.values()[i];
      if (var < 0.0) throw InvalidArgument("gaussian_nll: negative variance");
      const double s = std::max(std::sqrt(var), min_std);
      const double r = gt.values()[i] - mean.values()[i];
      sum += 0.5 * std::log(2.0 * std::numbers::pi * s * s) + r * r / (2.0 * s * s);
      ++count;
    }
  }
  require(count > 0, "gaussian_nll: no pixels selected");
  return sum / static_cast<double>(count);
}

namespace {

// Mean of `errors` after removing the `removed` top-ranked entries of `order`.
std::vector<double> sparsification(std::span<const double> errors,
                                   const std::vector<std::size_t>& order,
                                   const std::vector<std::size_t>& removed_counts) {
  const std::size_t n = errors.size();
  // suffix sums over the ranking: remaining after removing the first r.
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + errors[order[i]];
  std::vector<double> out;
  out.reserve(removed_counts.size());
  for (std::size_t r : removed_counts) out.push_back(suffix[r] / static_cast<double>(n - r));
  return out;
}

std::vector<std::size_t> descending_order(std::span<const double> keys) {
  std::vector<std::size_t> order(keys.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });
  return order;
}

}  // namespace

AuseResult ause(std::span<const double> errors, std::span<const double> uncertainties, int steps) {
  require(errors.size() == uncertainties.size(), "ause: length mismatch");
  require(errors.size() >= 2, "ause: need at least two pixels");
  require(steps >= 1, "ause: steps must be positive");
  const std::size_t n = errors.size();
  AuseResult result;
  auto& curve = result.curve;
  std::vector<std::size_t> removed;
  for (int j = 0; j < steps; ++j) {
    const double f = static_cast<double>(j) / steps;
    curve.fractions.push_back(f);
    removed.push_back(std::min(static_cast<std::size_t>(std::floor(f * n)), n - 1));
  }
  const double full_mean = std::accumulate(errors.begin(), errors.end(), 0.0) / n;
  if (full_mean == 0.0) {
    curve.by_uncertainty.assign(steps, 0.0);
    curve.by_oracle.assign(steps, 0.0);
    return result;
  }
  curve.by_uncertainty = sparsification(errors, descending_order(uncertainties), removed);
  curve.by_oracle = sparsification(errors, descending_order(errors), removed);
  for (int j = 0; j < steps; ++j) {
    curve.by_uncertainty[j] /= full_mean;
    curve.by_oracle[j] /= full_mean;
  }
  double area = 0.0;
  for (int j = 0; j + 1 < steps; ++j) {
    const double g0 = curve.by_uncertainty[j] - curve.by_oracle[j];
    const double g1 = curve.by_uncertainty[j + 1] - curve.by_oracle[j + 1];
    area += 0.5 * (g0 + g1) * (curve.fractions[j + 1] - curve.fractions[j]);
  }
  result.value = area;
  return result;
}

double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, "normal_quantile: p must be in (0,1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

AuceResult auce(std::span<const double> mean, std::span<const double> std_dev,
                std::span<const double> target, int levels) {
  require(mean.size() == std_dev.size() && mean.size() == target.size(), "auce: length mismatch");
  require(!mean.empty(), "auce: empty input");
  require(levels >= 1, "auce: levels must be positive");
  for (double s : std_dev) {
    if (!(s >= 0.0)) throw InvalidArgument("auce: negative standard deviation");
  }
  const std::size_t n = mean.size();
  // Standardized residuals; a pixel is covered at level p iff |z| <= q(p).
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::abs(target[i] - mean[i]);
    z[i] = r == 0.0 ? 0.0 : (std_dev[i] > 0.0 ? r / std_dev[i] : std::numeric_limits<double>::infinity());
  }
  std::sort(z.begin(), z.end());
  AuceResult result;
  auto& curve = result.curve;
  // Levels sit on the uniform grid k / (levels + 1), so every gap is an
  // integer multiple of 1 / (n (levels + 1)); summing the numerators keeps
  // the trapezoid exact up to the final division.
  const auto cells = static_cast<std::int64_t>(levels) + 1;
  const auto count = static_cast<std::int64_t>(n);
  std::int64_t interior = 0, first_covered = 0, last_covered = 0;
  for (int k = 1; k <= levels; ++k) {
    const double p = static_cast<double>(k) / static_cast<double>(cells);
    const double q = normal_quantile(0.5 * (p + 1.0));
    // Closed interval: count |z| <= q (inf * finite std never covers).
    const auto covered = static_cast<std::int64_t>(std::upper_bound(z.begin(), z.end(), q) - z.begin());
    curve.levels.push_back(p);
    curve.coverages.push_back(static_cast<double>(covered) / static_cast<double>(n));
    interior += std::abs(covered * cells - k * count);
    if (k == 1) first_covered = covered;
    last_covered = covered;
  }
  // The endpoints p = 0 and p = 1 take the coverage of the nearest level.
  const std::int64_t ends = (first_covered + std::abs(last_covered - count)) * cells;
  result.value = static_cast<double>(ends + 2 * interior) /
                 (2.0 * static_cast<double>(count) * static_cast<double>(cells) * static_cast<double>(cells));
  return result;
}

double depth_rmse(const Image& pred, const Image& gt, const Mask& mask) {
  require_same(pred, gt, "depth_rmse");
  require(pred.channels() == 1, "depth_rmse: expected single-channel depth");
  require(mask.width == pred.width() && mask.height == pred.height(), "depth_rmse: mask shape");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.pixel_count(); ++i) {
    if (!mask.data[i]) continue;
    const double d = pred.values()[i] - gt.values()[i];
    sum += d * d;
    ++count;
  }
  if (count == 0) throw InvalidArgument("depth_rmse: empty mask");
  return std::sqrt(sum / static_cast<double>(count));
}

}  // namespace uqr
