#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "../support/finite_diff.hpp"
#include "uqrecon/metrics.hpp"
#include "uqrecon/rng.hpp"

namespace uqr {
namespace {

Image random_image(int w, int h, int c, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(w, h, c);
  for (double& v : img.values()) v = u(rng);
  return img;
}

TEST(Psnr, IdenticalImagesGiveInfinity) {
  const Image a = random_image(8, 8, 3, 1);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
}

TEST(Psnr, KnownMse) {
  Image a(10, 10, 1, 0.5), b(10, 10, 1, 0.6);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
  EXPECT_THROW(psnr(a, Image(5, 5, 1)), InvalidArgument);
}

TEST(Ssim, IdenticalImagesScoreOne) {
  const Image a = random_image(24, 20, 3, 2);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, Symmetric) {
  for (int k = 0; k < 5; ++k) {
    const Image a = random_image(16, 16, 3, 10 + k), b = random_image(16, 16, 3, 20 + k);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  }
}

TEST(Ssim, ConstantOffsetMatchesLuminanceTerm) {
  const double a = 0.4, b = 0.5;
  const double c1 = 0.01 * 0.01;
  const double expected = (2 * a * b + c1) / (a * a + b * b + c1);
  EXPECT_NEAR(ssim(Image(16, 16, 1, a), Image(16, 16, 1, b)), expected, 1e-12);
}

TEST(Ssim, TooSmallImageThrows) {
  EXPECT_THROW(ssim(Image(10, 20, 1), Image(10, 20, 1)), InvalidArgument);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
  const Image gt = random_image(13, 12, 2, 3);
  const Image pred = random_image(13, 12, 2, 4);
  Image grad;
  ssim_with_gradient(pred, gt, grad);
  std::vector<double> x(pred.values().begin(), pred.values().end());
  const auto fd = testing::central_gradient(x, [&](const std::vector<double>& v) {
    Image p = pred;
    std::copy(v.begin(), v.end(), p.values().begin());
    return ssim(p, gt);
  });
  std::vector<double> g(grad.values().begin(), grad.values().end());
  EXPECT_LT(testing::relative_error(g, fd), 1e-6);
}

TEST(GaussianNll, ClosedFormAtZeroVariance) {
  const Image y = random_image(4, 4, 3, 5);
  EXPECT_NEAR(gaussian_nll(y, Image(4, 4, 3), y, 0.03), 0.5 * std::log(2 * std::numbers::pi * 0.0009), 1e-12);
  EXPECT_NEAR(gaussian_nll(y, Image(4, 4, 3), y, 0.03), -2.588, 1e-3);
}

TEST(GaussianNll, ResidualTermScalesQuadratically) {
  const Image mu(3, 3, 1, 0.5), var(3, 3, 1, 0.04);
  const double base = gaussian_nll(mu, var, mu, 0.0);
  const double one = gaussian_nll(mu, var, Image(3, 3, 1, 0.6), 0.0) - base;
  const double two = gaussian_nll(mu, var, Image(3, 3, 1, 0.7), 0.0) - base;
  EXPECT_NEAR(two, 4.0 * one, 1e-12);
}

TEST(GaussianNll, ClampDominatesVariance) {
  const Image mu = random_image(4, 4, 1, 6), y = random_image(4, 4, 1, 7);
  const Image v1(4, 4, 1, 1e-4), v2(4, 4, 1, 0.01);
  EXPECT_DOUBLE_EQ(gaussian_nll(mu, v1, y, 0.5), gaussian_nll(mu, v2, y, 0.5));
  EXPECT_THROW(gaussian_nll(mu, Image(4, 4, 1, -1.0), y, 0.1), InvalidArgument);
}

TEST(GaussianNll, MinimizedAtResidualVarianceAndMonotoneInClamp) {
  const Image mu(1, 1, 1, 0.2), y(1, 1, 1, 0.5);
  const double r2 = 0.09;
  const double at = gaussian_nll(mu, Image(1, 1, 1, r2), y, 0.0);
  EXPECT_LT(at, gaussian_nll(mu, Image(1, 1, 1, 0.8 * r2), y, 0.0));
  EXPECT_LT(at, gaussian_nll(mu, Image(1, 1, 1, 1.2 * r2), y, 0.0));
  double prev = -1e300;
  for (double clamp = 0.31; clamp < 2.0; clamp += 0.1) {
    const double v = gaussian_nll(mu, Image(1, 1, 1, 0.0), y, clamp);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

// Direct evaluation of the sparsification definition.
double brute_force_ause(const std::vector<double>& err, const std::vector<double>& unc, int steps) {
  const std::size_t n = err.size();
  double full = 0.0;
  for (double e : err) full += e;
  full /= n;
  if (full == 0.0) return 0.0;
  const auto curve = [&](const std::vector<double>& key, double f) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    // Highest key first, lower index first among ties.
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return key[a] != key[b] ? key[a] > key[b] : a < b;
    });
    const auto removed = static_cast<std::size_t>(std::floor(f * n));
    double sum = 0.0;
    for (std::size_t k = removed; k < n; ++k) sum += err[idx[k]];
    return sum / (n - removed) / full;
  };
  double area = 0.0;
  for (int j = 0; j + 1 < steps; ++j) {
    const double f0 = static_cast<double>(j) / steps, f1 = static_cast<double>(j + 1) / steps;
    const double g0 = curve(unc, f0) - curve(err, f0);
    const double g1 = curve(unc, f1) - curve(err, f1);
    area += 0.5 * (g0 + g1) * (f1 - f0);
  }
  return area;
}

TEST(Ause, OracleOrderingGivesZero) {
  const std::vector<double> e{0.3, 0.1, 0.9, 0.5};
  EXPECT_NEAR(ause(e, e, 4).value, 0.0, 1e-15);
}

TEST(Ause, TwoPixelCase) {
  const std::vector<double> e{1.0, 0.0}, u{0.0, 1.0};
  EXPECT_DOUBLE_EQ(ause(e, u, 2).value, 0.5);
}

TEST(Ause, AllZeroErrorsGiveZero) {
  const std::vector<double> e(5, 0.0), u{1, 2, 3, 4, 5};
  EXPECT_EQ(ause(e, u).value, 0.0);
}

TEST(Ause, CurvesStartAtOneAndOracleIsNonIncreasing) {
  Rng rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> e(200), v(200);
  for (int i = 0; i < 200; ++i) {
    e[i] = u(rng);
    v[i] = u(rng);
  }
  const auto r = ause(e, v, 50);
  EXPECT_NEAR(r.curve.by_oracle.front(), 1.0, 1e-12);
  EXPECT_NEAR(r.curve.by_uncertainty.front(), 1.0, 1e-12);
  for (std::size_t j = 1; j < r.curve.by_oracle.size(); ++j) {
    EXPECT_LE(r.curve.by_oracle[j], r.curve.by_oracle[j - 1] + 1e-12);
  }
}

TEST(Ause, MatchesBruteForceOnSmallInstances) {
  Rng rng(9);
  std::uniform_int_distribution<int> level(0, 3);
  for (int n = 2; n <= 12; ++n) {
    for (int steps = 1; steps <= 4; ++steps) {
      for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> e(n), u(n);
        // Coarse levels produce ties in both rankings.
        for (int i = 0; i < n; ++i) {
          e[i] = 0.25 * level(rng);
          u[i] = 0.25 * level(rng);
        }
        EXPECT_NEAR(ause(e, u, steps).value, brute_force_ause(e, u, steps), 1e-12)
            << "n=" << n << " steps=" << steps;
      }
    }
  }
}

TEST(Auce, ExactMeanZeroStdIsHalf) {
  const std::vector<double> mu{0.1, 0.5, 0.9}, sd(3, 0.0);
  EXPECT_EQ(auce(mu, sd, mu).value, 0.5);
}

TEST(Auce, HugeStdIsHalf) {
  const std::vector<double> mu{0.1, 0.5, 0.9}, y{0.3, 0.2, 0.4}, sd(3, 1e30);
  EXPECT_EQ(auce(mu, sd, y).value, 0.5);
}

TEST(Auce, CalibratedResidualsAreNearZero) {
  Rng rng(10);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.01, 0.5);
  const int n = 100000;
  std::vector<double> mu(n), sd(n), y(n);
  for (int i = 0; i < n; ++i) {
    mu[i] = normal(rng);
    sd[i] = u(rng);
    y[i] = mu[i] + sd[i] * normal(rng);
  }
  const auto r = auce(mu, sd, y);
  EXPECT_LT(r.value, 0.02);
  for (std::size_t k = 1; k < r.curve.coverages.size(); ++k) {
    EXPECT_GE(r.curve.coverages[k], r.curve.coverages[k - 1]);
  }
}

TEST(NormalQuantile, InvertsTheNormalCdf) {
  double worst = 0.0;
  for (double lp = -6.0; lp <= -0.3; lp += 0.01) {
    for (double p : {std::pow(10.0, lp), 1.0 - std::pow(10.0, lp)}) {
      const double q = normal_quantile(p);
      const double back = 0.5 * std::erfc(-q / std::numbers::sqrt2);
      // Compare in quantile space through the density: dq = dp / phi(q).
      const double phi = std::exp(-0.5 * q * q) / std::sqrt(2.0 * std::numbers::pi);
      worst = std::max(worst, std::abs(back - p) / phi);
    }
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(DepthRmse, HandCases) {
  Image a(2, 1, 1), b(2, 1, 1);
  Mask m(2, 1, true);
  EXPECT_EQ(depth_rmse(a, a, m), 0.0);
  a.at(0, 0) = 3.0;
  a.at(1, 0) = 4.0;
  EXPECT_NEAR(depth_rmse(a, b, m), std::sqrt(12.5), 1e-15);
  Image c(2, 1, 1, 1.0);
  EXPECT_NEAR(depth_rmse(c, b, m), 1.0, 1e-15);
  EXPECT_THROW(depth_rmse(a, b, Mask(2, 1, false)), InvalidArgument);
}

}  // namespace
}  // namespace uqr
