#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "../support/finite_diff.hpp"
#include "uqrecon/camera.hpp"
#include "uqrecon/compositing.hpp"
#include "uqrecon/render.hpp"
#include "uqrecon/rng.hpp"

namespace uqr {
namespace {

using testing::central_gradient;
using testing::relative_error;

PixelSamples make_samples(const std::vector<double>& sigma, const Eigen::Matrix3Xd& color,
                          const std::vector<double>& beta, const std::vector<double>& t,
                          const std::vector<double>& delta) {
  PixelSamples s;
  s.sigma = sigma;
  s.color = &color;
  s.beta = beta;
  s.t = t;
  s.delta = delta;
  return s;
}

// sigma * delta values that produce the requested alphas (alpha = 1 only in the limit).
std::vector<double> sigma_for_alpha(const std::vector<double>& alpha, const std::vector<double>& delta) {
  std::vector<double> s;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    s.push_back(alpha[i] >= 1.0 ? 1e6 : -std::log1p(-alpha[i]) / delta[i]);
  }
  return s;
}

TEST(SampleRay, SingleMidpointBin) {
  Ray ray{Vec3::Zero(), Vec3::UnitZ(), 2.0, 6.0};
  const auto s = sample_ray(ray, 1, false, std::uint64_t{0});
  ASSERT_EQ(s.t.size(), 1u);
  EXPECT_DOUBLE_EQ(s.t[0], 4.0);
  EXPECT_DOUBLE_EQ(s.delta[0], 2.0);
}

TEST(SampleRay, MidpointsOnUnitInterval) {
  Ray ray{Vec3::Zero(), Vec3::UnitZ(), 0.0, 1.0};
  const auto s = sample_ray(ray, 4, false, std::uint64_t{0});
  const double expected[] = {0.125, 0.375, 0.625, 0.875};
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(s.t[i], expected[i]);
  EXPECT_DOUBLE_EQ(s.delta[3], 0.125);
}

TEST(SampleRay, StratifiedIsReproducibleAndIncreasing) {
  Ray ray{Vec3::Zero(), Vec3::UnitZ(), 2.0, 6.0};
  const auto a = sample_ray(ray, 32, true, std::uint64_t{9});
  const auto b = sample_ray(ray, 32, true, std::uint64_t{9});
  EXPECT_EQ(a.t, b.t);
  for (std::size_t i = 0; i < a.t.size(); ++i) {
    EXPECT_GT(a.delta[i], 0.0);
    EXPECT_GE(a.t[i], 2.0);
    EXPECT_LE(a.t[i], 6.0);
  }
}

TEST(CompositeWeights, VacuumIsTransparent) {
  const std::vector<double> sigma(4, 0.0), delta(4, 0.5);
  const auto w = composite_weights(sigma, delta);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(w.alpha[i], 0.0);
    EXPECT_EQ(w.transmittance[i], 1.0);
  }
}

TEST(CompositeWeights, LogTwoGivesHalfAlpha) {
  const std::vector<double> sigma{std::log(2.0)}, delta{1.0};
  EXPECT_NEAR(composite_weights(sigma, delta).alpha[0], 0.5, 1e-15);
}

TEST(CompositeWeights, CumulativeTransmittance) {
  const std::vector<double> delta(3, 1.0);
  const auto w = composite_weights(sigma_for_alpha({0.5, 0.5, 0.5}, delta), delta);
  EXPECT_NEAR(w.transmittance[0], 1.0, 1e-15);
  EXPECT_NEAR(w.transmittance[1], 0.5, 1e-15);
  EXPECT_NEAR(w.transmittance[2], 0.25, 1e-15);
}

TEST(CompositeWeights, LengthMismatchThrows) {
  const std::vector<double> sigma(3, 1.0), delta(2, 1.0);
  EXPECT_THROW(composite_weights(sigma, delta), InvalidArgument);
}

TEST(CompositeWeights, PartitionOfUnity) {
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> sigma(16), delta(16);
    for (int i = 0; i < 16; ++i) {
      sigma[i] = u(rng);
      delta[i] = 0.01 + u(rng) / 10.0;
    }
    const auto w = composite_weights(sigma, delta);
    double sum = w.residual;
    for (int i = 0; i < 16; ++i) sum += w.transmittance[i] * w.alpha[i];
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(CompositePixel, HandEvaluatedColourVarianceAndDepth) {
  const std::vector<double> delta{1.0, 1.0}, t{1.0, 2.0}, beta{0.04, 0.02};
  Eigen::Matrix3Xd color(3, 2);
  color << 1, 0, 0, 1, 0, 0;
  const auto sigma = sigma_for_alpha({0.5, 1.0}, delta);
  const auto px = composite_pixel(make_samples(sigma, color, beta, t, delta), Vec3::Zero());
  EXPECT_NEAR(px.color.x(), 0.5, 1e-12);
  EXPECT_NEAR(px.color.y(), 0.5, 1e-12);
  EXPECT_NEAR(px.color.z(), 0.0, 1e-12);
  EXPECT_NEAR(px.color_variance.x(), 0.015, 1e-12);
  EXPECT_NEAR(px.depth, 1.5, 1e-12);
  EXPECT_NEAR(px.depth_variance, 0.25, 1e-12);
  EXPECT_NEAR(px.accumulation, 1.0, 1e-12);
}

TEST(CompositePixel, LinearWeightingVariance) {
  const std::vector<double> delta{1.0, 1.0}, t{1.0, 2.0}, beta{0.04, 0.02};
  Eigen::Matrix3Xd color = Eigen::Matrix3Xd::Zero(3, 2);
  const auto sigma = sigma_for_alpha({0.5, 1.0}, delta);
  const auto px = composite_pixel(make_samples(sigma, color, beta, t, delta), Vec3::Zero(),
                                  VarianceWeighting::kLinear);
  EXPECT_NEAR(px.color_variance.x(), 0.03, 1e-12);
}

TEST(CompositePixel, SingleWeightedSampleHasZeroDepthVariance) {
  const std::vector<double> delta{1.0, 1.0, 1.0}, t{1.0, 2.0, 3.0}, beta;
  Eigen::Matrix3Xd color = Eigen::Matrix3Xd::Zero(3, 3);
  const auto opaque = composite_pixel(make_samples({0.0, 1e3, 0.0}, color, beta, t, delta), Vec3::Ones());
  EXPECT_EQ(opaque.depth_variance, 0.0);
  // Unnormalized weights: a lone partial sample keeps w t^2 (1-w)^2.
  const auto partial = composite_pixel(make_samples({0.0, 2.0, 0.0}, color, beta, t, delta), Vec3::Ones());
  const double w = 1.0 - std::exp(-2.0);
  EXPECT_NEAR(partial.depth_variance, w * 4.0 * (1.0 - w) * (1.0 - w), 1e-15);
}

TEST(CompositePixel, DepthVarianceInvariantToRelabeling) {
  // Relabel by permuting which t each weight attaches to, keeping weights fixed.
  const std::vector<double> w{0.2, 0.3, 0.1}, t{1.0, 2.5, 4.0}, tp{4.0, 1.0, 2.5}, wp{0.1, 0.2, 0.3};
  const auto var = [](const std::vector<double>& ws, const std::vector<double>& ts) {
    double d = 0.0, v = 0.0;
    for (std::size_t i = 0; i < ws.size(); ++i) d += ws[i] * ts[i];
    for (std::size_t i = 0; i < ws.size(); ++i) v += ws[i] * (ts[i] - d) * (ts[i] - d);
    return v;
  };
  EXPECT_NEAR(var(w, t), var(wp, tp), 1e-15);
}

TEST(CompositePixel, SquaredWeightVarianceMatchesMonteCarlo) {
  const std::vector<double> delta{0.5, 0.5, 0.5, 0.5}, t{1.0, 1.5, 2.0, 2.5};
  const std::vector<double> beta{0.05, 0.02, 0.08, 0.01};
  const std::vector<double> sigma{0.6, 1.3, 0.9, 2.2};
  Eigen::Matrix3Xd mean(3, 4);
  mean << 0.2, 0.4, 0.6, 0.8, 0.5, 0.5, 0.5, 0.5, 0.9, 0.1, 0.3, 0.7;
  const auto expected = composite_pixel(make_samples(sigma, mean, beta, t, delta), Vec3::Ones());
  Rng rng(2024);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int draws = 100000;
  double sum = 0.0, sum_sq = 0.0;
  Eigen::Matrix3Xd color(3, 4);
  for (int k = 0; k < draws; ++k) {
    for (int i = 0; i < 4; ++i) {
      for (int c = 0; c < 3; ++c) color(c, i) = mean(c, i) + std::sqrt(beta[i]) * normal(rng);
    }
    const double v = composite_pixel(make_samples(sigma, color, {}, t, delta), Vec3::Ones()).color.x();
    sum += v;
    sum_sq += v * v;
  }
  const double m = sum / draws;
  const double var = sum_sq / draws - m * m;
  // Standard error of a sample variance under normality: var * sqrt(2 / (n - 1)).
  const double se = expected.color_variance.x() * std::sqrt(2.0 / (draws - 1));
  EXPECT_LT(std::abs(var - expected.color_variance.x()), 3.0 * se);
}

TEST(CompositePixelBackward, MatchesFiniteDifferences) {
  Rng rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 8;
    std::vector<double> sigma(n), beta(n), t(n), delta(n);
    Eigen::Matrix3Xd color(3, n);
    double acc = 2.0;
    for (int i = 0; i < n; ++i) {
      sigma[i] = 3.0 * u(rng);
      beta[i] = 0.1 * u(rng);
      delta[i] = 0.05 + 0.3 * u(rng);
      t[i] = acc;
      acc += delta[i];
      for (int c = 0; c < 3; ++c) color(c, i) = u(rng);
    }
    PixelGradient up;
    up.color = Vec3(u(rng), -u(rng), u(rng));
    up.color_variance = Vec3(u(rng), u(rng), -u(rng));
    up.depth = u(rng) - 0.5;
    up.depth_variance = u(rng);
    up.accumulation = u(rng) - 0.5;
    const Vec3 bg(0.3, 0.6, 0.9);
    for (auto weighting : {VarianceWeighting::kSquared, VarianceWeighting::kLinear}) {
      const auto objective = [&](const std::vector<double>& x) {
        std::vector<double> s(x.begin(), x.begin() + n), b(x.begin() + n, x.begin() + 2 * n);
        Eigen::Matrix3Xd c = Eigen::Map<const Eigen::Matrix3Xd>(x.data() + 2 * n, 3, n);
        const auto px = composite_pixel(make_samples(s, c, b, t, delta), bg, weighting);
        return up.color.dot(px.color) + up.color_variance.dot(px.color_variance) + up.depth * px.depth +
               up.depth_variance * px.depth_variance + up.accumulation * px.accumulation;
      };
      std::vector<double> x = sigma;
      x.insert(x.end(), beta.begin(), beta.end());
      const auto cv = testing::to_vector(color);
      x.insert(x.end(), cv.begin(), cv.end());
      const auto g = composite_pixel_backward(make_samples(sigma, color, beta, t, delta), bg, up, weighting);
      std::vector<double> analytic = g.sigma;
      analytic.insert(analytic.end(), g.beta.begin(), g.beta.end());
      const auto gc = testing::to_vector(g.color);
      analytic.insert(analytic.end(), gc.begin(), gc.end());
      EXPECT_LT(relative_error(analytic, central_gradient(x, objective)), 1e-4) << "trial " << trial;
    }
  }
}

CameraPose test_camera() {
  return look_at_pose(Vec3(0.4, 0.8, 3.5), Vec3(0.0, 0.1, 0.0), 40.0, 16, 12);
}

TEST(GenerateRay, PrincipalPixelFollowsOpticalAxis) {
  CameraPose cam = look_at_pose(Vec3(1.0, 2.0, 3.0), Vec3::Zero(), 50.0, 16, 16);
  const Ray ray = generate_ray(cam, 7, 7, 1.0, 2.0);
  // Pixel 7 centres at 7.5; shift the principal point to hit it exactly.
  cam.principal_point = Vec2(7.5, 7.5);
  const Ray centre = generate_ray(cam, 7, 7, 1.0, 2.0);
  EXPECT_LT((centre.direction - cam.optical_axis()).norm(), 1e-12);
  EXPECT_LT((ray.origin - cam.center()).norm(), 1e-12);
  EXPECT_NEAR(ray.direction.norm(), 1.0, 1e-12);
}

TEST(GenerateRay, IdentityPoseBackProjection) {
  CameraPose cam;
  cam.focal = 20.0;
  cam.width = 10;
  cam.height = 8;
  cam.principal_point = Vec2(5.0, 4.0);
  const Ray ray = generate_ray(cam, 2, 6, 0.5, 3.0);
  const Vec3 expected = Vec3((2.5 - 5.0) / 20.0, (6.5 - 4.0) / 20.0, -1.0).normalized();
  EXPECT_LT((ray.direction - expected).norm(), 1e-15);
  EXPECT_LT(ray.origin.norm(), 1e-15);
}

TEST(GenerateRay, PoseJacobianMatchesFiniteDifferences) {
  Rng rng(3);
  std::uniform_int_distribution<int> px(0, 11);
  for (int trial = 0; trial < 10; ++trial) {
    const CameraPose cam = test_camera();
    const int u = px(rng), v = px(rng);
    RayPoseJacobian jac;
    generate_ray(cam, u, v, 1.0, 5.0, &jac);
    const Mat34 p0 = cam.extrinsics();
    std::vector<double> x(12);
    for (int i = 0; i < 12; ++i) x[i] = p0(i / 4, i % 4);
    for (int out = 0; out < 6; ++out) {
      const auto f = [&](const std::vector<double>& e) {
        CameraPose c = cam;
        for (int i = 0; i < 12; ++i) {
          if (i % 4 < 3) c.rotation(i / 4, i % 4) = e[i];
          else c.translation(i / 4) = e[i];
        }
        // generate_ray does not validate, so non-orthonormal perturbations pass through.
        const Ray ray = generate_ray(c, u, v, 1.0, 5.0);
        return out < 3 ? ray.origin(out) : ray.direction(out - 3);
      };
      // Tiny step: high encoding frequencies and ReLU kinks near sample points.
      const auto fd = central_gradient(x, f, 1e-8);
      std::vector<double> analytic(12);
      for (int i = 0; i < 12; ++i) analytic[i] = out < 3 ? jac.d_origin(out, i) : jac.d_direction(out - 3, i);
      EXPECT_LT(relative_error(analytic, fd), 1e-4) << "trial " << trial << " output " << out;
    }
  }
}

TEST(RenderField, EmptyFieldShowsBackground) {
  FieldArchitecture arch;
  MlpField field(arch);
  // Zero weights with a very negative density bias give sigma ~ 0.
  field.bias(Net::kDensity, field.layer_count(Net::kDensity) - 1)(0) = -200.0;
  RenderConfig cfg;
  cfg.samples_per_ray = 8;
  cfg.background = Vec3(0.2, 0.4, 0.6);
  const auto img = render_field(field, test_camera(), cfg);
  for (int y = 0; y < img.color.height(); ++y) {
    for (int x = 0; x < img.color.width(); ++x) {
      EXPECT_NEAR(img.color.at(x, y, 0), 0.2, 1e-12);
      EXPECT_NEAR(img.color.at(x, y, 2), 0.6, 1e-12);
      EXPECT_NEAR(img.accumulation.at(x, y), 0.0, 1e-12);
    }
  }
}

TEST(RenderField, DeterministicWithStratifiedSampling) {
  const MlpField field = MlpField::initialized(FieldArchitecture{}, 4);
  RenderConfig cfg;
  cfg.samples_per_ray = 8;
  cfg.stratified = true;
  cfg.seed = 17;
  const auto a = render_field(field, test_camera(), cfg);
  const auto b = render_field(field, test_camera(), cfg);
  EXPECT_EQ(a.color, b.color);
  EXPECT_EQ(a.depth, b.depth);
}

// Configurations whose stencil crosses a ReLU kink are redrawn.
TEST(PoseGradient, PixelJacobianMatchesFiniteDifferences) {
  FieldArchitecture arch;
  int used = 0, draws = 0;
  for (int seed = 0; used < 10 && draws < 400; ++seed, ++draws) {
    const MlpField field = MlpField::initialized(arch, 50 + seed);
    const CameraPose cam = test_camera();
    RenderConfig cfg;
    cfg.samples_per_ray = 4;
    const int u = (3 * seed) % cam.width, v = (5 * seed + 1) % cam.height;
    const auto jac = pixel_pose_jacobian(field, cam, u, v, cfg);
    const Mat34 p0 = cam.extrinsics();
    std::vector<double> x(12);
    for (int i = 0; i < 12; ++i) x[i] = p0(i / 4, i % 4);
    std::vector<double> analytic, fd;
    bool smooth = true;
    for (int channel = 0; channel < 3 && smooth; ++channel) {
      const auto f = [&](const std::vector<double>& e) {
        CameraPose c = cam;
        for (int i = 0; i < 12; ++i) {
          if (i % 4 < 3) c.rotation(i / 4, i % 4) = e[i];
          else c.translation(i / 4) = e[i];
        }
        const Ray ray = generate_ray(c, u, v, cfg.t_near, cfg.t_far);
        const auto batch = make_ray_batch({ray}, cfg, {0});
        const auto out = field_forward(field, batch.positions, batch.directions);
        PixelSamples s;
        s.sigma = std::span<const double>(out.sigma.data(), static_cast<std::size_t>(out.sigma.size()));
        s.color = &out.color;
        s.t = batch.samples[0].t;
        s.delta = batch.samples[0].delta;
        return testing::KinkedValue{composite_pixel(s, cfg.background).color(channel),
                                    testing::relu_pattern(out.tape)};
      };
      const auto g = testing::central_gradient_smooth(x, f);
      smooth = g.smooth;
      fd.insert(fd.end(), g.gradient.begin(), g.gradient.end());
      for (int i = 0; i < 12; ++i) analytic.push_back(jac(channel, i));
    }
    if (!smooth) continue;
    ++used;
    EXPECT_LT(relative_error(analytic, fd), 1e-4) << "seed " << seed;
  }
  EXPECT_EQ(used, 10) << "after " << draws << " draws";
}

TEST(PoseGradient, ConstantRadianceGivesZeroMap) {
  FieldArchitecture arch;
  MlpField field = MlpField::initialized(arch, 3);
  // Density and colour independent of inputs: zero every weight, keep biases.
  for (Net net : {Net::kDensity, Net::kColor}) {
    for (int l = 0; l < field.layer_count(net); ++l) field.weight(net, l).setZero();
  }
  RenderConfig cfg;
  cfg.samples_per_ray = 16;
  const Image map = pose_gradient_map(field, test_camera(), cfg);
  for (double v : map.values()) EXPECT_LT(v, 1e-8);
}

TEST(PoseGradient, NormVariantsAreNonNegative) {
  const MlpField field = MlpField::initialized(FieldArchitecture{}, 8);
  RenderConfig cfg;
  cfg.samples_per_ray = 8;
  const Image stacked = pose_gradient_map(field, test_camera(), cfg, PoseGradientNorm::kStacked);
  const Image mean = pose_gradient_map(field, test_camera(), cfg, PoseGradientNorm::kPerChannelMean);
  for (std::size_t i = 0; i < stacked.size(); ++i) {
    EXPECT_GE(stacked.values()[i], 0.0);
    EXPECT_GE(mean.values()[i], 0.0);
    EXPECT_LE(mean.values()[i], stacked.values()[i] + 1e-15);
  }
}

TEST(GradientNormDifference, IdenticalMapsGiveZeros) {
  Image a(10, 10, 1, 0.5);
  const Image d = gradient_norm_difference(a, a);
  for (double v : d.values()) EXPECT_EQ(v, 0.0);
}

TEST(GradientNormDifference, ZeroPercentileKeepsRawDifference) {
  Image a(4, 4, 1), b(4, 4, 1);
  for (int i = 0; i < 16; ++i) {
    a.values()[i] = i * 0.1;
    b.values()[i] = 0.7;
  }
  const Image d = gradient_norm_difference(a, b, 0.0);
  for (int i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(d.values()[i], std::abs(a.values()[i] - b.values()[i]));
}

TEST(GradientNormDifference, KeepsTopFivePercent) {
  Image a(10, 10, 1), b(10, 10, 1);
  for (int i = 0; i < 100; ++i) a.values()[i] = 0.01 * ((i * 37) % 100) + 0.001;
  const Image d = gradient_norm_difference(a, b, 95.0);
  int nonzero = 0;
  for (double v : d.values()) nonzero += v != 0.0;
  EXPECT_EQ(nonzero, 5);
  EXPECT_THROW(gradient_norm_difference(a, Image(5, 5, 1)), InvalidArgument);
}

}  // namespace
}  // namespace uqr
