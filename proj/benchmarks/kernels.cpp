#include <benchmark/benchmark.h>

#include "uqrecon/dataset.hpp"
#include "uqrecon/field.hpp"
#include "uqrecon/gaussians.hpp"
#include "uqrecon/metrics.hpp"
#include "uqrecon/render.hpp"
#include "uqrecon/scene.hpp"

using namespace uqr;

namespace {

CameraPose bench_camera(int side) {
  return make_pose_ring(1, 4.0, 0.3, Vec3::Zero(), 1.2 * side, side, side).front();
}

void BM_FieldForward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const MlpField field = MlpField::initialized(FieldArchitecture{}, 1);
  const Eigen::Matrix3Xd x = Eigen::Matrix3Xd::Random(3, n);
  const Eigen::Matrix3Xd d = Eigen::Matrix3Xd::Random(3, n).colwise().normalized();
  for (auto _ : state) benchmark::DoNotOptimize(field_forward(field, x, d));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_FieldForward)->Arg(1024)->Arg(8192);

void BM_FieldBackward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  FieldArchitecture arch;
  arch.beta_head = true;
  const MlpField field = MlpField::initialized(arch, 1);
  const Eigen::Matrix3Xd x = Eigen::Matrix3Xd::Random(3, n);
  const Eigen::Matrix3Xd d = Eigen::Matrix3Xd::Random(3, n).colwise().normalized();
  const FieldOutput out = field_forward(field, x, d);
  const Eigen::RowVectorXd d_sigma = Eigen::RowVectorXd::Ones(n);
  const Eigen::Matrix3Xd d_color = Eigen::Matrix3Xd::Ones(3, n);
  const Eigen::RowVectorXd d_beta = Eigen::RowVectorXd::Ones(n);
  for (auto _ : state) benchmark::DoNotOptimize(field_backward(field, out.tape, d_sigma, d_color, d_beta));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_FieldBackward)->Arg(1024)->Arg(8192);

void BM_RenderField(benchmark::State& state) {
  const MlpField field = MlpField::initialized(FieldArchitecture{}, 1);
  const CameraPose camera = bench_camera(32);
  RenderConfig config;
  config.samples_per_ray = 32;
  for (auto _ : state) benchmark::DoNotOptimize(render_field(field, camera, config));
}
BENCHMARK(BM_RenderField)->Unit(benchmark::kMillisecond);

struct CloudFixture {
  GaussianCloud cloud;
  CameraPose camera;
  explicit CloudFixture(int count) {
    const auto poses = make_pose_ring(4, 4.0, 0.3, Vec3::Zero(), 1.2 * 64, 64, 64);
    const ViewDataset ds = render_dataset(make_default_scene(), poses);
    cloud = init_cloud_from_views(ds, count, 3, 0.5);
    camera = poses.front();
  }
};

void BM_Rasterize(benchmark::State& state) {
  const CloudFixture fx(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(rasterize(fx.cloud, fx.camera));
}
BENCHMARK(BM_Rasterize)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_RasterizeBackward(benchmark::State& state) {
  const CloudFixture fx(static_cast<int>(state.range(0)));
  const RasterConfig config;
  const RasterOutput forward = rasterize(fx.cloud, fx.camera, config);
  RenderedImage upstream = forward.image;
  for (auto* img : {&upstream.color, &upstream.color_variance, &upstream.depth, &upstream.depth_variance,
                    &upstream.accumulation}) {
    for (double& v : img->values()) v = 1.0;
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(rasterize_backward(fx.cloud, fx.camera, config, forward.state, upstream));
  }
}
BENCHMARK(BM_RasterizeBackward)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Image a(side, side, 3), b(side, side, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a.values()[i] = static_cast<double>(i % 97) / 96.0;
    b.values()[i] = static_cast<double>(i % 89) / 88.0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(256);

}  // namespace
BENCHMARK_MAIN();
