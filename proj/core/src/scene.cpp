#include "uqrecon/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace uqr {
namespace {

constexpr double kMinHitDistance = 1e-9;

std::optional<double> intersect_sphere(const Sphere& s, const Vec3& o, const Vec3& d) {
  const Vec3 oc = o - s.center;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double root = std::sqrt(disc);
  const double t0 = -b - root;
  if (t0 > kMinHitDistance) return t0;
  const double t1 = -b + root;
  if (t1 > kMinHitDistance) return t1;
  return std::nullopt;
}

std::optional<double> intersect_box(const Box& box, const Vec3& o, const Vec3& d) {
  double t_min = -std::numeric_limits<double>::infinity();
  double t_max = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double lo = box.center(a) - box.half_extent(a);
    const double hi = box.center(a) + box.half_extent(a);
    if (d(a) == 0.0) {
      if (o(a) < lo || o(a) > hi) return std::nullopt;
      continue;
    }
    double t0 = (lo - o(a)) / d(a);
    double t1 = (hi - o(a)) / d(a);
    if (t0 > t1) std::swap(t0, t1);
    t_min = std::max(t_min, t0);
    t_max = std::min(t_max, t1);
    if (t_min > t_max) return std::nullopt;
  }
  if (t_min > kMinHitDistance) return t_min;
  if (t_max > kMinHitDistance) return t_max;
  return std::nullopt;
}

}  // namespace

void SceneModel::validate() const {
  for (const auto& p : primitives) {
    require((p.albedo.array() >= 0.0).all() && (p.albedo.array() <= 1.0).all(),
            "SceneModel: albedo outside [0,1]");
    if (const auto* s = std::get_if<Sphere>(&p.shape)) {
      require(s->radius > 0.0, "SceneModel: sphere radius must be positive");
    } else {
      const auto& b = std::get<Box>(p.shape);
      require((b.half_extent.array() > 0.0).all(), "SceneModel: box extent must be positive");
    }
  }
  require((background.array() >= 0.0).all() && (background.array() <= 1.0).all(),
          "SceneModel: background outside [0,1]");
}

std::pair<Vec3, double> SceneModel::bounding_sphere() const {
  if (primitives.empty()) return {Vec3::Zero(), 1.0};
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& p : primitives) {
    Vec3 c, h;
    if (const auto* s = std::get_if<Sphere>(&p.shape)) {
      c = s->center;
      h = Vec3::Constant(s->radius);
    } else {
      const auto& b = std::get<Box>(p.shape);
      c = b.center;
      h = b.half_extent;
    }
    lo = lo.cwiseMin(c - h);
    hi = hi.cwiseMax(c + h);
  }
  return {(lo + hi) / 2.0, (hi - lo).norm() / 2.0};
}

std::optional<double> intersect(const Primitive& primitive, const Vec3& origin,
                                const Vec3& direction) {
  return std::visit(
      [&](const auto& shape) -> std::optional<double> {
        using T = std::decay_t<decltype(shape)>;
        if constexpr (std::is_same_v<T, Sphere>) {
          return intersect_sphere(shape, origin, direction);
        } else {
          return intersect_box(shape, origin, direction);
        }
      },
      primitive.shape);
}

GroundTruthView trace_ground_truth(const SceneModel& scene, const CameraPose& camera) {
  camera.validate();
  GroundTruthView out{Image(camera.width, camera.height, 3), Image(camera.width, camera.height, 1),
                      Mask(camera.width, camera.height)};
  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      const Ray ray = generate_ray(camera, u, v, 1.0, 2.0);
      double best = std::numeric_limits<double>::infinity();
      const Primitive* hit = nullptr;
      for (const auto& p : scene.primitives) {
        if (auto t = intersect(p, ray.origin, ray.direction); t && *t < best) {
          best = *t;
          hit = &p;
        }
      }
      const Vec3 color = hit ? hit->albedo : scene.background;
      for (int c = 0; c < 3; ++c) out.rgb.at(u, v, c) = color(c);
      out.depth.at(u, v) = hit ? best : 0.0;
      out.hit.set(u, v, hit != nullptr);
    }
  }
  return out;
}

SceneModel make_default_scene() {
  SceneModel scene;
  scene.primitives.push_back({Sphere{Vec3(-0.35, 0.0, 0.0), 0.45}, Vec3(0.85, 0.2, 0.15)});
  scene.primitives.push_back({Sphere{Vec3(0.4, 0.1, 0.3), 0.3}, Vec3(0.15, 0.35, 0.85)});
  scene.primitives.push_back({Box{Vec3(0.25, -0.2, -0.4), Vec3(0.25, 0.25, 0.25)}, Vec3(0.2, 0.7, 0.25)});
  scene.primitives.push_back({Sphere{Vec3(0.0, 0.45, -0.1), 0.18}, Vec3(0.95, 0.8, 0.1)});
  scene.background = Vec3::Ones();
  return scene;
}

SceneModel make_sphere_scene(double radius, const Vec3& albedo) {
  SceneModel scene;
  scene.primitives.push_back({Sphere{Vec3::Zero(), radius}, albedo});
  return scene;
}

}  // namespace uqr
