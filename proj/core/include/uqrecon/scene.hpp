#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "uqrecon/camera.hpp"
#include "uqrecon/image.hpp"

namespace uqr {

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

struct Box {
  Vec3 center = Vec3::Zero();
  Vec3 half_extent = Vec3::Ones();
};

struct Primitive {
  std::variant<Sphere, Box> shape;
  Vec3 albedo = Vec3::Constant(0.5);
};

struct SceneModel {
  std::vector<Primitive> primitives;
  Vec3 background = Vec3::Ones();

  void validate() const;
  // Centre and radius of a sphere enclosing every primitive (the origin and
  // radius 1 for an empty scene).
  std::pair<Vec3, double> bounding_sphere() const;
};

// Distance along a unit-direction ray to the first surface with t > 0.
std::optional<double> intersect(const Primitive& primitive, const Vec3& origin,
                                const Vec3& direction);

struct GroundTruthView {
  Image rgb;    // 3 channels
  Image depth;  // ray distance to the first hit; 0 where the ray misses
  Mask hit;     // validity mask for depth
};

// Analytic ray tracing: each pixel takes the albedo of the nearest primitive
// hit by its centre ray, or the background colour.
GroundTruthView trace_ground_truth(const SceneModel& scene, const CameraPose& camera);

// A small diffuse test scene: a few spheres and a box around the origin,
// fitting inside radius ~1.1.
SceneModel make_default_scene();

// A single sphere of the given radius and colour at the origin.
SceneModel make_sphere_scene(double radius, const Vec3& albedo);

}  // namespace uqr
