#pragma once

#include <vector>

#include <Eigen/Core>

#include "uqrecon/common.hpp"

namespace uqr {

// Pinhole camera. `rotation` and `translation` map world to camera
// coordinates: p_cam = R * p_world + t. The camera looks down its own -z
// axis; pixel (u, v) has its centre at continuous coordinate (u+0.5, v+0.5)
// and back-projects to the camera-space direction
// ((u+0.5-cx)/f, (v+0.5-cy)/f, -1).
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double focal = 1.0;
  Vec2 principal_point = Vec2::Zero();
  int width = 1;
  int height = 1;

  Vec3 center() const { return -rotation.transpose() * translation; }
  // Unit viewing direction (world frame).
  Vec3 optical_axis() const { return -rotation.row(2).transpose(); }
  // The 3x4 extrinsic matrix P = [R | t].
  Mat34 extrinsics() const;

  // Throws InvalidArgument when the rotation is not orthonormal within 1e-9,
  // the focal length is not positive, or the resolution is empty.
  void validate() const;

  bool operator==(const CameraPose& other) const = default;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;
};

// Partials of a generated ray with respect to the 12 extrinsic entries,
// ordered row-major over P = [R | t] (entry 4*i + j is P(i, j)).
struct RayPoseJacobian {
  Eigen::Matrix<double, 3, 12> d_origin = Eigen::Matrix<double, 3, 12>::Zero();
  Eigen::Matrix<double, 3, 12> d_direction = Eigen::Matrix<double, 3, 12>::Zero();
};

// Ray through the centre of pixel (u, v). When `jacobian` is non-null it
// receives d(origin)/dP and d(direction)/dP treating all 12 entries of P as
// free parameters.
Ray generate_ray(const CameraPose& camera, int u, int v, double t_near,
                 double t_far, RayPoseJacobian* jacobian = nullptr);

// `n` cameras evenly spaced in azimuth (starting at azimuth 0 on +x, turning
// towards +z) on a circle of the given radius and elevation around `look_at`,
// all looking at `look_at` with world +y as up.
std::vector<CameraPose> make_pose_ring(int n, double radius, double elevation,
                                       const Vec3& look_at, double focal,
                                       int width, int height);

// Camera looking from `eye` at `target`.
CameraPose look_at_pose(const Vec3& eye, const Vec3& target, double focal,
                        int width, int height);

// Moves the camera centre by `delta` along the camera's own +z axis (away
// from what it looks at, i.e. a zoom-out for delta > 0). Rotation unchanged.
CameraPose perturb_pose_z(const CameraPose& pose, double delta);

// Signed azimuth (radians, in (-pi, pi]) of the camera centre about world +y.
double camera_azimuth(const CameraPose& pose);

}  // namespace uqr
