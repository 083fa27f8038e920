#include "uqrecon/camera.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

namespace uqr {

Mat34 CameraPose::extrinsics() const {
  Mat34 p;
  p.leftCols<3>() = rotation;
  p.col(3) = translation;
  return p;
}

void CameraPose::validate() const {
  const double err = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  require(err <= 1e-9, "CameraPose: rotation is not orthonormal");
  require(focal > 0.0, "CameraPose: focal must be positive");
  require(width >= 1 && height >= 1, "CameraPose: empty resolution");
  require(translation.allFinite() && principal_point.allFinite(),
          "CameraPose: non-finite parameters");
}

Ray generate_ray(const CameraPose& camera, int u, int v, double t_near,
                 double t_far, RayPoseJacobian* jacobian) {
  require(u >= 0 && u < camera.width && v >= 0 && v < camera.height,
          "generate_ray: pixel outside the image");
  require(0.0 < t_near && t_near < t_far, "generate_ray: need 0 < t_near < t_far");
  const Mat3& r = camera.rotation;
  const Vec3& t = camera.translation;
  const Vec3 d_cam((u + 0.5 - camera.principal_point.x()) / camera.focal,
                   (v + 0.5 - camera.principal_point.y()) / camera.focal, -1.0);
  const Vec3 e = r.transpose() * d_cam;
  const double norm = e.norm();

  Ray ray;
  ray.origin = -r.transpose() * t;
  ray.direction = e / norm;
  ray.t_near = t_near;
  ray.t_far = t_far;

  if (jacobian != nullptr) {
    // origin_i = -sum_j R(j,i) t_j ; e_i = sum_j R(j,i) d_cam_j.
    jacobian->d_origin.setZero();
    Eigen::Matrix<double, 3, 12> d_e = Eigen::Matrix<double, 3, 12>::Zero();
    for (int j = 0; j < 3; ++j) {
      for (int i = 0; i < 3; ++i) {
        jacobian->d_origin(i, 4 * j + i) = -t(j);
        d_e(i, 4 * j + i) = d_cam(j);
      }
      // d origin / d t_j = -R(j, :)^T
      jacobian->d_origin.col(4 * j + 3) = -r.row(j).transpose();
    }
    const Mat3 d_normalize =
        (Mat3::Identity() - ray.direction * ray.direction.transpose()) / norm;
    jacobian->d_direction = d_normalize * d_e;
  }
  return ray;
}

CameraPose look_at_pose(const Vec3& eye, const Vec3& target, double focal,
                        int width, int height) {
  require((target - eye).norm() > 0.0, "look_at_pose: eye equals target");
  const Vec3 forward = (target - eye).normalized();
  Vec3 up = Vec3::UnitY();
  if (std::abs(forward.dot(up)) > 1.0 - 1e-12) up = Vec3::UnitZ();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 true_up = right.cross(forward);

  CameraPose pose;
  pose.rotation.row(0) = right.transpose();
  pose.rotation.row(1) = true_up.transpose();
  pose.rotation.row(2) = -forward.transpose();
  pose.translation = -pose.rotation * eye;
  pose.focal = focal;
  pose.principal_point = Vec2(width / 2.0, height / 2.0);
  pose.width = width;
  pose.height = height;
  return pose;
}

std::vector<CameraPose> make_pose_ring(int n, double radius, double elevation,
                                       const Vec3& look_at, double focal,
                                       int width, int height) {
  require(n >= 1, "make_pose_ring: n must be >= 1");
  require(radius > 0.0, "make_pose_ring: radius must be positive");
  std::vector<CameraPose> poses;
  poses.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double azimuth = 2.0 * std::numbers::pi * k / n;
    const Vec3 offset(std::cos(elevation) * std::cos(azimuth), std::sin(elevation),
                      std::cos(elevation) * std::sin(azimuth));
    poses.push_back(look_at_pose(look_at + radius * offset, look_at, focal, width, height));
  }
  return poses;
}

CameraPose perturb_pose_z(const CameraPose& pose, double delta) {
  // C' = C + delta * R^T e_z  =>  t' = -R C' = t - delta * e_z.
  CameraPose out = pose;
  out.translation.z() -= delta;
  return out;
}

double camera_azimuth(const CameraPose& pose) {
  const Vec3 c = pose.center();
  return std::atan2(c.z(), c.x());
}

}  // namespace uqr
