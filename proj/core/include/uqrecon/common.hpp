#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace uqr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

// Caller violated a documented precondition (bad argument, shape mismatch).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input data could not be read or decoded.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A network activation became NaN or infinite.
class NonFiniteActivation : public std::runtime_error {
 public:
  NonFiniteActivation(std::string net, int layer)
      : std::runtime_error("non-finite activation in " + net + " layer " +
                           std::to_string(layer)),
        net_(std::move(net)),
        layer_(layer) {}
  const std::string& net() const noexcept { return net_; }
  int layer() const noexcept { return layer_; }

 private:
  std::string net_;
  int layer_;
};

// Optimization produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(int step)
      : std::runtime_error("training diverged (non-finite loss) at step " +
                           std::to_string(step)),
        step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

}  // namespace uqr
