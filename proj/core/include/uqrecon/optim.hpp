#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace uqr {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with one learning rate per parameter slot (or a shared scalar).
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t size, AdamParams params = {}) : params_(params), m_(size, 0.0), v_(size, 0.0) {}

  std::size_t size() const noexcept { return m_.size(); }
  long steps() const noexcept { return t_; }

  void step(std::span<double> x, std::span<const double> grad, double lr);
  // `lr` has one entry per group of `stride` consecutive parameters:
  // parameter i uses lr[i % stride].
  void step(std::span<double> x, std::span<const double> grad, std::span<const double> lr);

  // Rebuilds the moment buffers after the parameter set changed shape:
  // record k copies the moments of old record origin[k] (records of `stride`).
  void remap(const std::vector<std::size_t>& origin, std::size_t stride);

 private:
  AdamParams params_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

}  // namespace uqr
