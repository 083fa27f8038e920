#include "uqrecon/optim.hpp"

#include <cmath>

#include "uqrecon/common.hpp"

namespace uqr {

void Adam::step(std::span<double> x, std::span<const double> grad, double lr) {
  const double rate[1] = {lr};
  step(x, grad, std::span<const double>(rate, 1));
}

void Adam::step(std::span<double> x, std::span<const double> grad, std::span<const double> lr) {
  require(x.size() == m_.size() && grad.size() == m_.size(), "Adam::step: size mismatch");
  require(!lr.empty(), "Adam::step: no learning rate");
  ++t_;
  const double c1 = 1.0 - std::pow(params_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(params_.beta2, static_cast<double>(t_));
  const std::size_t stride = lr.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    m_[i] = params_.beta1 * m_[i] + (1.0 - params_.beta1) * grad[i];
    v_[i] = params_.beta2 * v_[i] + (1.0 - params_.beta2) * grad[i] * grad[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    x[i] -= lr[i % stride] * m_hat / (std::sqrt(v_hat) + params_.eps);
  }
}

void Adam::remap(const std::vector<std::size_t>& origin, std::size_t stride) {
  std::vector<double> m(origin.size() * stride);
  std::vector<double> v(origin.size() * stride);
  for (std::size_t k = 0; k < origin.size(); ++k) {
    require((origin[k] + 1) * stride <= m_.size(), "Adam::remap: origin out of range");
    for (std::size_t j = 0; j < stride; ++j) {
      m[k * stride + j] = m_[origin[k] * stride + j];
      v[k * stride + j] = v_[origin[k] * stride + j];
    }
  }
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace uqr
