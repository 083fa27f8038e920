#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "uqrecon/field.hpp"

namespace uqr::testing {

// Central differences of a scalar function over every entry of `x`.
inline std::vector<double> central_gradient(std::vector<double> x,
                                            const std::function<double(const std::vector<double>&)>& f,
                                            double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Objective value plus the on/off state of every hidden ReLU of the pass.
struct KinkedValue {
  double value = 0.0;
  std::vector<std::uint8_t> pattern;
};

inline std::vector<std::uint8_t> relu_pattern(const FieldTape& tape) {
  std::vector<std::uint8_t> out;
  for (const auto* pre : {&tape.density_pre, &tape.color_pre}) {
    for (std::size_t l = 0; l + 1 < pre->size(); ++l) {
      const Eigen::MatrixXd& z = (*pre)[l];
      for (Eigen::Index i = 0; i < z.size(); ++i) out.push_back(z.data()[i] > 0.0);
    }
  }
  return out;
}

struct StencilGradient {
  std::vector<double> gradient;
  // False when some ReLU switched inside a stencil [x-h, x+h]: the
  // difference quotient then straddles a kink and says nothing about the
  // derivative at x.
  bool smooth = true;
};

inline StencilGradient central_gradient_smooth(
    std::vector<double> x, const std::function<KinkedValue(const std::vector<double>&)>& f,
    double h = 1e-5) {
  StencilGradient out;
  out.gradient.resize(x.size());
  const auto base = f(x).pattern;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const auto up = f(x);
    x[i] = keep - h;
    const auto down = f(x);
    x[i] = keep;
    out.gradient[i] = (up.value - down.value) / (2.0 * h);
    out.smooth = out.smooth && up.pattern == base && down.pattern == base;
  }
  return out;
}

// ||a - b|| / max(||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-12) {
  double diff = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    norm += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(norm), floor);
}

inline std::vector<double> to_vector(const Eigen::MatrixXd& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

}  // namespace uqr::testing
