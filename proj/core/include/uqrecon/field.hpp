#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "uqrecon/common.hpp"

namespace uqr {

// Frequency encoding [x, sin(2^0 pi x), cos(2^0 pi x), ...,
// sin(2^(L-1) pi x), cos(2^(L-1) pi x)], grouped by frequency, each group
// holding all d components. Output length d * (2L + 1).
Eigen::VectorXd positional_encode(const Eigen::VectorXd& x, int levels);
// Column-wise batch version: input (d x n), output (d(2L+1) x n).
Eigen::MatrixXd positional_encode(const Eigen::MatrixXd& x, int levels);

enum class ColorActivation { kSigmoid, kIdentity };

struct FieldArchitecture {
  int pos_levels = 6;
  int dir_levels = 2;
  int density_layers = 3;  // linear layers, ReLU between them
  int density_hidden = 64;
  int geo_features = 15;   // density net outputs 1 + geo_features
  int color_layers = 2;
  int color_hidden = 64;
  bool beta_head = false;  // extra colour-net output column for beta
  double beta_floor = 1e-6;
  double position_scale = 1.0;  // positions are multiplied by this before encoding
  ColorActivation color_activation = ColorActivation::kSigmoid;

  int position_encoding_dim() const { return 3 * (2 * pos_levels + 1); }
  int direction_encoding_dim() const { return 3 * (2 * dir_levels + 1); }
  bool operator==(const FieldArchitecture&) const = default;
};

enum class Net { kDensity = 0, kColor = 1 };

struct LayerSlot {
  int in = 0;
  int out = 0;
  std::size_t weight_offset = 0;  // out x in, row-major
  std::size_t bias_offset = 0;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// MLP radiance field: density net maps encoded position to (sigma_raw,
// geometry features); colour net maps (features, encoded direction) to
// colour (and optionally beta). All weights live in one flat parameter
// vector so optimizers and checkpoints see a single buffer.
class MlpField {
 public:
  MlpField() : MlpField(FieldArchitecture{}) {}
  // All parameters zero.
  explicit MlpField(const FieldArchitecture& arch);
  // Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static MlpField initialized(const FieldArchitecture& arch, std::uint64_t seed);

  const FieldArchitecture& architecture() const noexcept { return arch_; }
  const std::vector<LayerSlot>& layers(Net net) const {
    return net == Net::kDensity ? density_ : color_;
  }
  int layer_count(Net net) const { return static_cast<int>(layers(net).size()); }

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  Eigen::Map<RowMatrix> weight(Net net, int layer);
  Eigen::Map<const RowMatrix> weight(Net net, int layer) const;
  Eigen::Map<Eigen::VectorXd> bias(Net net, int layer);
  Eigen::Map<const Eigen::VectorXd> bias(Net net, int layer) const;

  // Width of the activation feeding the last layer of `net` (the dropout site).
  int dropout_width(Net net) const { return layers(net).back().in; }

  bool operator==(const MlpField& other) const {
    return arch_ == other.arch_ && params_ == other.params_;
  }

 private:
  FieldArchitecture arch_;
  std::vector<LayerSlot> density_;
  std::vector<LayerSlot> color_;
  // Fixed alignment keeps Eigen's vectorized paths, and so the rounding of
  // results, identical across copies of the same field.
  std::vector<double, Eigen::aligned_allocator<double>> params_;
};

// Multiplicative masks applied to the input of the last layer of each net.
// Each matrix is (dropout_width x 1), broadcast over the batch, or
// (dropout_width x n), one column per point. Empty means "no mask".
// Values are 0 or 1/(1-p).
struct DropoutMasks {
  Eigen::MatrixXd density;
  Eigen::MatrixXd color;
};

// One mask pair with `columns` independent columns.
DropoutMasks sample_dropout_masks(const MlpField& field, double p, int columns,
                                  std::uint64_t seed);

// Everything the reverse pass needs from one forward evaluation.
struct FieldTape {
  int points = 0;
  Eigen::Matrix3Xd positions;
  Eigen::Matrix3Xd directions;
  std::vector<Eigen::MatrixXd> density_inputs;  // input to each layer (masked)
  std::vector<Eigen::MatrixXd> density_pre;     // pre-activation of each layer
  std::vector<Eigen::MatrixXd> color_inputs;
  std::vector<Eigen::MatrixXd> color_pre;
  DropoutMasks masks;
};

struct FieldOutput {
  Eigen::RowVectorXd sigma;  // softplus(sigma_raw) >= 0
  Eigen::Matrix3Xd color;    // sigmoid(c_raw) in (0,1)^3 (or identity)
  Eigen::RowVectorXd beta;   // softplus(beta_raw) + floor; empty without a beta head
  FieldTape tape;
};

// Batched forward pass over n points (columns). Throws NonFiniteActivation
// naming the net and layer when an activation is NaN/inf.
FieldOutput field_forward(const MlpField& field, const Eigen::Matrix3Xd& positions,
                          const Eigen::Matrix3Xd& directions,
                          const DropoutMasks* masks = nullptr);

struct FieldGradients {
  std::vector<double> params;     // same layout as MlpField::params()
  Eigen::Matrix3Xd positions;     // dL/dx per point
  Eigen::Matrix3Xd directions;    // dL/dd per point
  Eigen::MatrixXd density_head;   // dL/d(raw density-net outputs), per point
  Eigen::MatrixXd color_head;     // dL/d(raw colour-net outputs), per point
};

struct BackwardOptions {
  bool parameters = true;
  bool inputs = true;
};

// Reverse pass for upstream gradients w.r.t. (sigma, color, beta). `d_beta`
// may be empty when the field has no beta head or beta is unused.
FieldGradients field_backward(const MlpField& field, const FieldTape& tape,
                              const Eigen::RowVectorXd& d_sigma,
                              const Eigen::Matrix3Xd& d_color,
                              const Eigen::RowVectorXd& d_beta,
                              BackwardOptions options = {});

// JSON checkpoint: architecture, layer shapes and the flat row-major
// parameter vector. Doubles are written with round-trip precision.
void save_field(const MlpField& field, const std::filesystem::path& path);
MlpField load_field(const std::filesystem::path& path);

double softplus(double x);
double sigmoid(double x);

}  // namespace uqr
