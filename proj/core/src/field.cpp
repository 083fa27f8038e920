#include "uqrecon/field.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "uqrecon/rng.hpp"

namespace uqr {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::VectorXd positional_encode(const Eigen::VectorXd& x, int levels) {
  return positional_encode(Eigen::MatrixXd(x), levels).col(0);
}

Eigen::MatrixXd positional_encode(const Eigen::MatrixXd& x, int levels) {
  require(levels >= 0, "positional_encode: levels must be >= 0");
  const auto d = x.rows();
  Eigen::MatrixXd out(d * (2 * levels + 1), x.cols());
  out.topRows(d) = x;
  if (levels == 0) return out;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    // Every sample of a ray shares its direction.
    if (j > 0 && x.col(j) == x.col(j - 1)) {
      out.col(j) = out.col(j - 1);
      continue;
    }
    for (Eigen::Index i = 0; i < d; ++i) {
      double s = std::sin(std::numbers::pi * x(i, j));
      double c = std::cos(std::numbers::pi * x(i, j));
      for (int k = 0; k < levels; ++k) {
        if (k > 0) {
          // Double-angle step to the next octave.
          const double s2 = 2.0 * s * c;
          c = (c - s) * (c + s);
          s = s2;
        }
        out(d * (1 + 2 * k) + i, j) = s;
        out(d * (2 + 2 * k) + i, j) = c;
      }
    }
  }
  return out;
}

namespace {

// dL/dx for the encoding above, given dL/d(encoding).
Eigen::MatrixXd positional_encode_backward(const Eigen::MatrixXd& x, int levels,
                                           const Eigen::MatrixXd& grad) {
  const auto d = x.rows();
  Eigen::MatrixXd dx = grad.topRows(d);
  for (int k = 0; k < levels; ++k) {
    const double freq = std::ldexp(std::numbers::pi, k);
    const Eigen::ArrayXXd arg = freq * x.array();
    dx.array() += freq * (grad.middleRows(d * (1 + 2 * k), d).array() * arg.cos() -
                          grad.middleRows(d * (2 + 2 * k), d).array() * arg.sin());
  }
  return dx;
}

std::vector<LayerSlot> plan_net(const std::vector<std::pair<int, int>>& shapes, std::size_t& offset) {
  std::vector<LayerSlot> slots;
  for (auto [in, out] : shapes) {
    LayerSlot s{in, out, offset, offset + static_cast<std::size_t>(in) * out};
    offset = s.bias_offset + static_cast<std::size_t>(out);
    slots.push_back(s);
  }
  return slots;
}

std::vector<std::pair<int, int>> chain(int in, int hidden, int layers, int out) {
  std::vector<std::pair<int, int>> shapes;
  int prev = in;
  for (int l = 0; l < layers - 1; ++l) {
    shapes.emplace_back(prev, hidden);
    prev = hidden;
  }
  shapes.emplace_back(prev, out);
  return shapes;
}

}  // namespace

MlpField::MlpField(const FieldArchitecture& arch) : arch_(arch) {
  require(arch.pos_levels >= 0 && arch.dir_levels >= 0, "MlpField: negative encoding levels");
  require(arch.density_layers >= 1 && arch.color_layers >= 1, "MlpField: nets need >= 1 layer");
  require(arch.density_hidden >= 1 && arch.color_hidden >= 1 && arch.geo_features >= 0,
          "MlpField: bad widths");
  require(arch.beta_floor > 0.0, "MlpField: beta floor must be positive");
  std::size_t offset = 0;
  density_ = plan_net(chain(arch.position_encoding_dim(), arch.density_hidden, arch.density_layers,
                            1 + arch.geo_features),
                      offset);
  color_ = plan_net(chain(arch.geo_features + arch.direction_encoding_dim(), arch.color_hidden,
                          arch.color_layers, arch.beta_head ? 4 : 3),
                    offset);
  params_.assign(offset, 0.0);
}

MlpField MlpField::initialized(const FieldArchitecture& arch, std::uint64_t seed) {
  MlpField field(arch);
  Rng rng(seed);
  for (Net net : {Net::kDensity, Net::kColor}) {
    for (const auto& slot : field.layers(net)) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(slot.in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      const std::size_t end = slot.bias_offset + static_cast<std::size_t>(slot.out);
      for (std::size_t i = slot.weight_offset; i < end; ++i) field.params_[i] = dist(rng);
    }
  }
  return field;
}

Eigen::Map<RowMatrix> MlpField::weight(Net net, int layer) {
  const auto& s = layers(net).at(static_cast<std::size_t>(layer));
  return {params_.data() + s.weight_offset, s.out, s.in};
}
Eigen::Map<const RowMatrix> MlpField::weight(Net net, int layer) const {
  const auto& s = layers(net).at(static_cast<std::size_t>(layer));
  return {params_.data() + s.weight_offset, s.out, s.in};
}
Eigen::Map<Eigen::VectorXd> MlpField::bias(Net net, int layer) {
  const auto& s = layers(net).at(static_cast<std::size_t>(layer));
  return {params_.data() + s.bias_offset, s.out};
}
Eigen::Map<const Eigen::VectorXd> MlpField::bias(Net net, int layer) const {
  const auto& s = layers(net).at(static_cast<std::size_t>(layer));
  return {params_.data() + s.bias_offset, s.out};
}

DropoutMasks sample_dropout_masks(const MlpField& field, double p, int columns,
                                  std::uint64_t seed) {
  require(p >= 0.0 && p < 1.0, "sample_dropout_masks: p must be in [0, 1)");
  require(columns >= 1, "sample_dropout_masks: need at least one column");
  Rng rng(seed);
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  auto draw = [&](int rows) {
    Eigen::MatrixXd m(rows, columns);
    for (int c = 0; c < columns; ++c) {
      for (int r = 0; r < rows; ++r) m(r, c) = keep(rng) ? scale : 0.0;
    }
    return m;
  };
  DropoutMasks masks;
  masks.density = draw(field.dropout_width(Net::kDensity));
  masks.color = draw(field.dropout_width(Net::kColor));
  return masks;
}

namespace {

void apply_mask(Eigen::MatrixXd& a, const Eigen::MatrixXd& mask) {
  if (mask.size() == 0) return;
  require(mask.rows() == a.rows(), "dropout mask length does not match the masked layer width");
  if (mask.cols() == 1) {
    a.array().colwise() *= mask.col(0).array();
  } else {
    require(mask.cols() == a.cols(), "dropout mask column count does not match the batch");
    a.array() *= mask.array();
  }
}

// Runs one net, recording inputs and pre-activations. Returns the final
// pre-activation (the raw outputs).
const Eigen::MatrixXd& run_net(const MlpField& field, Net net, Eigen::MatrixXd input,
                               const Eigen::MatrixXd& mask, std::vector<Eigen::MatrixXd>& inputs,
                               std::vector<Eigen::MatrixXd>& pre) {
  const int n_layers = field.layer_count(net);
  const char* name = net == Net::kDensity ? "density" : "color";
  inputs.resize(static_cast<std::size_t>(n_layers));
  pre.resize(static_cast<std::size_t>(n_layers));
  for (int l = 0; l < n_layers; ++l) {
    if (l == n_layers - 1) apply_mask(input, mask);
    Eigen::MatrixXd z = field.weight(net, l) * input;
    z.colwise() += field.bias(net, l);
    if (!z.allFinite()) throw NonFiniteActivation(name, l);
    inputs[l] = std::move(input);
    if (l + 1 < n_layers) input = z.cwiseMax(0.0);
    pre[l] = std::move(z);
  }
  return pre.back();
}

// Walks a net backwards from dL/d(raw output); accumulates parameter
// gradients into `grads` and returns dL/d(net input).
Eigen::MatrixXd back_net(const MlpField& field, Net net, Eigen::MatrixXd dz,
                         const Eigen::MatrixXd& mask, const std::vector<Eigen::MatrixXd>& inputs,
                         const std::vector<Eigen::MatrixXd>& pre, std::vector<double>* grads) {
  const int n_layers = field.layer_count(net);
  for (int l = n_layers - 1; l >= 0; --l) {
    const auto& slot = field.layers(net)[static_cast<std::size_t>(l)];
    if (grads != nullptr) {
      Eigen::Map<RowMatrix> dw(grads->data() + slot.weight_offset, slot.out, slot.in);
      Eigen::Map<Eigen::VectorXd> db(grads->data() + slot.bias_offset, slot.out);
      dw.noalias() += dz * inputs[l].transpose();
      // Evaluated into its own buffer: summing straight into the map lets the
      // rounding depend on where the gradient vector happens to be allocated.
      const Eigen::VectorXd row_sums = dz.rowwise().sum();
      db += row_sums;
    }
    Eigen::MatrixXd da = field.weight(net, l).transpose() * dz;
    if (l == n_layers - 1) apply_mask(da, mask);
    if (l > 0) {
      da.array() *= (pre[l - 1].array() > 0.0).cast<double>();
    }
    dz = std::move(da);
  }
  return dz;
}

}  // namespace

FieldOutput field_forward(const MlpField& field, const Eigen::Matrix3Xd& positions,
                          const Eigen::Matrix3Xd& directions, const DropoutMasks* masks) {
  require(positions.cols() == directions.cols(), "field_forward: batch size mismatch");
  require(positions.allFinite() && directions.allFinite(), "field_forward: non-finite input");
  const auto& arch = field.architecture();
  const auto n = positions.cols();
  FieldOutput out;
  FieldTape& tape = out.tape;
  tape.points = static_cast<int>(n);
  tape.positions = positions;
  tape.directions = directions;
  if (masks != nullptr) tape.masks = *masks;

  const Eigen::MatrixXd scaled = arch.position_scale * positions;
  const Eigen::MatrixXd& density_raw =
      run_net(field, Net::kDensity, positional_encode(scaled, arch.pos_levels),
              tape.masks.density, tape.density_inputs, tape.density_pre);

  Eigen::MatrixXd color_in(arch.geo_features + arch.direction_encoding_dim(), n);
  color_in.topRows(arch.geo_features) = density_raw.bottomRows(arch.geo_features);
  color_in.bottomRows(arch.direction_encoding_dim()) =
      positional_encode(Eigen::MatrixXd(directions), arch.dir_levels);
  const Eigen::MatrixXd& color_raw = run_net(field, Net::kColor, std::move(color_in),
                                             tape.masks.color, tape.color_inputs, tape.color_pre);

  out.sigma = density_raw.row(0).unaryExpr([](double x) { return softplus(x); });
  if (arch.color_activation == ColorActivation::kSigmoid) {
    out.color = color_raw.topRows(3).unaryExpr([](double x) { return sigmoid(x); });
  } else {
    out.color = color_raw.topRows(3);
  }
  if (arch.beta_head) {
    const double floor = arch.beta_floor;
    out.beta = color_raw.row(3).unaryExpr([floor](double x) { return softplus(x) + floor; });
  }
  return out;
}

FieldGradients field_backward(const MlpField& field, const FieldTape& tape,
                              const Eigen::RowVectorXd& d_sigma, const Eigen::Matrix3Xd& d_color,
                              const Eigen::RowVectorXd& d_beta, BackwardOptions options) {
  const auto& arch = field.architecture();
  const int n = tape.points;
  require(d_sigma.cols() == n && d_color.cols() == n, "field_backward: upstream shape mismatch");
  require(d_beta.size() == 0 || (arch.beta_head && d_beta.cols() == n),
          "field_backward: beta upstream shape mismatch");

  FieldGradients grads;
  std::vector<double>* param_grads = nullptr;
  if (options.parameters) {
    grads.params.assign(field.params().size(), 0.0);
    param_grads = &grads.params;
  }

  const Eigen::MatrixXd& color_raw = tape.color_pre.back();
  Eigen::MatrixXd dz_color(color_raw.rows(), n);
  if (arch.color_activation == ColorActivation::kSigmoid) {
    dz_color.topRows(3) = d_color.array() * color_raw.topRows(3).unaryExpr([](double x) {
      const double s = sigmoid(x);
      return s * (1.0 - s);
    }).array();
  } else {
    dz_color.topRows(3) = d_color;
  }
  if (arch.beta_head) {
    if (d_beta.size() == 0) {
      dz_color.row(3).setZero();
    } else {
      dz_color.row(3) = d_beta.array() *
                        color_raw.row(3).unaryExpr([](double x) { return sigmoid(x); }).array();
    }
  }
  grads.color_head = dz_color;
  const Eigen::MatrixXd d_color_in = back_net(field, Net::kColor, std::move(dz_color),
                                              tape.masks.color, tape.color_inputs, tape.color_pre,
                                              param_grads);

  const Eigen::MatrixXd& density_raw = tape.density_pre.back();
  Eigen::MatrixXd dz_density(density_raw.rows(), n);
  dz_density.row(0) =
      d_sigma.array() * density_raw.row(0).unaryExpr([](double x) { return sigmoid(x); }).array();
  dz_density.bottomRows(arch.geo_features) = d_color_in.topRows(arch.geo_features);
  grads.density_head = dz_density;

  if (!options.inputs && !options.parameters) return grads;
  const Eigen::MatrixXd d_pos_enc =
      back_net(field, Net::kDensity, std::move(dz_density), tape.masks.density,
               tape.density_inputs, tape.density_pre, param_grads);

  if (options.inputs) {
    grads.positions = arch.position_scale *
                      positional_encode_backward(arch.position_scale * tape.positions,
                                                 arch.pos_levels, d_pos_enc);
    grads.directions = positional_encode_backward(
        tape.directions, arch.dir_levels, d_color_in.bottomRows(arch.direction_encoding_dim()));
  }
  return grads;
}

namespace {

using json = nlohmann::json;
constexpr int kCheckpointVersion = 1;

json arch_to_json(const FieldArchitecture& a) {
  return {{"pos_levels", a.pos_levels},
          {"dir_levels", a.dir_levels},
          {"density_layers", a.density_layers},
          {"density_hidden", a.density_hidden},
          {"geo_features", a.geo_features},
          {"color_layers", a.color_layers},
          {"color_hidden", a.color_hidden},
          {"beta_head", a.beta_head},
          {"beta_floor", a.beta_floor},
          {"position_scale", a.position_scale},
          {"color_activation",
           a.color_activation == ColorActivation::kSigmoid ? "sigmoid" : "identity"}};
}

FieldArchitecture arch_from_json(const json& j) {
  FieldArchitecture a;
  a.pos_levels = j.at("pos_levels").get<int>();
  a.dir_levels = j.at("dir_levels").get<int>();
  a.density_layers = j.at("density_layers").get<int>();
  a.density_hidden = j.at("density_hidden").get<int>();
  a.geo_features = j.at("geo_features").get<int>();
  a.color_layers = j.at("color_layers").get<int>();
  a.color_hidden = j.at("color_hidden").get<int>();
  a.beta_head = j.at("beta_head").get<bool>();
  a.beta_floor = j.at("beta_floor").get<double>();
  a.position_scale = j.at("position_scale").get<double>();
  a.color_activation = j.at("color_activation").get<std::string>() == "identity"
                           ? ColorActivation::kIdentity
                           : ColorActivation::kSigmoid;
  return a;
}

}  // namespace

void save_field(const MlpField& field, const std::filesystem::path& path) {
  json doc;
  doc["format"] = "uqrecon-field";
  doc["version"] = kCheckpointVersion;
  doc["architecture"] = arch_to_json(field.architecture());
  json shapes = json::array();
  for (Net net : {Net::kDensity, Net::kColor}) {
    for (const auto& s : field.layers(net)) {
      shapes.push_back({{"net", net == Net::kDensity ? "density" : "color"},
                        {"in", s.in},
                        {"out", s.out}});
    }
  }
  doc["layers"] = shapes;
  doc["params"] = std::vector<double>(field.params().begin(), field.params().end());
  std::ofstream out(path);
  if (!out) throw IoError("save_field: cannot write " + path.string());
  out << doc.dump() << '\n';
}

MlpField load_field(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_field: cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(std::string("load_field: malformed checkpoint: ") + e.what());
  }
  if (doc.value("format", "") != "uqrecon-field") throw IoError("load_field: not a field checkpoint");
  if (doc.value("version", 0) != kCheckpointVersion) throw IoError("load_field: unsupported version");
  MlpField field(arch_from_json(doc.at("architecture")));
  std::size_t k = 0;
  const auto& shapes = doc.at("layers");
  for (Net net : {Net::kDensity, Net::kColor}) {
    for (const auto& s : field.layers(net)) {
      if (k >= shapes.size() || shapes[k].at("in").get<int>() != s.in ||
          shapes[k].at("out").get<int>() != s.out) {
        throw IoError("load_field: layer shapes do not match the architecture");
      }
      ++k;
    }
  }
  const auto params = doc.at("params").get<std::vector<double>>();
  if (params.size() != field.params().size()) throw IoError("load_field: parameter count mismatch");
  std::copy(params.begin(), params.end(), field.params().begin());
  return field;
}

}  // namespace uqr
