#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "uqrecon/harness.hpp"

namespace uqr {

using json = nlohmann::json;

namespace {

template <typename E>
using Names = std::vector<std::pair<E, const char*>>;

const Names<Method>& method_names() {
  static const Names<Method> names{{Method::kVanilla, "vanilla"},
                                   {Method::kActive, "active"},
                                   {Method::kMcDropout, "mc_dropout"},
                                   {Method::kLaplace, "laplace"},
                                   {Method::kEnsemble, "ensemble"}};
  return names;
}

const Names<Protocol>& protocol_names() {
  static const Names<Protocol> names{{Protocol::kAleatoric, "aleatoric"},
                                     {Protocol::kViews, "views"},
                                     {Protocol::kClutter, "clutter"},
                                     {Protocol::kPose, "pose"}};
  return names;
}

const Names<Representation>& representation_names() {
  static const Names<Representation> names{{Representation::kField, "field"},
                                           {Representation::kCloud, "cloud"}};
  return names;
}

const Names<ColorActivation>& activation_names() {
  static const Names<ColorActivation> names{{ColorActivation::kSigmoid, "sigmoid"},
                                            {ColorActivation::kIdentity, "identity"}};
  return names;
}

template <typename E>
std::string name_of(const Names<E>& names, E value) {
  for (const auto& [v, n] : names) {
    if (v == value) return n;
  }
  return "?";
}

template <typename E>
E value_of(const Names<E>& names, const std::string& name, const char* what) {
  for (const auto& [v, n] : names) {
    if (name == n) return v;
  }
  std::string known;
  for (const auto& [v, n] : names) known += std::string(known.empty() ? "" : ", ") + n;
  throw ConfigError(std::string("unknown ") + what + " '" + name + "' (expected one of: " + known + ")");
}

// One visitor drives both parsing and echoing so the two cannot drift apart.
class Reader {
 public:
  Reader(const json& node, std::string where) : node_(node), where_(std::move(where)) {
    if (!node_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void operator()(const char* key, T& value) {
    if (const json* v = find(key)) {
      try {
        value = v->get<T>();
      } catch (const json::exception&) {
        throw ConfigError(path(key) + ": wrong type");
      }
    }
  }

  void operator()(const char* key, Vec3& value) {
    std::vector<double> v(3);
    for (int i = 0; i < 3; ++i) v[i] = value[i];
    (*this)(key, v);
    if (v.size() != 3) throw ConfigError(path(key) + ": expected three numbers");
    value = Vec3(v[0], v[1], v[2]);
  }

  void operator()(const char* key, std::filesystem::path& value) {
    std::string s = value.string();
    (*this)(key, s);
    value = s;
  }

  template <typename E>
  void enumeration(const char* key, E& value, const Names<E>& names) {
    std::string s = name_of(names, value);
    (*this)(key, s);
    value = value_of(names, s, key);
  }

  template <typename F>
  void object(const char* key, F&& body) {
    if (const json* v = find(key)) {
      Reader sub(*v, path(key));
      body(sub);
      sub.finish();
    }
  }

  bool has(const char* key) const { return node_.contains(key); }
  const json* find(const char* key) {
    auto it = node_.find(key);
    if (it == node_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }
  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& item : node_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(path(item.key().c_str()) + ": unknown key");
    }
  }

 private:
  const json& node_;
  std::string where_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  template <typename T>
  void operator()(const char* key, const T& value) {
    node_[key] = value;
  }
  void operator()(const char* key, const Vec3& value) {
    node_[key] = {value[0], value[1], value[2]};
  }
  void operator()(const char* key, const std::filesystem::path& value) {
    node_[key] = value.string();
  }
  template <typename E>
  void enumeration(const char* key, const E& value, const Names<E>& names) {
    node_[key] = name_of(names, value);
  }
  template <typename F>
  void object(const char* key, F&& body) {
    Writer sub;
    body(sub);
    node_[key] = std::move(sub.node_);
  }
  json& node() { return node_; }

 private:
  json node_ = json::object();
};

template <typename IO, typename Arch>
void visit_architecture(IO& io, Arch& a) {
  io("pos_levels", a.pos_levels);
  io("dir_levels", a.dir_levels);
  io("density_layers", a.density_layers);
  io("density_hidden", a.density_hidden);
  io("geo_features", a.geo_features);
  io("color_layers", a.color_layers);
  io("color_hidden", a.color_hidden);
  io("beta_floor", a.beta_floor);
  io("position_scale", a.position_scale);
  io.enumeration("color_activation", a.color_activation, activation_names());
}

template <typename IO, typename Train>
void visit_train(IO& io, Train& t) {
  io("steps", t.steps);
  io("rays_per_batch", t.rays_per_batch);
  io("field_lr", t.field_lr);
  io("field_lr_final", t.field_lr_final);
  io("density_l1", t.density_l1);
  io("opacity_l1", t.opacity_l1);
  io("ssim_weight", t.ssim_weight);
  io("loss_variance_floor_initial", t.loss_variance_floor_initial);
  io("loss_variance_floor", t.loss_variance_floor);
  io("samples_per_ray", t.render.samples_per_ray);
  io("t_near", t.render.t_near);
  io("t_far", t.render.t_far);
  io.object("architecture", [&](auto& sub) { visit_architecture(sub, t.architecture); });
  io.object("cloud_lr", [&](auto& sub) {
    sub("mean", t.cloud_lr.mean);
    sub("mean_final", t.cloud_lr.mean_final);
    sub("log_scale", t.cloud_lr.log_scale);
    sub("rotation", t.cloud_lr.rotation);
    sub("opacity", t.cloud_lr.opacity_raw);
    sub("color", t.cloud_lr.color);
    sub("beta", t.cloud_lr.beta_raw);
  });
  io("initial_gaussians", t.initial_gaussians);
  io("initial_opacity", t.initial_opacity);
  io("initial_beta", t.initial_beta);
  io("densify_interval", t.densify_interval);
  io("densify_from", t.densify_from);
  io("densify_until", t.densify_until);
  io.object("densify", [&](auto& sub) {
    sub("grad", t.densify.grad);
    sub("opacity", t.densify.opacity);
    sub("max_size", t.densify.max_size);
    sub("dense_scale", t.densify.dense_scale);
    sub("split_divisor", t.densify.split_divisor);
  });
}

template <typename IO, typename Eval>
void visit_eval(IO& io, Eval& e) {
  io("samples_per_ray", e.samples_per_ray);
  io("mc_passes", e.mc_passes);
  io("dropout", e.dropout);
  io("ensemble_members", e.ensemble_members);
  io.object("laplace", [&](auto& sub) {
    sub("batches", e.laplace.batches);
    sub("rays_per_batch", e.laplace.rays_per_batch);
    sub("prior_precision", e.laplace.prior_precision);
    sub("weight_draws", e.laplace.weight_draws);
    sub("density_draws", e.laplace.density_draws);
  });
  io("rgb_min_std", e.rgb_min_std);
  io("depth_min_std", e.depth_min_std);
  io("ause_steps", e.ause_steps);
  io("auce_levels", e.auce_levels);
  io("image_views", e.image_views);
}

template <typename IO, typename Config>
void visit_config(IO& io, Config& c) {
  io.object("scene", [&](auto& s) {
    s("kind", c.scene.kind);
    s("dataset", c.scene.dataset);
    s("views", c.scene.views);
    s("resolution", c.scene.resolution);
    s("ring_radius", c.scene.ring_radius);
    s("elevation", c.scene.elevation);
    s("focal_factor", c.scene.focal_factor);
    s("sphere_radius", c.scene.sphere_radius);
    s("color", c.scene.color);
  });
  io.enumeration("representation", c.representation, representation_names());
  io.object("protocol", [&](auto& p) {
    p.object("aleatoric", [&](auto& a) {
      a("noise", c.aleatoric.noise);
      a("blur", c.aleatoric.blur);
    });
    p.object("views", [&](auto& v) {
      v("fractions", c.views.fractions);
      v("ood", c.views.ood);
      v("few_view", c.views.few_view);
    });
    p.object("clutter", [&](auto& k) { k("proportions", c.clutter.proportions); });
    p.object("pose", [&](auto& k) {
      k("shifts", c.pose.shifts);
      k("percentile", c.pose.percentile);
      k("view", c.pose.view);
      k("constant_radiance", c.pose.constant_radiance);
    });
  });
  io.object("train", [&](auto& t) { visit_train(t, c.train); });
  io.object("eval", [&](auto& e) { visit_eval(e, c.eval); });
  io("out", c.out);
  io("seed", c.seed);
}

void check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

std::string to_string(Method method) { return name_of(method_names(), method); }
std::string to_string(Protocol protocol) { return name_of(protocol_names(), protocol); }
std::string to_string(Representation representation) {
  return name_of(representation_names(), representation);
}
Method parse_method(const std::string& name) { return value_of(method_names(), name, "method"); }
Protocol parse_protocol(const std::string& name) {
  return value_of(protocol_names(), name, "protocol");
}
Representation parse_representation(const std::string& name) {
  return value_of(representation_names(), name, "representation");
}

void ExperimentConfig::validate() const {
  const auto& s = scene;
  check(s.kind == "default" || s.kind == "sphere" || s.kind == "constant" || s.kind == "dataset",
        "scene.kind must be default, sphere, constant or dataset");
  check(s.kind != "dataset" || !s.dataset.empty(), "scene.dataset is required for kind 'dataset'");
  check(s.views >= 2 && s.views <= 1000, "scene.views must be in [2, 1000]");
  check(s.resolution >= 11 && s.resolution <= 1024, "scene.resolution must be in [11, 1024]");
  check(s.ring_radius > 0.0 && s.focal_factor > 0.0, "scene.ring_radius and focal_factor must be > 0");
  check(std::abs(s.elevation) < 1.5, "scene.elevation must be within (-1.5, 1.5) radians");
  check(s.sphere_radius > 0.0 && s.sphere_radius < s.ring_radius, "scene.sphere_radius out of range");
  check((s.color.array() >= 0.0).all() && (s.color.array() <= 1.0).all(), "scene.color must be in [0,1]");

  check(!methods.empty(), "at least one method is required");
  for (Method m : methods) {
    check(representation == Representation::kField ||
              (m != Method::kMcDropout && m != Method::kLaplace),
          to_string(m) + " requires representation 'field'");
  }

  for (double nu : aleatoric.noise) check(nu >= 0.0 && nu <= 1.0, "noise scales must be in [0,1]");
  for (int k : aleatoric.blur) {
    check(k >= 1 && k % 2 == 1 && k <= s.resolution, "blur kernels must be odd, >= 1 and <= resolution");
  }
  for (double f : views.fractions) check(f > 0.0 && f <= 1.0, "view fractions must be in (0,1]");
  for (int n : views.few_view) check(n >= 1, "few_view counts must be >= 1");
  for (double p : clutter.proportions) check(p >= 0.0 && p <= 1.0, "clutter proportions must be in [0,1]");
  for (double d : pose.shifts) check(std::isfinite(d) && std::abs(d) <= 1.0, "pose shifts must be in [-1,1]");
  check(pose.percentile >= 0.0 && pose.percentile < 100.0, "pose.percentile must be in [0,100)");
  check(pose.view >= -1, "pose.view must be >= -1");

  try {
    train.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  check(train.render.t_near > 0.0 && train.render.t_far > train.render.t_near,
        "train: need 0 < t_near < t_far");
  const auto& e = eval;
  check(e.samples_per_ray >= 1, "eval.samples_per_ray must be >= 1");
  check(e.mc_passes >= 2, "eval.mc_passes must be >= 2");
  check(e.dropout > 0.0 && e.dropout < 1.0, "eval.dropout must be in (0,1)");
  check(e.ensemble_members >= 2, "eval.ensemble_members must be >= 2");
  check(e.laplace.batches >= 1 && e.laplace.rays_per_batch >= 1, "eval.laplace budgets must be >= 1");
  check(e.laplace.prior_precision > 0.0, "eval.laplace.prior_precision must be > 0");
  check(e.laplace.weight_draws >= 2 && e.laplace.density_draws >= 2, "eval.laplace draws must be >= 2");
  check(e.rgb_min_std > 0.0 && e.depth_min_std > 0.0, "eval min std clamps must be > 0");
  check(e.ause_steps >= 1 && e.auce_levels >= 1, "eval.ause_steps and auce_levels must be >= 1");
  check(e.image_views >= 0, "eval.image_views must be >= 0");
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig config;
  Reader reader(doc, "config");
  visit_config(reader, config);
  // "method": one name, or "methods": a list.
  if (reader.has("method") && reader.has("methods")) {
    throw ConfigError("config: give either 'method' or 'methods'");
  }
  if (const json* m = reader.find("method")) {
    if (!m->is_string()) throw ConfigError("config.method: expected a string");
    config.methods = {parse_method(m->get<std::string>())};
  }
  if (const json* m = reader.find("methods")) {
    if (!m->is_array()) throw ConfigError("config.methods: expected a list");
    config.methods.clear();
    for (const auto& item : *m) {
      if (!item.is_string()) throw ConfigError("config.methods: expected strings");
      config.methods.push_back(parse_method(item.get<std::string>()));
    }
  }
  reader.finish();
  config.validate();
  return config;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment_config(buffer.str());
}

std::string experiment_config_to_json(const ExperimentConfig& config) {
  Writer writer;
  visit_config(writer, config);
  json methods = json::array();
  for (Method m : config.methods) methods.push_back(to_string(m));
  writer.node()["methods"] = methods;
  return writer.node().dump(2) + "\n";
}

}  // namespace uqr
