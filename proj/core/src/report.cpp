#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "uqrecon/harness.hpp"
#include "uqrecon/png_io.hpp"

namespace uqr {

using json = nlohmann::json;

namespace {

using Cell = std::optional<double> ResultsRow::*;

const std::vector<std::pair<std::string, Cell>>& numeric_columns() {
  static const std::vector<std::pair<std::string, Cell>> cols{
      {"psnr", &ResultsRow::psnr},
      {"ssim", &ResultsRow::ssim},
      {"nll", &ResultsRow::nll},
      {"ause", &ResultsRow::ause},
      {"auce", &ResultsRow::auce},
      {"mean_variance", &ResultsRow::mean_variance},
      {"depth_rmse", &ResultsRow::depth_rmse},
      {"depth_nll", &ResultsRow::depth_nll},
      {"depth_ause", &ResultsRow::depth_ause},
      {"depth_auce", &ResultsRow::depth_auce},
      {"distractor_std", &ResultsRow::distractor_std},
      {"clean_std", &ResultsRow::clean_std},
      {"grad_diff_mean", &ResultsRow::grad_diff_mean},
      {"final_loss", &ResultsRow::final_loss},
  };
  return cols;
}

std::string format_cell(const std::optional<double>& v) {
  if (!v || std::isnan(*v)) return "NA";
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", *v);
  return buf;
}

std::optional<double> parse_cell(const std::string& s) {
  if (s == "NA") return std::nullopt;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw InvalidArgument("results.csv: bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw InvalidArgument("results.csv: bad number '" + s + "'");
  }
}

// Text fields never contain commas (names and formatted numbers); guard anyway.
std::string text_cell(const std::string& s) {
  std::string out = s;
  std::replace(out.begin(), out.end(), ',', ';');
  return out;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::pair<double, double> data_range(const Image& image) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : image.values()) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(lo <= hi)) return {0.0, 0.0};
  return {lo, hi};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

const char* kind_name(Artifact::Kind kind) {
  switch (kind) {
    case Artifact::Kind::kColor:
      return "color";
    case Artifact::Kind::kHeatmap:
      return "heatmap";
    case Artifact::Kind::kGray:
      return "gray";
  }
  return "?";
}

}  // namespace

const std::vector<std::string>& ResultsTable::columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c{"protocol",       "variable", "value",      "method",
                               "representation", "status",   "train_views", "test_views"};
    for (const auto& [name, member] : numeric_columns()) c.push_back(name);
    return c;
  }();
  return cols;
}

std::string ResultsTable::to_csv() const {
  std::string out;
  const auto& cols = columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += "\n";
  for (const auto& r : rows) {
    out += text_cell(r.protocol) + "," + text_cell(r.variable) + "," + text_cell(r.value) + "," +
           text_cell(r.method) + "," + text_cell(r.representation) + "," + text_cell(r.status) + "," +
           std::to_string(r.train_views) + "," + std::to_string(r.test_views);
    for (const auto& [name, member] : numeric_columns()) out += "," + format_cell(r.*member);
    out += "\n";
  }
  return out;
}

ResultsTable ResultsTable::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("results.csv: empty file");
  if (split_line(line) != columns()) throw InvalidArgument("results.csv: unexpected header");
  ResultsTable table;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != columns().size()) throw InvalidArgument("results.csv: wrong number of cells");
    ResultsRow r;
    r.protocol = cells[0];
    r.variable = cells[1];
    r.value = cells[2];
    r.method = cells[3];
    r.representation = cells[4];
    r.status = cells[5];
    try {
      r.train_views = std::stoi(cells[6]);
      r.test_views = std::stoi(cells[7]);
    } catch (const std::logic_error&) {
      throw InvalidArgument("results.csv: bad view count");
    }
    std::size_t k = 8;
    for (const auto& [name, member] : numeric_columns()) r.*member = parse_cell(cells[k++]);
    table.rows.push_back(std::move(r));
  }
  return table;
}

Vec3 jet_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto ramp = [](double x) { return std::clamp(1.5 - std::abs(x), 0.0, 1.0); };
  return {ramp(4.0 * t - 3.0), ramp(4.0 * t - 2.0), ramp(4.0 * t - 1.0)};
}

Image jet_heatmap(const Image& values, double lo, double hi) {
  require(values.channels() == 1, "jet_heatmap: need a single-channel image");
  Image out(values.width(), values.height(), 3);
  const double span = hi - lo;
  for (int y = 0; y < values.height(); ++y) {
    for (int x = 0; x < values.width(); ++x) {
      const double v = values.at(x, y);
      const double t = span > 0.0 && std::isfinite(v) ? (v - lo) / span : 0.0;
      const Vec3 c = jet_color(t);
      for (int k = 0; k < 3; ++k) out.at(x, y, k) = c[k];
    }
  }
  return out;
}

void emit_report(const ProtocolResult& result, const std::filesystem::path& out_dir,
                 const ExperimentConfig* config) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out_dir.string() + ": " + ec.message());
  write_text(out_dir / "results.csv", result.table.to_csv());
  if (config) write_text(out_dir / "config.json", experiment_config_to_json(*config));

  json index = json::array();
  for (const auto& a : result.artifacts) {
    const auto path = out_dir / a.path;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw std::runtime_error("cannot create " + path.parent_path().string());
    json entry{{"path", a.path}, {"kind", kind_name(a.kind)}};
    try {
      if (a.kind == Artifact::Kind::kColor) {
        write_png(path, a.image);
      } else {
        const Image single = a.image.channels() == 1 ? a.image : [&] {
          Image s(a.image.width(), a.image.height(), 1);
          for (int y = 0; y < a.image.height(); ++y) {
            for (int x = 0; x < a.image.width(); ++x) {
              double v = 0.0;
              for (int c = 0; c < a.image.channels(); ++c) v += a.image.at(x, y, c);
              s.at(x, y) = v / a.image.channels();
            }
          }
          return s;
        }();
        const auto [lo, hi] = a.range ? *a.range : data_range(single);
        entry["range"] = {lo, hi};
        if (a.kind == Artifact::Kind::kHeatmap) {
          entry["colormap"] = "jet";
          write_png(path, jet_heatmap(single, lo, hi));
        } else {
          Image gray(single.width(), single.height(), 1);
          const double span = hi - lo;
          for (std::size_t i = 0; i < single.size(); ++i) {
            gray.values()[i] = span > 0.0 ? (single.values()[i] - lo) / span : 0.0;
          }
          write_png(path, gray);
        }
      }
    } catch (const IoError& e) {
      throw std::runtime_error(e.what());
    }
    index.push_back(entry);
  }
  write_text(out_dir / "artifacts.json", index.dump(2) + "\n");
}

std::string summarize_results(const ResultsTable& table) {
  std::string out = "# Results\n";
  if (table.rows.empty()) return out + "\nNo rows.\n";
  std::vector<std::string> protocols;
  for (const auto& r : table.rows) {
    if (std::find(protocols.begin(), protocols.end(), r.protocol) == protocols.end()) {
      protocols.push_back(r.protocol);
    }
  }
  for (const auto& protocol : protocols) {
    std::vector<const ResultsRow*> rows;
    for (const auto& r : table.rows) {
      if (r.protocol == protocol) rows.push_back(&r);
    }
    // Only columns with at least one value in this section.
    std::vector<std::pair<std::string, Cell>> used;
    for (const auto& col : numeric_columns()) {
      if (std::any_of(rows.begin(), rows.end(), [&](const ResultsRow* r) { return (r->*col.second).has_value(); })) {
        used.push_back(col);
      }
    }
    out += "\n## " + protocol + "\n\n| method | " + rows.front()->variable + " | status";
    for (const auto& [name, member] : used) out += " | " + name;
    out += " |\n|---|---|---";
    for (std::size_t i = 0; i < used.size(); ++i) out += "|---";
    out += "|\n";
    for (const ResultsRow* r : rows) {
      out += "| " + r->method + " (" + r->representation + ") | " + r->variable + "=" + r->value + " | " + r->status;
      for (const auto& [name, member] : used) {
        const auto& v = r->*member;
        char buf[32] = "NA";
        if (v && std::isfinite(*v)) std::snprintf(buf, sizeof(buf), "%.4g", *v);
        if (v && std::isinf(*v)) std::snprintf(buf, sizeof(buf), "%s", *v > 0 ? "inf" : "-inf");
        out += std::string(" | ") + buf;
      }
      out += " |\n";
    }
  }
  return out;
}

// Model directories: manifest.json plus checkpoint files in the field and
// cloud formats.
void save_model(const TrainedMethod& model, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create model directory " + dir.string());
  json manifest{{"format", "uqrecon-model"},
                {"version", 1},
                {"method", to_string(model.method)},
                {"representation", to_string(model.representation)}};
  manifest["final_loss"] = std::isfinite(model.final_loss) ? json(model.final_loss) : json(nullptr);
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, MlpField>) {
          save_field(m, dir / "field.json");
          manifest["files"] = {"field.json"};
        } else if constexpr (std::is_same_v<T, GaussianCloud>) {
          save_cloud(m, dir / "cloud.json");
          export_cloud_ply(m, dir / "cloud.ply");
          manifest["files"] = {"cloud.json"};
        } else if constexpr (std::is_same_v<T, FieldEnsemble> || std::is_same_v<T, CloudEnsemble>) {
          json files = json::array();
          for (std::size_t i = 0; i < m.members.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "member_%02zu.json", i);
            if constexpr (std::is_same_v<T, FieldEnsemble>) {
              save_field(m.members[i], dir / name);
            } else {
              save_cloud(m.members[i], dir / name);
            }
            files.push_back(name);
          }
          manifest["files"] = files;
          manifest["seeds"] = m.seeds;
        } else {
          save_field(m.mode, dir / "mode.json");
          json post{{"indices", m.indices}, {"ggn", m.ggn}, {"prior_precision", m.prior_precision}};
          write_text(dir / "posterior.json", post.dump() + "\n");
          manifest["files"] = {"mode.json", "posterior.json"};
        }
      },
      model.model);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

TrainedMethod load_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no model manifest in " + dir.string());
  TrainedMethod model;
  try {
    const json manifest = json::parse(in);
    if (manifest.value("format", "") != "uqrecon-model") throw IoError("not a model manifest");
    model.method = parse_method(manifest.at("method").get<std::string>());
    model.representation = parse_representation(manifest.at("representation").get<std::string>());
    model.final_loss = manifest.at("final_loss").is_number() ? manifest.at("final_loss").get<double>()
                                                             : std::numeric_limits<double>::quiet_NaN();
    const auto files = manifest.at("files").get<std::vector<std::string>>();
    const bool field = model.representation == Representation::kField;
    if (model.method == Method::kEnsemble) {
      const auto seeds = manifest.at("seeds").get<std::vector<std::uint64_t>>();
      if (field) {
        FieldEnsemble e;
        for (const auto& f : files) e.members.push_back(load_field(dir / f));
        e.seeds = seeds;
        model.model = std::move(e);
      } else {
        CloudEnsemble e;
        for (const auto& f : files) e.members.push_back(load_cloud(dir / f));
        e.seeds = seeds;
        model.model = std::move(e);
      }
    } else if (model.method == Method::kLaplace) {
      LaplacePosterior p;
      p.mode = load_field(dir / "mode.json");
      std::ifstream pin(dir / "posterior.json");
      if (!pin) throw IoError("missing posterior.json in " + dir.string());
      const json post = json::parse(pin);
      p.indices = post.at("indices").get<std::vector<std::size_t>>();
      p.ggn = post.at("ggn").get<std::vector<double>>();
      p.prior_precision = post.at("prior_precision").get<double>();
      if (p.indices.size() != p.ggn.size()) throw IoError("posterior.json: size mismatch");
      for (auto idx : p.indices) {
        if (idx >= p.mode.params().size()) throw IoError("posterior.json: index out of range");
      }
      model.model = std::move(p);
    } else if (field) {
      model.model = load_field(dir / files.at(0));
    } else {
      model.model = load_cloud(dir / files.at(0));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed model directory: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("malformed model directory: ") + e.what());
  }
  return model;
}

}  // namespace uqr
