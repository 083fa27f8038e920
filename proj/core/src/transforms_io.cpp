#include "uqrecon/transforms_io.hpp"

#include <cmath>
#include <fstream>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "uqrecon/png_io.hpp"

namespace uqr {
namespace {

using json = nlohmann::json;

Image flip_rows(const Image& image) {
  Image out(image.width(), image.height(), image.channels());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < image.channels(); ++c) {
        out.at(x, image.height() - 1 - y, c) = image.at(x, y, c);
      }
    }
  }
  return out;
}

std::filesystem::path resolve_image(const std::filesystem::path& root, const std::string& ref) {
  std::filesystem::path p = root / ref;
  if (std::filesystem::exists(p)) return p;
  if (!p.has_extension()) {
    auto with_ext = p;
    with_ext += ".png";
    if (std::filesystem::exists(with_ext)) return with_ext;
  }
  throw IoError("transforms: image not found: " + p.string());
}

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return r;
}

}  // namespace

ViewDataset load_transforms_dataset(const std::filesystem::path& path) {
  const auto manifest = std::filesystem::is_directory(path) ? path / "transforms.json" : path;
  std::ifstream in(manifest);
  if (!in) throw IoError("transforms: cannot open manifest " + manifest.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(std::string("transforms: malformed manifest: ") + e.what());
  }
  const auto root = manifest.parent_path();
  const auto& frames = doc.value("frames", json::array());
  require(frames.is_array() && !frames.empty(), "transforms: manifest has no frames");

  ViewDataset dataset;
  for (const auto& frame : frames) {
    const Image file_image = read_png_rgb(resolve_image(root, frame.at("file_path").get<std::string>()));
    const int w = file_image.width(), h = file_image.height();

    double focal = 0.0;
    if (doc.contains("fl_x")) {
      focal = doc["fl_x"].get<double>();
    } else if (doc.contains("camera_angle_x")) {
      focal = 0.5 * w / std::tan(0.5 * doc["camera_angle_x"].get<double>());
    } else {
      throw InvalidArgument("transforms: manifest lacks fl_x and camera_angle_x");
    }

    CameraPose pose;
    pose.focal = focal;
    pose.width = w;
    pose.height = h;
    pose.principal_point = Vec2(doc.value("cx", w / 2.0), doc.value("cy", h / 2.0));
    // Rows are flipped on load, so the principal point's v coordinate flips too.
    pose.principal_point.y() = h - pose.principal_point.y();

    Eigen::Matrix4d c2w;
    const auto& m = frame.at("transform_matrix");
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) c2w(i, j) = m.at(i).at(j).get<double>();
    }
    if (frame.contains("world_to_camera")) {
      const auto& e = frame["world_to_camera"];
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) pose.rotation(i, j) = e.at(i).at(j).get<double>();
        pose.translation(i) = e.at(i).at(3).get<double>();
      }
      const Vec3 center = c2w.block<3, 1>(0, 3);
      require((pose.center() - center).norm() <= 1e-6 * (1.0 + center.norm()),
              "transforms: world_to_camera disagrees with transform_matrix");
    } else {
      require(std::abs(c2w.determinant()) > 1e-12, "transforms: non-invertible transform_matrix");
      const Eigen::Matrix4d w2c = c2w.inverse();
      require(w2c.allFinite(), "transforms: non-invertible transform_matrix");
      pose.rotation = w2c.block<3, 3>(0, 0);
      pose.translation = w2c.block<3, 1>(0, 3);
      const double err =
          (pose.rotation.transpose() * pose.rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
      if (err > 1e-9) {
        // Scaled or slightly non-orthogonal export; keep the camera centre.
        const Vec3 center = c2w.block<3, 1>(0, 3);
        pose.rotation = nearest_rotation(pose.rotation);
        pose.translation = -pose.rotation * center;
      }
    }
    pose.validate();

    View view;
    view.pose = pose;
    view.rgb = flip_rows(file_image);
    view.split = frame.value("split", std::string("train")) == "test" ? SplitTag::kTest
                                                                      : SplitTag::kTrain;
    dataset.views.push_back(std::move(view));
  }
  return dataset;
}

void write_transforms_dataset(const ViewDataset& dataset, const std::filesystem::path& dir) {
  require(!dataset.views.empty(), "write_transforms_dataset: empty dataset");
  std::filesystem::create_directories(dir / "images");
  const auto& first = dataset.views.front().pose;
  json doc;
  doc["camera_angle_x"] = 2.0 * std::atan(0.5 * first.width / first.focal);
  doc["fl_x"] = first.focal;
  doc["fl_y"] = first.focal;
  doc["cx"] = first.principal_point.x();
  doc["cy"] = first.height - first.principal_point.y();
  doc["w"] = first.width;
  doc["h"] = first.height;
  json frames = json::array();
  for (std::size_t i = 0; i < dataset.views.size(); ++i) {
    const auto& view = dataset.views[i];
    require(view.pose.focal == first.focal && view.pose.width == first.width &&
                view.pose.height == first.height && view.pose.principal_point == first.principal_point,
            "write_transforms_dataset: views must share intrinsics");
    char name[32];
    std::snprintf(name, sizeof(name), "images/frame_%04zu.png", i);
    write_png(dir / name, flip_rows(view.rgb));

    const Mat3 r_c2w = view.pose.rotation.transpose();
    const Vec3 c = view.pose.center();
    json c2w = json::array();
    for (int row = 0; row < 3; ++row) {
      c2w.push_back({r_c2w(row, 0), r_c2w(row, 1), r_c2w(row, 2), c(row)});
    }
    c2w.push_back({0.0, 0.0, 0.0, 1.0});
    json w2c = json::array();
    for (int row = 0; row < 3; ++row) {
      w2c.push_back({view.pose.rotation(row, 0), view.pose.rotation(row, 1),
                     view.pose.rotation(row, 2), view.pose.translation(row)});
    }
    frames.push_back({{"file_path", name},
                      {"transform_matrix", c2w},
                      {"world_to_camera", w2c},
                      {"split", view.split == SplitTag::kTest ? "test" : "train"}});
  }
  doc["frames"] = frames;
  std::ofstream out(dir / "transforms.json");
  if (!out) throw IoError("write_transforms_dataset: cannot write manifest in " + dir.string());
  out << doc.dump(2) << '\n';
}

}  // namespace uqr
