#include "avatarforge/camera.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <set>

#include "avatarforge/error.hpp"

namespace avatarforge {

using json = nlohmann::json;

void CameraIntrinsics::validate() const {
  if (width < 1 || height < 1) throw InvalidArgument("camera dimensions must be positive");
  if (!(focal > 0.0) || !std::isfinite(focal)) throw InvalidArgument("focal length must be positive");
}

Pose::Pose(const Eigen::Matrix4d& camera_to_world) : m_(camera_to_world) {
  if (!is_rigid(m_)) throw InvalidArgument("pose matrix is not a rigid transform");
}

bool Pose::is_rigid(const Eigen::Matrix4d& m, double tol) {
  if (!m.allFinite()) return false;
  if (std::abs(m(3, 0)) > tol || std::abs(m(3, 1)) > tol || std::abs(m(3, 2)) > tol ||
      std::abs(m(3, 3) - 1.0) > tol) {
    return false;
  }
  const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
  const Eigen::Matrix3d rtr = r.transpose() * r;
  if ((rtr - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return r.determinant() > 0.0;
}

Pose Pose::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                   const Eigen::Vector3d& up) {
  const Eigen::Vector3d back = (eye - target).normalized();
  Eigen::Vector3d right = up.cross(back);
  if (right.norm() < 1e-9) right = Eigen::Vector3d::UnitX().cross(back);
  right.normalize();
  const Eigen::Vector3d cam_up = back.cross(right);
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 1>(0, 0) = right;
  m.block<3, 1>(0, 1) = cam_up;
  m.block<3, 1>(0, 2) = back;
  m.block<3, 1>(0, 3) = eye;
  return Pose(m);
}

void ViewDataset::validate() const {
  intrinsics.validate();
  std::set<std::string> ids;
  for (const auto& v : views) {
    if (v.image.width() != intrinsics.width || v.image.height() != intrinsics.height) {
      throw DimensionError("view " + v.id + " does not match the dataset resolution");
    }
    if (!ids.insert(v.id).second) throw InvalidArgument("duplicate view id " + v.id);
  }
}

double focal_from_fov(int width, double camera_angle_x) {
  if (!(camera_angle_x > 0.0 && camera_angle_x < std::numbers::pi)) {
    throw InvalidArgument("camera_angle_x must lie in (0, pi)");
  }
  if (width < 1) throw InvalidArgument("width must be positive");
  return 0.5 * width / std::tan(0.5 * camera_angle_x);
}

Ray ray_for_pixel(const CameraIntrinsics& intr, const Pose& pose, int px, int py, double t_near,
                  double t_far) {
  if (px < 0 || py < 0 || px >= intr.width || py >= intr.height) {
    throw InvalidArgument("pixel (" + std::to_string(px) + ", " + std::to_string(py) +
                          ") outside the image");
  }
  const Eigen::Vector3d cam((px + 0.5 - intr.cx()) / intr.focal, -(py + 0.5 - intr.cy()) / intr.focal,
                            -1.0);
  Ray r;
  r.origin = pose.translation();
  r.direction = (pose.rotation() * cam).normalized();
  r.t_near = t_near;
  r.t_far = t_far;
  return r;
}

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Eigen::Matrix4d parse_matrix(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw FormatError(where + ": transform_matrix must be 4x4");
  Eigen::Matrix4d m;
  for (int r = 0; r < 4; ++r) {
    if (!j[r].is_array() || j[r].size() != 4) throw FormatError(where + ": transform_matrix must be 4x4");
    for (int c = 0; c < 4; ++c) {
      if (!j[r][c].is_number()) throw FormatError(where + ": transform_matrix entries must be numbers");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

std::string view_id_for(std::string file_path) {
  if (file_path.rfind("./", 0) == 0) file_path.erase(0, 2);
  std::filesystem::path p(file_path);
  if (p.extension() == ".png") p.replace_extension();
  return p.generic_string();
}

}  // namespace

ViewDataset load_dataset(const std::filesystem::path& root, const std::string& split,
                         const Rgb& background) {
  const auto manifest = root / ("transforms_" + split + ".json");
  if (!std::filesystem::exists(manifest)) throw IoError("missing manifest " + manifest.string());
  const json j = read_json(manifest);
  if (!j.is_object() || !j.contains("camera_angle_x") || !j["camera_angle_x"].is_number()) {
    throw SchemaError(manifest.string() + ": camera_angle_x missing");
  }
  if (!j.contains("frames") || !j["frames"].is_array()) {
    throw SchemaError(manifest.string() + ": frames missing");
  }

  ViewDataset ds;
  ds.camera_angle_x = j["camera_angle_x"].get<double>();
  std::size_t index = 0;
  for (const auto& frame : j["frames"]) {
    const std::string where = manifest.string() + " frame " + std::to_string(index++);
    if (!frame.is_object() || !frame.contains("file_path") || !frame["file_path"].is_string() ||
        !frame.contains("transform_matrix")) {
      throw SchemaError(where + ": needs file_path and transform_matrix");
    }
    const std::string file_path = frame["file_path"].get<std::string>();
    const Eigen::Matrix4d m = parse_matrix(frame["transform_matrix"], where);
    if (!Pose::is_rigid(m)) throw InvalidArgument(where + ": transform_matrix is not rigid");

    std::filesystem::path image_path = root / file_path;
    if (image_path.extension() != ".png") image_path += ".png";
    if (!std::filesystem::exists(image_path)) throw IoError(where + ": missing image " + image_path.string());
    ds.views.push_back(View{view_id_for(file_path), load_image(image_path, background), Pose(m), image_path});
  }

  int width = 1;
  int height = 1;
  if (!ds.views.empty()) {
    width = ds.views.front().image.width();
    height = ds.views.front().image.height();
  } else if (j.contains("w") && j.contains("h")) {
    width = j["w"].get<int>();
    height = j["h"].get<int>();
  }
  ds.intrinsics = CameraIntrinsics{width, height, focal_from_fov(width, ds.camera_angle_x)};
  ds.validate();
  return ds;
}

void write_manifest(const std::filesystem::path& root, const std::string& split,
                    double camera_angle_x, const std::vector<ManifestFrame>& frames) {
  json j;
  j["camera_angle_x"] = camera_angle_x;
  j["frames"] = json::array();
  for (const auto& f : frames) {
    json m = json::array();
    for (int r = 0; r < 4; ++r) {
      json row = json::array();
      for (int c = 0; c < 4; ++c) row.push_back(f.pose.matrix()(r, c));
      m.push_back(row);
    }
    j["frames"].push_back({{"file_path", f.file_path}, {"transform_matrix", m}});
  }
  std::filesystem::create_directories(root);
  const auto path = root / ("transforms_" + split + ".json");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace avatarforge
