#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "avatarforge/imaging.hpp"

namespace avatarforge {

inline constexpr double kDefaultNear = 2.0;
inline constexpr double kDefaultFar = 6.0;

// Pinhole camera with square pixels and the principal point at the image center.
struct CameraIntrinsics {
  int width = 1;
  int height = 1;
  double focal = 1.0;

  double cx() const { return 0.5 * width; }
  double cy() const { return 0.5 * height; }
  void validate() const;
  bool operator==(const CameraIntrinsics&) const = default;
};

// Camera-to-world rigid transform. The camera looks down its local -Z axis with +Y up.
class Pose {
 public:
  Pose() : m_(Eigen::Matrix4d::Identity()) {}
  // Throws InvalidArgument unless `camera_to_world` is rigid (see is_rigid).
  explicit Pose(const Eigen::Matrix4d& camera_to_world);

  static Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up = Eigen::Vector3d::UnitY());
  static bool is_rigid(const Eigen::Matrix4d& m, double tol = 1e-4);

  const Eigen::Matrix4d& matrix() const { return m_; }
  Eigen::Matrix3d rotation() const { return m_.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return m_.topRightCorner<3, 1>(); }
  Eigen::Matrix3d world_to_camera_rotation() const { return rotation().transpose(); }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
    return rotation().transpose() * (world - translation());
  }

  bool operator==(const Pose& o) const { return m_ == o.m_; }

 private:
  Eigen::Matrix4d m_;
};

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = -Eigen::Vector3d::UnitZ();
  double t_near = kDefaultNear;
  double t_far = kDefaultFar;
};

struct View {
  std::string id;
  ImageRGB image;
  Pose pose;
  std::filesystem::path source;  // file the image was read from; empty for in-memory views
  bool operator==(const View&) const = default;
};

struct ViewDataset {
  CameraIntrinsics intrinsics;
  double camera_angle_x = 0.0;
  std::vector<View> views;

  bool empty() const { return views.empty(); }
  std::size_t size() const { return views.size(); }
  // Throws when an image does not match the intrinsics or an id repeats.
  void validate() const;
  bool operator==(const ViewDataset&) const = default;
};

double focal_from_fov(int width, double camera_angle_x);

Ray ray_for_pixel(const CameraIntrinsics& intr, const Pose& pose, int px, int py,
                  double t_near = kDefaultNear, double t_far = kDefaultFar);

// Reads transforms_<split>.json under `root` and every image it references.
ViewDataset load_dataset(const std::filesystem::path& root, const std::string& split,
                         const Rgb& background = kWhite);

struct ManifestFrame {
  std::string file_path;
  Pose pose;
};

// Writes transforms_<split>.json (frames as given, file paths relative to root).
void write_manifest(const std::filesystem::path& root, const std::string& split,
                    double camera_angle_x, const std::vector<ManifestFrame>& frames);

}  // namespace avatarforge
