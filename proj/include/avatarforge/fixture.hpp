#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "avatarforge/camera.hpp"
#include "avatarforge/gsplat.hpp"

namespace avatarforge {

enum class FixtureKind { cloud_scene, lambertian_blobs };

std::string to_string(FixtureKind kind);
FixtureKind parse_fixture_kind(const std::string& name);

struct FixtureConfig {
  FixtureKind kind = FixtureKind::cloud_scene;
  std::uint64_t seed = 0;
  int views = 30;
  int resolution = 128;
  int gaussians = 50;
  double camera_radius = 4.0;
  double camera_angle_x = 0.6911112070083618;
  Rgb background = kWhite;
};

struct FixtureInfo {
  std::size_t train_views = 0;
  std::size_t test_views = 0;
  std::optional<gs::GaussianCloud> cloud;  // the generating scene for cloud_scene
};

// Cameras on a ring around the origin at alternating elevations, all looking at it.
std::vector<Pose> ring_poses(int views, double radius);

// Every fifth view (index % 5 == 4) goes to the test split.
bool is_test_view(int index);

gs::GaussianCloud fixture_cloud(std::uint64_t seed, int count);

// Writes train/ and test/ PNGs, transforms_train.json and transforms_test.json
// and, for cloud_scene, the generating cloud as scene.ply.
FixtureInfo make_fixture(const FixtureConfig& cfg, const std::filesystem::path& root);

}  // namespace avatarforge
