#include "avatarforge/fixture.hpp"

#include <cmath>
#include <numbers>

#include "avatarforge/error.hpp"
#include "avatarforge/rng.hpp"

namespace avatarforge {

namespace fs = std::filesystem;

std::string to_string(FixtureKind kind) {
  return kind == FixtureKind::cloud_scene ? "cloud_scene" : "lambertian_blobs";
}

FixtureKind parse_fixture_kind(const std::string& name) {
  if (name == "cloud_scene" || name == "cloud-scene") return FixtureKind::cloud_scene;
  if (name == "lambertian_blobs" || name == "lambertian-blobs") return FixtureKind::lambertian_blobs;
  throw InvalidArgument("unknown fixture kind '" + name + "'");
}

std::vector<Pose> ring_poses(int views, double radius) {
  std::vector<Pose> poses;
  for (int i = 0; i < views; ++i) {
    const double azimuth = 2.0 * std::numbers::pi * i / views;
    const double elevation = (i % 2 == 0) ? 0.2 : 0.5;
    const Eigen::Vector3d eye(radius * std::cos(elevation) * std::sin(azimuth), radius * std::sin(elevation),
                              radius * std::cos(elevation) * std::cos(azimuth));
    poses.push_back(Pose::look_at(eye, Eigen::Vector3d::Zero()));
  }
  return poses;
}

bool is_test_view(int index) { return index % 5 == 4; }

gs::GaussianCloud fixture_cloud(std::uint64_t seed, int count) {
  Rng rng(mix_seed(seed, 0x5ce7e));
  gs::GaussianCloud cloud;
  cloud.sh_degree = 0;
  for (int i = 0; i < count; ++i) {
    gs::Gaussian3D g;
    Eigen::Vector3d p;
    do {
      p = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    } while (p.norm() > 1.0);
    g.position = (0.7 * p).cast<float>();
    Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    g.rotation = q.cast<float>();
    for (int k = 0; k < 3; ++k) g.log_scale[k] = static_cast<float>(std::log(rng.uniform(0.08, 0.25)));
    g.opacity_logit = static_cast<float>(gs::logit(rng.uniform(0.6, 0.95)));
    for (int c = 0; c < 3; ++c) g.sh[c] = static_cast<float>((rng.uniform(0.1, 0.9) - 0.5) / gs::kShC0);
    cloud.push_back(g);
  }
  return cloud;
}

namespace {

struct Blob {
  Eigen::Vector3d center;
  double radius;
  double density;
  Rgb albedo;
};

std::vector<Blob> make_blobs(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xb10b));
  std::vector<Blob> blobs;
  for (int i = 0; i < 5; ++i) {
    Eigen::Vector3d p;
    do {
      p = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    } while (p.norm() > 1.0);
    Blob b{0.6 * p, rng.uniform(0.2, 0.4), rng.uniform(8.0, 15.0), {}};
    for (auto& a : b.albedo) a = rng.uniform(0.2, 0.9);
    blobs.push_back(b);
  }
  return blobs;
}

// Density, its gradient and the density-weighted albedo at x.
void blob_field(const std::vector<Blob>& blobs, const Eigen::Vector3d& x, double& sigma, Eigen::Vector3d& grad,
                Rgb& albedo) {
  sigma = 0.0;
  grad.setZero();
  albedo = {0, 0, 0};
  for (const auto& b : blobs) {
    const Eigen::Vector3d d = x - b.center;
    const double s = b.density * std::exp(-d.squaredNorm() / (2.0 * b.radius * b.radius));
    sigma += s;
    grad += -s / (b.radius * b.radius) * d;
    for (int c = 0; c < 3; ++c) albedo[c] += s * b.albedo[c];
  }
  if (sigma > 0)
    for (auto& a : albedo) a /= sigma;
}

ImageRGB render_blobs(const std::vector<Blob>& blobs, const CameraIntrinsics& intr, const Pose& pose,
                      const Rgb& background) {
  constexpr int kSteps = 256;
  const Eigen::Vector3d light = Eigen::Vector3d(0.4, 0.8, 0.45).normalized();
  ImageRGB img(intr.width, intr.height);
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      const Ray ray = ray_for_pixel(intr, pose, x, y);
      const double dt = (ray.t_far - ray.t_near) / kSteps;
      double transmittance = 1.0;
      Rgb color{0, 0, 0};
      for (int s = 0; s < kSteps; ++s) {
        const double t = ray.t_near + (s + 0.5) * dt;
        double sigma;
        Eigen::Vector3d grad;
        Rgb albedo;
        blob_field(blobs, ray.origin + t * ray.direction, sigma, grad, albedo);
        if (sigma < 1e-9) continue;
        const double alpha = 1.0 - std::exp(-sigma * dt);
        const double gn = grad.norm();
        const double lambert = gn > 1e-12 ? std::max(0.0, -grad.dot(light) / gn) : 0.0;
        const double shade = 0.35 + 0.65 * lambert;
        for (int c = 0; c < 3; ++c) color[c] += transmittance * alpha * albedo[c] * shade;
        transmittance *= 1.0 - alpha;
      }
      for (int c = 0; c < 3; ++c) color[c] += transmittance * background[c];
      img.set_pixel(x, y, color);
    }
  }
  img.clamp();
  return img;
}

}  // namespace

FixtureInfo make_fixture(const FixtureConfig& cfg, const fs::path& root) {
  if (cfg.views < 2) throw InvalidArgument("fixture needs at least 2 views");
  if (cfg.resolution < 1) throw InvalidArgument("fixture resolution must be positive");
  const CameraIntrinsics intr{cfg.resolution, cfg.resolution, focal_from_fov(cfg.resolution, cfg.camera_angle_x)};
  const std::vector<Pose> poses = ring_poses(cfg.views, cfg.camera_radius);

  FixtureInfo info;
  std::vector<Blob> blobs;
  gs::RasterSettings raster;
  raster.background = cfg.background;
  if (cfg.kind == FixtureKind::cloud_scene) {
    info.cloud = fixture_cloud(cfg.seed, cfg.gaussians);
  } else {
    blobs = make_blobs(cfg.seed);
  }

  fs::create_directories(root / "train");
  fs::create_directories(root / "test");
  std::vector<ManifestFrame> train, test;
  for (int i = 0; i < cfg.views; ++i) {
    const ImageRGB img = info.cloud ? gs::rasterize(*info.cloud, intr, poses[i], raster).image
                                    : render_blobs(blobs, intr, poses[i], cfg.background);
    const bool held_out = is_test_view(i);
    const std::string rel = std::string(held_out ? "test" : "train") + "/r_" + std::to_string(i);
    save_image(img, root / (rel + ".png"));
    (held_out ? test : train).push_back({"./" + rel, poses[i]});
  }
  write_manifest(root, "train", cfg.camera_angle_x, train);
  write_manifest(root, "test", cfg.camera_angle_x, test);
  if (info.cloud) gs::save_ply(*info.cloud, root / "scene.ply");
  info.train_views = train.size();
  info.test_views = test.size();
  return info;
}

}  // namespace avatarforge
