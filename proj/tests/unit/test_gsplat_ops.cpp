#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "../support/gs_scenes.hpp"
#include "../support/temp_dir.hpp"
#include "avatarforge/error.hpp"
#include "avatarforge/gsplat.hpp"
#include "avatarforge/rng.hpp"

using namespace avatarforge;
using namespace avatarforge::gs;

namespace {

Gaussian3D make_gaussian(Eigen::Vector3f pos, float log_scale, float opacity_logit, Rgb color) {
  Gaussian3D g;
  g.position = pos;
  g.log_scale = Eigen::Vector3f::Constant(log_scale);
  g.opacity_logit = opacity_logit;
  for (int c = 0; c < 3; ++c) g.sh[c] = static_cast<float>((color[c] - 0.5) / kShC0);
  return g;
}

GaussianCloud random_cloud(std::uint64_t seed, std::size_t n, int degree) {
  Rng rng(seed);
  GaussianCloud cloud;
  cloud.sh_degree = degree;
  for (std::size_t i = 0; i < n; ++i) {
    Gaussian3D g;
    g.position = Eigen::Vector3f(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    g.rotation = Eigen::Vector4f(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
    for (int k = 0; k < 3; ++k) g.log_scale[k] = static_cast<float>(rng.uniform(-3, -1));
    g.opacity_logit = static_cast<float>(rng.uniform(-2, 3));
    for (int k = 0; k < 3 * sh_coeffs_for_degree(degree); ++k) g.sh[k] = static_cast<float>(rng.uniform(-0.5, 0.5));
    cloud.push_back(g);
  }
  return cloud;
}

}  // namespace

TEST_CASE("covariance_3d examples") {
  const Eigen::Vector4d id(1, 0, 0, 0);
  CHECK((covariance_3d(id, Eigen::Vector3d::Zero()) - Eigen::Matrix3d::Identity()).norm() < 1e-15);
  const Eigen::Matrix3d d = covariance_3d(id, Eigen::Vector3d(std::log(2.0), 0, 0));
  CHECK((d - Eigen::Vector3d(4, 1, 1).asDiagonal().toDenseMatrix()).norm() < 1e-12);
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    const Eigen::Vector3d s(rng.uniform(-3, 1), rng.uniform(-3, 1), rng.uniform(-3, 1));
    const Eigen::Matrix3d cov = covariance_3d(q.normalized(), s);
    CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("project_gaussian examples") {
  const CameraIntrinsics intr{64, 64, 100.0};
  const Pose pose;
  Gaussian3D behind = make_gaussian({0, 0, 3}, 0, 0, {0.5, 0.5, 0.5});
  CHECK_FALSE(project_gaussian(behind, 0, intr, pose).has_value());

  const Gaussian3D g = make_gaussian({0, 0, -5}, 0, 0, {0.5, 0.5, 0.5});
  const auto p = project_gaussian(g, 0, intr, pose);
  REQUIRE(p.has_value());
  CHECK(p->cov2d(0, 0) == doctest::Approx(400.3).epsilon(1e-12));
  CHECK(p->cov2d(1, 1) == doctest::Approx(400.3).epsilon(1e-12));
  CHECK(std::abs(p->cov2d(0, 1)) < 1e-12);
  CHECK(p->mean2d.x() == intr.cx());
  CHECK(p->mean2d.y() == intr.cy());
  CHECK(p->depth == 5.0);
  CHECK(p->radius == std::ceil(3.0 * std::sqrt(400.3)));
}

TEST_CASE("projected covariance agrees with Monte-Carlo projection") {
  const CameraIntrinsics intr{64, 64, 80.0};
  const Pose pose = Pose::look_at({0.5, 0.3, 4}, Eigen::Vector3d::Zero());
  Gaussian3D g = make_gaussian({0.1, -0.1, 0.2}, 0, 0, {0.5, 0.5, 0.5});
  g.rotation = Eigen::Vector4f(0.9f, 0.2f, -0.3f, 0.1f).normalized();
  g.log_scale = Eigen::Vector3f(std::log(0.02f), std::log(0.01f), std::log(0.015f));
  const auto p = project_gaussian(g, 0, intr, pose);
  REQUIRE(p.has_value());

  const Eigen::Matrix3d cov = covariance_3d(g.rotation.cast<double>(), g.log_scale.cast<double>());
  const Eigen::Matrix3d chol = cov.llt().matrixL();
  Rng rng(5);
  const int n = 1000000;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d x = g.position.cast<double>() + chol * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    const Eigen::Vector3d c = pose.to_camera(x);
    const Eigen::Vector2d uv(intr.cx() + intr.focal * c.x() / -c.z(), intr.cy() - intr.focal * c.y() / -c.z());
    mean += uv;
    second += uv * uv.transpose();
  }
  mean /= n;
  const Eigen::Matrix2d sample_cov = second / n - mean * mean.transpose();
  const Eigen::Matrix2d expected = sample_cov + 0.3 * Eigen::Matrix2d::Identity();
  CHECK((p->cov2d - expected).norm() / expected.norm() < 0.01);
  CHECK((p->mean2d - mean).norm() < 0.05);
}

TEST_CASE("eval_sh examples") {
  std::vector<double> dc{0.3, -0.2, 0.1};
  const Rgb c = eval_sh(dc, {0, 0, 1}, 0);
  CHECK(c[0] == doctest::Approx(0.5 + 0.2820948 * 0.3).epsilon(1e-7));
  CHECK(eval_sh(dc, {1, 0, 0}, 0) == c);

  // Coefficient order within degree 1 is (y, z, x); only the z term is set.
  std::vector<double> d1(12, 0.0);
  for (int ch = 0; ch < 3; ++ch) d1[3 * 2 + ch] = 0.2;
  const Rgb up = eval_sh(d1, {0, 0, 1}, 1), down = eval_sh(d1, {0, 0, -1}, 1);
  for (int ch = 0; ch < 3; ++ch) CHECK(std::abs(up[ch] - down[ch]) == doctest::Approx(2 * 0.4886025 * 0.2).epsilon(1e-7));
  CHECK_THROWS_AS(eval_sh(dc, {0, 0, 1}, 1), DimensionError);
}

TEST_CASE("sh_basis derivatives match central differences up to degree 3") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
    std::vector<double> v(16), vp(16), vm(16);
    std::vector<Eigen::Vector3d> g(16);
    sh_basis(dir, 3, v, g);
    for (int axis = 0; axis < 3; ++axis) {
      const double h = 1e-6;
      Eigen::Vector3d dp = dir, dm = dir;
      dp[axis] += h;
      dm[axis] -= h;
      sh_basis(dp, 3, vp);
      sh_basis(dm, 3, vm);
      for (int k = 0; k < 16; ++k) CHECK(std::abs((vp[k] - vm[k]) / (2 * h) - g[k][axis]) < 1e-6);
    }
  }
}

TEST_CASE("rasterize examples") {
  const CameraIntrinsics intr{32, 32, 40.0};
  const Pose pose;
  GaussianCloud behind;
  behind.push_back(make_gaussian({0, 0, 5}, 0, 2, {1, 0, 0}));
  RasterSettings settings;
  settings.background = {0.1, 0.2, 0.3};
  CHECK(rasterize(behind, intr, pose, settings).image == ImageRGB(32, 32, settings.background));

  GaussianCloud red;
  red.push_back(make_gaussian({0, 0, -5}, 0.0f, 20.0f, {1, 0, 0}));
  const ImageRGB img = rasterize(red, intr, pose).image;
  // Pixel centre (16.5, 16.5) is half a pixel from the projected mean at (16, 16).
  const double var = (40.0 / 5.0) * (40.0 / 5.0) + 0.3;
  const double alpha = std::min(0.99, logistic(20.0) * std::exp(-0.5 * (0.25 + 0.25) / var));
  CHECK(alpha == 0.99);
  CHECK(img.pixel(16, 16)[0] == doctest::Approx(alpha * 1.0 + (1 - alpha)).epsilon(1e-6));
  CHECK(img.pixel(16, 16)[1] == doctest::Approx(1 - alpha).epsilon(1e-6));
}

TEST_CASE("rasterize is invariant to the order of Gaussians at distinct depths") {
  const CameraIntrinsics intr{24, 24, 30.0};
  const Pose pose;
  GaussianCloud cloud;
  Rng rng(21);
  for (int i = 0; i < 5; ++i) {
    cloud.push_back(make_gaussian({static_cast<float>(rng.uniform(-0.3, 0.3)), static_cast<float>(rng.uniform(-0.3, 0.3)),
                                   -4.0f - 0.4f * i},
                                  std::log(0.4f), 1.0f, {rng.uniform(), rng.uniform(), rng.uniform()}));
  }
  const ImageRGB ref = rasterize(cloud, intr, pose).image;
  std::vector<std::size_t> order{3, 0, 4, 1, 2};
  GaussianCloud shuffled = cloud;
  shuffled.select(order);
  CHECK(rasterize(shuffled, intr, pose).image == ref);
}

TEST_CASE("rasterize output and transmittance stay in range") {
  const CameraIntrinsics intr{40, 30, 35.0};
  const Pose pose = Pose::look_at({0, 0, 4}, Eigen::Vector3d::Zero());
  const GaussianCloud cloud = random_cloud(8, 200, 2);
  const auto r = rasterize(cloud, intr, pose);
  for (double v : r.image.data()) CHECK((v >= 0.0 && v <= 1.0));
  for (double t : r.aux.pixel_transmittance) CHECK((t >= 0.0 && t <= 1.0));
}

TEST_CASE("rasterize_backward zero and occlusion cases") {
  const auto intr = testsupport::small_camera();
  const Pose pose;
  const GaussianCloud scene = testsupport::smooth_scene(3);
  const std::vector<double> zero(16 * 16 * 3, 0.0);
  const auto g0 = rasterize_backward(scene, intr, pose, zero);
  for (double v : g0.positions) CHECK(v == 0.0);
  for (double v : g0.sh) CHECK(v == 0.0);
  for (double v : g0.opacity_logits) CHECK(v == 0.0);

  GaussianCloud occluded;
  for (int i = 0; i < 5; ++i)
    occluded.push_back(make_gaussian({0, 0, -4.0f - 0.1f * i}, std::log(5.0f), 10.0f, {0.4, 0.5, 0.6}));
  occluded.push_back(make_gaussian({0, 0, -8}, std::log(1.0f), 0.0f, {0.9, 0.1, 0.1}));
  const auto fwd = rasterize(occluded, intr, pose);
  for (double t : fwd.aux.pixel_transmittance) REQUIRE(t < 1e-4);
  const std::vector<double> ones(16 * 16 * 3, 1.0);
  const auto g = rasterize_backward(occluded, intr, pose, fwd, ones);
  for (int k = 0; k < 3; ++k) CHECK(g.positions[3 * 5 + k] == 0.0);
  for (int k = 0; k < 4; ++k) CHECK(g.rotations[4 * 5 + k] == 0.0);
  for (int k = 0; k < 3; ++k) CHECK(g.log_scales[3 * 5 + k] == 0.0);
  CHECK(g.opacity_logits[5] == 0.0);
  for (int k = 0; k < kShFloats; ++k) CHECK(g.sh[kShFloats * 5 + k] == 0.0);
}

TEST_CASE("rasterize_backward is deterministic") {
  const auto intr = testsupport::small_camera();
  const GaussianCloud scene = random_cloud(4, 60, 3);
  const Pose pose = Pose::look_at({0, 0, 4}, Eigen::Vector3d::Zero());
  const auto target = testsupport::random_image(16, 16, 5);
  std::vector<double> g(16 * 16 * 3);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = target.data()[i] - 0.5;
  const auto a = rasterize_backward(scene, intr, pose, g), b = rasterize_backward(scene, intr, pose, g);
  CHECK(a.positions == b.positions);
  CHECK(a.sh == b.sh);
  CHECK(a.mean2d_norm == b.mean2d_norm);
}

TEST_CASE("densify_and_prune examples") {
  GaussianCloud cloud;
  cloud.push_back(make_gaussian({0, 0, 0}, std::log(0.01f), 1.0f, {0.5, 0.5, 0.5}));
  cloud.push_back(make_gaussian({1, 0, 0}, std::log(0.2f), 1.0f, {0.5, 0.5, 0.5}));
  DensifyStats stats;
  stats.reset(cloud.size());
  stats.counts = {1, 1};
  DensifyConfig cfg;

  DensifyOutcome out;
  CHECK(densify_and_prune(cloud, stats, cfg, 1, &out) == cloud);
  CHECK(out.cloned + out.split + out.pruned == 0);

  stats.grad_accum = {0.0, 1.0};
  const GaussianCloud split = densify_and_prune(cloud, stats, cfg, 1, &out);
  CHECK(split.size() == cloud.size() + 1);
  CHECK(out.split == 1);
  for (std::size_t i = 1; i < split.size(); ++i) {
    for (int k = 0; k < 3; ++k)
      CHECK(split.get(i).log_scale[k] == doctest::Approx(std::log(0.2) - std::log(1.6)).epsilon(1e-6));
  }
  CHECK(out.source_rows == std::vector<std::size_t>{0, DensifyOutcome::kNewRow, DensifyOutcome::kNewRow});

  stats.grad_accum = {1.0, 0.0};
  stats.world_grad = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  const GaussianCloud cloned = densify_and_prune(cloud, stats, cfg, 1, &out);
  CHECK(cloned.size() == 3);
  CHECK(out.cloned == 1);
  CHECK(cloned.get(2).position.x() < 0.0f);

  GaussianCloud faint = cloud;
  Gaussian3D g = faint.get(0);
  g.opacity_logit = static_cast<float>(logit(0.001));
  faint.set(0, g);
  stats.reset(2);
  CHECK(densify_and_prune(faint, stats, cfg, 1).size() == 1);

  stats.grad_accum = {1.0, 1.0};
  stats.counts = {1, 1};
  cfg.max_gaussians = 2;
  CHECK(densify_and_prune(cloud, stats, cfg, 1).size() == 2);
}

TEST_CASE("densify never exceeds the cap or produces NaN") {
  GaussianCloud cloud = random_cloud(30, 50, 0);
  DensifyStats stats;
  stats.reset(cloud.size());
  Rng rng(31);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    stats.counts[i] = 1;
    stats.grad_accum[i] = rng.uniform(0, 4e-4);
    for (int k = 0; k < 3; ++k) stats.world_grad[3 * i + k] = rng.normal();
  }
  DensifyConfig cfg;
  cfg.max_gaussians = 60;
  const GaussianCloud out = densify_and_prune(cloud, stats, cfg, 2);
  CHECK(out.size() <= 60);
  for (float v : out.positions) CHECK(std::isfinite(v));
  for (float v : out.log_scales) CHECK(std::isfinite(v));
}

TEST_CASE("PLY round trip and schema") {
  testsupport::TempDir dir;
  const GaussianCloud cloud = random_cloud(40, 37, 3);
  save_ply(cloud, dir / "c.ply");
  CHECK(load_ply(dir / "c.ply") == cloud);

  GaussianCloud one;
  one.push_back(make_gaussian({1, 2, 3}, 0, 0, {0.5, 0.5, 0.5}));
  save_ply(one, dir / "one.ply");
  std::ifstream f(dir / "one.ply", std::ios::binary);
  std::string line, header;
  int properties = 0;
  while (std::getline(f, line) && line != "end_header") {
    header += line + "\n";
    if (line.rfind("property float ", 0) == 0) ++properties;
  }
  CHECK(properties == 59);
  CHECK(header.find("format binary_little_endian 1.0") != std::string::npos);
  CHECK(std::filesystem::file_size(dir / "one.ply") == header.size() + std::string("end_header\n").size() + 59 * 4);

  // Drop the opacity property from the header and its float from the payload.
  std::ifstream in(dir / "one.ply", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t body = bytes.find("end_header\n") + 11;
  std::string head = bytes.substr(0, body);
  head.erase(head.find("property float opacity\n"), std::string("property float opacity\n").size());
  std::string payload = bytes.substr(body);
  payload.erase(51 * 4, 4);
  {
    std::ofstream o(dir / "bad.ply", std::ios::binary);
    o << head << payload;
  }
  CHECK_THROWS_AS(load_ply(dir / "bad.ply"), SchemaError);
  {
    std::ofstream o(dir / "junk.ply", std::ios::binary);
    o << "ply\nformat ascii 1.0\nend_header\n";
  }
  CHECK_THROWS_AS(load_ply(dir / "junk.ply"), FormatError);
}

TEST_CASE("train_gs: self-consistent start, determinism") {
  const CameraIntrinsics intr{32, 32, 40.0};
  GaussianCloud truth = random_cloud(50, 30, 0);
  for (auto& v : truth.log_scales) v = std::log(0.12f);
  ViewDataset ds;
  ds.intrinsics = intr;
  ds.camera_angle_x = 2 * std::atan(16.0 / 40.0);
  for (int i = 0; i < 6; ++i) {
    const double a = 2 * std::numbers::pi * i / 6;
    const Pose pose = Pose::look_at({4 * std::sin(a), 0.5, 4 * std::cos(a)}, Eigen::Vector3d::Zero());
    ds.views.push_back({"v" + std::to_string(i), rasterize(truth, intr, pose).image, pose, {}});
  }
  for (const auto& v : ds.views) {
    std::vector<double> grad(v.image.data().size());
    CHECK(photometric_loss(rasterize(truth, intr, v.pose).image, v.image, 0.2, grad) < 1e-6);
    CHECK(psnr(rasterize(truth, intr, v.pose).image, v.image) == kInfinitePsnr);
  }

  GsTrainConfig cfg;
  cfg.iterations = 40;
  cfg.densify_from = 10;
  cfg.densify.interval = 10;
  cfg.seed = 3;
  const GaussianCloud init = initialize_cloud(ds, InitConfig{200});
  const auto a = train_gs(ds, init, cfg), b = train_gs(ds, init, cfg);
  CHECK(a.cloud.size() == b.cloud.size());
  CHECK(a.loss_trace == b.loss_trace);
  CHECK(a.cloud == b.cloud);
  for (std::size_t i = 0; i < a.cloud.size(); ++i)
    CHECK(std::abs(a.cloud.get(i).rotation.cast<double>().norm() - 1.0) < 1e-6);
  CHECK_THROWS_AS(train_gs(ViewDataset{}, init, cfg), InvalidArgument);
}

TEST_CASE("photometric_loss gradient matches central differences") {
  const ImageRGB ref = testsupport::random_image(14, 12, 60);
  ImageRGB img = testsupport::random_image(14, 12, 61);
  std::vector<double> grad(img.data().size()), scratch(grad.size());
  photometric_loss(img, ref, 0.2, grad);
  for (std::size_t i = 0; i < grad.size(); i += 11) {
    const double saved = img.data()[i], h = 1e-7;
    img.data()[i] = saved + h;
    const double up = photometric_loss(img, ref, 0.2, scratch);
    img.data()[i] = saved - h;
    const double down = photometric_loss(img, ref, 0.2, scratch);
    img.data()[i] = saved;
    CHECK(std::abs((up - down) / (2 * h) - grad[i]) < 1e-5 * std::max(1.0, std::abs(grad[i])));
  }
}

TEST_CASE("initialize_cloud and scene_extent") {
  ViewDataset ds;
  ds.intrinsics = {16, 16, 20.0};
  for (int i = 0; i < 4; ++i) {
    const double a = std::numbers::pi / 2 * i;
    ds.views.push_back({"v" + std::to_string(i), ImageRGB(16, 16, kWhite),
                        Pose::look_at({4 * std::sin(a), 0, 4 * std::cos(a)}, Eigen::Vector3d::Zero()), {}});
  }
  CHECK(scene_extent(ds) == doctest::Approx(4.4));
  const GaussianCloud c = initialize_cloud(ds, InitConfig{100, kDefaultNear, kDefaultFar, 0.1, 7});
  CHECK(c.size() == 100);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Gaussian3D g = c.get(i);
    CHECK(logistic(g.opacity_logit) == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(g.sh[0] == 0.0f);
    for (const auto& v : ds.views) CHECK(-v.pose.to_camera(g.position.cast<double>()).z() > 0.0);
  }
  CHECK(initialize_cloud(ds, InitConfig{100, kDefaultNear, kDefaultFar, 0.1, 7}) == c);
}
