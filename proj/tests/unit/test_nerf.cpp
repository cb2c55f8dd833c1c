#include <doctest.h>

#include <cmath>
#include <numbers>

#include "../support/temp_dir.hpp"
#include "avatarforge/error.hpp"
#include "avatarforge/fixture.hpp"
#include "avatarforge/nerf.hpp"
#include "avatarforge/rng.hpp"

using namespace avatarforge;
using namespace avatarforge::nerf;

namespace {

NerfModel small_model(std::uint64_t seed) {
  NerfModel m({2, 1, true}, {8, 8});
  m.initialize(seed);
  return m;
}

}  // namespace

TEST_CASE("positional_encode examples") {
  const auto zero = positional_encode({0, 0, 0}, 2, false);
  REQUIRE(zero.size() == 12);
  // Layout per frequency: sin(x, y, z) then cos(x, y, z).
  for (int k = 0; k < 2; ++k) {
    for (int c = 0; c < 3; ++c) {
      CHECK(zero[6 * k + c] == 0.0);
      CHECK(zero[6 * k + 3 + c] == 1.0);
    }
  }
  const auto x = positional_encode({1, 0, 0}, 1, false);
  CHECK(std::abs(x[0]) < 1e-12);
  CHECK(x[3] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(positional_encode({0.3, -0.2, 0.9}, 10, true).size() == 63);
  const auto v = positional_encode({0.3, -0.2, 0.9}, 4, true);
  CHECK(v[0] == 0.3);
  CHECK(v[3 + 6 * 3 + 2] == doctest::Approx(std::sin(8 * std::numbers::pi * 0.9)).epsilon(1e-12));
}

TEST_CASE("parameter count matches the architecture") {
  const EncodingConfig enc{10, 4, true};
  const std::vector<int> widths{128, 128, 128, 128};
  std::size_t expected = (63 + 1) * 128 + 3 * (128 + 1) * 128;  // trunk
  expected += 128 + 1;                                             // density
  expected += (128 + 27 + 1) * 64;                                 // color hidden
  expected += (64 + 1) * 3;                                        // color out
  CHECK(NerfModel::parameter_count(enc, widths) == expected);
  CHECK(NerfModel(enc, widths).parameters().size() == expected);
}

TEST_CASE("field_eval examples") {
  NerfModel zero({4, 2, true}, {16, 16});
  const auto s = field_eval(zero, {0.1, 0.2, 0.3}, {0, 0, -1});
  CHECK(s.sigma == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  for (int c = 0; c < 3; ++c) CHECK(s.rgb[c] == 0.5);

  const NerfModel m = small_model(3);
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector3d x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const Eigen::Vector3d d1 = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
    const Eigen::Vector3d d2 = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
    const auto a = field_eval(m, x, d1), b = field_eval(m, x, d2);
    CHECK(a.sigma == b.sigma);
    CHECK(a.sigma >= 0.0);
    const auto again = field_eval(m, x, d1);
    CHECK(again.sigma == a.sigma);
    CHECK(again.rgb == a.rgb);
  }
}

TEST_CASE("composite weights partition unity on random rays") {
  Rng rng(11);
  for (int ray = 0; ray < 1000; ++ray) {
    const int n = 2 + static_cast<int>(rng.below(63));
    RenderConfig cfg;
    cfg.samples_per_ray = n;
    cfg.stratified = true;
    const auto t = sample_depths(cfg, rng.next_u64());
    std::vector<double> sig(n);
    std::vector<Rgb> col(n);
    for (int i = 0; i < n; ++i) {
      sig[i] = rng.uniform() < 0.3 ? 0.0 : rng.uniform(0.0, 30.0);
      col[i] = {rng.uniform(), rng.uniform(), rng.uniform()};
    }
    const auto r = composite(t, cfg.t_far, sig, col, kWhite);
    double sum = 0.0;
    for (double w : r.weights) {
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(sum <= 1.0 + 1e-12);
    CHECK(std::abs(sum + r.final_transmittance - 1.0) <= 1e-6);
    for (double c : r.color) CHECK((c >= 0.0 && c <= 1.0));
  }
}

TEST_CASE("composite hand examples") {
  const Rgb bg{0.3, 0.6, 0.9};
  const std::vector<double> t{2.0, 3.0};
  const std::vector<Rgb> col{Rgb{1, 0, 0}, Rgb{0, 1, 0}};
  const auto empty = composite(t, 4.0, std::vector<double>{0.0, 0.0}, col, bg);
  CHECK(empty.color == bg);

  const auto opaque = composite(t, 4.0, std::vector<double>{1e300, 0.0}, col, bg);
  CHECK(opaque.color == Rgb{1, 0, 0});

  // Both deltas are 1, so sigma * delta = ln 2 gives alpha = 1/2 per sample.
  const auto two = composite(t, 4.0, std::vector<double>{std::log(2.0), std::log(2.0)}, col, kWhite);
  const Rgb expected{0.5 * 1 + 0.25 * 0 + 0.25, 0.5 * 0 + 0.25 * 1 + 0.25, 0.25};
  for (int c = 0; c < 3; ++c) CHECK(std::abs(two.color[c] - expected[c]) <= 1e-9);
}

TEST_CASE("sample_depths midpoints and stratified bins") {
  RenderConfig cfg;
  cfg.samples_per_ray = 4;
  const auto mid = sample_depths(cfg, 0);
  CHECK(mid == std::vector<double>{2.5, 3.5, 4.5, 5.5});
  cfg.stratified = true;
  const auto s = sample_depths(cfg, 5);
  for (int i = 0; i < 4; ++i) CHECK((s[i] >= 2.0 + i && s[i] < 3.0 + i));
  CHECK(sample_depths(cfg, 5) == s);
  cfg.samples_per_ray = 1;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("render_view examples") {
  NerfModel empty({2, 1, true}, {8});
  empty.initialize(1, -1e4);
  RenderConfig cfg;
  cfg.samples_per_ray = 16;
  cfg.background = {0.2, 0.4, 0.6};
  const CameraIntrinsics intr{5, 4, 6.0};
  const Pose pose = Pose::look_at({0, 0, 4}, Eigen::Vector3d::Zero());
  const ImageRGB bg = render_view(empty, intr, pose, cfg);
  CHECK(bg == ImageRGB(5, 4, cfg.background));

  const NerfModel m = small_model(9);
  cfg.stratified = true;
  cfg.rng_seed = 42;
  const CameraIntrinsics tiny{2, 2, 2.0};
  const ImageRGB img = render_view(m, tiny, pose, cfg);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      RenderConfig pc = cfg;
      pc.rng_seed = mix_seed(cfg.rng_seed, static_cast<std::uint64_t>(y * 2 + x));
      CHECK(render_ray(m, ray_for_pixel(tiny, pose, x, y), pc) == img.pixel(x, y));
    }
  }
  CHECK(render_view(m, tiny, pose, cfg) == img);
}

TEST_CASE("batch gradient matches central differences on a 1-ray 3-sample instance") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    NerfModel m = small_model(seed);
    const Ray ray = ray_for_pixel({8, 8, 10.0}, Pose::look_at({0.3, 0.2, 4}, Eigen::Vector3d::Zero()), 3, 5);
    const std::vector<RayTarget> rays{{ray, {0.9, 0.2, 0.4}}};
    const std::vector<std::vector<double>> depths{{3.2, 4.0, 4.9}};
    std::vector<double> grad(m.parameters().size());
    batch_loss_and_gradient(m, rays, depths, kWhite, grad);
    std::vector<double> scratch(grad.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      double& p = m.parameters()[i];
      const double saved = p, h = 1e-3;
      p = saved + h;
      const double up = batch_loss_and_gradient(m, rays, depths, kWhite, scratch);
      p = saved - h;
      const double down = batch_loss_and_gradient(m, rays, depths, kWhite, scratch);
      p = saved;
      const double num = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(num - grad[i]) / std::max({std::abs(num), std::abs(grad[i]), 1e-6}));
    }
    INFO("seed " << seed << " worst relative error " << worst);
    CHECK(worst < 1e-2);
  }
}

TEST_CASE("train_nerf on an already optimal constant scene keeps parameters") {
  ViewDataset ds;
  ds.intrinsics = {4, 4, 5.0};
  ds.camera_angle_x = 2 * std::atan(0.4);
  ds.views.push_back({"v", ImageRGB(4, 4, kWhite), Pose::look_at({0, 0, 4}, Eigen::Vector3d::Zero()), {}});
  NerfModel init({2, 1, true}, {8});
  init.initialize(2, -1e4);
  TrainConfig cfg;
  cfg.iterations = 5;
  cfg.batch_rays = 8;
  cfg.samples_per_ray = 8;
  const auto r = train_nerf(ds, init, cfg);
  for (double l : r.loss_trace) CHECK(l == 0.0);
  CHECK(r.model == init);
}

TEST_CASE("train_nerf errors") {
  CHECK_THROWS_AS(train_nerf(ViewDataset{}, small_model(1), TrainConfig{}), InvalidArgument);
}

TEST_CASE("train_nerf on the fixture: finite, decreasing window means, deterministic") {
  testsupport::TempDir dir;
  FixtureConfig fc;
  fc.views = 10;
  fc.resolution = 32;
  make_fixture(fc, dir.path());
  const ViewDataset ds = load_dataset(dir.path(), "train");
  NerfModel init({6, 2, true}, {64, 64});
  init.initialize(0);
  TrainConfig cfg;
  cfg.iterations = 200;
  cfg.batch_rays = 128;
  cfg.samples_per_ray = 32;
  const auto a = train_nerf(ds, init, cfg);
  REQUIRE(a.loss_trace.size() == 200);
  for (double l : a.loss_trace) CHECK(std::isfinite(l));
  std::vector<double> means;
  for (int w = 0; w < 4; ++w) {
    double s = 0.0;
    for (int i = 50 * w; i < 50 * (w + 1); ++i) s += a.loss_trace[i];
    means.push_back(s / 50.0);
  }
  for (int w = 1; w < 4; ++w) CHECK(means[w] <= means[w - 1]);

  cfg.iterations = 20;
  const auto b = train_nerf(ds, init, cfg), c = train_nerf(ds, init, cfg);
  CHECK(b.loss_trace == c.loss_trace);
  CHECK(b.model == c.model);
}

TEST_CASE("checkpoint round trip is exact") {
  testsupport::TempDir dir;
  const NerfModel m = small_model(17);
  save_checkpoint(m, dir / "m.json");
  const NerfModel back = load_checkpoint(dir / "m.json");
  CHECK(back == m);
  CHECK(back.encoding() == m.encoding());
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), IoError);
}
