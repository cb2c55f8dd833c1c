#include <doctest.h>

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "../support/temp_dir.hpp"
#include "avatarforge/error.hpp"
#include "avatarforge/imaging.hpp"
#include "avatarforge/rng.hpp"

using namespace avatarforge;

namespace {

void write_png_raw(const std::filesystem::path& path, int w, int h, int color_type, int bit_depth,
                   const std::vector<unsigned char>& bytes) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  REQUIRE(fp != nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int channels = color_type == PNG_COLOR_TYPE_RGBA ? 4 : color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const std::size_t row = static_cast<std::size_t>(w) * channels * (bit_depth / 8);
  for (int y = 0; y < h; ++y) png_write_row(png, const_cast<unsigned char*>(bytes.data() + y * row));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

ImageRGB random_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  ImageRGB img(w, h);
  for (double& v : img.data()) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("ImageRGB validates its buffer") {
  CHECK_THROWS_AS(ImageRGB::from_data(2, 2, std::vector<double>(11, 0.0)), InvalidArgument);
  CHECK_THROWS_AS(ImageRGB::from_data(1, 1, {0.0, 1.5, 0.0}), InvalidArgument);
  const auto img = ImageRGB::from_data(1, 1, {0.1, 0.2, 0.3});
  CHECK(img.pixel(0, 0)[2] == 0.3);
}

TEST_CASE("load_image composites RGBA over the background") {
  testsupport::TempDir dir;
  const auto path = dir / "rgba.png";
  write_png_raw(path, 3, 1, PNG_COLOR_TYPE_RGBA, 8, {255, 0, 0, 0, 255, 0, 0, 255, 255, 0, 0, 128});
  const ImageRGB img = load_image(path, kWhite);
  CHECK(img.pixel(0, 0) == Rgb{1.0, 1.0, 1.0});
  CHECK(img.pixel(1, 0) == Rgb{1.0, 0.0, 0.0});
  const double a = 128.0 / 255.0;
  CHECK(img.pixel(2, 0)[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(img.pixel(2, 0)[1] == doctest::Approx(1.0 - a).epsilon(1e-12));
  CHECK(img.pixel(2, 0)[1] == doctest::Approx(0.49804).epsilon(1e-5));

  const ImageRGB on_black = load_image(path, {0.0, 0.0, 0.0});
  CHECK(on_black.pixel(0, 0) == Rgb{0.0, 0.0, 0.0});
}

TEST_CASE("load_image rejects unsupported inputs") {
  testsupport::TempDir dir;
  CHECK_THROWS_AS(load_image(dir / "missing.png"), IoError);
  {
    std::ofstream f(dir / "junk.png", std::ios::binary);
    f << "not a png at all";
  }
  CHECK_THROWS_AS(load_image(dir / "junk.png"), FormatError);
  write_png_raw(dir / "deep.png", 1, 1, PNG_COLOR_TYPE_RGB, 16, std::vector<unsigned char>(6, 0));
  CHECK_THROWS_AS(load_image(dir / "deep.png"), FormatError);
  write_png_raw(dir / "gray.png", 1, 1, PNG_COLOR_TYPE_GRAY, 8, {7});
  CHECK_THROWS_AS(load_image(dir / "gray.png"), FormatError);
}

TEST_CASE("save_image quantizes with round half away from zero") {
  CHECK(quantize_channel(1.0) == 255);
  CHECK(quantize_channel(0.5) == 128);
  CHECK(quantize_channel(0.0) == 0);
  CHECK(quantize_channel(-0.2) == 0);
  CHECK(quantize_channel(1.7) == 255);

  testsupport::TempDir dir;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ImageRGB img = random_image(17, 9, seed);
    save_image(img, dir / "r.png");
    const ImageRGB back = load_image(dir / "r.png");
    double worst = 0.0;
    for (std::size_t i = 0; i < img.data().size(); ++i) worst = std::max(worst, std::abs(img.data()[i] - back.data()[i]));
    CHECK(worst <= 1.0 / 510.0 + 1e-15);
  }
  CHECK_THROWS_AS(save_image(random_image(2, 2, 1), dir / "no" / "such" / "dir.png"), IoError);
}

TEST_CASE("psnr examples") {
  const ImageRGB a = random_image(8, 8, 3);
  CHECK(psnr(a, a) == kInfinitePsnr);

  ImageRGB b(8, 8, {0.5, 0.5, 0.5});
  ImageRGB c(8, 8, {0.5 + 1.0 / 255.0, 0.5 + 1.0 / 255.0, 0.5 + 1.0 / 255.0});
  CHECK(psnr(b, c) == doctest::Approx(-10.0 * std::log10(1.0 / (255.0 * 255.0))).epsilon(1e-12));
  CHECK(std::abs(psnr(b, c) - 48.1308) <= 1e-4);

  const ImageRGB zeros(4, 4, {0, 0, 0}), ones(4, 4, {1, 1, 1});
  CHECK(psnr(zeros, ones) == 0.0);
  CHECK_THROWS_AS(psnr(zeros, ImageRGB(4, 5)), DimensionError);
}

TEST_CASE("psnr is symmetric and monotone in noise amplitude") {
  const ImageRGB base(16, 16, {0.5, 0.5, 0.5});
  double previous = kInfinitePsnr;
  for (double eps : {0.001, 0.01, 0.05, 0.2}) {
    Rng rng(9);
    ImageRGB noisy = base;
    for (double& v : noisy.data()) v += eps * rng.uniform(-1.0, 1.0);
    CHECK(psnr(base, noisy) == psnr(noisy, base));
    CHECK(psnr(base, noisy) < previous);
    previous = psnr(base, noisy);
  }
}

TEST_CASE("ssim examples") {
  const ImageRGB a = random_image(24, 20, 5);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  const ImageRGB zeros(16, 16, {0, 0, 0}), ones(16, 16, {1, 1, 1});
  const double c1 = 0.01 * 0.01;
  CHECK(std::abs(ssim(zeros, ones) - c1 / (1.0 + c1)) <= 1e-12);
  CHECK(std::abs(ssim(zeros, ones) - 9.999e-5) <= 1e-8);

  CHECK_THROWS_AS(ssim(ImageRGB(10, 30), ImageRGB(10, 30)), DimensionError);
  CHECK_THROWS_AS(ssim(ImageRGB(12, 12), ImageRGB(12, 13)), DimensionError);
}

TEST_CASE("ssim on a single window matches a direct weighted-moment computation") {
  const ImageRGB a = random_image(11, 11, 21), b = random_image(11, 11, 22);
  std::vector<double> w(11);
  double sum = 0.0;
  for (int i = 0; i < 11; ++i) sum += w[i] = std::exp(-(i - 5.0) * (i - 5.0) / (2.0 * 1.5 * 1.5));
  for (double& v : w) v /= sum;
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
    for (int y = 0; y < 11; ++y)
      for (int x = 0; x < 11; ++x) {
        const double k = w[x] * w[y];
        ma += k * a.at(x, y, c);
        mb += k * b.at(x, y, c);
      }
    for (int y = 0; y < 11; ++y)
      for (int x = 0; x < 11; ++x) {
        const double k = w[x] * w[y];
        const double da = a.at(x, y, c) - ma, db = b.at(x, y, c) - mb;
        saa += k * da * da;
        sbb += k * db * db;
        sab += k * da * db;
      }
    const double c1 = 1e-4, c2 = 9e-4;
    total += (2 * ma * mb + c1) * (2 * sab + c2) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
  }
  CHECK(ssim(a, b) == doctest::Approx(total / 3.0).epsilon(1e-10));
}

TEST_CASE("ssim_with_gradient matches central differences") {
  const ImageRGB b = random_image(14, 13, 31);
  ImageRGB a = random_image(14, 13, 32);
  std::vector<double> grad(a.data().size());
  const double value = ssim_with_gradient(a, b, grad);
  CHECK(value == doctest::Approx(ssim(a, b)).epsilon(1e-12));
  double worst = 0.0;
  for (std::size_t i = 0; i < grad.size(); i += 7) {
    const double saved = a.data()[i];
    const double h = 1e-6;
    a.data()[i] = saved + h;
    const double up = ssim(a, b);
    a.data()[i] = saved - h;
    const double down = ssim(a, b);
    a.data()[i] = saved;
    const double num = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(num - grad[i]) / std::max({std::abs(num), std::abs(grad[i]), 1e-6}));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("perceptual_distance providers") {
  const ImageRGB a = random_image(12, 12, 41), b = random_image(12, 12, 42);
  CHECK_FALSE(perceptual_distance(a, b, PerceptualProvider::none()).has_value());
  const auto stub = perceptual_distance(a, b, PerceptualProvider::external("echo 0.25 #"));
  REQUIRE(stub.has_value());
  CHECK(*stub == 0.25);
  testsupport::TempDir dir;
  {
    std::ofstream f(dir / "same.sh");
    f << "cmp -s \"$1\" \"$2\" && echo 0 || echo 1\n";
  }
  const auto same = perceptual_distance(a, a, PerceptualProvider::external("sh " + (dir / "same.sh").string()));
  REQUIRE(same.has_value());
  CHECK(*same <= 1e-4);
  CHECK_THROWS_AS(perceptual_distance(a, b, PerceptualProvider::external("false")), ProcessError);
  CHECK_THROWS_AS(perceptual_distance(a, b, PerceptualProvider::external("echo banana #")), FormatError);
  CHECK_THROWS_AS(perceptual_distance(a, b, PerceptualProvider::external("echo -1 #")), FormatError);
}

TEST_CASE("evaluate_pair fills a metric row") {
  const ImageRGB a = random_image(12, 12, 51);
  const MetricRow row = evaluate_pair("v0", a, a);
  CHECK(row.view_id == "v0");
  CHECK(row.psnr == kInfinitePsnr);
  CHECK(row.ssim == doctest::Approx(1.0));
  CHECK_FALSE(row.perceptual.has_value());
}
