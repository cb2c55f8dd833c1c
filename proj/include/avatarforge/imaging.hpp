#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace avatarforge {

using Rgb = std::array<double, 3>;

inline constexpr Rgb kWhite{1.0, 1.0, 1.0};

// Row-major RGB image with channels in [0, 1].
class ImageRGB {
 public:
  ImageRGB() = default;
  ImageRGB(int width, int height, Rgb fill = {0.0, 0.0, 0.0});
  // Throws InvalidArgument when the buffer length or a channel value is off.
  static ImageRGB from_data(int width, int height, std::vector<double> data);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return pixel_count() == 0; }

  double& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c) const { return data_[index(x, y, c)]; }
  Rgb pixel(int x, int y) const;
  void set_pixel(int x, int y, const Rgb& rgb);

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  // Clamp every channel into [0, 1]; NaN becomes 0.
  void clamp();

  bool operator==(const ImageRGB&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

// 8-bit RGB/RGBA PNG. RGBA is composited over `background`.
ImageRGB load_image(const std::filesystem::path& path, const Rgb& background = kWhite);

// Writes an 8-bit RGB PNG with byte = round(v * 255), clamped to [0, 255].
void save_image(const ImageRGB& img, const std::filesystem::path& path);

std::uint8_t quantize_channel(double v);

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

double mse(const ImageRGB& a, const ImageRGB& b);

// Returns kInfinitePsnr when the images are identical.
double psnr(const ImageRGB& a, const ImageRGB& b);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Mean SSIM over all fully contained windows, averaged across channels.
double ssim(const ImageRGB& a, const ImageRGB& b, const SsimOptions& opts = {});

// SSIM of `a` against `b` plus dSSIM/da, laid out like a.data().
double ssim_with_gradient(const ImageRGB& a, const ImageRGB& b, std::span<double> grad_a,
                          const SsimOptions& opts = {});

// `none` disables the metric; `external` runs `command <pathA> <pathB>`.
struct PerceptualProvider {
  enum class Kind { none, external };
  Kind kind = Kind::none;
  std::string command;

  static PerceptualProvider none() { return {}; }
  static PerceptualProvider external(std::string cmd) { return {Kind::external, std::move(cmd)}; }
};

std::optional<double> perceptual_distance(const ImageRGB& a, const ImageRGB& b,
                                          const PerceptualProvider& provider);

struct MetricRow {
  std::string view_id;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> perceptual;

  bool operator==(const MetricRow&) const = default;
};

MetricRow evaluate_pair(const std::string& view_id, const ImageRGB& rendered,
                        const ImageRGB& reference, const PerceptualProvider& provider = {});

}  // namespace avatarforge
