#include "avatarforge/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <memory>
#include <random>

#include "avatarforge/error.hpp"
#include "avatarforge/process.hpp"

namespace avatarforge {

ImageRGB::ImageRGB(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw InvalidArgument("image dimensions must be non-negative");
  data_.resize(pixel_count() * 3);
  for (std::size_t i = 0; i < pixel_count(); ++i) {
    data_[3 * i] = fill[0];
    data_[3 * i + 1] = fill[1];
    data_[3 * i + 2] = fill[2];
  }
}

ImageRGB ImageRGB::from_data(int width, int height, std::vector<double> data) {
  ImageRGB img(width, height);
  if (data.size() != img.data_.size()) {
    throw InvalidArgument("image buffer has " + std::to_string(data.size()) + " values, expected " +
                          std::to_string(img.data_.size()));
  }
  for (double v : data) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("image channel outside [0, 1]");
  }
  img.data_ = std::move(data);
  return img;
}

Rgb ImageRGB::pixel(int x, int y) const {
  const std::size_t i = index(x, y, 0);
  return {data_[i], data_[i + 1], data_[i + 2]};
}

void ImageRGB::set_pixel(int x, int y, const Rgb& rgb) {
  const std::size_t i = index(x, y, 0);
  data_[i] = rgb[0];
  data_[i + 1] = rgb[1];
  data_[i + 2] = rgb[2];
}

void ImageRGB::clamp() {
  for (double& v : data_) v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

struct PngReadState {
  std::vector<png_byte> raw;
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int channels = 0;
  int bit_depth = 0;
};

// Kept free of locals so nothing is clobbered by libpng's longjmp.
bool read_png(png_structp png, png_infop info, std::FILE* fp, PngReadState* st) {
  if (setjmp(png_jmpbuf(png)) != 0) return false;
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  st->width = png_get_image_width(png, info);
  st->height = png_get_image_height(png, info);
  st->bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (st->bit_depth == 8 && (color_type == PNG_COLOR_TYPE_RGB || color_type == PNG_COLOR_TYPE_RGBA) &&
      png_get_interlace_type(png, info) == PNG_INTERLACE_NONE && st->width > 0 && st->height > 0) {
    st->channels = color_type == PNG_COLOR_TYPE_RGBA ? 4 : 3;
    st->raw.resize(static_cast<std::size_t>(st->width) * st->height * st->channels);
    for (png_uint_32 y = 0; y < st->height; ++y) {
      png_read_row(png, st->raw.data() + static_cast<std::size_t>(y) * st->width * st->channels, nullptr);
    }
    png_read_end(png, nullptr);
  }
  return true;
}

bool write_png(png_structp png, png_infop info, std::FILE* fp, const std::vector<png_byte>* raw, int w, int h) {
  if (setjmp(png_jmpbuf(png)) != 0) return false;
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) {
    png_write_row(png, raw->data() + static_cast<std::size_t>(y) * w * 3);
  }
  png_write_end(png, nullptr);
  return true;
}

}  // namespace

ImageRGB load_image(const std::filesystem::path& path, const Rgb& background) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open image " + path.string());

  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(path.string() + " is not a PNG file");
  }

  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) throw Error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("png_create_info_struct failed");
  }

  PngReadState st;
  const bool ok = read_png(png, info, fp.get(), &st);
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw FormatError("corrupt PNG " + path.string() + ": " + err);
  const png_uint_32 w = st.width;
  const png_uint_32 h = st.height;
  const int channels = st.channels;
  const int bit_depth = st.bit_depth;
  const auto& raw = st.raw;
  if (w == 0 || h == 0) throw FormatError(path.string() + " has a zero dimension");
  if (bit_depth != 8) {
    throw FormatError(path.string() + ": unsupported bit depth " + std::to_string(bit_depth));
  }
  if (channels == 0) throw FormatError(path.string() + ": only RGB and RGBA PNGs are supported");

  ImageRGB img(static_cast<int>(w), static_cast<int>(h));
  auto out = img.data();
  const std::size_t n = img.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    const png_byte* px = raw.data() + i * channels;
    if (channels == 3) {
      for (int c = 0; c < 3; ++c) out[3 * i + c] = px[c] / 255.0;
    } else {
      const double alpha = px[3] / 255.0;
      for (int c = 0; c < 3; ++c) {
        out[3 * i + c] = std::clamp(alpha * (px[c] / 255.0) + (1.0 - alpha) * background[c], 0.0, 1.0);
      }
    }
  }
  return img;
}

std::uint8_t quantize_channel(double v) {
  const long q = std::lround(v * 255.0);
  return static_cast<std::uint8_t>(std::clamp(q, 0L, 255L));
}

void save_image(const ImageRGB& img, const std::filesystem::path& path) {
  if (img.empty()) throw InvalidArgument("cannot save an empty image");
  std::vector<png_byte> raw(img.pixel_count() * 3);
  auto src = img.data();
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = quantize_channel(src[i]);

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write image " + path.string());

  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_create_info_struct failed");
  }
  const bool ok = write_png(png, info, fp.get(), &raw, img.width(), img.height());
  png_destroy_write_struct(&png, &info);
  if (!ok) throw IoError("failed writing " + path.string() + ": " + err);
  if (std::fflush(fp.get()) != 0) throw IoError("failed writing " + path.string());
}

namespace {

void require_same_size(const ImageRGB& a, const ImageRGB& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw DimensionError("image size mismatch: " + std::to_string(a.width()) + "x" +
                         std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                         std::to_string(b.height()));
  }
  if (a.empty()) throw DimensionError("images are empty");
}

}  // namespace

double mse(const ImageRGB& a, const ImageRGB& b) {
  require_same_size(a, b);
  auto da = a.data();
  auto db = b.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = da[i] - db[i];
    sum += d * d;
  }
  return sum / static_cast<double>(da.size());
}

double psnr(const ImageRGB& a, const ImageRGB& b) {
  const double e = mse(a, b);
  if (e == 0.0) return kInfinitePsnr;
  return -10.0 * std::log10(e);
}

std::optional<double> perceptual_distance(const ImageRGB& a, const ImageRGB& b,
                                          const PerceptualProvider& provider) {
  require_same_size(a, b);
  if (provider.kind == PerceptualProvider::Kind::none) return std::nullopt;

  std::random_device rd;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("avatarforge-perceptual-" + std::to_string(rd()) + std::to_string(rd()));
  std::filesystem::create_directories(dir);
  struct Cleanup {
    std::filesystem::path p;
    ~Cleanup() {
      std::error_code ec;
      std::filesystem::remove_all(p, ec);
    }
  } cleanup{dir};

  const auto pa = dir / "a.png";
  const auto pb = dir / "b.png";
  save_image(a, pa);
  save_image(b, pb);
  const auto res = run_command(provider.command + " " + shell_quote(pa.string()) + " " +
                               shell_quote(pb.string()));
  if (res.timed_out) throw ProcessError("perceptual provider timed out", -1, res.stderr_text);
  if (res.exit_code != 0) {
    throw ProcessError("perceptual provider exited with code " + std::to_string(res.exit_code),
                       res.exit_code, res.stderr_text);
  }

  std::string text = res.stdout_text;
  const auto first = text.find_first_not_of(" \t\r\n");
  const auto last = text.find_last_not_of(" \t\r\n");
  if (first == std::string::npos) throw FormatError("perceptual provider printed nothing");
  text = text.substr(first, last - first + 1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value) || value < 0.0) {
    throw FormatError("perceptual provider output is not a non-negative float: '" + text + "'");
  }
  return value;
}

MetricRow evaluate_pair(const std::string& view_id, const ImageRGB& rendered,
                        const ImageRGB& reference, const PerceptualProvider& provider) {
  MetricRow row;
  row.view_id = view_id;
  row.psnr = psnr(rendered, reference);
  row.ssim = ssim(rendered, reference);
  row.perceptual = perceptual_distance(rendered, reference, provider);
  return row;
}

}  // namespace avatarforge
