#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "avatarforge/camera.hpp"
#include "avatarforge/imaging.hpp"

namespace avatarforge::nerf {

struct EncodingConfig {
  int pos_freqs = 10;
  int dir_freqs = 4;
  bool include_input = true;

  int pos_dim() const { return (include_input ? 3 : 0) + 6 * pos_freqs; }
  int dir_dim() const { return (include_input ? 3 : 0) + 6 * dir_freqs; }
  void validate() const;
  bool operator==(const EncodingConfig&) const = default;
};

// Optional raw input followed by sin(2^k pi v), cos(2^k pi v) per component for k < freqs.
std::vector<double> positional_encode(const Eigen::Vector3d& v, int freqs, bool include_input);

// Fully connected field. The trunk maps the encoded position through ReLU layers of
// `widths`; density = softplus(linear(trunk)). The color branch concatenates the
// trunk output with the encoded direction, applies one ReLU layer of width
// widths.back() / 2 and a logistic output. Direction never reaches the density head.
class NerfModel {
 public:
  NerfModel() = default;
  NerfModel(EncodingConfig encoding, std::vector<int> widths);

  static std::size_t parameter_count(const EncodingConfig& encoding, std::span<const int> widths);

  const EncodingConfig& encoding() const { return encoding_; }
  const std::vector<int>& widths() const { return widths_; }
  int color_width() const;
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  // He-uniform weights, zero biases. `density_bias` sets the density head's bias;
  // a large negative value starts the field almost empty.
  void initialize(std::uint64_t seed, double density_bias = 0.0);

  bool operator==(const NerfModel&) const = default;

  // Offsets of each dense layer inside the flat parameter array.
  struct Layer {
    std::size_t weight = 0;  // column-major out x in
    std::size_t bias = 0;
    int in = 0;
    int out = 0;
  };
  std::vector<Layer> layers() const;

 private:
  EncodingConfig encoding_;
  std::vector<int> widths_;
  std::vector<double> params_;
};

struct FieldSample {
  Eigen::Vector3d rgb;
  double sigma = 0.0;
};

FieldSample field_eval(const NerfModel& model, const Eigen::Vector3d& x, const Eigen::Vector3d& d);

struct RenderConfig {
  int samples_per_ray = 64;
  double t_near = kDefaultNear;
  double t_far = kDefaultFar;
  Rgb background = kWhite;
  bool stratified = false;
  std::uint64_t rng_seed = 0;
  void validate() const;
};

// Depths t_0..t_{N-1}: bin midpoints, or uniformly jittered within each bin.
std::vector<double> sample_depths(const RenderConfig& cfg, std::uint64_t seed);

struct CompositeResult {
  Rgb color{};
  std::vector<double> weights;  // T_i * alpha_i
  double final_transmittance = 1.0;
};

// Front-to-back quadrature. delta_i = t_{i+1} - t_i and the last interval ends at t_far.
CompositeResult composite(std::span<const double> depths, double t_far, std::span<const double> sigmas,
                          std::span<const Rgb> colors, const Rgb& background);

Rgb render_ray(const NerfModel& model, const Ray& ray, const RenderConfig& cfg);

// Each pixel uses the seed mix_seed(cfg.rng_seed, y * width + x) when stratified.
ImageRGB render_view(const NerfModel& model, const CameraIntrinsics& intr, const Pose& pose,
                     const RenderConfig& cfg);

struct TrainConfig {
  int iterations = 5000;
  int batch_rays = 1024;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Learning rate decays exponentially to lr * lr_final_ratio over the run; 1 disables.
  double lr_final_ratio = 1.0;
  int samples_per_ray = 64;
  double t_near = kDefaultNear;
  double t_far = kDefaultFar;
  Rgb background = kWhite;
  bool stratified = true;
  std::uint64_t seed = 0;
  int rays_per_chunk = 64;
  std::function<void(int, double)> on_iteration;
};

struct TrainResult {
  NerfModel model;
  std::vector<double> loss_trace;
};

TrainResult train_nerf(const ViewDataset& dataset, const NerfModel& init, const TrainConfig& cfg);

// Scalar training loss (mean squared error over rays and channels) and its exact
// parameter gradient for one batch of rays with fixed sample depths.
struct RayTarget {
  Ray ray;
  Rgb target{};
};
double batch_loss_and_gradient(const NerfModel& model, std::span<const RayTarget> rays,
                               std::span<const std::vector<double>> depths, const Rgb& background,
                               std::span<double> grad);

void save_checkpoint(const NerfModel& model, const std::filesystem::path& path);
NerfModel load_checkpoint(const std::filesystem::path& path);

}  // namespace avatarforge::nerf
