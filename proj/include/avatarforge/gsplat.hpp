#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "avatarforge/camera.hpp"
#include "avatarforge/imaging.hpp"

namespace avatarforge::gs {

inline constexpr int kMaxShDegree = 3;
inline constexpr int kShCoeffs = (kMaxShDegree + 1) * (kMaxShDegree + 1);  // per channel
inline constexpr int kShFloats = 3 * kShCoeffs;
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;

inline int sh_coeffs_for_degree(int degree) { return (degree + 1) * (degree + 1); }

// One Gaussian. `sh` is coefficient-major: sh[3 * k + channel].
struct Gaussian3D {
  Eigen::Vector3f position = Eigen::Vector3f::Zero();
  Eigen::Vector4f rotation = Eigen::Vector4f(1, 0, 0, 0);  // (w, x, y, z)
  Eigen::Vector3f log_scale = Eigen::Vector3f::Zero();
  float opacity_logit = 0.0f;
  std::array<float, kShFloats> sh{};

  bool operator==(const Gaussian3D&) const = default;
};

// Structure-of-arrays storage; each group is one optimizer parameter group.
struct GaussianCloud {
  int sh_degree = 0;
  std::vector<float> positions;       // 3 per Gaussian
  std::vector<float> rotations;       // 4 per Gaussian
  std::vector<float> log_scales;      // 3 per Gaussian
  std::vector<float> opacity_logits;  // 1 per Gaussian
  std::vector<float> sh;              // kShFloats per Gaussian

  std::size_t size() const { return opacity_logits.size(); }
  bool empty() const { return opacity_logits.empty(); }
  Gaussian3D get(std::size_t i) const;
  void set(std::size_t i, const Gaussian3D& g);
  void push_back(const Gaussian3D& g);
  // Rebuilds the cloud from the listed rows of the current one (rows may repeat).
  void select(std::span<const std::size_t> rows);
  void normalize_rotations();
  void validate() const;

  bool operator==(const GaussianCloud&) const = default;
};

double logistic(double x);
double logit(double p);

Eigen::Matrix3d rotation_from_quaternion(const Eigen::Vector4d& q);

// R(q) diag(exp(s))^2 R(q)^T; q is normalized first.
Eigen::Matrix3d covariance_3d(const Eigen::Vector4d& q, const Eigen::Vector3d& log_scale);

// Real SH basis values Y_k(dir) for k < (degree+1)^2, and optionally their
// derivatives with respect to the (unnormalized) direction components.
void sh_basis(const Eigen::Vector3d& dir, int degree, std::span<double> values,
              std::span<Eigen::Vector3d> gradients = {});

// Per channel 0.5 + sum_k coeffs[3k + c] * Y_k(dir), clamped to [0, 1].
// `coeffs` must hold exactly 3 * (degree+1)^2 values.
Rgb eval_sh(std::span<const double> coeffs, const Eigen::Vector3d& dir, int degree);

struct RasterSettings {
  Rgb background = kWhite;
  int tile_size = 16;
  double alpha_cap = 0.99;
  double min_alpha = 1.0 / 255.0;
  double transmittance_floor = 1e-4;
  double blur = 0.3;
  double near_cull = 0.01;
  double radius_sigmas = 3.0;
};

struct Projected2D {
  Eigen::Vector2d mean2d;
  Eigen::Matrix2d cov2d;
  double depth = 0.0;
  Rgb rgb{};
  double radius = 0.0;
};

// Absent when the Gaussian is behind the near plane or its footprint is degenerate.
std::optional<Projected2D> project_gaussian(const Gaussian3D& g, int sh_degree, const CameraIntrinsics& intr,
                                            const Pose& pose, const RasterSettings& settings = {});

// Forward state kept for the backward pass and densification statistics.
struct RasterAux {
  std::vector<std::uint8_t> visible;  // per Gaussian: touched at least one tile
  std::vector<double> radii;          // per Gaussian screen radius in pixels (0 when culled)

  // Internal bookkeeping consumed by rasterize_backward.
  struct Entry {
    Eigen::Vector2d mean2d;
    double conic_a = 0, conic_b = 0, conic_c = 0;
    double opacity = 0;
    Rgb rgb{};
    double depth = 0;
  };
  std::vector<std::optional<Entry>> projected;
  std::vector<std::uint32_t> tile_offsets;  // tiles + 1 prefix offsets into tile_gaussians
  std::vector<std::uint32_t> tile_gaussians;
  std::vector<std::uint32_t> pixel_end;     // per pixel: entries consumed within its tile list
  std::vector<double> pixel_transmittance;  // per pixel: final T
  int tiles_x = 0;
  int tiles_y = 0;
};

struct RasterResult {
  ImageRGB image;
  RasterAux aux;
};

RasterResult rasterize(const GaussianCloud& cloud, const CameraIntrinsics& intr, const Pose& pose,
                       const RasterSettings& settings = {});

// Gradients in the layout of GaussianCloud's groups, plus per-Gaussian
// |dL/dmean2d| in pixel units for densification.
struct CloudGradients {
  std::vector<double> positions;
  std::vector<double> rotations;
  std::vector<double> log_scales;
  std::vector<double> opacity_logits;
  std::vector<double> sh;
  std::vector<double> mean2d_norm;

  void resize(std::size_t n);
};

// `grad_image` holds dL/dpixel laid out like ImageRGB::data().
CloudGradients rasterize_backward(const GaussianCloud& cloud, const CameraIntrinsics& intr, const Pose& pose,
                                  const RasterResult& forward, std::span<const double> grad_image,
                                  const RasterSettings& settings = {});

// Recomputes the forward pass first.
CloudGradients rasterize_backward(const GaussianCloud& cloud, const CameraIntrinsics& intr, const Pose& pose,
                                  std::span<const double> grad_image, const RasterSettings& settings = {});

struct DensifyConfig {
  // Mean |dL/dmean2d| in normalized device units (pixel gradient * width / 2).
  double grad_threshold = 2e-4;
  // World-space max stddev above which a Gaussian is split rather than cloned.
  double split_scale_threshold = 0.04;
  double opacity_prune = 0.005;
  int interval = 100;
  std::size_t max_gaussians = 20000;
  // Prune Gaussians whose max screen radius exceeds this many pixels (0 disables).
  double max_screen_radius = 0.0;
  // Prune Gaussians whose world stddev exceeds this (0 disables).
  double max_world_scale = 0.0;
  double split_factor = 1.6;
  void validate() const;
};

struct DensifyStats {
  std::vector<double> grad_accum;     // sum of NDC mean2d gradient norms
  std::vector<double> world_grad;     // 3 per Gaussian: summed position gradient
  std::vector<std::uint32_t> counts;  // views in which the Gaussian was visible
  std::vector<double> max_radii;

  void reset(std::size_t n);
  void accumulate(const RasterAux& aux, const CloudGradients& grads, int image_width);
};

struct DensifyOutcome {
  std::size_t cloned = 0;
  std::size_t split = 0;
  std::size_t pruned = 0;
  // For every row of the new cloud, its source row in the old cloud, or
  // kNewRow for freshly created Gaussians.
  std::vector<std::size_t> source_rows;
  static constexpr std::size_t kNewRow = static_cast<std::size_t>(-1);
};

GaussianCloud densify_and_prune(const GaussianCloud& cloud, const DensifyStats& stats,
                                const DensifyConfig& cfg, std::uint64_t seed,
                                DensifyOutcome* outcome = nullptr);

struct GsTrainConfig {
  int iterations = 2000;
  double lambda_dssim = 0.2;
  double position_lr_init = 1.6e-4;  // multiplied by the scene extent
  double position_lr_final = 1.6e-6;
  double sh_dc_lr = 2.5e-3;
  double sh_rest_lr = 2.5e-3 / 20.0;
  double opacity_lr = 0.05;
  double scale_lr = 5e-3;
  double rotation_lr = 1e-3;
  int sh_degree_interval = 1000;
  int max_sh_degree = kMaxShDegree;
  int densify_from = 100;
  double densify_stop_fraction = 0.6;
  DensifyConfig densify;
  RasterSettings raster;
  std::uint64_t seed = 0;
  std::function<void(int, double, std::size_t)> on_iteration;
};

struct GsTrainResult {
  GaussianCloud cloud;
  std::vector<double> loss_trace;
  std::size_t densify_passes = 0;
};

// Loss (1 - lambda) L1 + lambda (1 - SSIM) and its gradient with respect to `rendered`.
double photometric_loss(const ImageRGB& rendered, const ImageRGB& reference, double lambda_dssim,
                        std::span<double> grad);

GsTrainResult train_gs(const ViewDataset& dataset, const GaussianCloud& init, const GsTrainConfig& cfg);

// 1.1 times the largest distance from the mean camera centre to any camera.
double scene_extent(const ViewDataset& dataset);

struct InitConfig {
  std::size_t count = 1000;
  double t_near = kDefaultNear;
  double t_far = kDefaultFar;
  double initial_opacity = 0.1;
  std::uint64_t seed = 0;
};

// Uniform positions in the bounding box of the cameras' common visible region,
// isotropic scale from the mean distance to the 3 nearest neighbours,
// mid-gray color.
GaussianCloud initialize_cloud(const ViewDataset& dataset, const InitConfig& cfg);

// Same, but positions (and colors when present) from a sparse point set.
GaussianCloud initialize_from_points(std::span<const Eigen::Vector3f> points,
                                     std::span<const Rgb> colors, double initial_opacity);

// Binary little-endian PLY, one vertex per Gaussian with float properties
// x, y, z, f_dc_0..2, f_rest_0..44, opacity, scale_0..2, rot_0..3.
void save_ply(const GaussianCloud& cloud, const std::filesystem::path& path);
GaussianCloud load_ply(const std::filesystem::path& path);

// x, y, z plus optional 8-bit red, green, blue.
struct SparsePoints {
  std::vector<Eigen::Vector3f> points;
  std::vector<Rgb> colors;  // empty when the file has no color
};
SparsePoints load_points_ply(const std::filesystem::path& path);

}  // namespace avatarforge::gs
