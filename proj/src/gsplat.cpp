#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "avatarforge/error.hpp"
#include "avatarforge/gsplat.hpp"
#include "gs_internal.hpp"

namespace avatarforge::gs {

Gaussian3D GaussianCloud::get(std::size_t i) const {
  Gaussian3D g;
  g.position = Eigen::Vector3f(positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]);
  g.rotation = Eigen::Vector4f(rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]);
  g.log_scale = Eigen::Vector3f(log_scales[3 * i], log_scales[3 * i + 1], log_scales[3 * i + 2]);
  g.opacity_logit = opacity_logits[i];
  std::copy_n(sh.begin() + static_cast<std::ptrdiff_t>(i * kShFloats), kShFloats, g.sh.begin());
  return g;
}

void GaussianCloud::set(std::size_t i, const Gaussian3D& g) {
  for (int k = 0; k < 3; ++k) positions[3 * i + k] = g.position[k];
  for (int k = 0; k < 4; ++k) rotations[4 * i + k] = g.rotation[k];
  for (int k = 0; k < 3; ++k) log_scales[3 * i + k] = g.log_scale[k];
  opacity_logits[i] = g.opacity_logit;
  std::copy(g.sh.begin(), g.sh.end(), sh.begin() + static_cast<std::ptrdiff_t>(i * kShFloats));
}

void GaussianCloud::push_back(const Gaussian3D& g) {
  positions.insert(positions.end(), g.position.data(), g.position.data() + 3);
  rotations.insert(rotations.end(), g.rotation.data(), g.rotation.data() + 4);
  log_scales.insert(log_scales.end(), g.log_scale.data(), g.log_scale.data() + 3);
  opacity_logits.push_back(g.opacity_logit);
  sh.insert(sh.end(), g.sh.begin(), g.sh.end());
}

namespace {

template <typename T>
std::vector<T> gather(const std::vector<T>& src, std::span<const std::size_t> rows, std::size_t stride) {
  std::vector<T> out;
  out.reserve(rows.size() * stride);
  for (std::size_t r : rows) {
    out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(r * stride),
               src.begin() + static_cast<std::ptrdiff_t>((r + 1) * stride));
  }
  return out;
}

}  // namespace

void GaussianCloud::select(std::span<const std::size_t> rows) {
  for (std::size_t r : rows) {
    if (r >= size()) throw InvalidArgument("select: row out of range");
  }
  positions = gather(positions, rows, 3);
  rotations = gather(rotations, rows, 4);
  log_scales = gather(log_scales, rows, 3);
  opacity_logits = gather(opacity_logits, rows, 1);
  sh = gather(sh, rows, kShFloats);
}

void GaussianCloud::normalize_rotations() {
  for (std::size_t i = 0; i < size(); ++i) {
    float* q = rotations.data() + 4 * i;
    double n = 0.0;
    for (int k = 0; k < 4; ++k) n += static_cast<double>(q[k]) * q[k];
    n = std::sqrt(n);
    if (n < 1e-12) {
      q[0] = 1.0f;
      q[1] = q[2] = q[3] = 0.0f;
      continue;
    }
    for (int k = 0; k < 4; ++k) q[k] = static_cast<float>(q[k] / n);
  }
}

void GaussianCloud::validate() const {
  const std::size_t n = size();
  if (positions.size() != 3 * n || rotations.size() != 4 * n || log_scales.size() != 3 * n ||
      sh.size() != kShFloats * n) {
    throw DimensionError("Gaussian cloud parameter groups disagree on the Gaussian count");
  }
  if (sh_degree < 0 || sh_degree > kMaxShDegree) throw InvalidArgument("SH degree must be in [0, 3]");
}

void CloudGradients::resize(std::size_t n) {
  positions.assign(3 * n, 0.0);
  rotations.assign(4 * n, 0.0);
  log_scales.assign(3 * n, 0.0);
  opacity_logits.assign(n, 0.0);
  sh.assign(kShFloats * n, 0.0);
  mean2d_norm.assign(n, 0.0);
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

Eigen::Matrix3d rotation_from_quaternion(const Eigen::Vector4d& q_in) {
  const Eigen::Vector4d q = q_in.normalized();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),    //
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Eigen::Matrix3d covariance_3d(const Eigen::Vector4d& q, const Eigen::Vector3d& log_scale) {
  const Eigen::Matrix3d r = rotation_from_quaternion(q);
  const Eigen::Vector3d var = (2.0 * log_scale).array().exp();
  Eigen::Matrix3d cov = r * var.asDiagonal() * r.transpose();
  // Exact symmetry regardless of rounding order.
  return 0.5 * (cov + cov.transpose());
}

namespace detail {

std::array<Eigen::Matrix3d, 4> rotation_derivatives(const Eigen::Vector4d& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Eigen::Matrix3d, 4> d;
  d[0] << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  d[1] << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
  d[2] << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
  d[3] << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
  return d;
}

ProjectionState project(const Gaussian3D& g, int sh_degree, const CameraIntrinsics& intr, const Pose& pose,
                        const RasterSettings& settings, bool want_sh_gradients) {
  ProjectionState s;
  const Eigen::Vector3d m = g.position.cast<double>();
  s.world_to_cam = pose.world_to_camera_rotation();
  s.p_cam = s.world_to_cam * (m - pose.translation());
  s.depth = -s.p_cam.z();
  if (!(s.depth > settings.near_cull)) return s;

  const double f = intr.focal;
  const double x = s.p_cam.x();
  const double y = s.p_cam.y();
  const double zd = s.depth;
  s.mean2d = Eigen::Vector2d(intr.cx() + f * x / zd, intr.cy() - f * y / zd);
  s.jacobian << f / zd, 0.0, f * x / (zd * zd),  //
      0.0, -f / zd, -f * y / (zd * zd);

  const Eigen::Vector4d q = g.rotation.cast<double>();
  s.q_norm = q.norm();
  if (!(s.q_norm > 1e-12)) return s;
  s.q_hat = q / s.q_norm;
  s.rot = rotation_from_quaternion(s.q_hat);
  s.var = (2.0 * g.log_scale.cast<double>()).array().exp();
  s.cov3d = s.rot * s.var.asDiagonal() * s.rot.transpose();
  s.cov_cam = s.world_to_cam * s.cov3d * s.world_to_cam.transpose();
  s.cov2d = s.jacobian * s.cov_cam * s.jacobian.transpose();
  s.cov2d(0, 1) = s.cov2d(1, 0) = 0.5 * (s.cov2d(0, 1) + s.cov2d(1, 0));
  s.cov2d(0, 0) += settings.blur;
  s.cov2d(1, 1) += settings.blur;

  const double det = s.cov2d.determinant();
  if (!(det > 1e-12) || !s.cov2d.allFinite()) return s;
  s.conic << s.cov2d(1, 1) / det, -s.cov2d(0, 1) / det, -s.cov2d(1, 0) / det, s.cov2d(0, 0) / det;

  const double mid = 0.5 * (s.cov2d(0, 0) + s.cov2d(1, 1));
  const double lambda_max = mid + std::sqrt(std::max(0.1, mid * mid - det));
  s.radius = std::ceil(settings.radius_sigmas * std::sqrt(lambda_max));

  s.view_vec = m - pose.translation();
  const double view_norm = s.view_vec.norm();
  const Eigen::Vector3d dir = view_norm > 0 ? Eigen::Vector3d(s.view_vec / view_norm) : Eigen::Vector3d::UnitZ();
  const int n = sh_coeffs_for_degree(sh_degree);
  sh_basis(dir, sh_degree, s.basis,
           want_sh_gradients ? std::span<Eigen::Vector3d>(s.basis_grad) : std::span<Eigen::Vector3d>{});
  for (int c = 0; c < 3; ++c) {
    double v = 0.5;
    for (int k = 0; k < n; ++k) v += static_cast<double>(g.sh[3 * k + c]) * s.basis[k];
    s.raw_rgb[c] = v;
    s.rgb[c] = std::clamp(v, 0.0, 1.0);
  }
  s.opacity = logistic(g.opacity_logit);
  s.valid = true;
  return s;
}

}  // namespace detail

std::optional<Projected2D> project_gaussian(const Gaussian3D& g, int sh_degree, const CameraIntrinsics& intr,
                                            const Pose& pose, const RasterSettings& settings) {
  const auto s = detail::project(g, sh_degree, intr, pose, settings, false);
  if (!s.valid) return std::nullopt;
  return Projected2D{s.mean2d, s.cov2d, s.depth, s.rgb, s.radius};
}

}  // namespace avatarforge::gs
