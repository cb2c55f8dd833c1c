#include <algorithm>

#include "avatarforge/error.hpp"
#include "avatarforge/gsplat.hpp"

namespace avatarforge::gs {
namespace {

constexpr double kC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                          -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                          -0.4570457994644658, 1.445305721320277, -0.5900435899266435};

}  // namespace

void sh_basis(const Eigen::Vector3d& dir, int degree, std::span<double> values,
              std::span<Eigen::Vector3d> gradients) {
  if (degree < 0 || degree > kMaxShDegree) throw InvalidArgument("SH degree must be in [0, 3]");
  const auto n = static_cast<std::size_t>(sh_coeffs_for_degree(degree));
  if (values.size() < n) throw DimensionError("SH basis buffer too small");
  const bool grads = !gradients.empty();
  if (grads && gradients.size() < n) throw DimensionError("SH gradient buffer too small");

  const double x = dir.x();
  const double y = dir.y();
  const double z = dir.z();
  auto put = [&](std::size_t k, double v, double gx, double gy, double gz) {
    values[k] = v;
    if (grads) gradients[k] = Eigen::Vector3d(gx, gy, gz);
  };

  put(0, kShC0, 0, 0, 0);
  if (degree < 1) return;
  put(1, -kShC1 * y, 0, -kShC1, 0);
  put(2, kShC1 * z, 0, 0, kShC1);
  put(3, -kShC1 * x, -kShC1, 0, 0);
  if (degree < 2) return;
  const double xx = x * x;
  const double yy = y * y;
  const double zz = z * z;
  put(4, kC2[0] * x * y, kC2[0] * y, kC2[0] * x, 0);
  put(5, kC2[1] * y * z, 0, kC2[1] * z, kC2[1] * y);
  put(6, kC2[2] * (2 * zz - xx - yy), -2 * kC2[2] * x, -2 * kC2[2] * y, 4 * kC2[2] * z);
  put(7, kC2[3] * x * z, kC2[3] * z, 0, kC2[3] * x);
  put(8, kC2[4] * (xx - yy), 2 * kC2[4] * x, -2 * kC2[4] * y, 0);
  if (degree < 3) return;
  put(9, kC3[0] * y * (3 * xx - yy), kC3[0] * 6 * x * y, kC3[0] * (3 * xx - 3 * yy), 0);
  put(10, kC3[1] * x * y * z, kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y);
  put(11, kC3[2] * y * (4 * zz - xx - yy), kC3[2] * (-2 * x * y), kC3[2] * (4 * zz - xx - 3 * yy),
      kC3[2] * 8 * y * z);
  put(12, kC3[3] * z * (2 * zz - 3 * xx - 3 * yy), kC3[3] * (-6 * x * z), kC3[3] * (-6 * y * z),
      kC3[3] * (6 * zz - 3 * xx - 3 * yy));
  put(13, kC3[4] * x * (4 * zz - xx - yy), kC3[4] * (4 * zz - 3 * xx - yy), kC3[4] * (-2 * x * y),
      kC3[4] * 8 * x * z);
  put(14, kC3[5] * z * (xx - yy), kC3[5] * 2 * x * z, kC3[5] * (-2 * y * z), kC3[5] * (xx - yy));
  put(15, kC3[6] * x * (xx - 3 * yy), kC3[6] * (3 * xx - 3 * yy), kC3[6] * (-6 * x * y), 0);
}

Rgb eval_sh(std::span<const double> coeffs, const Eigen::Vector3d& dir, int degree) {
  if (degree < 0 || degree > kMaxShDegree) throw InvalidArgument("SH degree must be in [0, 3]");
  const int n = sh_coeffs_for_degree(degree);
  if (coeffs.size() != static_cast<std::size_t>(3 * n)) {
    throw DimensionError("expected " + std::to_string(3 * n) + " SH coefficients for degree " +
                         std::to_string(degree) + ", got " + std::to_string(coeffs.size()));
  }
  std::array<double, kShCoeffs> basis{};
  sh_basis(dir, degree, basis);
  Rgb out{0.5, 0.5, 0.5};
  for (int k = 0; k < n; ++k) {
    for (int c = 0; c < 3; ++c) out[c] += coeffs[3 * k + c] * basis[k];
  }
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace avatarforge::gs
