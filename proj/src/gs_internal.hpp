#pragma once

// Projection intermediates shared by the forward and backward rasterizer passes.

#include <array>

#include "avatarforge/gsplat.hpp"

namespace avatarforge::gs::detail {

struct ProjectionState {
  bool valid = false;
  Eigen::Vector3d p_cam;  // camera space, camera looks down -z
  double depth = 0.0;     // -p_cam.z
  Eigen::Matrix3d world_to_cam;
  Eigen::Matrix<double, 2, 3> jacobian;
  Eigen::Vector4d q_hat;
  double q_norm = 1.0;
  Eigen::Matrix3d rot;
  Eigen::Vector3d var;  // exp(2 s)
  Eigen::Matrix3d cov3d;
  Eigen::Matrix3d cov_cam;  // W cov3d W^T
  Eigen::Matrix2d cov2d;
  Eigen::Matrix2d conic;
  Eigen::Vector2d mean2d;
  double radius = 0.0;
  Eigen::Vector3d view_vec;  // position - camera centre
  std::array<double, kShCoeffs> basis{};
  std::array<Eigen::Vector3d, kShCoeffs> basis_grad{};
  Rgb raw_rgb{};  // before clamping
  Rgb rgb{};
  double opacity = 0.0;
};

ProjectionState project(const Gaussian3D& g, int sh_degree, const CameraIntrinsics& intr, const Pose& pose,
                        const RasterSettings& settings, bool want_sh_gradients);

// dR/dq_c for c in (w, x, y, z), evaluated at a unit quaternion.
std::array<Eigen::Matrix3d, 4> rotation_derivatives(const Eigen::Vector4d& q);

}  // namespace avatarforge::gs::detail
