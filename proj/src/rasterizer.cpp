#include <algorithm>
#include <cmath>
#include <numeric>

#include "avatarforge/error.hpp"
#include "avatarforge/gsplat.hpp"
#include "gs_internal.hpp"

namespace avatarforge::gs {
namespace {

struct TileKey {
  std::uint32_t tile;
  double depth;
  std::uint32_t gaussian;
};

struct PixelGrad {
  double mean[2] = {0, 0};
  double conic[3] = {0, 0, 0};  // a, b, c of [[a, b], [b, c]]
  double rgb[3] = {0, 0, 0};
  double opacity = 0;
};

}  // namespace

RasterResult rasterize(const GaussianCloud& cloud, const CameraIntrinsics& intr, const Pose& pose,
                       const RasterSettings& settings) {
  cloud.validate();
  intr.validate();
  if (settings.tile_size < 1) throw InvalidArgument("tile size must be positive");
  const std::size_t n = cloud.size();
  const int w = intr.width;
  const int h = intr.height;
  const int ts = settings.tile_size;

  RasterResult out{ImageRGB(w, h, settings.background), {}};
  RasterAux& aux = out.aux;
  aux.tiles_x = (w + ts - 1) / ts;
  aux.tiles_y = (h + ts - 1) / ts;
  aux.visible.assign(n, 0);
  aux.radii.assign(n, 0.0);
  aux.projected.assign(n, std::nullopt);

  std::vector<TileKey> keys;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = detail::project(cloud.get(i), cloud.sh_degree, intr, pose, settings, false);
    if (!s.valid) continue;
    const double r = s.radius;
    const int x0 = std::clamp(static_cast<int>(std::floor((s.mean2d.x() - r) / ts)), 0, aux.tiles_x);
    const int x1 = std::clamp(static_cast<int>(std::floor((s.mean2d.x() + r) / ts)) + 1, 0, aux.tiles_x);
    const int y0 = std::clamp(static_cast<int>(std::floor((s.mean2d.y() - r) / ts)), 0, aux.tiles_y);
    const int y1 = std::clamp(static_cast<int>(std::floor((s.mean2d.y() + r) / ts)) + 1, 0, aux.tiles_y);
    if (x0 >= x1 || y0 >= y1) continue;
    aux.visible[i] = 1;
    aux.radii[i] = r;
    aux.projected[i] = RasterAux::Entry{s.mean2d, s.conic(0, 0), s.conic(0, 1), s.conic(1, 1),
                                        s.opacity, s.rgb, s.depth};
    for (int ty = y0; ty < y1; ++ty) {
      for (int tx = x0; tx < x1; ++tx) {
        keys.push_back({static_cast<std::uint32_t>(ty * aux.tiles_x + tx), s.depth, static_cast<std::uint32_t>(i)});
      }
    }
  }
  std::sort(keys.begin(), keys.end(), [](const TileKey& a, const TileKey& b) {
    if (a.tile != b.tile) return a.tile < b.tile;
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.gaussian < b.gaussian;
  });

  const int tiles = aux.tiles_x * aux.tiles_y;
  aux.tile_offsets.assign(tiles + 1, 0);
  aux.tile_gaussians.resize(keys.size());
  for (std::size_t k = 0; k < keys.size(); ++k) {
    aux.tile_gaussians[k] = keys[k].gaussian;
    ++aux.tile_offsets[keys[k].tile + 1];
  }
  std::partial_sum(aux.tile_offsets.begin(), aux.tile_offsets.end(), aux.tile_offsets.begin());

  aux.pixel_end.assign(static_cast<std::size_t>(w) * h, 0);
  aux.pixel_transmittance.assign(static_cast<std::size_t>(w) * h, 1.0);
  auto img = out.image.data();
  const Rgb bg = settings.background;

#pragma omp parallel for schedule(dynamic, 1)
  for (int tile = 0; tile < tiles; ++tile) {
    const int tx = tile % aux.tiles_x;
    const int ty = tile / aux.tiles_x;
    const std::uint32_t begin = aux.tile_offsets[tile];
    const std::uint32_t end = aux.tile_offsets[tile + 1];
    for (int py = ty * ts; py < std::min(h, (ty + 1) * ts); ++py) {
      for (int px = tx * ts; px < std::min(w, (tx + 1) * ts); ++px) {
        const double cx = px + 0.5;
        const double cy = py + 0.5;
        double t = 1.0;
        Rgb c{0, 0, 0};
        std::uint32_t k = begin;
        for (; k < end; ++k) {
          const auto& e = *aux.projected[aux.tile_gaussians[k]];
          const double dx = cx - e.mean2d.x();
          const double dy = cy - e.mean2d.y();
          const double power = -0.5 * (e.conic_a * dx * dx + e.conic_c * dy * dy) - e.conic_b * dx * dy;
          if (power > 0.0) continue;
          const double alpha = std::min(settings.alpha_cap, e.opacity * std::exp(power));
          if (alpha < settings.min_alpha) continue;
          for (int ch = 0; ch < 3; ++ch) c[ch] += t * alpha * e.rgb[ch];
          t *= 1.0 - alpha;
          if (t < settings.transmittance_floor) {
            ++k;
            break;
          }
        }
        const std::size_t pix = static_cast<std::size_t>(py) * w + px;
        aux.pixel_end[pix] = k - begin;
        aux.pixel_transmittance[pix] = t;
        for (int ch = 0; ch < 3; ++ch) img[3 * pix + ch] = c[ch] + t * bg[ch];
      }
    }
  }
  return out;
}

CloudGradients rasterize_backward(const GaussianCloud& cloud, const CameraIntrinsics& intr, const Pose& pose,
                                  std::span<const double> grad_image, const RasterSettings& settings) {
  const auto fwd = rasterize(cloud, intr, pose, settings);
  return rasterize_backward(cloud, intr, pose, fwd, grad_image, settings);
}

CloudGradients rasterize_backward(const GaussianCloud& cloud, const CameraIntrinsics& intr, const Pose& pose,
                                  const RasterResult& forward, std::span<const double> grad_image,
                                  const RasterSettings& settings) {
  const RasterAux& aux = forward.aux;
  const std::size_t n = cloud.size();
  const int w = intr.width;
  const int h = intr.height;
  const int ts = settings.tile_size;
  if (grad_image.size() != static_cast<std::size_t>(w) * h * 3) {
    throw DimensionError("rasterize_backward: image gradient has the wrong size");
  }
  if (aux.projected.size() != n) throw DimensionError("rasterize_backward: forward state does not match cloud");

  CloudGradients out;
  out.resize(n);

  // One accumulator per (tile, entry) so tiles never share writes.
  std::vector<PixelGrad> slots(aux.tile_gaussians.size());
  const int tiles = aux.tiles_x * aux.tiles_y;
  const Rgb bg = settings.background;

#pragma omp parallel for schedule(dynamic, 1)
  for (int tile = 0; tile < tiles; ++tile) {
    const int tx = tile % aux.tiles_x;
    const int ty = tile / aux.tiles_x;
    const std::uint32_t begin = aux.tile_offsets[tile];
    for (int py = ty * ts; py < std::min(h, (ty + 1) * ts); ++py) {
      for (int px = tx * ts; px < std::min(w, (tx + 1) * ts); ++px) {
        const std::size_t pix = static_cast<std::size_t>(py) * w + px;
        const double g[3] = {grad_image[3 * pix], grad_image[3 * pix + 1], grad_image[3 * pix + 2]};
        if (g[0] == 0.0 && g[1] == 0.0 && g[2] == 0.0) continue;
        const double cx = px + 0.5;
        const double cy = py + 0.5;
        double t = aux.pixel_transmittance[pix];
        // Contribution of everything behind the current entry, background included.
        Rgb rest{t * bg[0], t * bg[1], t * bg[2]};
        for (std::uint32_t k = begin + aux.pixel_end[pix]; k-- > begin;) {
          const auto& e = *aux.projected[aux.tile_gaussians[k]];
          const double dx = cx - e.mean2d.x();
          const double dy = cy - e.mean2d.y();
          const double power = -0.5 * (e.conic_a * dx * dx + e.conic_c * dy * dy) - e.conic_b * dx * dy;
          if (power > 0.0) continue;
          const double gauss = std::exp(power);
          const double raw_alpha = e.opacity * gauss;
          const double alpha = std::min(settings.alpha_cap, raw_alpha);
          if (alpha < settings.min_alpha) continue;
          t /= 1.0 - alpha;  // transmittance in front of this entry
          const double weight = t * alpha;

          PixelGrad& s = slots[k];
          double d_alpha = 0.0;
          for (int ch = 0; ch < 3; ++ch) {
            s.rgb[ch] += weight * g[ch];
            d_alpha += g[ch] * (t * e.rgb[ch] - rest[ch] / (1.0 - alpha));
            rest[ch] += weight * e.rgb[ch];
          }
          if (raw_alpha >= settings.alpha_cap) continue;
          s.opacity += d_alpha * gauss;
          const double d_power = d_alpha * alpha;
          s.conic[0] += -0.5 * dx * dx * d_power;
          s.conic[1] += -dx * dy * d_power;
          s.conic[2] += -0.5 * dy * dy * d_power;
          s.mean[0] += d_power * (e.conic_a * dx + e.conic_b * dy);
          s.mean[1] += d_power * (e.conic_b * dx + e.conic_c * dy);
        }
      }
    }
  }

  // Fixed tile-ordered reduction.
  std::vector<PixelGrad> per_gaussian(n);
  for (std::size_t k = 0; k < slots.size(); ++k) {
    PixelGrad& dst = per_gaussian[aux.tile_gaussians[k]];
    const PixelGrad& src = slots[k];
    for (int i = 0; i < 2; ++i) dst.mean[i] += src.mean[i];
    for (int i = 0; i < 3; ++i) dst.conic[i] += src.conic[i];
    for (int i = 0; i < 3; ++i) dst.rgb[i] += src.rgb[i];
    dst.opacity += src.opacity;
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!aux.visible[i]) continue;
    const PixelGrad& pg = per_gaussian[i];
    const Gaussian3D gi = cloud.get(i);
    const auto s = detail::project(gi, cloud.sh_degree, intr, pose, settings, true);
    if (!s.valid) continue;

    out.mean2d_norm[i] = std::hypot(pg.mean[0], pg.mean[1]);
    out.opacity_logits[i] = pg.opacity * s.opacity * (1.0 - s.opacity);

    // Color through SH and the viewing direction.
    Eigen::Vector3d d_dir = Eigen::Vector3d::Zero();
    const int n_coef = sh_coeffs_for_degree(cloud.sh_degree);
    for (int ch = 0; ch < 3; ++ch) {
      if (!(s.raw_rgb[ch] > 0.0 && s.raw_rgb[ch] < 1.0)) continue;
      const double gr = pg.rgb[ch];
      for (int k = 0; k < n_coef; ++k) {
        out.sh[i * kShFloats + 3 * k + ch] = gr * s.basis[k];
        d_dir += gr * static_cast<double>(gi.sh[3 * k + ch]) * s.basis_grad[k];
      }
    }
    Eigen::Vector3d d_pos = Eigen::Vector3d::Zero();
    const double vn = s.view_vec.norm();
    if (vn > 0.0) {
      const Eigen::Vector3d dir = s.view_vec / vn;
      d_pos += (d_dir - dir * dir.dot(d_dir)) / vn;
    }

    // conic -> cov2d -> (J, cov_cam) -> cov3d -> (rotation, scale)
    Eigen::Matrix2d g_conic;
    g_conic << pg.conic[0], 0.5 * pg.conic[1], 0.5 * pg.conic[1], pg.conic[2];
    const Eigen::Matrix2d g_cov2d = -s.conic * g_conic * s.conic;
    const Eigen::Matrix3d g_cov_cam = s.jacobian.transpose() * g_cov2d * s.jacobian;
    const Eigen::Matrix<double, 2, 3> g_jac = 2.0 * g_cov2d * s.jacobian * s.cov_cam;
    const Eigen::Matrix3d g_cov3d = s.world_to_cam.transpose() * g_cov_cam * s.world_to_cam;

    const Eigen::Matrix3d g_rot = 2.0 * g_cov3d * s.rot * s.var.asDiagonal();
    const Eigen::Matrix3d rt_g_r = s.rot.transpose() * g_cov3d * s.rot;
    for (int k = 0; k < 3; ++k) out.log_scales[3 * i + k] = 2.0 * s.var[k] * rt_g_r(k, k);

    const auto d_r = detail::rotation_derivatives(s.q_hat);
    Eigen::Vector4d g_qhat;
    for (int c = 0; c < 4; ++c) g_qhat[c] = (g_rot.array() * d_r[c].array()).sum();
    const Eigen::Vector4d g_q = (g_qhat - s.q_hat * s.q_hat.dot(g_qhat)) / s.q_norm;
    for (int c = 0; c < 4; ++c) out.rotations[4 * i + c] = g_q[c];

    // Camera-space position through the projected mean and the Jacobian.
    const double f = intr.focal;
    const double x = s.p_cam.x();
    const double y = s.p_cam.y();
    const double zd = s.depth;
    const double zd2 = zd * zd;
    const double zd3 = zd2 * zd;
    Eigen::Vector3d g_p;
    g_p.x() = pg.mean[0] * f / zd + g_jac(0, 2) * f / zd2;
    g_p.y() = -pg.mean[1] * f / zd - g_jac(1, 2) * f / zd2;
    g_p.z() = pg.mean[0] * f * x / zd2 - pg.mean[1] * f * y / zd2 + g_jac(0, 0) * f / zd2 -
              g_jac(1, 1) * f / zd2 + g_jac(0, 2) * 2.0 * f * x / zd3 - g_jac(1, 2) * 2.0 * f * y / zd3;
    d_pos += s.world_to_cam.transpose() * g_p;
    for (int k = 0; k < 3; ++k) out.positions[3 * i + k] = d_pos[k];
  }
  return out;
}

}  // namespace avatarforge::gs
