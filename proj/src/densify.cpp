#include <algorithm>
#include <cmath>

#include "avatarforge/error.hpp"
#include "avatarforge/gsplat.hpp"
#include "avatarforge/rng.hpp"

namespace avatarforge::gs {

void DensifyConfig::validate() const {
  if (!(grad_threshold > 0 && split_scale_threshold > 0 && opacity_prune > 0 && split_factor > 1)) {
    throw InvalidArgument("densify thresholds must be positive and split_factor > 1");
  }
  if (interval < 1 || max_gaussians < 1) throw InvalidArgument("densify interval and cap must be positive");
}

void DensifyStats::reset(std::size_t n) {
  grad_accum.assign(n, 0.0);
  world_grad.assign(3 * n, 0.0);
  counts.assign(n, 0);
  max_radii.assign(n, 0.0);
}

void DensifyStats::accumulate(const RasterAux& aux, const CloudGradients& grads, int image_width) {
  const std::size_t n = aux.visible.size();
  if (grad_accum.size() != n) throw DimensionError("densify stats do not match the cloud");
  for (std::size_t i = 0; i < n; ++i) {
    if (!aux.visible[i]) continue;
    grad_accum[i] += grads.mean2d_norm[i] * 0.5 * image_width;
    for (int k = 0; k < 3; ++k) world_grad[3 * i + k] += grads.positions[3 * i + k];
    counts[i] += 1;
    max_radii[i] = std::max(max_radii[i], aux.radii[i]);
  }
}

GaussianCloud densify_and_prune(const GaussianCloud& cloud, const DensifyStats& stats, const DensifyConfig& cfg,
                                std::uint64_t seed, DensifyOutcome* outcome) {
  cfg.validate();
  cloud.validate();
  const std::size_t n = cloud.size();
  if (stats.grad_accum.size() != n || stats.counts.size() != n || stats.max_radii.size() != n ||
      stats.world_grad.size() != 3 * n) {
    throw DimensionError("densify stats do not match the cloud");
  }

  Rng rng(seed);
  DensifyOutcome result;
  std::vector<Gaussian3D> created;
  std::vector<std::uint8_t> removed(n, 0);
  std::size_t count = n;
  const double shrink = std::log(cfg.split_factor);

  for (std::size_t i = 0; i < n; ++i) {
    if (stats.counts[i] == 0) continue;
    const double mean_grad = stats.grad_accum[i] / stats.counts[i];
    if (!(mean_grad >= cfg.grad_threshold)) continue;
    if (count + 1 > cfg.max_gaussians) break;

    const Gaussian3D g = cloud.get(i);
    const double max_scale = std::exp(static_cast<double>(g.log_scale.maxCoeff()));
    if (max_scale >= cfg.split_scale_threshold) {
      const Eigen::Matrix3d rot = rotation_from_quaternion(g.rotation.cast<double>());
      const Eigen::Vector3d scale = g.log_scale.cast<double>().array().exp();
      for (int child = 0; child < 2; ++child) {
        Gaussian3D c = g;
        const Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
        const Eigen::Vector3d offset = rot * scale.cwiseProduct(z);
        c.position = (g.position.cast<double>() + offset).cast<float>();
        c.log_scale = (g.log_scale.cast<double>().array() - shrink).matrix().cast<float>();
        created.push_back(c);
      }
      removed[i] = 1;
      ++result.split;
    } else {
      Gaussian3D c = g;
      const Eigen::Vector3d wg(stats.world_grad[3 * i], stats.world_grad[3 * i + 1], stats.world_grad[3 * i + 2]);
      const double norm = wg.norm();
      if (norm > 0.0 && std::isfinite(norm)) {
        c.position = (g.position.cast<double>() - 0.5 * max_scale * wg / norm).cast<float>();
      }
      created.push_back(c);
      ++result.cloned;
    }
    ++count;
  }

  auto prunable = [&](const Gaussian3D& g, double radius) {
    if (logistic(g.opacity_logit) < cfg.opacity_prune) return true;
    if (cfg.max_screen_radius > 0.0 && radius > cfg.max_screen_radius) return true;
    if (cfg.max_world_scale > 0.0 && std::exp(static_cast<double>(g.log_scale.maxCoeff())) > cfg.max_world_scale) {
      return true;
    }
    return false;
  };

  GaussianCloud out;
  out.sh_degree = cloud.sh_degree;
  for (std::size_t i = 0; i < n; ++i) {
    if (removed[i]) continue;
    const Gaussian3D g = cloud.get(i);
    if (prunable(g, stats.max_radii[i])) {
      ++result.pruned;
      continue;
    }
    out.push_back(g);
    result.source_rows.push_back(i);
  }
  for (const auto& g : created) {
    if (prunable(g, 0.0)) {
      ++result.pruned;
      continue;
    }
    out.push_back(g);
    result.source_rows.push_back(DensifyOutcome::kNewRow);
  }
  for (float v : out.positions) {
    if (!std::isfinite(v)) throw NumericalError("densify produced a non-finite position");
  }
  if (outcome) *outcome = std::move(result);
  return out;
}

}  // namespace avatarforge::gs
