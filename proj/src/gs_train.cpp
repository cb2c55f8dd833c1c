#include <algorithm>
#include <cmath>
#include <limits>

#include "avatarforge/adam.hpp"
#include "avatarforge/error.hpp"
#include "avatarforge/gsplat.hpp"
#include "avatarforge/rng.hpp"

namespace avatarforge::gs {

double photometric_loss(const ImageRGB& rendered, const ImageRGB& reference, double lambda_dssim,
                        std::span<double> grad) {
  const auto r = rendered.data();
  const auto t = reference.data();
  if (r.size() != t.size() || rendered.width() != reference.width()) {
    throw DimensionError("photometric_loss: image size mismatch");
  }
  if (grad.size() != r.size()) throw DimensionError("photometric_loss: gradient buffer size mismatch");
  const double inv_n = 1.0 / static_cast<double>(r.size());
  double l1 = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double d = r[i] - t[i];
    l1 += std::abs(d);
    grad[i] = (1.0 - lambda_dssim) * inv_n * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
  }
  l1 *= inv_n;
  if (lambda_dssim == 0.0) return l1;
  std::vector<double> g_ssim(r.size());
  const double s = ssim_with_gradient(rendered, reference, g_ssim);
  for (std::size_t i = 0; i < r.size(); ++i) grad[i] -= lambda_dssim * g_ssim[i];
  return (1.0 - lambda_dssim) * l1 + lambda_dssim * (1.0 - s);
}

double scene_extent(const ViewDataset& dataset) {
  if (dataset.empty()) throw InvalidArgument("scene_extent: dataset is empty");
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  for (const auto& v : dataset.views) center += v.pose.translation();
  center /= static_cast<double>(dataset.size());
  double radius = 0.0;
  for (const auto& v : dataset.views) radius = std::max(radius, (v.pose.translation() - center).norm());
  if (radius <= 0.0) radius = 1.0;
  return 1.1 * radius;
}

namespace {

void fill_neighbour_scales(GaussianCloud& cloud) {
  const std::size_t n = cloud.size();
  const auto& p = cloud.positions;
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, 3> best{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                               std::numeric_limits<double>::infinity()};
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double d2 = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double d = static_cast<double>(p[3 * i + k]) - p[3 * j + k];
        d2 += d * d;
      }
      if (d2 < best[2]) {
        best[2] = d2;
        std::sort(best.begin(), best.end());
      }
    }
    double mean = 0.0;
    int used = 0;
    for (double b : best) {
      if (std::isfinite(b)) {
        mean += b;
        ++used;
      }
    }
    const double dist = used > 0 ? std::sqrt(std::max(mean / used, 1e-14)) : 0.1;
    for (int k = 0; k < 3; ++k) cloud.log_scales[3 * i + k] = static_cast<float>(std::log(dist));
  }
}

}  // namespace

GaussianCloud initialize_from_points(std::span<const Eigen::Vector3f> points, std::span<const Rgb> colors,
                                     double initial_opacity) {
  if (points.empty()) throw InvalidArgument("cannot initialize from an empty point set");
  if (!colors.empty() && colors.size() != points.size()) throw DimensionError("one color per point required");
  GaussianCloud cloud;
  for (std::size_t i = 0; i < points.size(); ++i) {
    Gaussian3D g;
    g.position = points[i];
    g.opacity_logit = static_cast<float>(logit(initial_opacity));
    if (!colors.empty()) {
      for (int c = 0; c < 3; ++c) g.sh[c] = static_cast<float>((colors[i][c] - 0.5) / kShC0);
    }
    cloud.push_back(g);
  }
  fill_neighbour_scales(cloud);
  return cloud;
}

GaussianCloud initialize_cloud(const ViewDataset& dataset, const InitConfig& cfg) {
  if (dataset.empty()) throw InvalidArgument("initialize_cloud: dataset is empty");
  if (cfg.count == 0) throw InvalidArgument("initialize_cloud: count must be positive");
  const auto& intr = dataset.intrinsics;

  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (const auto& v : dataset.views) {
    for (int corner = 0; corner < 4; ++corner) {
      const int px = (corner & 1) ? intr.width - 1 : 0;
      const int py = (corner & 2) ? intr.height - 1 : 0;
      const Ray r = ray_for_pixel(intr, v.pose, px, py, cfg.t_near, cfg.t_far);
      for (double t : {cfg.t_near, cfg.t_far}) {
        const Eigen::Vector3d p = r.origin + t * r.direction;
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
    }
  }

  auto seen_by_all = [&](const Eigen::Vector3d& p) {
    for (const auto& v : dataset.views) {
      const Eigen::Vector3d c = v.pose.to_camera(p);
      const double zd = -c.z();
      if (zd <= 0.0) return false;
      const double dist = (p - v.pose.translation()).norm();
      if (dist < cfg.t_near || dist > cfg.t_far) return false;
      const double u = intr.cx() + intr.focal * c.x() / zd;
      const double w = intr.cy() - intr.focal * c.y() / zd;
      if (u < 0 || u > intr.width || w < 0 || w > intr.height) return false;
    }
    return true;
  };

  Rng rng(cfg.seed);
  Eigen::Vector3d box_lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d box_hi = -box_lo;
  int accepted = 0;
  for (int s = 0; s < 20000; ++s) {
    const Eigen::Vector3d p(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()), rng.uniform(lo.z(), hi.z()));
    if (!seen_by_all(p)) continue;
    box_lo = box_lo.cwiseMin(p);
    box_hi = box_hi.cwiseMax(p);
    ++accepted;
  }
  if (accepted < 2) {
    box_lo = lo;
    box_hi = hi;
  }

  std::vector<Eigen::Vector3f> points(cfg.count);
  for (auto& p : points) {
    p = Eigen::Vector3f(static_cast<float>(rng.uniform(box_lo.x(), box_hi.x())),
                        static_cast<float>(rng.uniform(box_lo.y(), box_hi.y())),
                        static_cast<float>(rng.uniform(box_lo.z(), box_hi.z())));
  }
  return initialize_from_points(points, {}, cfg.initial_opacity);
}

namespace {

// Adam states for every parameter group; the SH group is split into the DC
// band and the remaining bands so they can use different learning rates.
struct Optimizers {
  Adam positions, rotations, log_scales, opacity, sh_dc, sh_rest;

  Optimizers(std::size_t n, const GsTrainConfig& cfg, double extent)
      : positions(3 * n, {cfg.position_lr_init * extent}),
        rotations(4 * n, {cfg.rotation_lr}),
        log_scales(3 * n, {cfg.scale_lr}),
        opacity(n, {cfg.opacity_lr}),
        sh_dc(3 * n, {cfg.sh_dc_lr}),
        sh_rest((kShFloats - 3) * n, {cfg.sh_rest_lr}) {}

  void reshape(std::span<const std::size_t> rows) {
    std::vector<std::size_t> mapped(rows.begin(), rows.end());
    for (auto& r : mapped) {
      if (r == DensifyOutcome::kNewRow) r = Adam::kFreshRow;
    }
    positions.gather_rows(mapped, 3);
    rotations.gather_rows(mapped, 4);
    log_scales.gather_rows(mapped, 3);
    opacity.gather_rows(mapped, 1);
    sh_dc.gather_rows(mapped, 3);
    sh_rest.gather_rows(mapped, kShFloats - 3);
  }
};

void step_sh(Adam& dc, Adam& rest, std::vector<float>& sh, const std::vector<double>& grad) {
  const std::size_t n = sh.size() / kShFloats;
  std::vector<float> p_dc(3 * n), p_rest((kShFloats - 3) * n);
  std::vector<double> g_dc(3 * n), g_rest((kShFloats - 3) * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < kShFloats; ++k) {
      const std::size_t src = i * kShFloats + k;
      if (k < 3) {
        p_dc[3 * i + k] = sh[src];
        g_dc[3 * i + k] = grad[src];
      } else {
        p_rest[(kShFloats - 3) * i + k - 3] = sh[src];
        g_rest[(kShFloats - 3) * i + k - 3] = grad[src];
      }
    }
  }
  dc.step(std::span<float>(p_dc), std::span<const double>(g_dc));
  rest.step(std::span<float>(p_rest), std::span<const double>(g_rest));
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < kShFloats; ++k) {
      sh[i * kShFloats + k] = k < 3 ? p_dc[3 * i + k] : p_rest[(kShFloats - 3) * i + k - 3];
    }
  }
}

}  // namespace

GsTrainResult train_gs(const ViewDataset& dataset, const GaussianCloud& init, const GsTrainConfig& cfg) {
  if (dataset.empty()) throw InvalidArgument("train_gs: dataset is empty");
  dataset.validate();
  init.validate();
  if (init.empty()) throw InvalidArgument("train_gs: initial cloud is empty");
  if (cfg.iterations < 0) throw InvalidArgument("train_gs: negative iteration count");
  cfg.densify.validate();

  GsTrainResult result{init, {}, 0};
  GaussianCloud& cloud = result.cloud;
  cloud.normalize_rotations();
  const double extent = scene_extent(dataset);
  Optimizers opt(cloud.size(), cfg, extent);
  DensifyStats stats;
  stats.reset(cloud.size());

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::size_t cursor = order.size();
  const int densify_stop = static_cast<int>(cfg.densify_stop_fraction * cfg.iterations);
  const auto& intr = dataset.intrinsics;
  std::vector<double> grad_image(intr.width * static_cast<std::size_t>(intr.height) * 3);
  result.loss_trace.reserve(cfg.iterations);

  for (int it = 0; it < cfg.iterations; ++it) {
    if (cfg.sh_degree_interval > 0 && it > 0 && it % cfg.sh_degree_interval == 0 &&
        cloud.sh_degree < cfg.max_sh_degree) {
      ++cloud.sh_degree;
    }
    if (cursor >= order.size()) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      cursor = 0;
    }
    const auto& view = dataset.views[order[cursor++]];

    const auto fwd = rasterize(cloud, intr, view.pose, cfg.raster);
    const double loss = photometric_loss(fwd.image, view.image, cfg.lambda_dssim, grad_image);
    if (!std::isfinite(loss)) {
      throw NumericalError("train_gs: non-finite loss at iteration " + std::to_string(it));
    }
    const auto grads = rasterize_backward(cloud, intr, view.pose, fwd, grad_image, cfg.raster);
    if (it < densify_stop) stats.accumulate(fwd.aux, grads, intr.width);

    if (cfg.iterations > 1) {
      const double ratio = static_cast<double>(it) / (cfg.iterations - 1);
      opt.positions.config().lr =
          extent * std::exp((1.0 - ratio) * std::log(cfg.position_lr_init) + ratio * std::log(cfg.position_lr_final));
    }
    opt.positions.step(std::span<float>(cloud.positions), std::span<const double>(grads.positions));
    opt.rotations.step(std::span<float>(cloud.rotations), std::span<const double>(grads.rotations));
    opt.log_scales.step(std::span<float>(cloud.log_scales), std::span<const double>(grads.log_scales));
    opt.opacity.step(std::span<float>(cloud.opacity_logits), std::span<const double>(grads.opacity_logits));
    step_sh(opt.sh_dc, opt.sh_rest, cloud.sh, grads.sh);
    cloud.normalize_rotations();
    result.loss_trace.push_back(loss);

    if (it >= cfg.densify_from && it < densify_stop && (it + 1) % cfg.densify.interval == 0) {
      DensifyOutcome outcome;
      cloud = densify_and_prune(cloud, stats, cfg.densify, mix_seed(cfg.seed, static_cast<std::uint64_t>(it)),
                                &outcome);
      if (cloud.empty()) {
        throw NumericalError("train_gs: every Gaussian was pruned at iteration " + std::to_string(it));
      }
      opt.reshape(outcome.source_rows);
      stats.reset(cloud.size());
      ++result.densify_passes;
    }
    if (cfg.on_iteration) cfg.on_iteration(it, loss, cloud.size());
  }
  return result;
}

}  // namespace avatarforge::gs
