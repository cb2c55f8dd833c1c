#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "avatarforge/error.hpp"
#include "avatarforge/adam.hpp"
#include "avatarforge/nerf.hpp"
#include "avatarforge/rng.hpp"
#include "nerf_mlp.hpp"

namespace avatarforge::nerf {
namespace {

using detail::Mat;

// Sum over rays of squared color error, scaled by `loss_scale`; accumulates the
// scaled gradient into `grad`. Returns the scaled loss.
template <typename S>
double chunk_loss_grad(const NerfModel& model, std::span<const S> params, std::span<const RayTarget> rays,
                       std::span<const std::vector<double>> depths, const Rgb& bg, double loss_scale,
                       std::span<S> grad) {
  const auto& enc = model.encoding();
  Eigen::Index total = 0;
  for (const auto& d : depths) total += static_cast<Eigen::Index>(d.size());

  Eigen::Matrix<double, 3, Eigen::Dynamic> pts(3, total);
  Eigen::Matrix<double, 3, Eigen::Dynamic> dirs(3, total);
  Eigen::Index col = 0;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    for (double t : depths[r]) {
      pts.col(col) = rays[r].ray.origin + t * rays[r].ray.direction;
      dirs.col(col) = rays[r].ray.direction;
      ++col;
    }
  }
  Mat<S> pos(enc.pos_dim(), total);
  Mat<S> dir(enc.dir_dim(), total);
  detail::encode_columns<S>(pts, enc.pos_freqs, enc.include_input, pos);
  detail::encode_columns<S>(dirs, enc.dir_freqs, enc.include_input, dir);

  detail::BatchField<S> field(model, params);
  detail::ForwardCache<S> cache;
  field.forward(pos, dir, cache);

  Mat<S> d_sigma(1, total);
  Mat<S> d_rgb(3, total);
  double loss = 0.0;
  col = 0;
  std::vector<double> w;
  std::vector<double> trans_after;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const auto& t = depths[r];
    const std::size_t n = t.size();
    const double t_far = rays[r].ray.t_far;
    w.assign(n, 0.0);
    trans_after.assign(n, 0.0);
    Rgb color{};
    double trans = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double delta = (i + 1 < n ? t[i + 1] : t_far) - t[i];
      const double alpha = -std::expm1(-static_cast<double>(cache.sigma(0, col + i)) * delta);
      w[i] = trans * alpha;
      for (int c = 0; c < 3; ++c) color[c] += w[i] * static_cast<double>(cache.rgb(c, col + i));
      trans *= 1.0 - alpha;
      trans_after[i] = trans;
    }
    for (int c = 0; c < 3; ++c) color[c] += trans * bg[c];

    Rgb g{};
    for (int c = 0; c < 3; ++c) {
      const double e = color[c] - rays[r].target[c];
      loss += loss_scale * e * e;
      g[c] = 2.0 * loss_scale * e;
    }
    // rest = sum_{j>i} w_j (g . c_j) + T_final (g . bg), built back to front.
    double rest = trans * (g[0] * bg[0] + g[1] * bg[1] + g[2] * bg[2]);
    for (std::size_t i = n; i-- > 0;) {
      const double delta = (i + 1 < n ? t[i + 1] : t_far) - t[i];
      double gc = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double ci = static_cast<double>(cache.rgb(c, col + i));
        gc += g[c] * ci;
        d_rgb(c, col + i) = static_cast<S>(w[i] * g[c]);
      }
      d_sigma(0, col + i) = static_cast<S>(delta * (trans_after[i] * gc - rest));
      rest += w[i] * gc;
    }
    col += static_cast<Eigen::Index>(n);
  }
  field.backward(pos, cache, d_sigma, d_rgb, grad);
  return loss;
}

}  // namespace

double batch_loss_and_gradient(const NerfModel& model, std::span<const RayTarget> rays,
                               std::span<const std::vector<double>> depths, const Rgb& background,
                               std::span<double> grad) {
  if (rays.size() != depths.size()) throw DimensionError("one depth list per ray is required");
  if (grad.size() != model.parameters().size()) throw DimensionError("gradient buffer size mismatch");
  if (rays.empty()) throw InvalidArgument("empty ray batch");
  std::fill(grad.begin(), grad.end(), 0.0);
  const double scale = 1.0 / (3.0 * static_cast<double>(rays.size()));
  return chunk_loss_grad<double>(model, model.parameters(), rays, depths, background, scale, grad);
}

TrainResult train_nerf(const ViewDataset& dataset, const NerfModel& init, const TrainConfig& cfg) {
  if (dataset.empty()) throw InvalidArgument("train_nerf: dataset is empty");
  dataset.validate();
  if (cfg.batch_rays < 1 || cfg.rays_per_chunk < 1) throw InvalidArgument("batch sizes must be positive");
  RenderConfig sampling;
  sampling.samples_per_ray = cfg.samples_per_ray;
  sampling.t_near = cfg.t_near;
  sampling.t_far = cfg.t_far;
  sampling.stratified = cfg.stratified;
  sampling.validate();

  TrainResult result{init, {}};
  NerfModel& model = result.model;
  const std::size_t n_params = model.parameters().size();
  Adam adam(n_params, AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps});

  const auto& intr = dataset.intrinsics;
  const std::size_t pixels_per_view = static_cast<std::size_t>(intr.width) * intr.height;
  const int chunks = (cfg.batch_rays + cfg.rays_per_chunk - 1) / cfg.rays_per_chunk;
  std::vector<std::vector<float>> chunk_grads(chunks, std::vector<float>(n_params));
  std::vector<double> chunk_loss(chunks);
  std::vector<float> params_f(n_params);
  std::vector<double> grad(n_params);
  const double scale = 1.0 / (3.0 * cfg.batch_rays);

  Rng rng(cfg.seed);
  std::vector<RayTarget> batch(cfg.batch_rays);
  std::vector<std::vector<double>> depths(cfg.batch_rays);
  result.loss_trace.reserve(cfg.iterations);

  for (int it = 0; it < cfg.iterations; ++it) {
    for (int r = 0; r < cfg.batch_rays; ++r) {
      const std::size_t view = rng.below(dataset.size());
      const std::size_t pix = rng.below(pixels_per_view);
      const int x = static_cast<int>(pix % intr.width);
      const int y = static_cast<int>(pix / intr.width);
      const auto& v = dataset.views[view];
      batch[r].ray = ray_for_pixel(intr, v.pose, x, y, cfg.t_near, cfg.t_far);
      batch[r].target = v.image.pixel(x, y);
      depths[r] = sample_depths(sampling, rng.next_u64());
    }
    auto p = model.parameters();
    for (std::size_t i = 0; i < n_params; ++i) params_f[i] = static_cast<float>(p[i]);

#pragma omp parallel for schedule(static, 1)
    for (int c = 0; c < chunks; ++c) {
      const int begin = c * cfg.rays_per_chunk;
      const int count = std::min(cfg.rays_per_chunk, cfg.batch_rays - begin);
      std::fill(chunk_grads[c].begin(), chunk_grads[c].end(), 0.0f);
      chunk_loss[c] = chunk_loss_grad<float>(
          model, std::span<const float>(params_f),
          std::span<const RayTarget>(batch).subspan(begin, count),
          std::span<const std::vector<double>>(depths).subspan(begin, count), cfg.background, scale,
          std::span<float>(chunk_grads[c]));
    }

    double loss = 0.0;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int c = 0; c < chunks; ++c) {
      loss += chunk_loss[c];
      for (std::size_t i = 0; i < n_params; ++i) grad[i] += chunk_grads[c][i];
    }
    if (!std::isfinite(loss)) {
      throw NumericalError("train_nerf: non-finite loss at iteration " + std::to_string(it));
    }
    for (double g : grad) {
      if (!std::isfinite(g)) {
        throw NumericalError("train_nerf: non-finite gradient at iteration " + std::to_string(it));
      }
    }
    if (cfg.lr_final_ratio != 1.0 && cfg.iterations > 1) {
      adam.config().lr = cfg.lr * std::pow(cfg.lr_final_ratio, static_cast<double>(it) / (cfg.iterations - 1));
    }
    adam.step(p, std::span<const double>(grad));
    result.loss_trace.push_back(loss);
    if (cfg.on_iteration) cfg.on_iteration(it, loss);
  }
  return result;
}

using json = nlohmann::json;

void save_checkpoint(const NerfModel& model, const std::filesystem::path& path) {
  json j;
  j["format"] = "avatarforge-nerf";
  j["version"] = 1;
  j["encoding"] = {{"pos_freqs", model.encoding().pos_freqs},
                   {"dir_freqs", model.encoding().dir_freqs},
                   {"include_input", model.encoding().include_input}};
  j["widths"] = model.widths();
  j["parameters"] = std::vector<double>(model.parameters().begin(), model.parameters().end());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

NerfModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  try {
    const json j = json::parse(in);
    if (j.at("format") != "avatarforge-nerf") throw FormatError("not a NeRF checkpoint");
    EncodingConfig enc;
    enc.pos_freqs = j.at("encoding").at("pos_freqs").get<int>();
    enc.dir_freqs = j.at("encoding").at("dir_freqs").get<int>();
    enc.include_input = j.at("encoding").at("include_input").get<bool>();
    NerfModel model(enc, j.at("widths").get<std::vector<int>>());
    const auto params = j.at("parameters").get<std::vector<double>>();
    if (params.size() != model.parameters().size()) {
      throw FormatError("checkpoint parameter count does not match its architecture");
    }
    std::copy(params.begin(), params.end(), model.parameters().begin());
    return model;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace avatarforge::nerf
