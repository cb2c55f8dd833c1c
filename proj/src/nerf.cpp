#include "avatarforge/nerf.hpp"

#include <cmath>
#include <numbers>

#include "avatarforge/error.hpp"
#include "avatarforge/rng.hpp"
#include "nerf_mlp.hpp"

namespace avatarforge::nerf {

void EncodingConfig::validate() const {
  if (pos_freqs < 1) throw InvalidArgument("position encoding needs at least one frequency");
  if (dir_freqs < 0) throw InvalidArgument("direction frequency count must be non-negative");
}

std::vector<double> positional_encode(const Eigen::Vector3d& v, int freqs, bool include_input) {
  std::vector<double> out;
  out.reserve((include_input ? 3 : 0) + 6 * static_cast<std::size_t>(std::max(freqs, 0)));
  if (include_input) out.insert(out.end(), {v.x(), v.y(), v.z()});
  for (int k = 0; k < freqs; ++k) {
    const double scale = std::ldexp(std::numbers::pi, k);
    for (int c = 0; c < 3; ++c) out.push_back(std::sin(scale * v[c]));
    for (int c = 0; c < 3; ++c) out.push_back(std::cos(scale * v[c]));
  }
  return out;
}

NerfModel::NerfModel(EncodingConfig encoding, std::vector<int> widths)
    : encoding_(encoding), widths_(std::move(widths)) {
  encoding_.validate();
  if (widths_.empty()) throw InvalidArgument("the field needs at least one hidden layer");
  for (int w : widths_) {
    if (w < 1) throw InvalidArgument("layer widths must be positive");
  }
  params_.assign(parameter_count(encoding_, widths_), 0.0);
}

int NerfModel::color_width() const { return std::max(1, widths_.back() / 2); }

std::size_t NerfModel::parameter_count(const EncodingConfig& encoding, std::span<const int> widths) {
  std::size_t n = 0;
  int in = encoding.pos_dim();
  for (int w : widths) {
    n += static_cast<std::size_t>(w) * in + w;
    in = w;
  }
  const int color = std::max(1, widths.back() / 2);
  n += static_cast<std::size_t>(in) + 1;
  n += static_cast<std::size_t>(color) * (in + encoding.dir_dim()) + color;
  n += 3 * static_cast<std::size_t>(color) + 3;
  return n;
}

std::vector<NerfModel::Layer> NerfModel::layers() const {
  std::vector<Layer> out;
  std::size_t offset = 0;
  auto add = [&](int in, int o) {
    Layer l;
    l.in = in;
    l.out = o;
    l.weight = offset;
    offset += static_cast<std::size_t>(in) * o;
    l.bias = offset;
    offset += o;
    out.push_back(l);
  };
  int in = encoding_.pos_dim();
  for (int w : widths_) {
    add(in, w);
    in = w;
  }
  add(in, 1);
  add(in + encoding_.dir_dim(), color_width());
  add(color_width(), 3);
  return out;
}

void NerfModel::initialize(std::uint64_t seed, double density_bias) {
  Rng rng(seed);
  const auto ls = layers();
  for (std::size_t i = 0; i < ls.size(); ++i) {
    const auto& l = ls[i];
    const double bound = std::sqrt(6.0 / l.in);
    for (std::size_t k = 0; k < static_cast<std::size_t>(l.in) * l.out; ++k) {
      params_[l.weight + k] = rng.uniform(-bound, bound);
    }
    for (int k = 0; k < l.out; ++k) params_[l.bias + k] = 0.0;
  }
  params_[ls[widths_.size()].bias] = density_bias;
}

FieldSample field_eval(const NerfModel& model, const Eigen::Vector3d& x, const Eigen::Vector3d& d) {
  using detail::Mat;
  const auto& enc = model.encoding();
  Eigen::Matrix<double, 3, Eigen::Dynamic> px(3, 1);
  px.col(0) = x;
  Eigen::Matrix<double, 3, Eigen::Dynamic> pd(3, 1);
  pd.col(0) = d;
  Mat<double> pos(enc.pos_dim(), 1);
  Mat<double> dir(enc.dir_dim(), 1);
  detail::encode_columns<double>(px, enc.pos_freqs, enc.include_input, pos);
  detail::encode_columns<double>(pd, enc.dir_freqs, enc.include_input, dir);
  detail::BatchField<double> field(model, model.parameters());
  detail::ForwardCache<double> cache;
  field.forward(pos, dir, cache);
  return FieldSample{cache.rgb.col(0), cache.sigma(0, 0)};
}

void RenderConfig::validate() const {
  if (samples_per_ray < 2) throw InvalidArgument("samples_per_ray must be at least 2");
  if (!(t_near >= 0.0 && t_near < t_far)) throw InvalidArgument("need 0 <= t_near < t_far");
}

std::vector<double> sample_depths(const RenderConfig& cfg, std::uint64_t seed) {
  const int n = cfg.samples_per_ray;
  const double step = (cfg.t_far - cfg.t_near) / n;
  std::vector<double> t(n);
  if (cfg.stratified) {
    Rng rng(seed);
    for (int i = 0; i < n; ++i) t[i] = cfg.t_near + (i + rng.uniform()) * step;
  } else {
    for (int i = 0; i < n; ++i) t[i] = cfg.t_near + (i + 0.5) * step;
  }
  return t;
}

CompositeResult composite(std::span<const double> depths, double t_far, std::span<const double> sigmas,
                          std::span<const Rgb> colors, const Rgb& background) {
  const std::size_t n = depths.size();
  if (sigmas.size() != n || colors.size() != n) throw DimensionError("composite: sample count mismatch");
  CompositeResult r;
  r.weights.resize(n);
  double transmittance = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double delta = (i + 1 < n ? depths[i + 1] : t_far) - depths[i];
    const double alpha = -std::expm1(-sigmas[i] * delta);
    const double w = transmittance * alpha;
    r.weights[i] = w;
    for (int c = 0; c < 3; ++c) r.color[c] += w * colors[i][c];
    transmittance *= 1.0 - alpha;
  }
  r.final_transmittance = transmittance;
  for (int c = 0; c < 3; ++c) r.color[c] += transmittance * background[c];
  return r;
}

namespace {

// Evaluates the field at every sample of one ray (depths given) and composites.
Rgb render_with_depths(const NerfModel& model, const Ray& ray, std::span<const double> t, const Rgb& bg) {
  using detail::Mat;
  const auto& enc = model.encoding();
  const Eigen::Index n = static_cast<Eigen::Index>(t.size());
  Eigen::Matrix<double, 3, Eigen::Dynamic> pts(3, n);
  Eigen::Matrix<double, 3, Eigen::Dynamic> dirs(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    pts.col(i) = ray.origin + t[i] * ray.direction;
    dirs.col(i) = ray.direction;
  }
  Mat<double> pos(enc.pos_dim(), n);
  Mat<double> dir(enc.dir_dim(), n);
  detail::encode_columns<double>(pts, enc.pos_freqs, enc.include_input, pos);
  detail::encode_columns<double>(dirs, enc.dir_freqs, enc.include_input, dir);
  detail::BatchField<double> field(model, model.parameters());
  detail::ForwardCache<double> cache;
  field.forward(pos, dir, cache);
  std::vector<double> sig(n);
  std::vector<Rgb> col(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    sig[i] = cache.sigma(0, i);
    col[i] = {cache.rgb(0, i), cache.rgb(1, i), cache.rgb(2, i)};
  }
  return composite(t, ray.t_far, sig, col, bg).color;
}

}  // namespace

Rgb render_ray(const NerfModel& model, const Ray& ray, const RenderConfig& cfg) {
  RenderConfig c = cfg;
  c.t_near = ray.t_near;
  c.t_far = ray.t_far;
  c.validate();
  const auto t = sample_depths(c, cfg.rng_seed);
  return render_with_depths(model, ray, t, cfg.background);
}

ImageRGB render_view(const NerfModel& model, const CameraIntrinsics& intr, const Pose& pose,
                     const RenderConfig& cfg) {
  cfg.validate();
  intr.validate();
  ImageRGB img(intr.width, intr.height);
#pragma omp parallel for schedule(dynamic, 1)
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      RenderConfig c = cfg;
      c.rng_seed = mix_seed(cfg.rng_seed, static_cast<std::uint64_t>(y) * intr.width + x);
      const Ray ray = ray_for_pixel(intr, pose, x, y, cfg.t_near, cfg.t_far);
      img.set_pixel(x, y, render_ray(model, ray, c));
    }
  }
  img.clamp();
  return img;
}

}  // namespace avatarforge::nerf
