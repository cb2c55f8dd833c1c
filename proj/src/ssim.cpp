#include <cmath>
#include <vector>

#include "avatarforge/error.hpp"
#include "avatarforge/imaging.hpp"

namespace avatarforge {
namespace {

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(size);
  const double c = 0.5 * (size - 1);
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - c;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Single-channel plane extracted from an interleaved image.
struct Plane {
  int w = 0;
  int h = 0;
  std::vector<double> v;
  double& at(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
  double at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

Plane channel_plane(const ImageRGB& img, int c) {
  Plane p{img.width(), img.height(), std::vector<double>(img.pixel_count())};
  auto d = img.data();
  for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = d[3 * i + c];
  return p;
}

// Separable "valid" correlation: output is (w-k+1) x (h-k+1).
Plane filter_valid(const Plane& in, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  Plane tmp{in.w - n + 1, in.h, std::vector<double>(static_cast<std::size_t>(in.w - n + 1) * in.h)};
  for (int y = 0; y < in.h; ++y) {
    for (int x = 0; x < tmp.w; ++x) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += k[j] * in.at(x + j, y);
      tmp.at(x, y) = s;
    }
  }
  Plane out{tmp.w, in.h - n + 1, std::vector<double>(static_cast<std::size_t>(tmp.w) * (in.h - n + 1))};
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += k[j] * tmp.at(x, y + j);
      out.at(x, y) = s;
    }
  }
  return out;
}

// Adjoint of filter_valid: scatters a (w-k+1) x (h-k+1) gradient back to w x h.
Plane filter_valid_adjoint(const Plane& g, const std::vector<double>& k, int w, int h) {
  const int n = static_cast<int>(k.size());
  Plane tmp{g.w, h, std::vector<double>(static_cast<std::size_t>(g.w) * h, 0.0)};
  for (int y = 0; y < g.h; ++y) {
    for (int x = 0; x < g.w; ++x) {
      const double v = g.at(x, y);
      for (int j = 0; j < n; ++j) tmp.at(x, y + j) += k[j] * v;
    }
  }
  Plane out{w, h, std::vector<double>(static_cast<std::size_t>(w) * h, 0.0)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < g.w; ++x) {
      const double v = tmp.at(x, y);
      for (int j = 0; j < n; ++j) out.at(x + j, y) += k[j] * v;
    }
  }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane p{a.w, a.h, std::vector<double>(a.v.size())};
  for (std::size_t i = 0; i < a.v.size(); ++i) p.v[i] = a.v[i] * b.v[i];
  return p;
}

void check_inputs(const ImageRGB& a, const ImageRGB& b, const SsimOptions& opts) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw DimensionError("ssim: image size mismatch");
  }
  if (std::min(a.width(), a.height()) < opts.window) {
    throw DimensionError("ssim: image smaller than the " + std::to_string(opts.window) + "px window");
  }
}

double ssim_impl(const ImageRGB& a, const ImageRGB& b, std::span<double> grad_a,
                 const SsimOptions& opts) {
  check_inputs(a, b, opts);
  const bool want_grad = !grad_a.empty();
  if (want_grad && grad_a.size() != a.data().size()) {
    throw DimensionError("ssim: gradient buffer has the wrong size");
  }
  const auto k = gaussian_kernel(opts.window, opts.sigma);
  const double c1 = (opts.k1 * opts.dynamic_range) * (opts.k1 * opts.dynamic_range);
  const double c2 = (opts.k2 * opts.dynamic_range) * (opts.k2 * opts.dynamic_range);

  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    const Plane pa = channel_plane(a, c);
    const Plane pb = channel_plane(b, c);
    const Plane mu_a = filter_valid(pa, k);
    const Plane mu_b = filter_valid(pb, k);
    const Plane e_aa = filter_valid(product(pa, pa), k);
    const Plane e_bb = filter_valid(product(pb, pb), k);
    const Plane e_ab = filter_valid(product(pa, pb), k);

    const std::size_t n = mu_a.v.size();
    const double inv_count = 1.0 / (3.0 * static_cast<double>(n));
    Plane g_mu{mu_a.w, mu_a.h, want_grad ? std::vector<double>(n) : std::vector<double>{}};
    Plane g_aa = g_mu;
    Plane g_ab = g_mu;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double ma = mu_a.v[i];
      const double mb = mu_b.v[i];
      const double var_a = e_aa.v[i] - ma * ma;
      const double var_b = e_bb.v[i] - mb * mb;
      const double cov = e_ab.v[i] - ma * mb;
      const double a1 = 2.0 * ma * mb + c1;
      const double a2 = 2.0 * cov + c2;
      const double b1 = ma * ma + mb * mb + c1;
      const double b2 = var_a + var_b + c2;
      const double s = (a1 * a2) / (b1 * b2);
      sum += s;
      if (want_grad) {
        g_mu.v[i] = inv_count * s * (2.0 * mb / a1 - 2.0 * mb / a2 - 2.0 * ma / b1 + 2.0 * ma / b2);
        g_aa.v[i] = inv_count * (-s / b2);
        g_ab.v[i] = inv_count * (2.0 * s / a2);
      }
    }
    total += sum / static_cast<double>(n);

    if (want_grad) {
      const Plane d_mu = filter_valid_adjoint(g_mu, k, pa.w, pa.h);
      const Plane d_aa = filter_valid_adjoint(g_aa, k, pa.w, pa.h);
      const Plane d_ab = filter_valid_adjoint(g_ab, k, pa.w, pa.h);
      for (std::size_t i = 0; i < pa.v.size(); ++i) {
        grad_a[3 * i + c] = d_mu.v[i] + 2.0 * pa.v[i] * d_aa.v[i] + pb.v[i] * d_ab.v[i];
      }
    }
  }
  return total / 3.0;
}

}  // namespace

double ssim(const ImageRGB& a, const ImageRGB& b, const SsimOptions& opts) {
  return ssim_impl(a, b, {}, opts);
}

double ssim_with_gradient(const ImageRGB& a, const ImageRGB& b, std::span<double> grad_a,
                          const SsimOptions& opts) {
  if (grad_a.empty()) throw DimensionError("ssim: gradient buffer is empty");
  return ssim_impl(a, b, grad_a, opts);
}

}  // namespace avatarforge
