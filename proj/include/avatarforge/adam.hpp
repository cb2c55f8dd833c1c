#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "avatarforge/error.hpp"

namespace avatarforge {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over one flat parameter group. Moments are kept in double
// regardless of the parameter type.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  std::size_t size() const { return m_.size(); }
  long steps() const { return t_; }
  AdamConfig& config() { return cfg_; }
  const AdamConfig& config() const { return cfg_; }

  template <typename T>
  void step(std::span<T> params, std::span<const double> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
      throw DimensionError("adam: parameter/gradient size mismatch");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double step_size = cfg_.lr / bc1;
    const double inv_sqrt_bc2 = 1.0 / std::sqrt(bc2);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const double g = grads[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      const double denom = std::sqrt(v_[i]) * inv_sqrt_bc2 + cfg_.eps;
      params[i] = static_cast<T>(static_cast<double>(params[i]) - step_size * m_[i] / denom);
    }
  }

  // Keeps the moments of the listed rows (each `stride` values wide), in order.
  // Used when the parameter set is reshaped (densification).
  void gather_rows(std::span<const std::size_t> rows, std::size_t stride) {
    std::vector<double> m;
    std::vector<double> v;
    m.reserve(rows.size() * stride);
    v.reserve(rows.size() * stride);
    for (std::size_t r : rows) {
      for (std::size_t k = 0; k < stride; ++k) {
        m.push_back(r == kFreshRow ? 0.0 : m_[r * stride + k]);
        v.push_back(r == kFreshRow ? 0.0 : v_[r * stride + k]);
      }
    }
    m_ = std::move(m);
    v_ = std::move(v);
  }

  static constexpr std::size_t kFreshRow = static_cast<std::size_t>(-1);

 private:
  AdamConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

}  // namespace avatarforge
