#pragma once

// Batched forward/backward for the NeRF field. Internal to the library.

#include <Eigen/Core>
#include <cmath>
#include <span>
#include <vector>

#include "avatarforge/nerf.hpp"

namespace avatarforge::nerf::detail {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
inline S softplus(S x) {
  return x > S(20) ? x : std::log1p(std::exp(x));
}

template <typename S>
inline S logistic(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

// Writes the encoding of each column of `v` (3 x B) into rows [row0, row0 + dim) of `out`.
// Uses the double-angle recurrence starting from sin/cos(pi v).
template <typename S>
void encode_columns(const Eigen::Matrix<double, 3, Eigen::Dynamic>& v, int freqs, bool include_input,
                    Mat<S>& out) {
  const Eigen::Index n = v.cols();
  for (Eigen::Index j = 0; j < n; ++j) {
    int row = 0;
    if (include_input) {
      for (int c = 0; c < 3; ++c) out(row++, j) = static_cast<S>(v(c, j));
    }
    for (int c = 0; c < 3; ++c) {
      double s = std::sin(M_PI * v(c, j));
      double co = std::cos(M_PI * v(c, j));
      for (int k = 0; k < freqs; ++k) {
        out(row + 6 * k + c, j) = static_cast<S>(s);
        out(row + 6 * k + 3 + c, j) = static_cast<S>(co);
        const double s2 = 2.0 * s * co;
        const double c2 = co * co - s * s;
        s = s2;
        co = c2;
      }
    }
  }
}

template <typename S>
struct ForwardCache {
  std::vector<Mat<S>> trunk;  // post-activation outputs of each trunk layer
  Mat<S> color_in;            // [trunk.back(); dir encoding]
  Mat<S> color_hidden;
  Mat<S> sigma_pre;           // 1 x B
  Mat<S> rgb;                 // 3 x B after logistic
  Mat<S> sigma;               // 1 x B after softplus
};

template <typename S>
class BatchField {
 public:
  // Weights are copied into Eigen-owned storage: vectorized reductions over a Map
  // peel differently with the buffer's alignment, which would make results
  // depend on where the allocator put the parameter array.
  BatchField(const NerfModel& model, std::span<const S> params) : model_(model), layers_(model.layers()) {
    for (const auto& l : layers_) {
      weights_.emplace_back(Eigen::Map<const Mat<S>>(params.data() + l.weight, l.out, l.in));
      biases_.emplace_back(Eigen::Map<const Vec<S>>(params.data() + l.bias, l.out));
    }
  }

  const Mat<S>& weight(std::size_t li) const { return weights_[li]; }
  const Vec<S>& bias(std::size_t li) const { return biases_[li]; }

  // pos_enc: P x B, dir_enc: D x B.
  void forward(const Mat<S>& pos_enc, const Mat<S>& dir_enc, ForwardCache<S>& cache) const {
    const std::size_t depth = model_.widths().size();
    const Eigen::Index b = pos_enc.cols();
    cache.trunk.resize(depth);
    const Mat<S>* input = &pos_enc;
    for (std::size_t l = 0; l < depth; ++l) {
      cache.trunk[l].noalias() = weight(l) * (*input);
      cache.trunk[l].colwise() += bias(l);
      cache.trunk[l] = cache.trunk[l].cwiseMax(S(0));
      input = &cache.trunk[l];
    }
    const std::size_t density = depth;
    const std::size_t hidden = depth + 1;
    const std::size_t out = depth + 2;
    cache.sigma_pre.noalias() = weight(density) * cache.trunk.back();
    cache.sigma_pre.array() += bias(density)(0);
    cache.sigma = cache.sigma_pre.unaryExpr([](S x) { return softplus(x); });

    const Eigen::Index h = cache.trunk.back().rows();
    cache.color_in.resize(h + dir_enc.rows(), b);
    cache.color_in.topRows(h) = cache.trunk.back();
    cache.color_in.bottomRows(dir_enc.rows()) = dir_enc;
    cache.color_hidden.noalias() = weight(hidden) * cache.color_in;
    cache.color_hidden.colwise() += bias(hidden);
    cache.color_hidden = cache.color_hidden.cwiseMax(S(0));
    cache.rgb.noalias() = weight(out) * cache.color_hidden;
    cache.rgb.colwise() += bias(out);
    cache.rgb = cache.rgb.unaryExpr([](S x) { return logistic(x); });
  }

  // Accumulates parameter gradients into `grad` (same layout as the parameters).
  void backward(const Mat<S>& pos_enc, const ForwardCache<S>& cache, const Mat<S>& d_sigma,
                const Mat<S>& d_rgb, std::span<S> grad) const {
    const std::size_t depth = model_.widths().size();
    const std::size_t density = depth;
    const std::size_t hidden = depth + 1;
    const std::size_t out = depth + 2;

    Mat<S> d_out = d_rgb.cwiseProduct(cache.rgb.cwiseProduct((S(1) - cache.rgb.array()).matrix()));
    accumulate(out, d_out, cache.color_hidden, grad);
    Mat<S> d_hidden = weight(out).transpose() * d_out;
    d_hidden = d_hidden.cwiseProduct(cache.color_hidden.unaryExpr([](S x) { return x > S(0) ? S(1) : S(0); }));
    accumulate(hidden, d_hidden, cache.color_in, grad);
    const Eigen::Index h = cache.trunk.back().rows();
    Mat<S> d_act = (weight(hidden).transpose() * d_hidden).topRows(h);

    Mat<S> d_sigma_pre = d_sigma.cwiseProduct(cache.sigma_pre.unaryExpr([](S x) { return logistic(x); }));
    accumulate(density, d_sigma_pre, cache.trunk.back(), grad);
    d_act.noalias() += weight(density).transpose() * d_sigma_pre;

    for (std::size_t l = depth; l-- > 0;) {
      Mat<S> d_pre = d_act.cwiseProduct(cache.trunk[l].unaryExpr([](S x) { return x > S(0) ? S(1) : S(0); }));
      const Mat<S>& input = l == 0 ? pos_enc : cache.trunk[l - 1];
      accumulate(l, d_pre, input, grad);
      if (l > 0) d_act.noalias() = weight(l).transpose() * d_pre;
    }
  }

 private:
  void accumulate(std::size_t li, const Mat<S>& d_pre, const Mat<S>& input, std::span<S> grad) const {
    const auto& l = layers_[li];
    Mat<S> gw;
    gw.noalias() = d_pre * input.transpose();
    const Vec<S> gb = d_pre.rowwise().sum();
    Eigen::Map<Mat<S>>(grad.data() + l.weight, l.out, l.in).array() += gw.array();
    Eigen::Map<Vec<S>>(grad.data() + l.bias, l.out).array() += gb.array();
  }

  const NerfModel& model_;
  std::vector<NerfModel::Layer> layers_;
  std::vector<Mat<S>> weights_;
  std::vector<Vec<S>> biases_;
};

}  // namespace avatarforge::nerf::detail
