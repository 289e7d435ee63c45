#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "ibm/mask_types.hpp"
#include "ibm/rng.hpp"
#include "ibm/tensor.hpp"

namespace ibm {

enum class Activation { relu, identity };

/// Inference-time treatment of ε in the recreated representation.
enum class EpsMode { zero, sample };

inline constexpr double kLogSigmaMin = -6.0;
inline constexpr double kLogSigmaMax = 3.0;
inline constexpr double kInitMuMean = 1.0;
inline constexpr double kInitMuStd = 0.1;
inline constexpr double kInitSigma = 0.1;

/// A fully connected layer without bias whose every weight carries its own
/// variational pair (mu, log sigma). The effective weight in training is
/// (mu + eps * sigma) * W.
struct VibLayer {
  Matrix W;          // out x in
  Matrix mu;         // out x in
  Matrix log_sigma;  // out x in
  double gamma = 0.0;
  Activation activation = Activation::relu;

  std::size_t in_width() const { return W.cols(); }
  std::size_t out_width() const { return W.rows(); }
  Matrix sigma() const { return map(log_sigma, [](double v) { return std::exp(v); }); }

  void validate() const {
    require_same_shape(W, mu, "VibLayer(mu)");
    require_same_shape(W, log_sigma, "VibLayer(log_sigma)");
    if (!(gamma >= 0.0)) throw Error("VibLayer: gamma must be >= 0");
  }
};

/// Fresh va-params: mu ~ N(1, 0.1^2), sigma = 0.1.
inline void init_va_params(VibLayer& layer, SeededRng& rng) {
  layer.mu = gaussian_sample(rng, layer.W.rows(), layer.W.cols(), kInitMuMean, kInitMuStd);
  layer.log_sigma = Matrix(layer.W.rows(), layer.W.cols(), std::log(kInitSigma));
}

/// W ~ N(0, 1/fan_in), then fresh va-params from the same stream.
inline VibLayer make_vib_layer(std::size_t in, std::size_t out, Activation act, double gamma,
                               SeededRng& rng) {
  if (in == 0 || out == 0) throw Error("make_vib_layer: zero width");
  VibLayer layer;
  layer.W = gaussian_sample(rng, out, in, 0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  init_va_params(layer, rng);
  layer.gamma = gamma;
  layer.activation = act;
  return layer;
}

inline Matrix apply_activation(const Matrix& z, Activation act) {
  if (act == Activation::identity) return z;
  return map(z, [](double v) { return v > 0.0 ? v : 0.0; });
}

/// Values retained by a training forward pass for the matching backward pass.
struct ForwardCache {
  Matrix eps;     // realized noise, shaped like W
  Matrix h_prev;  // batch x in
  Matrix z;       // pre-activation, batch x out
};

/// Training forward pass with a caller-supplied noise realization.
inline Matrix forward_with_eps(const VibLayer& layer, const Matrix& h_prev, Matrix eps,
                               ForwardCache* cache = nullptr) {
  if (h_prev.cols() != layer.in_width())
    throw Error("forward_reparam: input width " + std::to_string(h_prev.cols()) +
                " != layer input width " + std::to_string(layer.in_width()));
  require_same_shape(eps, layer.W, "forward_reparam(eps)");
  const std::size_t out = layer.W.rows(), in = layer.W.cols();
  Matrix w_eff(out, in);
  for (std::size_t k = 0; k < w_eff.size(); ++k)
    w_eff[k] = (layer.mu[k] + eps[k] * std::exp(layer.log_sigma[k])) * layer.W[k];
  Matrix z = matmul_bt(h_prev, w_eff);
  Matrix h = apply_activation(z, layer.activation);
  if (cache) *cache = ForwardCache{std::move(eps), h_prev, std::move(z)};
  return h;
}

/// Training forward pass; draws one eps ~ N(0, I) shared across the batch.
inline Matrix forward_reparam(const VibLayer& layer, const Matrix& h_prev, SeededRng& rng,
                              ForwardCache* cache = nullptr) {
  Matrix eps = gaussian_sample(rng, layer.W.rows(), layer.W.cols(), 0.0, 1.0);
  return forward_with_eps(layer, h_prev, std::move(eps), cache);
}

/// Recreated representation from a stored sub-network:
/// T = (mu_snap + eps * sigma_snap) * M, h = act(h_prev · (T * W)ᵀ).
/// With EpsMode::zero the result is a pure function of its inputs.
inline Matrix masked_forward(const VibLayer& layer, const LayerMask& mask, const Matrix& h_prev,
                             const Matrix& mu_snapshot, EpsMode eps_mode = EpsMode::zero,
                             const Matrix* log_sigma_snapshot = nullptr,
                             SeededRng* rng = nullptr) {
  if (!mask.shape_matches(layer.W))
    throw Error("masked_forward: mask " + mask.shape_str() + " vs W " + layer.W.shape_str());
  require_same_shape(mu_snapshot, layer.W, "masked_forward(mu_snapshot)");
  if (h_prev.cols() != layer.in_width())
    throw Error("masked_forward: input width " + std::to_string(h_prev.cols()) +
                " != layer input width " + std::to_string(layer.in_width()));
  Matrix t(layer.W.rows(), layer.W.cols());
  if (eps_mode == EpsMode::zero) {
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = mask[i] ? mu_snapshot[i] * layer.W[i] : 0.0;
  } else {
    if (!log_sigma_snapshot || !rng)
      throw Error("masked_forward: sample mode needs a log-sigma snapshot and an rng");
    require_same_shape(*log_sigma_snapshot, layer.W, "masked_forward(log_sigma_snapshot)");
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double e = rng->normal();
      t[i] = mask[i] ? (mu_snapshot[i] + e * std::exp((*log_sigma_snapshot)[i])) * layer.W[i]
                     : 0.0;
    }
  }
  return apply_activation(matmul_bt(h_prev, t), layer.activation);
}

struct LayerGrads {
  Matrix W;
  Matrix mu;
  Matrix log_sigma;
  Matrix h_prev;
};

/// Reverse pass of forward_reparam using the eps realized in `cache`.
inline LayerGrads backward(const VibLayer& layer, const ForwardCache& cache, const Matrix& grad_h) {
  if (!cache.eps.same_shape(layer.W) || cache.h_prev.cols() != layer.in_width() ||
      cache.z.cols() != layer.out_width() || cache.z.rows() != cache.h_prev.rows())
    throw Error("backward: cache does not belong to a " + layer.W.shape_str() + " layer");
  require_same_shape(grad_h, cache.z, "backward(grad_h)");

  Matrix dz = grad_h;
  if (layer.activation == Activation::relu)
    for (std::size_t i = 0; i < dz.size(); ++i)
      if (cache.z[i] <= 0.0) dz[i] = 0.0;

  const std::size_t n = layer.W.size();
  Matrix noise_scale(layer.W.rows(), layer.W.cols());  // mu + eps * sigma
  Matrix sigma(layer.W.rows(), layer.W.cols());
  Matrix w_eff(layer.W.rows(), layer.W.cols());
  for (std::size_t i = 0; i < n; ++i) {
    sigma[i] = std::exp(layer.log_sigma[i]);
    noise_scale[i] = layer.mu[i] + cache.eps[i] * sigma[i];
    w_eff[i] = noise_scale[i] * layer.W[i];
  }

  Matrix g_eff = matmul_at(dz, cache.h_prev);  // out x in
  LayerGrads g{Matrix(layer.W.rows(), layer.W.cols()), Matrix(layer.W.rows(), layer.W.cols()),
               Matrix(layer.W.rows(), layer.W.cols()), matmul(dz, w_eff)};
  for (std::size_t i = 0; i < n; ++i) {
    g.W[i] = g_eff[i] * noise_scale[i];
    g.mu[i] = g_eff[i] * layer.W[i];
    g.log_sigma[i] = g_eff[i] * layer.W[i] * cache.eps[i] * sigma[i];
  }
  return g;
}

struct KlGrads {
  Matrix mu;
  Matrix log_sigma;
};

/// gamma * sum log(1 + mu^2 / sigma^2); also fills the analytic gradients
/// when `grads` is non-null.
inline double kl_regularizer(const VibLayer& layer, KlGrads* grads) {
  if (grads) *grads = KlGrads{Matrix(layer.mu.rows(), layer.mu.cols()), Matrix(layer.mu.rows(), layer.mu.cols())};
  if (layer.gamma == 0.0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < layer.mu.size(); ++i) {
    const double m = layer.mu[i];
    const double s2 = std::exp(2.0 * layer.log_sigma[i]);
    s += std::log1p(m * m / s2);
    if (grads) {
      const double denom = s2 + m * m;
      grads->mu[i] = layer.gamma * 2.0 * m / denom;
      grads->log_sigma[i] = layer.gamma * (-2.0 * m * m) / denom;
    }
  }
  return layer.gamma * s;
}

inline double kl_regularizer(const VibLayer& layer) { return kl_regularizer(layer, nullptr); }

inline KlGrads kl_regularizer_grads(const VibLayer& layer) {
  KlGrads g;
  kl_regularizer(layer, &g);
  return g;
}

inline void clamp_log_sigma(VibLayer& layer) {
  for (double& v : layer.log_sigma.data()) v = std::clamp(v, kLogSigmaMin, kLogSigmaMax);
}

}  // namespace ibm
