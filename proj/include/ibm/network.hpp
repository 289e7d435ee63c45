#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ibm/artifact.hpp"
#include "ibm/mask_types.hpp"
#include "ibm/rng.hpp"
#include "ibm/vib_layer.hpp"

namespace ibm {

/// Stack of maskable layers (the shared backbone) plus one head per task.
struct Network {
  std::vector<VibLayer> layers;
  std::map<int, Head> heads;

  std::size_t input_width() const { return layers.front().in_width(); }
  std::size_t output_width() const { return layers.back().out_width(); }
  std::size_t weight_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.W.size();
    return n;
  }

  const Head& head(int task_id) const {
    auto it = heads.find(task_id);
    if (it == heads.end()) throw Error("no head for task " + std::to_string(task_id));
    return it->second;
  }

  void validate() const {
    if (layers.empty()) throw Error("Network: no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].validate();
      if (l > 0 && layers[l].in_width() != layers[l - 1].out_width())
        throw Error("Network: layer " + std::to_string(l) + " input width does not compose");
    }
  }
};

/// widths = {input, hidden_1, ..., hidden_L}; every backbone layer uses ReLU.
inline Network make_network(std::span<const std::size_t> widths, double initial_gamma,
                            SeededRng& rng) {
  if (widths.size() < 2) throw Error("make_network: need an input width and at least one layer");
  Network net;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    net.layers.push_back(make_vib_layer(widths[l], widths[l + 1], Activation::relu, initial_gamma, rng));
  return net;
}

inline void add_head(Network& net, int task_id, std::size_t classes, SeededRng& rng) {
  if (net.heads.count(task_id)) throw Error("add_head: task " + std::to_string(task_id) + " exists");
  net.heads.emplace(task_id, make_head(net.output_width(), classes, rng));
}

inline Matrix head_logits(const Head& head, const Matrix& h) {
  Matrix logits = matmul_bt(h, head.W);
  for (std::size_t r = 0; r < logits.rows(); ++r)
    for (std::size_t c = 0; c < logits.cols(); ++c) logits(r, c) += head.b[c];
  return logits;
}

/// Lowest index wins ties.
inline std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

/// Coefficient on the data-fit term. Unset means "number of backbone layers".
struct LossOptions {
  std::optional<double> ce_scale;

  double scale_for(const Network& net) const {
    return ce_scale.value_or(static_cast<double>(net.layers.size()));
  }
};

struct LossBreakdown {
  double total = 0.0;
  double kl = 0.0;
  double ce = 0.0;  // mean cross-entropy, unscaled
};

struct NetworkGrads {
  std::vector<LayerGrads> layers;
  Matrix head_W;
  Matrix head_b;
};

namespace detail {

inline void check_batch(const Network& net, const Matrix& x, std::span<const int> y, int task_id,
                        const char* op) {
  if (x.rows() == 0) throw Error(std::string(op) + ": empty batch");
  if (x.rows() != y.size()) throw Error(std::string(op) + ": feature/label count mismatch");
  if (x.cols() != net.input_width())
    throw Error(std::string(op) + ": input width " + std::to_string(x.cols()) + " != " +
                std::to_string(net.input_width()));
  const Head& head = net.head(task_id);
  for (int label : y)
    if (label < 0 || static_cast<std::size_t>(label) >= head.classes())
      throw Error(std::string(op) + ": label " + std::to_string(label) + " out of range");
}

// Softmax cross-entropy averaged over rows; writes dLoss/dlogits (already
// divided by batch size) into grad when non-null.
inline double softmax_ce(const Matrix& logits, std::span<const int> y, Matrix* grad) {
  const std::size_t n = logits.rows();
  if (grad) *grad = Matrix(n, logits.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto row = logits.row(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    total += log_z - row[static_cast<std::size_t>(y[r])];
    if (grad) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        const double p = std::exp(row[c] - log_z);
        (*grad)(r, c) = (p - (static_cast<int>(c) == y[r] ? 1.0 : 0.0)) / static_cast<double>(n);
      }
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace detail

/// Full objective for a fixed noise realization:
/// sum_l gamma_l sum log(1 + mu^2/sigma^2) + ce_scale * CE(head(h_L), y).
/// Gradients with respect to every backbone parameter and the task's head are
/// written to `grads` when non-null.
inline LossBreakdown loss_with_eps(const Network& net, const Matrix& x, std::span<const int> y,
                                   int task_id, std::span<const Matrix> eps,
                                   const LossOptions& opts = {}, NetworkGrads* grads = nullptr) {
  detail::check_batch(net, x, y, task_id, "total_loss");
  if (eps.size() != net.layers.size()) throw Error("total_loss: one eps matrix per layer required");
  const Head& head = net.head(task_id);

  std::vector<ForwardCache> caches(net.layers.size());
  Matrix h = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    h = forward_with_eps(net.layers[l], h, eps[l], &caches[l]);

  LossBreakdown out;
  const double scale = opts.scale_for(net);
  Matrix dlogits;
  out.ce = detail::softmax_ce(head_logits(head, h), y, grads ? &dlogits : nullptr);
  std::vector<KlGrads> kl_grads(grads ? net.layers.size() : 0);
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    out.kl += kl_regularizer(net.layers[l], grads ? &kl_grads[l] : nullptr);
  out.total = out.kl + scale * out.ce;

  if (grads) {
    for (double& v : dlogits.data()) v *= scale;
    grads->head_W = matmul_at(dlogits, h);
    grads->head_b = Matrix(1, head.classes());
    for (std::size_t r = 0; r < dlogits.rows(); ++r)
      for (std::size_t c = 0; c < dlogits.cols(); ++c) grads->head_b[c] += dlogits(r, c);
    Matrix grad_h = matmul(dlogits, head.W);
    grads->layers.assign(net.layers.size(), {});
    for (std::size_t l = net.layers.size(); l-- > 0;) {
      LayerGrads g = backward(net.layers[l], caches[l], grad_h);
      const KlGrads& kg = kl_grads[l];
      for (std::size_t i = 0; i < g.mu.size(); ++i) {
        g.mu[i] += kg.mu[i];
        g.log_sigma[i] += kg.log_sigma[i];
      }
      grad_h = std::move(g.h_prev);
      g.h_prev = Matrix();
      grads->layers[l] = std::move(g);
    }
  }
  return out;
}

/// Draws one eps per layer from rng, then evaluates the objective.
inline LossBreakdown total_loss(const Network& net, const Matrix& x, std::span<const int> y,
                                int task_id, SeededRng& rng, const LossOptions& opts = {},
                                NetworkGrads* grads = nullptr) {
  std::vector<Matrix> eps;
  eps.reserve(net.layers.size());
  for (const auto& layer : net.layers)
    eps.push_back(gaussian_sample(rng, layer.W.rows(), layer.W.cols(), 0.0, 1.0));
  return loss_with_eps(net, x, y, task_id, eps, opts, grads);
}

/// Per-parameter first/second moments.
struct AdamSlot {
  Matrix m;
  Matrix v;
};

/// Adam with bias correction. Slots are created lazily per parameter.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<AdamSlot> W, mu, log_sigma;
  std::map<int, AdamSlot> head_W, head_b;

  /// Advances the shared step counter; call once per optimizer step.
  void begin_step() { ++step; }

  /// `frozen` (optional) marks entries whose update and moments are forced to zero.
  void update(Matrix& param, const Matrix& grad, AdamSlot& slot,
              const LayerMask* frozen = nullptr) const {
    require_same_shape(param, grad, "adam");
    if (!slot.m.same_shape(param)) {
      slot.m = Matrix(param.rows(), param.cols());
      slot.v = Matrix(param.rows(), param.cols());
    }
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
      if (frozen && (*frozen)[i]) {
        slot.m[i] = 0.0;
        slot.v[i] = 0.0;
        continue;
      }
      const double g = grad[i];
      slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
      slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
      const double mhat = slot.m[i] / c1;
      const double vhat = slot.v[i] / c2;
      param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
};

/// One optimizer step on the task's data. Weight gradients at positions set in
/// `m_all` are zeroed before the update and their Adam moments cleared, so
/// those weights stay bit-identical. mu, log sigma and the task's head train
/// unmasked; other heads are not touched.
inline double train_step(Network& net, AdamState& adam, const Matrix& x, std::span<const int> y,
                         int task_id, const CumulativeMask* m_all, SeededRng& rng,
                         const LossOptions& opts = {}) {
  if (m_all) {
    if (m_all->layers.size() != net.layers.size())
      throw Error("train_step: cumulative mask has " + std::to_string(m_all->layers.size()) +
                  " layers, network has " + std::to_string(net.layers.size()));
    for (std::size_t l = 0; l < net.layers.size(); ++l)
      if (!m_all->layers[l].shape_matches(net.layers[l].W))
        throw Error("train_step: cumulative mask shape mismatch at layer " + std::to_string(l));
  }
  NetworkGrads g;
  const LossBreakdown loss = total_loss(net, x, y, task_id, rng, opts, &g);

  if (m_all) {
    std::vector<Matrix*> gw;
    for (auto& lg : g.layers) gw.push_back(&lg.W);
    freeze_gradients(gw, *m_all);
  }

  adam.begin_step();
  const std::size_t L = net.layers.size();
  if (adam.W.size() != L) {
    adam.W.resize(L);
    adam.mu.resize(L);
    adam.log_sigma.resize(L);
  }
  for (std::size_t l = 0; l < L; ++l) {
    VibLayer& layer = net.layers[l];
    adam.update(layer.W, g.layers[l].W, adam.W[l], m_all ? &m_all->layers[l] : nullptr);
    adam.update(layer.mu, g.layers[l].mu, adam.mu[l]);
    adam.update(layer.log_sigma, g.layers[l].log_sigma, adam.log_sigma[l]);
    clamp_log_sigma(layer);
  }
  Head& head = net.heads.at(task_id);
  adam.update(head.W, g.head_W, adam.head_W[task_id]);
  adam.update(head.b, g.head_b, adam.head_b[task_id]);
  return loss.total;
}

/// Deterministic backbone pass (eps = 0, current mu, no mask); returns the
/// post-activation output of every layer.
inline std::vector<Matrix> deterministic_activations(const Network& net, const Matrix& x) {
  std::vector<Matrix> hs;
  hs.reserve(net.layers.size());
  const Matrix* h = &x;
  for (const auto& layer : net.layers) {
    hs.push_back(masked_forward(layer, LayerMask::ones_like(layer.W), *h, layer.mu));
    h = &hs.back();
  }
  return hs;
}

/// Class predictions through a stored sub-network (deterministic, eps = 0).
inline std::vector<int> predict(const Network& net, const Matrix& x, int task_id,
                                const TaskArtifact& artifact) {
  if (artifact.task_id != task_id)
    throw Error("predict: artifact belongs to task " + std::to_string(artifact.task_id) +
                ", not " + std::to_string(task_id));
  if (artifact.masks.size() != net.layers.size() || artifact.mu_snapshot.size() != net.layers.size())
    throw Error("predict: artifact layer count does not match network");
  if (x.cols() != net.input_width()) throw Error("predict: input width mismatch");
  Matrix h = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    h = masked_forward(net.layers[l], artifact.masks[l], h, artifact.mu_snapshot[l]);
  return argmax_rows(head_logits(artifact.head, h));
}

/// Class predictions through the full current network (no masks).
inline std::vector<int> predict_unmasked(const Network& net, const Matrix& x, int task_id) {
  if (x.cols() != net.input_width()) throw Error("predict: input width mismatch");
  const auto hs = deterministic_activations(net, x);
  return argmax_rows(head_logits(net.head(task_id), hs.back()));
}

inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size() || truth.empty())
    throw Error("accuracy: size mismatch or empty");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace ibm
