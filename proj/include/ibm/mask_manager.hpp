#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ibm/artifact.hpp"
#include "ibm/mask_types.hpp"
#include "ibm/network.hpp"
#include "ibm/vib_layer.hpp"

namespace ibm {

inline constexpr double kDefaultAlphaThreshold = 1.0;

/// Sparsity statistic mu^2 / sigma^2 per weight.
inline Matrix compute_alpha(const VibLayer& layer) {
  Matrix a(layer.mu.rows(), layer.mu.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double m = layer.mu[i];
    a[i] = m * m * std::exp(-2.0 * layer.log_sigma[i]);
  }
  return a;
}

/// Keeps weights with alpha strictly above the threshold.
inline LayerMask extract_mask(const Matrix& alpha, double threshold = kDefaultAlphaThreshold) {
  if (!alpha.all_finite()) throw Error("extract_mask: non-finite alpha");
  LayerMask m(alpha.rows(), alpha.cols());
  for (std::size_t i = 0; i < alpha.size(); ++i) m.set(i, alpha[i] > threshold);
  return m;
}

inline CumulativeMask empty_cumulative_mask(const Network& net) {
  CumulativeMask m;
  for (const auto& layer : net.layers) m.layers.push_back(LayerMask::zeros_like(layer.W));
  return m;
}

/// Elementwise OR of every mask in the pool, starting from all-zeros shaped
/// like `net`'s layers.
inline CumulativeMask combine_masks(const MemoryPool& pool, const Network& net) {
  CumulativeMask all = empty_cumulative_mask(net);
  for (const auto& art : pool) {
    if (art.masks.size() != all.layers.size())
      throw Error("combine_masks: task " + std::to_string(art.task_id) + " has " +
                  std::to_string(art.masks.size()) + " layer masks, expected " +
                  std::to_string(all.layers.size()));
    for (std::size_t l = 0; l < all.layers.size(); ++l) {
      const LayerMask& m = art.masks[l];
      if (!m.shape_matches(all.layers[l]))
        throw Error("combine_masks: task " + std::to_string(art.task_id) + " layer " +
                    std::to_string(l) + " mask shape " + m.shape_str() + " vs " +
                    all.layers[l].shape_str());
      for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) all.layers[l].set(i, true);
    }
  }
  return all;
}

/// Keeps va-params where the cumulative mask is set and redraws the rest from
/// the initialization distribution. Draws happen for every position in
/// row-major order so the rng stream matches a fresh init_va_params call.
inline void reinit_va_params(VibLayer& layer, const LayerMask& m_all, SeededRng& rng) {
  if (!m_all.shape_matches(layer.W))
    throw Error("reinit_va_params: mask " + m_all.shape_str() + " vs layer " + layer.W.shape_str());
  const Matrix mu_random =
      gaussian_sample(rng, layer.W.rows(), layer.W.cols(), kInitMuMean, kInitMuStd);
  const double log_sigma_random = std::log(kInitSigma);
  for (std::size_t i = 0; i < layer.mu.size(); ++i) {
    if (m_all[i]) continue;
    layer.mu[i] = mu_random[i];
    layer.log_sigma[i] = log_sigma_random;
  }
}

struct LayerMaskCount {
  std::size_t selected = 0;
  std::size_t total = 0;
};

/// Builds the task's artifact from the trained network: alpha, masks,
/// va-param and head snapshots. Appends to `pool`.
inline const TaskArtifact& finalize_task(const Network& net, int task_id, MemoryPool& pool,
                                         double threshold = kDefaultAlphaThreshold) {
  for (const auto& a : pool)
    if (a.task_id == task_id)
      throw Error("finalize_task: task " + std::to_string(task_id) + " already finalized");
  TaskArtifact art;
  art.task_id = task_id;
  for (const auto& layer : net.layers) {
    art.masks.push_back(extract_mask(compute_alpha(layer), threshold));
    art.mu_snapshot.push_back(layer.mu);
    art.log_sigma_snapshot.push_back(layer.log_sigma);
    art.gamma_snapshot.push_back(layer.gamma);
  }
  art.head = net.head(task_id);
  pool.push_back(std::move(art));
  return pool.back();
}

inline std::vector<LayerMaskCount> mask_counts(const TaskArtifact& art) {
  std::vector<LayerMaskCount> out;
  for (const auto& m : art.masks) out.push_back({m.count(), m.size()});
  return out;
}

inline constexpr double kLowCapacityFraction = 0.01;

struct CapacityWarning {
  int after_task = 0;
  std::size_t layer = 0;
  std::size_t free = 0;
  std::size_t total = 0;
};

/// Layers whose unfrozen share fell below 1%.
inline std::vector<CapacityWarning> capacity_warnings(const CumulativeMask& m_all, int after_task) {
  std::vector<CapacityWarning> out;
  for (std::size_t l = 0; l < m_all.layers.size(); ++l) {
    const auto total = m_all.layers[l].size();
    const auto free = total - m_all.layers[l].count();
    if (static_cast<double>(free) < kLowCapacityFraction * static_cast<double>(total))
      out.push_back({after_task, l, free, total});
  }
  return out;
}

/// Throws when some layer has nothing left to train and nothing to reuse:
/// every weight frozen and every frozen weight zero.
inline void require_trainable(const Network& net, const CumulativeMask& m_all, int next_task) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const LayerMask& m = m_all.layers[l];
    if (m.count() != m.size()) continue;
    bool any_reusable = false;
    for (std::size_t i = 0; i < m.size() && !any_reusable; ++i)
      any_reusable = net.layers[l].W[i] != 0.0;
    if (!any_reusable)
      throw Error("capacity exhausted: layer " + std::to_string(l) +
                  " has no free and no reusable weights before task " + std::to_string(next_task));
  }
}

}  // namespace ibm
