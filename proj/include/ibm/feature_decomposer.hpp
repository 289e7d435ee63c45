#pragma once

#include <span>
#include <string>
#include <vector>

#include "ibm/linalg.hpp"
#include "ibm/network.hpp"

namespace ibm {

/// Per-layer KL multipliers and the rule that refreshes them from the
/// spectrum of each layer's hidden representation.
struct CompressionSchedule {
  double delta = 0.97;
  int interval_epochs = 50;
  double kl_scale = 1.0;
  std::vector<double> gamma;

  void validate() const {
    if (!(delta > 0.0 && delta < 1.0)) throw Error("CompressionSchedule: delta must lie in (0,1)");
    if (interval_epochs < 1) throw Error("CompressionSchedule: interval_epochs must be >= 1");
    if (!(kl_scale >= 0.0)) throw Error("CompressionSchedule: kl_scale must be >= 0");
  }
};

inline constexpr double kInitialGammaFraction = 0.5;

inline CompressionSchedule make_schedule(std::size_t layers, double delta, int interval,
                                         double kl_scale) {
  CompressionSchedule s{delta, interval, kl_scale,
                        std::vector<double>(layers, kInitialGammaFraction * kl_scale)};
  s.validate();
  return s;
}

/// Smallest k whose leading squared singular values hold at least delta of
/// the total energy.
inline std::size_t k_rank(std::span<const double> singular_values, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw Error("k_rank: delta must lie in (0,1)");
  double total = 0.0;
  for (double s : singular_values) total += s * s;
  if (!(total > 0.0)) throw Error("k_rank: all-zero spectrum");
  const double target = delta * total;
  double acc = 0.0;
  for (std::size_t k = 0; k < singular_values.size(); ++k) {
    acc += singular_values[k] * singular_values[k];
    if (acc >= target) return k + 1;
  }
  // Rounding can leave acc a hair below delta*total only if delta ~ 1.
  return singular_values.size();
}

/// k / channels for a batch x channels representation.
inline double decompose_ratio(const Matrix& h, double delta) {
  if (h.rows() == 0 || h.cols() == 0) throw Error("decompose_ratio: empty representation");
  const auto s = singular_values(h);
  if (frobenius_sq(h) == 0.0) throw Error("decompose_ratio: all-zero representation (zero spectrum)");
  return static_cast<double>(k_rank(s, delta)) / static_cast<double>(h.cols());
}

struct GammaEvent {
  int epoch = 0;
  std::size_t layer = 0;
  double gamma = 0.0;
};

/// On epochs that are multiples of the interval, runs one deterministic pass
/// over the probe batch and sets gamma_l = kl_scale * k_l / channels_l.
/// A layer whose representation is entirely zero keeps its previous gamma.
/// Returns the events applied (empty off-interval). Never touches weights.
inline std::vector<GammaEvent> update_schedule(const Network& net, CompressionSchedule& schedule,
                                               const Matrix& probe_batch, int epoch) {
  std::vector<GammaEvent> events;
  if (epoch <= 0 || epoch % schedule.interval_epochs != 0) return events;
  if (schedule.gamma.size() != net.layers.size())
    throw Error("update_schedule: schedule has " + std::to_string(schedule.gamma.size()) +
                " layers, network has " + std::to_string(net.layers.size()));
  const auto hs = deterministic_activations(net, probe_batch);
  for (std::size_t l = 0; l < hs.size(); ++l) {
    if (frobenius_sq(hs[l]) == 0.0) continue;
    schedule.gamma[l] = schedule.kl_scale * decompose_ratio(hs[l], schedule.delta);
    events.push_back({epoch, l, schedule.gamma[l]});
  }
  return events;
}

inline void apply_schedule(Network& net, const CompressionSchedule& schedule) {
  if (schedule.gamma.size() != net.layers.size())
    throw Error("apply_schedule: layer count mismatch");
  for (std::size_t l = 0; l < net.layers.size(); ++l) net.layers[l].gamma = schedule.gamma[l];
}

}  // namespace ibm
