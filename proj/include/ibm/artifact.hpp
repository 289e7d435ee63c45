#pragma once

#include <vector>

#include "ibm/mask_types.hpp"
#include "ibm/rng.hpp"
#include "ibm/tensor.hpp"

namespace ibm {

/// Task-private linear classifier on top of the last backbone layer. Never masked.
struct Head {
  Matrix W;  // classes x width
  Matrix b;  // 1 x classes

  std::size_t classes() const { return W.rows(); }

  friend bool operator==(const Head&, const Head&) = default;
};

inline Head make_head(std::size_t width, std::size_t classes, SeededRng& rng) {
  if (classes == 0) throw Error("make_head: zero classes");
  return Head{gaussian_sample(rng, classes, width, 0.0, 1.0 / std::sqrt(static_cast<double>(width))),
              Matrix(1, classes)};
}

/// Memory-pool entry for one finished task: everything needed to recreate its
/// sub-network on top of the (frozen) backbone weights.
struct TaskArtifact {
  int task_id = 0;
  BinaryMask masks;
  std::vector<Matrix> mu_snapshot;
  std::vector<Matrix> log_sigma_snapshot;
  std::vector<double> gamma_snapshot;
  Head head;

  std::size_t selected_count() const {
    std::size_t n = 0;
    for (const auto& m : masks) n += m.count();
    return n;
  }

  friend bool operator==(const TaskArtifact&, const TaskArtifact&) = default;
};

using MemoryPool = std::vector<TaskArtifact>;

}  // namespace ibm
