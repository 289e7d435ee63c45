#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "ibm/rng.hpp"
#include "ibm/tensor.hpp"

namespace ibm {

struct TaskDataset {
  int task_id = 0;
  Matrix train_x;
  std::vector<int> train_y;
  Matrix test_x;
  std::vector<int> test_y;
  std::size_t class_count = 0;
  /// Input dimensions that carry label information, when known.
  std::vector<std::size_t> informative_dims;

  void validate() const {
    if (train_x.rows() != train_y.size() || test_x.rows() != test_y.size())
      throw Error("TaskDataset " + std::to_string(task_id) + ": feature/label count mismatch");
    if (train_x.cols() != test_x.cols())
      throw Error("TaskDataset " + std::to_string(task_id) + ": train/test width mismatch");
    if (train_y.empty() || test_y.empty())
      throw Error("TaskDataset " + std::to_string(task_id) + ": empty split");
    auto bad = [&](int y) { return y < 0 || static_cast<std::size_t>(y) >= class_count; };
    if (std::any_of(train_y.begin(), train_y.end(), bad) || std::any_of(test_y.begin(), test_y.end(), bad))
      throw Error("TaskDataset " + std::to_string(task_id) + ": label outside [0, class_count)");
  }
};

/// Synthetic task sequence: task t is a two-class problem whose class means
/// differ only on the block of dimensions [t*k, (t+1)*k); every other
/// dimension is unit Gaussian noise. `separation` is the distance between the
/// class means in noise standard deviations.
struct SplitGaussianSpec {
  int tasks = 5;
  std::size_t dims = 32;
  std::size_t informative_per_task = 4;
  std::size_t train_samples = 2048;
  std::size_t test_samples = 512;
  double separation = 4.0;
};

inline std::vector<TaskDataset> generate_split_gaussians(std::uint64_t seed, const SplitGaussianSpec& spec) {
  if (spec.tasks < 1) throw Error("generate_split_gaussians: need at least one task");
  if (spec.informative_per_task == 0) throw Error("generate_split_gaussians: informative_per_task must be > 0");
  if (spec.informative_per_task * static_cast<std::size_t>(spec.tasks) > spec.dims)
    throw Error("generate_split_gaussians: " + std::to_string(spec.tasks) + " tasks x " +
                std::to_string(spec.informative_per_task) + " informative dims exceed " +
                std::to_string(spec.dims) + " dimensions");
  if (!(spec.separation >= 0.0)) throw Error("generate_split_gaussians: separation must be >= 0");
  if (spec.train_samples < 2 || spec.test_samples < 2)
    throw Error("generate_split_gaussians: need at least two samples per split");

  SeededRng root(seed);
  std::vector<TaskDataset> out;
  const double offset = 0.5 * spec.separation / std::sqrt(static_cast<double>(spec.informative_per_task));
  for (int t = 0; t < spec.tasks; ++t) {
    SeededRng rng = root.split();
    TaskDataset ds;
    ds.task_id = t;
    ds.class_count = 2;
    const std::size_t first = static_cast<std::size_t>(t) * spec.informative_per_task;
    for (std::size_t d = 0; d < spec.informative_per_task; ++d) ds.informative_dims.push_back(first + d);

    auto draw = [&](std::size_t n, Matrix& x, std::vector<int>& y) {
      y.resize(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 2);
      std::shuffle(y.begin(), y.end(), rng.engine());
      x = gaussian_sample(rng, n, spec.dims, 0.0, 1.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double sign = y[i] == 1 ? 1.0 : -1.0;
        for (std::size_t d : ds.informative_dims) x(i, d) += sign * offset;
      }
    };
    draw(spec.train_samples, ds.train_x, ds.train_y);
    draw(spec.test_samples, ds.test_x, ds.test_y);
    out.push_back(std::move(ds));
  }
  return out;
}

/// Probability that the optimal linear rule classifies a point correctly:
/// Phi(separation / 2).
inline double split_gaussian_bayes_accuracy(double separation) {
  return 0.5 * std::erfc(-separation / (2.0 * std::sqrt(2.0)));
}

}  // namespace ibm
