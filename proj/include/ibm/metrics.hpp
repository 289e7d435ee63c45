#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ibm/tensor.hpp"

namespace ibm {

/// Lower-triangular accuracy record: at(i, j) is the accuracy on task j after
/// training task i (0-based). Entries above the diagonal are undefined.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t tasks) : tasks_(tasks), a_(tasks, std::vector<double>(tasks, 0.0)) {}

  static AccuracyMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    AccuracyMatrix m(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() < i + 1) throw Error("AccuracyMatrix: row " + std::to_string(i) + " too short");
      for (std::size_t j = 0; j <= i; ++j) m.set(i, j, rows[i][j]);
    }
    return m;
  }

  std::size_t tasks() const { return tasks_; }

  double at(std::size_t i, std::size_t j) const {
    check(i, j);
    return a_[i][j];
  }
  void set(std::size_t i, std::size_t j, double v) {
    check(i, j);
    if (!(v >= 0.0 && v <= 1.0)) throw Error("AccuracyMatrix: accuracy " + std::to_string(v) + " outside [0,1]");
    a_[i][j] = v;
  }

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
  void check(std::size_t i, std::size_t j) const {
    if (i >= tasks_ || j > i)
      throw Error("AccuracyMatrix: (" + std::to_string(i) + "," + std::to_string(j) +
                  ") outside lower triangle of " + std::to_string(tasks_));
  }
  std::size_t tasks_ = 0;
  std::vector<std::vector<double>> a_;
};

/// Mean accuracy over all tasks after the last one.
inline double acc(const AccuracyMatrix& a) {
  if (a.tasks() == 0) throw Error("acc: empty accuracy matrix");
  const std::size_t T = a.tasks();
  double s = 0.0;
  for (std::size_t i = 0; i < T; ++i) s += a.at(T - 1, i);
  return s / static_cast<double>(T);
}

/// Mean change on earlier tasks between learning them and the end. Needs T >= 2.
inline std::optional<double> bwt(const AccuracyMatrix& a) {
  const std::size_t T = a.tasks();
  if (T < 2) return std::nullopt;
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < T; ++i) s += a.at(T - 1, i) - a.at(i, i);
  return s / static_cast<double>(T - 1);
}

enum class FwtRange {
  first_t_minus_1,  // i = 1..T-1, the published convention
  all_tasks,        // i = 1..T
};

/// Mean gain of the just-learned accuracy over an independently trained
/// network, averaged over the tasks in `range`.
inline std::optional<double> fwt(const AccuracyMatrix& a, const std::vector<double>& mt,
                                 FwtRange range = FwtRange::first_t_minus_1) {
  const std::size_t T = a.tasks();
  if (T < 2) return std::nullopt;
  if (mt.size() != T)
    throw Error("fwt: " + std::to_string(mt.size()) + " baseline accuracies for " + std::to_string(T) + " tasks");
  const std::size_t upto = range == FwtRange::all_tasks ? T : T - 1;
  double s = 0.0;
  for (std::size_t i = 0; i < upto; ++i) s += a.at(i, i) - mt[i];
  return s / static_cast<double>(upto);
}

}  // namespace ibm
