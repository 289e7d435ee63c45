#pragma once
// Independent reference computations used by the tests. Nothing here calls
// into the library's numeric kernels except to read parameters.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "ibm/ibm.hpp"

namespace oracle {

/// Singular values as square roots of the eigenvalues of mᵀm, descending.
inline std::vector<double> singular_values_by_eigen(const ibm::Matrix& m) {
  Eigen::MatrixXd a(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) a(i, j) = m(i, j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.transpose() * a);
  std::vector<double> s;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) s.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(i))));
  std::sort(s.begin(), s.end(), std::greater<>());
  return s;
}

/// Tries k = 1..channels, builds the rank-k truncation explicitly from an
/// Eigen SVD and returns the first k whose kept energy ‖h_k‖² reaches
/// delta·‖h‖², with ‖h_k‖² = ‖h‖² − ‖h − h_k‖².
inline std::size_t brute_force_k(const ibm::Matrix& m, double delta) {
  Eigen::MatrixXd h(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) h(i, j) = m(i, j);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(h, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double total = h.squaredNorm();
  const Eigen::Index r = svd.singularValues().size();
  for (std::size_t k = 1; k <= m.cols(); ++k) {
    const Eigen::Index kk = std::min<Eigen::Index>(static_cast<Eigen::Index>(k), r);
    Eigen::MatrixXd hk = svd.matrixU().leftCols(kk) * svd.singularValues().head(kk).asDiagonal() *
                         svd.matrixV().leftCols(kk).transpose();
    const double err = (h - hk).squaredNorm();
    if (total - err >= delta * total) return k;
  }
  return m.cols();
}

/// Row-by-row, weight-by-weight evaluation of the training objective with
/// fixed noise, carried out in T. Plain loops and std:: math only. When tm is
/// given, offset is added to (*tm)[ti] inside the evaluation, in T.
template <class T>
T scalar_loss_t(const ibm::Network& net, const ibm::Matrix& x, const std::vector<int>& y, int task,
                const std::vector<ibm::Matrix>& eps, double ce_scale, const ibm::Matrix* tm = nullptr,
                std::size_t ti = 0, T offset = 0) {
  auto at = [&](const ibm::Matrix& m, std::size_t r, std::size_t c) -> T {
    T v = m(r, c);
    if (&m == tm && r * m.cols() + c == ti) v += offset;
    return v;
  };
  T kl = 0;
  for (const auto& layer : net.layers) {
    T s = 0;
    for (std::size_t i = 0; i < layer.mu.rows(); ++i)
      for (std::size_t j = 0; j < layer.mu.cols(); ++j) {
        const T mu = at(layer.mu, i, j);
        const T sigma = std::exp(at(layer.log_sigma, i, j));
        s += std::log(T(1) + (mu * mu) / (sigma * sigma));
      }
    kl += T(layer.gamma) * s;
  }
  const ibm::Head& head = net.heads.at(task);
  T ce = 0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::vector<T> h(x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) h[c] = x(r, c);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const auto& L = net.layers[l];
      std::vector<T> next(L.W.rows(), T(0));
      for (std::size_t o = 0; o < L.W.rows(); ++o) {
        T z = 0;
        for (std::size_t i = 0; i < L.W.cols(); ++i) {
          const T w = (at(L.mu, o, i) + T(eps[l](o, i)) * std::exp(at(L.log_sigma, o, i))) * at(L.W, o, i);
          z += h[i] * w;
        }
        next[o] = (L.activation == ibm::Activation::relu && z < T(0)) ? T(0) : z;
      }
      h = next;
    }
    std::vector<T> logits(head.W.rows());
    for (std::size_t c = 0; c < head.W.rows(); ++c) {
      T z = at(head.b, 0, c);
      for (std::size_t i = 0; i < h.size(); ++i) z += at(head.W, c, i) * h[i];
      logits[c] = z;
    }
    T denom = 0;
    for (T v : logits) denom += std::exp(v);
    ce += -std::log(std::exp(logits[static_cast<std::size_t>(y[r])]) / denom);
  }
  ce /= static_cast<T>(x.rows());
  return kl + T(ce_scale) * ce;
}

inline double scalar_loss(const ibm::Network& net, const ibm::Matrix& x, const std::vector<int>& y, int task,
                          const std::vector<ibm::Matrix>& eps, double ce_scale) {
  return scalar_loss_t<double>(net, x, y, task, eps, ce_scale);
}

/// Central difference of the objective with respect to (*tm)[ti], in long
/// double so that a loss in the hundreds does not drown partials near 1e-6.
inline double central_difference_ext(const ibm::Network& net, const ibm::Matrix& x, const std::vector<int>& y,
                                     int task, const std::vector<ibm::Matrix>& eps, double ce_scale,
                                     const ibm::Matrix& tm, std::size_t ti, long double step = 1e-5L) {
  const long double up = scalar_loss_t<long double>(net, x, y, task, eps, ce_scale, &tm, ti, step);
  const long double down = scalar_loss_t<long double>(net, x, y, task, eps, ce_scale, &tm, ti, -step);
  return static_cast<double>((up - down) / (2 * step));
}

/// Central difference of f with respect to p[i].
inline double central_difference(const std::function<double()>& f, double& p, double step = 1e-5) {
  const double saved = p;
  p = saved + step;
  const double up = f();
  p = saved - step;
  const double down = f();
  p = saved;
  return (up - down) / (2.0 * step);
}

/// Relative error with an absolute floor so near-zero gradients compare sensibly.
inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace oracle
