#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ibm/tensor.hpp"

namespace ibm {

/// Thin SVD: m = U · diag(singular_values) · Vᵀ with r = min(rows, cols).
/// U is rows × r, V is cols × r, both column-orthonormal.
struct Svd {
  Matrix U;
  std::vector<double> singular_values;  // descending, nonnegative
  Matrix V;
};

namespace detail {

// One-sided Jacobi (Hestenes) on a tall matrix (rows >= cols).
inline Svd jacobi_svd_tall(Matrix a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Matrix v = Matrix::identity(n);
  constexpr double kTol = 1e-15;
  constexpr int kMaxSweeps = 80;

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          alpha += ap * ap;
          beta += aq * aq;
          gamma += ap * aq;
        }
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = a(i, p), aq = a(i, q);
          a(i, p) = c * ap - s * aq;
          a(i, q) = s * ap + c * aq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += a(i, j) * a(i, j);
    norms[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  Svd out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  const double scale = norms.empty() ? 0.0 : norms[order.front()];
  std::vector<bool> filled(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.singular_values[k] = norms[j];
    for (std::size_t i = 0; i < n; ++i) out.V(i, k) = v(i, j);
    if (norms[j] > scale * 1e-13 && norms[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) out.U(i, k) = a(i, j) / norms[j];
      filled[k] = true;
    }
  }

  // Complete U for (numerically) zero singular values with Gram-Schmidt
  // against the standard basis.
  std::size_t basis = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (filled[k]) continue;
    out.singular_values[k] = 0.0;
    for (; basis < m; ++basis) {
      std::vector<double> cand(m, 0.0);
      cand[basis] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < n; ++c) {
          if (!filled[c]) continue;
          double dot = 0.0;
          for (std::size_t i = 0; i < m; ++i) dot += out.U(i, c) * cand[i];
          for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * out.U(i, c);
        }
      }
      double nrm = 0.0;
      for (double x : cand) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 1e-6) {
        for (std::size_t i = 0; i < m; ++i) out.U(i, k) = cand[i] / nrm;
        filled[k] = true;
        ++basis;
        break;
      }
    }
  }
  return out;
}

}  // namespace detail

/// Singular value decomposition by one-sided Jacobi rotations.
inline Svd svd(const Matrix& m) {
  if (m.empty()) throw Error("svd: empty matrix");
  if (!m.all_finite()) throw Error("svd: non-finite entry in " + m.shape_str() + " input");
  if (m.rows() >= m.cols()) return detail::jacobi_svd_tall(m);
  Svd t = detail::jacobi_svd_tall(transpose(m));
  return Svd{std::move(t.V), std::move(t.singular_values), std::move(t.U)};
}

inline std::vector<double> singular_values(const Matrix& m) { return svd(m).singular_values; }

}  // namespace ibm
