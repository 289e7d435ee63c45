#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ibm/tensor.hpp"

namespace ibm {

/// 0/1 matrix shaped like one layer's weight matrix.
class LayerMask {
 public:
  LayerMask() = default;
  LayerMask(std::size_t rows, std::size_t cols, bool fill = false)
      : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

  static LayerMask ones_like(const Matrix& m) { return LayerMask(m.rows(), m.cols(), true); }
  static LayerMask zeros_like(const Matrix& m) { return LayerMask(m.rows(), m.cols(), false); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return bits_.size(); }

  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  bool operator()(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }
  void set(std::size_t r, std::size_t c, bool v) { set(r * cols_ + c, v); }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  bool shape_matches(const Matrix& m) const { return rows_ == m.rows() && cols_ == m.cols(); }
  bool shape_matches(const LayerMask& m) const { return rows_ == m.rows_ && cols_ == m.cols_; }
  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  Matrix to_matrix() const {
    Matrix m(rows_, cols_);
    for (std::size_t i = 0; i < bits_.size(); ++i) m[i] = bits_[i] ? 1.0 : 0.0;
    return m;
  }

  friend bool operator==(const LayerMask&, const LayerMask&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// One mask per backbone layer.
using BinaryMask = std::vector<LayerMask>;

/// OR of every finalized task's mask: 1 marks a frozen weight. Only ever grows.
struct CumulativeMask {
  std::vector<LayerMask> layers;
};

/// grad * (1 - M_all), in place, for every layer.
inline void freeze_gradients(std::span<Matrix* const> grad_W, const CumulativeMask& m_all) {
  if (grad_W.size() != m_all.layers.size())
    throw Error("freeze_gradients: " + std::to_string(grad_W.size()) + " gradients vs " +
                std::to_string(m_all.layers.size()) + " mask layers");
  for (std::size_t l = 0; l < grad_W.size(); ++l) {
    Matrix& g = *grad_W[l];
    const LayerMask& m = m_all.layers[l];
    if (!m.shape_matches(g))
      throw Error("freeze_gradients: layer " + std::to_string(l) + " grad " + g.shape_str() +
                  " vs mask " + m.shape_str());
    for (std::size_t i = 0; i < g.size(); ++i)
      if (m[i]) g[i] = 0.0;
  }
}

/// Value-returning form of freeze_gradients.
inline std::vector<Matrix> freeze_gradients(std::vector<Matrix> grad_W, const CumulativeMask& m_all) {
  std::vector<Matrix*> ptrs;
  for (auto& g : grad_W) ptrs.push_back(&g);
  freeze_gradients(std::span<Matrix* const>(ptrs), m_all);
  return grad_W;
}

}  // namespace ibm
