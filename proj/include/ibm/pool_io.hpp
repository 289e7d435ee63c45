#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "ibm/artifact.hpp"
#include "ibm/idx.hpp"
#include "ibm/network.hpp"

namespace ibm {

// Memory-pool file layout (all integers little-endian, reals IEEE-754 binary64):
//
//   "IBMPOOL1"                              8-byte magic, last byte is the version
//   u32 layer_count
//   per layer: u32 out, u32 in, u8 activation (0 relu, 1 identity)
//   per layer: out*in f64                    backbone weights W
//   u32 task_count
//   per task:
//     i32 task_id, u32 classes
//     per layer: ceil(out*in/8) mask bytes (row-major, LSB first),
//                out*in f64 mu, out*in f64 log_sigma, f64 gamma
//     classes*width f64 head W, classes f64 head b
//   u64 FNV-1a checksum of every byte after the magic
//
// The final backbone suffices for every task: weights a task selected are
// frozen from the end of that task on.

inline constexpr char kPoolMagic[8] = {'I', 'B', 'M', 'P', 'O', 'O', 'L', '1'};

inline std::uint64_t fnv1a64(const std::uint8_t* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void matrix(const Matrix& m) {
    for (double v : m.data()) f64(v);
  }
  void mask(const LayerMask& m) {
    std::vector<std::uint8_t> packed((m.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    buf_.insert(buf_.end(), packed.begin(), packed.end());
  }
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& b, std::size_t begin, std::size_t end) : b_(b), pos_(begin), end_(end) {}

  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[pos_++]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b_[pos_++]} << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  Matrix matrix(std::size_t rows, std::size_t cols) {
    need(rows * cols * 8);
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = f64();
    return m;
  }
  LayerMask mask(std::size_t rows, std::size_t cols) {
    LayerMask m(rows, cols);
    const std::size_t nbytes = (m.size() + 7) / 8;
    need(nbytes);
    for (std::size_t i = 0; i < m.size(); ++i) m.set(i, (b_[pos_ + i / 8] >> (i % 8)) & 1u);
    const std::size_t tail = m.size() % 8;
    if (tail && (b_[pos_ + nbytes - 1] >> tail) != 0) throw Error("pool: nonzero padding bits at byte offset " + std::to_string(pos_ + nbytes - 1));
    pos_ += nbytes;
    return m;
  }
  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw Error("pool: truncated payload at byte offset " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_;
  std::size_t end_;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_pool(const Network& net, const MemoryPool& pool) {
  net.validate();
  detail::ByteWriter w;
  w.raw(kPoolMagic, sizeof kPoolMagic);
  w.u32(static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    w.u32(static_cast<std::uint32_t>(l.out_width()));
    w.u32(static_cast<std::uint32_t>(l.in_width()));
    w.u8(l.activation == Activation::relu ? 0 : 1);
  }
  for (const auto& l : net.layers) w.matrix(l.W);
  w.u32(static_cast<std::uint32_t>(pool.size()));
  for (const auto& art : pool) {
    if (art.masks.size() != net.layers.size() || art.mu_snapshot.size() != net.layers.size() ||
        art.log_sigma_snapshot.size() != net.layers.size() || art.gamma_snapshot.size() != net.layers.size())
      throw Error("save_pool: task " + std::to_string(art.task_id) + " artifact does not match the network");
    if (art.head.W.cols() != net.output_width() || art.head.b.size() != art.head.classes())
      throw Error("save_pool: task " + std::to_string(art.task_id) + " head shape mismatch");
    w.i32(art.task_id);
    w.u32(static_cast<std::uint32_t>(art.head.classes()));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const Matrix& W = net.layers[l].W;
      if (!art.masks[l].shape_matches(W) || !art.mu_snapshot[l].same_shape(W) || !art.log_sigma_snapshot[l].same_shape(W))
        throw Error("save_pool: task " + std::to_string(art.task_id) + " layer " + std::to_string(l) + " shape mismatch");
      w.mask(art.masks[l]);
      w.matrix(art.mu_snapshot[l]);
      w.matrix(art.log_sigma_snapshot[l]);
      w.f64(art.gamma_snapshot[l]);
    }
    w.matrix(art.head.W);
    w.matrix(art.head.b);
  }
  auto& bytes = w.bytes();
  const std::uint64_t sum = fnv1a64(bytes.data() + sizeof kPoolMagic, bytes.size() - sizeof kPoolMagic);
  w.u64(sum);
  return std::move(bytes);
}

/// Backbone (weights only; va-params are per task) and the task artifacts.
struct LoadedPool {
  Network net;
  MemoryPool pool;
};

inline LoadedPool deserialize_pool(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t kMagic = sizeof kPoolMagic;
  if (bytes.size() < kMagic + 8) throw Error("pool: file too short (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kPoolMagic, kMagic - 1) != 0) throw Error("pool: bad magic, not a memory-pool file");
  if (bytes[kMagic - 1] != static_cast<std::uint8_t>(kPoolMagic[kMagic - 1]))
    throw Error(std::string("pool: unsupported format version '") + static_cast<char>(bytes[kMagic - 1]) +
                "', expected '" + kPoolMagic[kMagic - 1] + "'");
  const std::size_t payload_end = bytes.size() - 8;
  detail::ByteReader tail(bytes, payload_end, bytes.size());
  const std::uint64_t stored = tail.u64();
  if (fnv1a64(bytes.data() + kMagic, payload_end - kMagic) != stored) throw Error("pool: checksum mismatch, file is corrupted");

  detail::ByteReader r(bytes, kMagic, payload_end);
  LoadedPool out;
  const std::uint32_t layer_count = r.u32();
  if (layer_count == 0) throw Error("pool: zero layers");
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const std::size_t rows = r.u32(), cols = r.u32();
    const std::uint8_t act = r.u8();
    if (act > 1) throw Error("pool: bad activation code at byte offset " + std::to_string(r.pos() - 1));
    shapes.emplace_back(rows, cols);
    VibLayer layer;
    layer.activation = act == 0 ? Activation::relu : Activation::identity;
    out.net.layers.push_back(std::move(layer));
  }
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    auto& layer = out.net.layers[l];
    layer.W = r.matrix(shapes[l].first, shapes[l].second);
    layer.mu = Matrix(layer.W.rows(), layer.W.cols());
    layer.log_sigma = Matrix(layer.W.rows(), layer.W.cols(), std::log(kInitSigma));
  }
  out.net.validate();
  const std::uint32_t task_count = r.u32();
  for (std::uint32_t t = 0; t < task_count; ++t) {
    TaskArtifact art;
    art.task_id = r.i32();
    const std::size_t classes = r.u32();
    if (classes == 0) throw Error("pool: task with zero classes");
    for (std::uint32_t l = 0; l < layer_count; ++l) {
      const auto [rows, cols] = shapes[l];
      art.masks.push_back(r.mask(rows, cols));
      art.mu_snapshot.push_back(r.matrix(rows, cols));
      art.log_sigma_snapshot.push_back(r.matrix(rows, cols));
      art.gamma_snapshot.push_back(r.f64());
    }
    art.head.W = r.matrix(classes, out.net.output_width());
    art.head.b = r.matrix(1, classes);
    if (out.net.heads.count(art.task_id)) throw Error("pool: duplicate task id " + std::to_string(art.task_id));
    out.net.heads.emplace(art.task_id, art.head);
    out.pool.push_back(std::move(art));
  }
  if (!r.at_end()) throw Error("pool: trailing bytes at offset " + std::to_string(r.pos()));
  return out;
}

inline void save_pool(const std::string& path, const Network& net, const MemoryPool& pool) {
  write_file_bytes(path, serialize_pool(net, pool));
}

inline LoadedPool load_pool(const std::string& path) { return deserialize_pool(read_file_bytes(path)); }

}  // namespace ibm
