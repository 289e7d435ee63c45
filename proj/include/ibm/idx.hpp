#pragma once

#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ibm/data.hpp"

namespace ibm {

/// Raw contents of an IDX file: element type code, big-endian dimension
/// sizes, and the untouched payload bytes.
struct IdxArray {
  std::uint8_t type = 0x08;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  friend bool operator==(const IdxArray&, const IdxArray&) = default;
};

inline std::size_t idx_element_size(std::uint8_t type) {
  switch (type) {
    case 0x08:  // unsigned byte
    case 0x09:  // signed byte
      return 1;
    case 0x0B:  // short
      return 2;
    case 0x0C:  // int
    case 0x0D:  // float
      return 4;
    case 0x0E:  // double
      return 8;
    default:
      return 0;
  }
}

inline IdxArray parse_idx(const std::vector<std::uint8_t>& bytes, const std::string& name = "idx") {
  auto fail = [&](std::size_t offset, const std::string& what) {
    throw Error(name + ": " + what + " at byte offset " + std::to_string(offset));
  };
  if (bytes.size() < 4) fail(bytes.size(), "truncated header");
  if (bytes[0] != 0 || bytes[1] != 0) fail(0, "bad magic (first two bytes must be zero)");
  IdxArray arr;
  arr.type = bytes[2];
  const std::size_t esize = idx_element_size(arr.type);
  if (esize == 0) fail(2, "unknown element type 0x" + std::to_string(arr.type));
  const std::size_t ndims = bytes[3];
  if (ndims == 0) fail(3, "zero dimensions");
  std::size_t pos = 4;
  if (bytes.size() < pos + 4 * ndims) fail(bytes.size(), "truncated dimension table");
  for (std::size_t d = 0; d < ndims; ++d, pos += 4) {
    const std::uint32_t v = (std::uint32_t{bytes[pos]} << 24) | (std::uint32_t{bytes[pos + 1]} << 16) |
                            (std::uint32_t{bytes[pos + 2]} << 8) | std::uint32_t{bytes[pos + 3]};
    arr.dims.push_back(v);
  }
  const std::size_t expected = arr.element_count() * esize;
  if (bytes.size() - pos < expected)
    fail(bytes.size(), "truncated payload (expected " + std::to_string(expected) + " bytes after offset " +
                           std::to_string(pos) + ")");
  if (bytes.size() - pos > expected) fail(pos + expected, "trailing bytes after payload");
  arr.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return arr;
}

inline std::vector<std::uint8_t> serialize_idx(const IdxArray& arr) {
  if (idx_element_size(arr.type) == 0) throw Error("serialize_idx: unknown element type");
  if (arr.dims.empty() || arr.dims.size() > 255) throw Error("serialize_idx: bad dimension count");
  if (arr.data.size() != arr.element_count() * idx_element_size(arr.type))
    throw Error("serialize_idx: payload size does not match dimensions");
  std::vector<std::uint8_t> out{0, 0, arr.type, static_cast<std::uint8_t>(arr.dims.size())};
  for (auto d : arr.dims)
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(d >> shift));
  out.insert(out.end(), arr.data.begin(), arr.data.end());
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path);
}

inline IdxArray read_idx(const std::string& path) { return parse_idx(read_file_bytes(path), path); }
inline void write_idx(const std::string& path, const IdxArray& arr) { write_file_bytes(path, serialize_idx(arr)); }

/// Partition of original classes into tasks. Within a task, labels are
/// remapped to the position of the class in its group. The trailing
/// `test_fraction` of each task's examples (file order) becomes its test split.
struct IdxSplit {
  std::vector<std::vector<int>> class_groups;
  double test_fraction = 0.2;
};

inline std::vector<TaskDataset> ingest_idx(const IdxArray& images, const IdxArray& labels, const IdxSplit& split) {
  if (images.type != 0x08) throw Error("ingest_idx: images must be unsigned bytes (type 0x08)");
  if (labels.type != 0x08) throw Error("ingest_idx: labels must be unsigned bytes (type 0x08)");
  if (labels.dims.size() != 1) throw Error("ingest_idx: labels must be one-dimensional");
  if (images.dims.empty() || images.dims[0] != labels.dims[0])
    throw Error("ingest_idx: image count does not match label count");
  if (split.class_groups.empty()) throw Error("ingest_idx: no class groups");
  if (!(split.test_fraction > 0.0 && split.test_fraction < 1.0))
    throw Error("ingest_idx: test_fraction must lie in (0,1)");

  const std::size_t n = images.dims[0];
  const std::size_t width = n ? images.element_count() / n : 0;
  std::vector<TaskDataset> out;
  for (std::size_t t = 0; t < split.class_groups.size(); ++t) {
    const auto& group = split.class_groups[t];
    if (group.empty()) throw Error("ingest_idx: empty class group " + std::to_string(t));
    std::vector<std::size_t> rows;
    std::vector<int> y;
    for (std::size_t i = 0; i < n; ++i) {
      auto it = std::find(group.begin(), group.end(), static_cast<int>(labels.data[i]));
      if (it == group.end()) continue;
      rows.push_back(i);
      y.push_back(static_cast<int>(it - group.begin()));
    }
    const std::size_t n_test = static_cast<std::size_t>(std::ceil(split.test_fraction * static_cast<double>(rows.size())));
    if (rows.size() < 2 || n_test == 0 || n_test >= rows.size())
      throw Error("ingest_idx: task " + std::to_string(t) + " has too few examples (" +
                  std::to_string(rows.size()) + ")");
    const std::size_t n_train = rows.size() - n_test;
    TaskDataset ds;
    ds.task_id = static_cast<int>(t);
    ds.class_count = group.size();
    ds.train_x = Matrix(n_train, width);
    ds.test_x = Matrix(n_test, width);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      Matrix& dst = k < n_train ? ds.train_x : ds.test_x;
      const std::size_t r = k < n_train ? k : k - n_train;
      for (std::size_t c = 0; c < width; ++c) dst(r, c) = images.data[rows[k] * width + c] / 255.0;
      (k < n_train ? ds.train_y : ds.test_y).push_back(y[k]);
    }
    out.push_back(std::move(ds));
  }
  return out;
}

inline std::vector<TaskDataset> ingest_idx(const std::string& images_path, const std::string& labels_path,
                                           const IdxSplit& split) {
  return ingest_idx(read_idx(images_path), read_idx(labels_path), split);
}

}  // namespace ibm
