#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfscm {

// Dense row-major tensor of doubles. Rank 0 is a scalar.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(numel_of(shape), 0.0) {}
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape))
      throw std::invalid_argument("Tensor: payload size does not match shape");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           std::multiplies<>());
  }
  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at2(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  double as_scalar() const {
    if (numel() != 1) throw std::logic_error("Tensor: not a scalar");
    return data[0];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(),
                       [](double v) { return std::isfinite(v); });
  }
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

inline double l1_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s += std::abs(v);
  return s;
}

// ---------------------------------------------------------------------------
// CFT1 binary tensor format.
//   magic "CFT1" | dtype u8 (1 = f64) | rank u8 | 2 reserved zero bytes |
//   rank x u64 LE dims | row-major f64 LE payload.
// ---------------------------------------------------------------------------

namespace detail {
inline void put_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t get_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
}  // namespace detail

inline void write_cft1(std::ostream& os, const Tensor& t) {
  os.write("CFT1", 4);
  unsigned char dtype = 1, rank = static_cast<unsigned char>(t.rank());
  unsigned char zero[2] = {0, 0};
  os.write(reinterpret_cast<const char*>(&dtype), 1);
  os.write(reinterpret_cast<const char*>(&rank), 1);
  os.write(reinterpret_cast<const char*>(zero), 2);
  for (auto d : t.shape) detail::put_u64_le(os, d);
  for (double v : t.data) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    detail::put_u64_le(os, bits);
  }
}

inline void save_cft1(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_cft1: cannot open " + path);
  write_cft1(os, t);
  if (!os) throw std::runtime_error("save_cft1: write failed on " + path);
}

inline Tensor read_cft1(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CFT1", 4) != 0)
    throw std::runtime_error("read_cft1: bad magic");
  unsigned char dtype, rank, reserved[2];
  is.read(reinterpret_cast<char*>(&dtype), 1);
  is.read(reinterpret_cast<char*>(&rank), 1);
  is.read(reinterpret_cast<char*>(reserved), 2);
  if (dtype != 1) throw std::runtime_error("read_cft1: unsupported dtype");
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(detail::get_u64_le(is));
  Tensor t(shape);
  for (double& v : t.data) {
    std::uint64_t bits = detail::get_u64_le(is);
    std::memcpy(&v, &bits, 8);
  }
  if (!is) throw std::runtime_error("read_cft1: truncated payload");
  return t;
}

inline Tensor load_cft1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_cft1: cannot open " + path);
  return read_cft1(is);
}

// PGM P5 (maxval 255) emission for 2-D tensors with values in [0,1].
inline void save_pgm(const std::string& path, const Tensor& img) {
  if (img.rank() != 2) throw std::invalid_argument("save_pgm: rank-2 tensor required");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_pgm: cannot open " + path);
  os << "P5\n" << img.shape[1] << " " << img.shape[0] << "\n255\n";
  for (double v : img.data) {
    int p = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    unsigned char b = static_cast<unsigned char>(p);
    os.write(reinterpret_cast<const char*>(&b), 1);
  }
}

// Signed difference image: midpoint 128, full scale at |diff| = 1.
inline void save_pgm_signed(const std::string& path, const Tensor& diff) {
  Tensor shifted = diff;
  for (double& v : shifted.data) v = 0.5 + 0.5 * std::clamp(v, -1.0, 1.0);
  save_pgm(path, shifted);
}

}  // namespace cfscm
