#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "lri/error.hpp"
#include "lri/sph_core.hpp"

namespace lri {

/// Grid extents; linear index is C-order with x3 fastest.
struct Shape3 {
  int d1 = 0;
  int d2 = 0;
  int d3 = 0;

  std::size_t size() const { return static_cast<std::size_t>(d1) * d2 * d3; }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * d2 + j) * d3 + k;
  }
  bool contains(int i, int j, int k) const { return i >= 0 && j >= 0 && k >= 0 && i < d1 && j < d2 && k < d3; }
  std::array<int, 3> dims() const { return {d1, d2, d3}; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Real scalar volume with an optional boolean mask of the same shape.
class Volume3D {
 public:
  Volume3D() = default;
  explicit Volume3D(Shape3 shape, double fill = 0.0) : shape_(shape), v_(shape.size(), fill) {
    if (shape.d1 < 1 || shape.d2 < 1 || shape.d3 < 1) throw ShapeError("volume dimensions must be positive");
  }
  Volume3D(Shape3 shape, std::vector<double> values) : shape_(shape), v_(std::move(values)) {
    if (v_.size() != shape_.size()) throw ShapeError("volume value count does not match shape");
  }

  const Shape3& shape() const { return shape_; }
  std::size_t size() const { return v_.size(); }
  double& operator()(int i, int j, int k) { return v_[shape_.index(i, j, k)]; }
  double operator()(int i, int j, int k) const { return v_[shape_.index(i, j, k)]; }
  /// Zero outside the grid.
  double get_or_zero(int i, int j, int k) const { return shape_.contains(i, j, k) ? (*this)(i, j, k) : 0.0; }
  std::vector<double>& values() { return v_; }
  const std::vector<double>& values() const { return v_; }

  const std::optional<std::vector<std::uint8_t>>& mask() const { return mask_; }
  void set_mask(std::vector<std::uint8_t> mask) {
    if (mask.size() != v_.size()) throw ShapeError("mask shape does not match volume");
    bool any = false;
    for (auto m : mask) any = any || m != 0;
    if (!any) throw DomainError("mask is empty");
    mask_ = std::move(mask);
  }
  void clear_mask() { mask_.reset(); }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

 private:
  Shape3 shape_;
  std::vector<double> v_;
  std::optional<std::vector<std::uint8_t>> mask_;
};

/// out(p) = in(c + R (p - c)) about the grid center c. Exact for the
/// right-angle rotations of a cubic grid; throws otherwise.
inline Volume3D rotate_grid(const Volume3D& in, const Rotation& r) {
  const Shape3 s = in.shape();
  if (s.d1 != s.d2 || s.d2 != s.d3) throw ShapeError("grid rotation needs a cubic volume");
  const Mat3& m = r.matrix();
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      if (std::abs(m(a, b) - std::round(m(a, b))) > 1e-12) throw DomainError("rotation does not map the grid onto itself");
  const double c = 0.5 * (s.d1 - 1);
  Volume3D out(s);
  std::vector<std::uint8_t> mask_out;
  if (in.mask()) mask_out.assign(s.size(), 0);
  for (int i = 0; i < s.d1; ++i)
    for (int j = 0; j < s.d2; ++j)
      for (int k = 0; k < s.d3; ++k) {
        const Vec3 src = m * Vec3(i - c, j - c, k - c) + Vec3(c, c, c);
        const int a = static_cast<int>(std::lround(src[0]));
        const int b = static_cast<int>(std::lround(src[1]));
        const int d = static_cast<int>(std::lround(src[2]));
        out(i, j, k) = in(a, b, d);
        if (in.mask()) mask_out[s.index(i, j, k)] = (*in.mask())[s.index(a, b, d)];
      }
  if (in.mask()) out.set_mask(std::move(mask_out));
  return out;
}

/// out(p) = in(p - shift), zero-filled.
inline Volume3D translate(const Volume3D& in, int s1, int s2, int s3) {
  const Shape3 s = in.shape();
  Volume3D out(s);
  for (int i = 0; i < s.d1; ++i)
    for (int j = 0; j < s.d2; ++j)
      for (int k = 0; k < s.d3; ++k) out(i, j, k) = in.get_or_zero(i - s1, j - s2, k - s3);
  return out;
}

/// Trilinear interpolation at a continuous index position, zero outside the grid.
inline double sample_trilinear(const Volume3D& v, const Vec3& p) {
  const int i0 = static_cast<int>(std::floor(p[0]));
  const int j0 = static_cast<int>(std::floor(p[1]));
  const int k0 = static_cast<int>(std::floor(p[2]));
  const double fi = p[0] - i0, fj = p[1] - j0, fk = p[2] - k0;
  double acc = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) {
        const double w = (a ? fi : 1.0 - fi) * (b ? fj : 1.0 - fj) * (c ? fk : 1.0 - fk);
        if (w != 0.0) acc += w * v.get_or_zero(i0 + a, j0 + b, k0 + c);
      }
  return acc;
}

/// out(p) = in(c + R^T (p - c)): the content rotated by R about the grid center.
inline Volume3D rotate_trilinear(const Volume3D& in, const Rotation& r) {
  const Shape3 s = in.shape();
  const Vec3 c(0.5 * (s.d1 - 1), 0.5 * (s.d2 - 1), 0.5 * (s.d3 - 1));
  const Mat3 rt = r.matrix().transpose();
  Volume3D out(s);
  for (int i = 0; i < s.d1; ++i)
    for (int j = 0; j < s.d2; ++j)
      for (int k = 0; k < s.d3; ++k) out(i, j, k) = sample_trilinear(in, rt * (Vec3(i, j, k) - c) + c);
  return out;
}

// ---------------------------------------------------------------------------
// Raw float32 files: little-endian, C-order, x3 fastest.

inline void write_f32raw(const std::string& path, const Volume3D& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  std::vector<unsigned char> buf(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float f = static_cast<float>(v.values()[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<unsigned char>(u >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError(path, "write failed");
}

inline Volume3D read_f32raw(const std::string& path, Shape3 shape) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  std::vector<unsigned char> buf(shape.size() * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError(path, "file shorter than declared shape");
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(path, "file longer than declared shape");
  std::vector<double> vals(shape.size());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= std::uint32_t(buf[i * 4 + b]) << (8 * b);
    float f;
    std::memcpy(&f, &u, 4);
    vals[i] = f;
  }
  return Volume3D(shape, std::move(vals));
}

}  // namespace lri
