#pragma once

// Solid spherical harmonic kernels h_{q,n}(rho) Y_n^m(theta, phi) with
// learnable radial profiles on a unit-spaced triangular basis.

#include <cmath>
#include <iostream>
#include <numbers>
#include <random>
#include <vector>

#include "lri/error.hpp"
#include "lri/sph_core.hpp"

namespace lri {

/// tri(rho - j).
inline double radial_basis(int j, double rho) {
  const double d = std::abs(rho - j);
  return d < 1.0 ? 1.0 - d : 0.0;
}

/// Number of triangle functions used for a kernel of size c (j = 0..c-2).
inline int radial_count_for_kernel(int kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel size must be odd and positive");
  return std::max(1, kernel_size - 1);
}

/// floor(pi c / 4): degrees above this alias on a c^3 grid.
inline int max_degree_bound(int kernel_size) {
  if (kernel_size < 1) throw DomainError("kernel size must be >= 1");
  return static_cast<int>(std::floor(std::numbers::pi * kernel_size / 4.0));
}

/// Weights w_{q,n,j}, dense in (q, n, j) order.
class RadialProfileBank {
 public:
  RadialProfileBank() = default;
  RadialProfileBank(int streams, int max_degree, int radial_count)
      : q_(streams), n_(max_degree), j_(radial_count),
        w_(static_cast<std::size_t>(streams) * (max_degree + 1) * radial_count, 0.0) {
    if (streams < 1 || max_degree < 0 || radial_count < 1) throw ConfigError("invalid radial bank dimensions");
  }

  int streams() const { return q_; }
  int max_degree() const { return n_; }
  /// J + 1.
  int radial_count() const { return j_; }
  std::size_t size() const { return w_.size(); }

  std::size_t index(int q, int n, int j) const {
    return (static_cast<std::size_t>(q) * (n_ + 1) + n) * j_ + j;
  }
  double& operator()(int q, int n, int j) { return w_[index(q, n, j)]; }
  double operator()(int q, int n, int j) const { return w_[index(q, n, j)]; }

  std::vector<double>& weights() { return w_; }
  const std::vector<double>& weights() const { return w_; }

 private:
  int q_ = 0;
  int n_ = 0;
  int j_ = 0;
  std::vector<double> w_;
};

/// h_{q,n}(rho) = sum_j w_{q,n,j} tri(rho - j).
inline double eval_radial(const RadialProfileBank& bank, int q, int n, double rho) {
  if (q < 0 || q >= bank.streams() || n < 0 || n > bank.max_degree()) throw DomainError("radial index out of range");
  double acc = 0.0;
  const int j0 = static_cast<int>(std::floor(rho));
  for (int j = std::max(0, j0 - 1); j <= std::min(bank.radial_count() - 1, j0 + 1); ++j)
    acc += bank(q, n, j) * radial_basis(j, rho);
  return acc;
}

/// w ~ N(0, 1) i.i.d.
template <class Rng>
RadialProfileBank init_weights(Rng& rng, int streams, int max_degree, int radial_count) {
  RadialProfileBank bank(streams, max_degree, radial_count);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& w : bank.weights()) w = g(rng);
  return bank;
}

/// Cubic c^3 grid of complex values indexed by offsets in [-(c-1)/2, (c-1)/2]^3.
struct DiscretizedKernel {
  int q = 0;
  int n = 0;
  int m = 0;
  int size = 0;
  std::vector<cplx> values;

  int radius() const { return (size - 1) / 2; }
  cplx at(int x1, int x2, int x3) const {
    const int r = radius();
    return values[static_cast<std::size_t>(((x1 + r) * size + (x2 + r)) * size + (x3 + r))];
  }
};

/// Warns on stderr when the degree exceeds the sampling bound of the kernel.
inline void warn_if_above_degree_bound(int max_degree, int kernel_size) {
  if (max_degree > max_degree_bound(kernel_size))
    std::cerr << "warning: degree " << max_degree << " exceeds floor(pi*c/4) = " << max_degree_bound(kernel_size)
              << " for kernel size " << kernel_size << "\n";
}

/// kappa^m_{q,n} sampled at voxel offsets. The center voxel holds h_{q,0}(0) Y_0^0
/// for n = 0 and exactly 0 otherwise.
inline DiscretizedKernel discretize_kernel(const RadialProfileBank& bank, int q, int n, int m, int kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel size must be odd");
  if (n < 0 || n > bank.max_degree() || std::abs(m) > n) throw DomainError("kernel order out of range");
  DiscretizedKernel k{q, n, m, kernel_size, {}};
  k.values.resize(static_cast<std::size_t>(kernel_size) * kernel_size * kernel_size);
  const int r = k.radius();
  std::size_t idx = 0;
  for (int a = -r; a <= r; ++a)
    for (int b = -r; b <= r; ++b)
      for (int c = -r; c <= r; ++c, ++idx) {
        const Vec3 x(a, b, c);
        const double rho = x.norm();
        if (rho == 0.0) {
          k.values[idx] = n == 0 ? cplx(eval_radial(bank, q, 0, 0.0) * 0.5 / std::sqrt(std::numbers::pi)) : cplx{};
          continue;
        }
        const double h = eval_radial(bank, q, n, rho);
        if (h == 0.0) continue;
        const auto s = to_spherical(x);
        k.values[idx] = h * eval_sh(n, m, s.theta, s.phi);
      }
  return k;
}

/// Per-offset data for the basis kernels psi_j Y_n^m of one kernel size and
/// degree bound. Offsets with no nonzero basis function are dropped.
struct KernelTap {
  int dx1, dx2, dx3;
  int j_lo;                // first triangle index with nonzero weight
  double psi_lo, psi_hi;   // tri(rho - j_lo), tri(rho - j_lo - 1)
  std::vector<cplx> conj_y;  // conj(Y_n^m) for m >= 0, index n(n+1)/2 + m
};

inline constexpr int half_sh_index(int n, int m) { return n * (n + 1) / 2 + m; }
inline constexpr int half_sh_count(int max_degree) { return (max_degree + 1) * (max_degree + 2) / 2; }

class KernelBasis {
 public:
  /// `radial_count` defaults to c - 1.
  KernelBasis(int kernel_size, int max_degree, int radial_count = 0)
      : size_(kernel_size), max_degree_(max_degree),
        radial_count_(radial_count > 0 ? radial_count : radial_count_for_kernel(kernel_size)) {
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel size must be odd");
    detail::check_degree(max_degree);
    const int r = (kernel_size - 1) / 2;
    for (int a = -r; a <= r; ++a)
      for (int b = -r; b <= r; ++b)
        for (int c = -r; c <= r; ++c) {
          const Vec3 x(a, b, c);
          const double rho = x.norm();
          const int j_lo = static_cast<int>(std::floor(rho));
          KernelTap t{a, b, c, j_lo, radial_basis(j_lo, rho), radial_basis(j_lo + 1, rho), {}};
          if (j_lo >= radial_count_) t.psi_lo = 0.0;
          if (j_lo + 1 >= radial_count_) t.psi_hi = 0.0;
          if (t.psi_lo == 0.0 && t.psi_hi == 0.0) continue;
          t.conj_y.assign(static_cast<std::size_t>(half_sh_count(max_degree)), cplx{});
          if (rho == 0.0) {
            t.conj_y[0] = 0.5 / std::sqrt(std::numbers::pi);
          } else {
            const auto y = sh_table(max_degree, x);
            for (int n = 0; n <= max_degree; ++n)
              for (int m = 0; m <= n; ++m) t.conj_y[half_sh_index(n, m)] = std::conj(y[sh_index(n, m)]);
          }
          taps_.push_back(std::move(t));
        }
  }

  int kernel_size() const { return size_; }
  int radius() const { return (size_ - 1) / 2; }
  int max_degree() const { return max_degree_; }
  int radial_count() const { return radial_count_; }
  const std::vector<KernelTap>& taps() const { return taps_; }

 private:
  int size_;
  int max_degree_;
  int radial_count_;
  std::vector<KernelTap> taps_;
};

}  // namespace lri
