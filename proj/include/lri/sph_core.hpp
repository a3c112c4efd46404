#pragma once

// Complex spherical harmonics, rotations, Wigner-D and Clebsch-Gordan matrices.
//
// Conventions used throughout the library:
//  * Y_n^m is orthonormal on the unit sphere and carries the Condon-Shortley
//    phase, so Y_n^{-m} = (-1)^m conj(Y_n^m).
//  * theta is the elevation (polar angle from +x3), phi the azimuth in the
//    (x1, x2) plane.
//  * wigner_d(n, R) is defined by steerability,
//        Y_n^m(R u) = sum_{m'} D_n(R)[m', m] Y_n^{m'}(u),
//    which makes R -> D_n(R) an anti-homomorphism: D(R1 R2) = D(R2) D(R1).
//  * Matrix indices run over m = -n..n, stored at offset m + n.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lri/error.hpp"

namespace lri {

using cplx = std::complex<double>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kMaxDegree = 20;

struct SphericalCoords {
  double rho = 0.0;
  double theta = 0.0;
  double phi = 0.0;
};

/// The origin maps to theta = phi = 0.
inline SphericalCoords to_spherical(const Vec3& x) {
  const double rho = x.norm();
  if (rho == 0.0) return {0.0, 0.0, 0.0};
  const double theta = std::acos(std::clamp(x[2] / rho, -1.0, 1.0));
  double phi = std::atan2(x[1], x[0]);
  if (phi < 0.0) phi += 2.0 * std::numbers::pi;
  if (phi >= 2.0 * std::numbers::pi) phi = 0.0;
  return {rho, theta, phi};
}

inline Vec3 to_cartesian(const SphericalCoords& s) {
  const double st = std::sin(s.theta);
  return {s.rho * st * std::cos(s.phi), s.rho * st * std::sin(s.phi), s.rho * std::cos(s.theta)};
}

// ---------------------------------------------------------------------------
// Rotations

struct EulerZYZ {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
};

inline Mat3 rot_z(double a) {
  Mat3 m;
  m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return m;
}

inline Mat3 rot_y(double b) {
  Mat3 m;
  m << std::cos(b), 0, std::sin(b), 0, 1, 0, -std::sin(b), 0, std::cos(b);
  return m;
}

/// Proper rotation of R^3, stored as an orthogonal matrix with determinant +1.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  static Rotation identity() { return {}; }

  /// Validates orthogonality and orientation to `tol`.
  static Rotation from_matrix(const Mat3& m, double tol = 1e-9) {
    const double orth = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!(orth <= tol) || !(std::abs(m.determinant() - 1.0) <= tol))
      throw DomainError("rotation matrix is not orthogonal with determinant +1");
    Rotation r;
    r.m_ = m;
    return r;
  }

  /// R = Rz(alpha) Ry(beta) Rz(gamma).
  static Rotation from_euler(const EulerZYZ& e) {
    Rotation r;
    r.m_ = rot_z(e.alpha) * rot_y(e.beta) * rot_z(e.gamma);
    return r;
  }

  static Rotation about_axis(const Vec3& axis, double angle) {
    Rotation r;
    r.m_ = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
    return r;
  }

  /// Unit quaternion (w, x, y, z); need not be normalized.
  static Rotation from_quaternion(double w, double x, double y, double z) {
    Eigen::Quaterniond q(w, x, y, z);
    if (q.norm() == 0.0) throw DomainError("zero quaternion");
    q.normalize();
    Rotation r;
    r.m_ = q.toRotationMatrix();
    return r;
  }

  const Mat3& matrix() const { return m_; }
  Vec3 apply(const Vec3& v) const { return m_ * v; }
  Rotation inverse() const {
    Rotation r;
    r.m_ = m_.transpose();
    return r;
  }
  friend Rotation operator*(const Rotation& a, const Rotation& b) {
    Rotation r;
    r.m_ = a.m_ * b.m_;
    return r;
  }

  EulerZYZ euler() const {
    const Mat3& r = m_;
    const double sb = std::hypot(r(2, 0), r(2, 1));
    const double beta = std::atan2(sb, r(2, 2));
    if (sb > 1e-12) {
      return {std::atan2(r(1, 2), r(0, 2)), beta, std::atan2(r(2, 1), -r(2, 0))};
    }
    if (r(2, 2) > 0.0) return {std::atan2(r(1, 0), r(0, 0)), 0.0, 0.0};
    return {std::atan2(-r(1, 0), -r(0, 0)), std::numbers::pi, 0.0};
  }

  std::array<double, 4> quaternion() const {
    Eigen::Quaterniond q(m_);
    return {q.w(), q.x(), q.y(), q.z()};
  }

 private:
  Mat3 m_;
};

/// Haar-uniform rotation from a normalized Gaussian quaternion.
template <class Rng>
Rotation random_rotation(Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    const double w = g(rng), x = g(rng), y = g(rng), z = g(rng);
    if (w * w + x * x + y * y + z * z > 1e-20) return Rotation::from_quaternion(w, x, y, z);
  }
}

/// The 24 rotations mapping the cubic lattice onto itself (signed permutation
/// matrices with determinant +1).
inline std::vector<Rotation> octahedral_group() {
  std::vector<Rotation> out;
  const std::array<std::array<int, 3>, 6> perms{{{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  for (const auto& p : perms) {
    for (int signs = 0; signs < 8; ++signs) {
      Mat3 m = Mat3::Zero();
      for (int r = 0; r < 3; ++r) m(r, p[r]) = (signs >> r & 1) ? -1.0 : 1.0;
      if (m.determinant() > 0.0) out.push_back(Rotation::from_matrix(m));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spherical harmonics

/// Index of (n, m) in a flat table holding every order of degrees 0..N.
inline constexpr int sh_index(int n, int m) { return n * n + n + m; }
inline constexpr int sh_count(int max_degree) { return (max_degree + 1) * (max_degree + 1); }

/// All Y_n^m(theta, phi) for n <= max_degree, laid out by sh_index.
inline std::vector<cplx> sh_table(int max_degree, double theta, double phi) {
  if (max_degree < 0) throw DomainError("negative degree");
  std::vector<cplx> out(static_cast<std::size_t>(sh_count(max_degree)));
  const double x = std::cos(theta);
  const double s = std::sin(theta);
  const double inv4pi = 1.0 / (4.0 * std::numbers::pi);
  double pmm = std::sqrt(inv4pi);  // normalized P_m^m
  for (int m = 0; m <= max_degree; ++m) {
    if (m > 0) pmm *= -std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * s;
    const cplx phase = std::polar(1.0, m * phi);
    double p_prev = 0.0;
    double p_cur = pmm;
    for (int n = m; n <= max_degree; ++n) {
      if (n == m + 1) {
        p_prev = p_cur;
        p_cur = x * std::sqrt(2.0 * m + 3.0) * pmm;
      } else if (n > m + 1) {
        const double nn = n, mm = m;
        const double a = std::sqrt((4.0 * nn * nn - 1.0) / (nn * nn - mm * mm));
        const double b = std::sqrt(((nn - 1.0) * (nn - 1.0) - mm * mm) / (4.0 * (nn - 1.0) * (nn - 1.0) - 1.0));
        const double next = a * (x * p_cur - b * p_prev);
        p_prev = p_cur;
        p_cur = next;
      }
      const cplx y = p_cur * phase;
      out[sh_index(n, m)] = y;
      if (m > 0) out[sh_index(n, -m)] = ((m & 1) ? -1.0 : 1.0) * std::conj(y);
    }
  }
  return out;
}

inline cplx eval_sh(int n, int m, double theta, double phi) {
  if (n < 0 || std::abs(m) > n) throw DomainError("eval_sh: require 0 <= |m| <= n");
  return sh_table(n, theta, phi)[sh_index(n, m)];
}

/// Y_n^m evaluated in the direction of `u` (need not be unit length, must be nonzero).
inline std::vector<cplx> sh_table(int max_degree, const Vec3& u) {
  const auto s = to_spherical(u);
  return sh_table(max_degree, s.theta, s.phi);
}

// ---------------------------------------------------------------------------
// Fourier vectors

/// Coefficient row [F_n^{-n} ... F_n^n] of one degree.
class SphericalFourierVector {
 public:
  SphericalFourierVector() = default;
  explicit SphericalFourierVector(int degree) : degree_(degree), c_(static_cast<std::size_t>(2 * degree + 1)) {
    if (degree < 0) throw DomainError("negative degree");
  }
  SphericalFourierVector(int degree, std::vector<cplx> coeffs) : degree_(degree), c_(std::move(coeffs)) {
    if (degree < 0 || c_.size() != static_cast<std::size_t>(2 * degree + 1))
      throw DomainError("Fourier vector of degree " + std::to_string(degree) + " needs 2n+1 coefficients");
  }

  int degree() const { return degree_; }
  cplx& operator[](int m) { return c_[static_cast<std::size_t>(m + degree_)]; }
  cplx operator[](int m) const { return c_[static_cast<std::size_t>(m + degree_)]; }
  std::span<const cplx> coeffs() const { return c_; }
  std::span<cplx> coeffs() { return c_; }

  double norm() const {
    double s = 0.0;
    for (const auto& v : c_) s += std::norm(v);
    return std::sqrt(s);
  }

  /// True if F^{-m} = (-1)^m conj(F^m) to `tol`, i.e. the coefficients of a real function.
  bool is_real_symmetric(double tol) const {
    for (int m = 0; m <= degree_; ++m) {
      const cplx expected = ((m & 1) ? -1.0 : 1.0) * std::conj((*this)[m]);
      if (std::abs((*this)[-m] - expected) > tol) return false;
    }
    return true;
  }

 private:
  int degree_ = 0;
  std::vector<cplx> c_{cplx{}};
};

// ---------------------------------------------------------------------------
// Wigner-D

namespace detail {

// Eigen-decomposition of J_x for one degree. J_x is real symmetric tridiagonal,
// and J_y = U J_x U^dagger with U = exp(-i pi/2 J_z), so the small-d matrix
// exp(-i beta J_y) follows from one real eigenbasis per degree.
struct JxBasis {
  Eigen::MatrixXd vectors;
  Eigen::VectorXd values;
};

inline const std::vector<JxBasis>& jx_bases() {
  static const std::vector<JxBasis> bases = [] {
    std::vector<JxBasis> out;
    for (int n = 0; n <= kMaxDegree; ++n) {
      const int d = 2 * n + 1;
      Eigen::MatrixXd jx = Eigen::MatrixXd::Zero(d, d);
      for (int m = -n; m < n; ++m) {
        const double v = 0.5 * std::sqrt(double(n * (n + 1) - m * (m + 1)));
        jx(m + 1 + n, m + n) = v;
        jx(m + n, m + 1 + n) = v;
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jx);
      out.push_back({es.eigenvectors(), es.eigenvalues()});
    }
    return out;
  }();
  return bases;
}

inline void check_degree(int n) {
  if (n < 0 || n > kMaxDegree) throw DomainError("degree must lie in [0, " + std::to_string(kMaxDegree) + "]");
}

}  // namespace detail

/// Real small-d matrix d^n_{m'm}(beta) = <n m'| exp(-i beta J_y) |n m>.
inline Eigen::MatrixXd small_d(int n, double beta) {
  detail::check_degree(n);
  const auto& b = detail::jx_bases()[static_cast<std::size_t>(n)];
  const int d = 2 * n + 1;
  Eigen::VectorXcd ph(d);
  for (int k = 0; k < d; ++k) ph[k] = std::polar(1.0, -beta * b.values[k]);
  const Eigen::MatrixXcd ex = b.vectors.cast<cplx>() * ph.asDiagonal() * b.vectors.transpose().cast<cplx>();
  Eigen::MatrixXd out(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      // U = diag(exp(-i pi m / 2)); the product is real up to rounding.
      const cplx u = std::polar(1.0, -0.5 * std::numbers::pi * ((i - n) - (j - n)));
      out(i, j) = (u * ex(i, j)).real();
    }
  }
  return out;
}

struct WignerD {
  int degree = 0;
  Eigen::MatrixXcd matrix;
  cplx operator()(int m_row, int m_col) const { return matrix(m_row + degree, m_col + degree); }
};

/// Standard active-rotation matrix <n m'| U(R) |n m> = e^{-i m' a} d_{m'm}(b) e^{-i m g}.
inline Eigen::MatrixXcd wigner_d_active(int n, const EulerZYZ& e) {
  const Eigen::MatrixXd d = small_d(n, e.beta);
  const int dim = 2 * n + 1;
  Eigen::MatrixXcd out(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j)
      out(i, j) = std::polar(d(i, j), -(i - n) * e.alpha - (j - n) * e.gamma);
  return out;
}

/// D_n(R) with Y_n^m(R u) = sum_{m'} D_n(R)[m', m] Y_n^{m'}(u).
inline WignerD wigner_d(int n, const Rotation& r) {
  detail::check_degree(n);
  // Re-validate: Rotation values can be built from unchecked Eigen arithmetic upstream.
  (void)Rotation::from_matrix(r.matrix(), 1e-8);
  // Y(R u) is the active rotation by R^{-1} applied to Y.
  return {n, wigner_d_active(n, r.inverse().euler())};
}

/// Coefficient row of f(R .) given the row F of f: F D_n(R)^T.
///
/// Under the steerability convention above this is the row-vector action of
/// the representation; it preserves the Euclidean norm.
inline SphericalFourierVector rotate_fourier_vector(const SphericalFourierVector& f, const Rotation& r) {
  const int n = f.degree();
  const WignerD d = wigner_d(n, r);
  SphericalFourierVector out(n);
  for (int mp = -n; mp <= n; ++mp) {
    cplx acc{};
    for (int m = -n; m <= n; ++m) acc += d(mp, m) * f[m];
    out[mp] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clebsch-Gordan

namespace detail {

inline double log_fact(int k) { return std::lgamma(double(k) + 1.0); }

}  // namespace detail

/// <n1 m1 n2 m2 | n m> by Racah's formula in log-gamma arithmetic. Zero outside
/// the selection rules.
inline double clebsch_gordan_coefficient(int n1, int m1, int n2, int m2, int n, int m) {
  if (m1 + m2 != m) return 0.0;
  if (n < std::abs(n1 - n2) || n > n1 + n2) return 0.0;
  if (std::abs(m1) > n1 || std::abs(m2) > n2 || std::abs(m) > n) return 0.0;
  using detail::log_fact;
  const double log_pre =
      0.5 * (std::log(2.0 * n + 1.0) + log_fact(n + n1 - n2) + log_fact(n - n1 + n2) + log_fact(n1 + n2 - n) -
             log_fact(n1 + n2 + n + 1) + log_fact(n + m) + log_fact(n - m) + log_fact(n1 - m1) + log_fact(n1 + m1) +
             log_fact(n2 - m2) + log_fact(n2 + m2));
  const int kmin = std::max({0, n2 - n - m1, n1 + m2 - n});
  const int kmax = std::min({n1 + n2 - n, n1 - m1, n2 + m2});
  double sum = 0.0;
  for (int k = kmin; k <= kmax; ++k) {
    const double t = std::exp(log_pre - (log_fact(k) + log_fact(n1 + n2 - n - k) + log_fact(n1 - m1 - k) +
                                         log_fact(n2 + m2 - k) + log_fact(n - n2 + m1 + k) +
                                         log_fact(n - n1 - m2 + k)));
    sum += (k & 1) ? -t : t;
  }
  return sum;
}

/// Real orthogonal change of basis with
///   D_{n1}(R) (x) D_{n2}(R) = C [ (+)_{n=|n1-n2|}^{n1+n2} D_n(R) ] C^T.
///
/// Rows are the product basis (m1, m2) (m2 fastest); columns are the coupled
/// basis (n, m), blocks ordered by increasing n.
class CGMatrix {
 public:
  CGMatrix(int n1, int n2) : n1_(n1), n2_(n2) {
    if (n1 < 0 || n2 < 0) throw DomainError("Clebsch-Gordan degrees must be non-negative");
    const int dim = (2 * n1 + 1) * (2 * n2 + 1);
    mat_ = Eigen::MatrixXd::Zero(dim, dim);
    for (int n = std::abs(n1 - n2); n <= n1 + n2; ++n)
      for (int m = -n; m <= n; ++m)
        for (int m1 = -n1; m1 <= n1; ++m1) {
          const int m2 = m - m1;
          if (std::abs(m2) > n2) continue;
          mat_(product_index(m1, m2), coupled_index(n, m)) = clebsch_gordan_coefficient(n1, m1, n2, m2, n, m);
        }
  }

  int n1() const { return n1_; }
  int n2() const { return n2_; }
  int dim() const { return static_cast<int>(mat_.rows()); }
  const Eigen::MatrixXd& matrix() const { return mat_; }

  int product_index(int m1, int m2) const { return (m1 + n1_) * (2 * n2_ + 1) + (m2 + n2_); }
  int coupled_index(int n, int m) const {
    const int lo = std::abs(n1_ - n2_);
    // sum_{k=lo}^{n-1} (2k+1) = n^2 - lo^2
    return n * n - lo * lo + (m + n);
  }

  /// C[(n, m), (m1, m2)] = <n1 m1 n2 m2 | n m>.
  double coeff(int n, int m, int m1, int m2) const {
    if (n < std::abs(n1_ - n2_) || n > n1_ + n2_ || std::abs(m) > n || std::abs(m1) > n1_ || std::abs(m2) > n2_)
      throw DomainError("Clebsch-Gordan index out of range");
    return mat_(product_index(m1, m2), coupled_index(n, m));
  }

 private:
  int n1_;
  int n2_;
  Eigen::MatrixXd mat_;
};

inline CGMatrix clebsch_gordan(int n1, int n2) { return CGMatrix(n1, n2); }

}  // namespace lri
