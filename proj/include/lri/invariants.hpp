#pragma once

// Rotation invariants of spherical Fourier vectors: the spectrum and the
// bispectrum, plus the enumeration of bispectrum index triples.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "lri/sph_core.hpp"

namespace lri {

struct BispectrumTriple {
  int n = 0;
  int n_prime = 0;
  int ell = 0;

  /// b is real when n + n' + l is even and purely imaginary otherwise (real inputs).
  bool takes_imaginary_part() const { return ((n + n_prime + ell) & 1) != 0; }
  /// b^l_{n,n} vanishes for odd l.
  bool identically_zero() const { return n == n_prime && (ell & 1); }
  std::string label() const {
    return std::to_string(n) + "," + std::to_string(n_prime) + "," + std::to_string(ell);
  }
  friend bool operator==(const BispectrumTriple&, const BispectrumTriple&) = default;
  friend auto operator<=>(const BispectrumTriple&, const BispectrumTriple&) = default;
};

/// s_n = |F_n|^2 / (2n+1).
inline double spectrum(const SphericalFourierVector& f) {
  double s = 0.0;
  for (const auto& v : f.coeffs()) s += std::norm(v);
  return s / (2.0 * f.degree() + 1.0);
}

/// b^l_{n,n'} = [F_n (x) F_n'] C_{nn'} ~F_l^dagger, summed over the nonzero
/// entries m = m1 + m2 of the Clebsch-Gordan matrix.
inline cplx bispectrum(const SphericalFourierVector& fn, const SphericalFourierVector& fnp,
                       const SphericalFourierVector& fl, const CGMatrix& cg) {
  const int n = fn.degree(), np = fnp.degree(), l = fl.degree();
  if (cg.n1() != n || cg.n2() != np) throw DomainError("bispectrum: CG matrix degrees do not match inputs");
  if (l < std::abs(n - np) || l > n + np) throw DomainError("bispectrum: l outside |n-n'| <= l <= n+n'");
  cplx acc{};
  for (int m1 = -n; m1 <= n; ++m1) {
    for (int m2 = -np; m2 <= np; ++m2) {
      const int m = m1 + m2;
      if (std::abs(m) > l) continue;
      acc += fn[m1] * fnp[m2] * cg.coeff(l, m, m1, m2) * std::conj(fl[m]);
    }
  }
  return acc;
}

/// Real part for even n+n'+l, imaginary part for odd.
inline double parity_project(cplx b, const BispectrumTriple& t) {
  return t.takes_imaginary_part() ? b.imag() : b.real();
}

/// Sorted triples n <= n' <= l <= n+n' with n+n' <= N, lexicographic.
/// `prune_zero` drops the identically vanishing (n, n, odd l) entries.
inline std::vector<BispectrumTriple> enumerate_triples(int max_degree, bool prune_zero = false) {
  if (max_degree < 0) throw DomainError("enumerate_triples: negative degree");
  std::vector<BispectrumTriple> out;
  for (int n = 0; 2 * n <= max_degree; ++n)
    for (int np = n; n + np <= max_degree; ++np)
      for (int l = np; l <= n + np; ++l) {
        BispectrumTriple t{n, np, l};
        if (prune_zero && t.identically_zero()) continue;
        out.push_back(t);
      }
  return out;
}

/// Closed form of |enumerate_triples(N)|.
inline std::int64_t triple_count(int max_degree) {
  std::int64_t total = 0;
  for (std::int64_t n = 0; 2 * n <= max_degree; ++n) total += (n + 1) * (max_degree + 1 - 2 * n);
  return total;
}

/// Every sorted triple whose three degrees are all <= N (the triangle rule
/// bounds l, not n+n'). Used by the toy experiments, which look at all
/// couplings among a fixed set of degrees.
inline std::vector<BispectrumTriple> enumerate_triples_bounded(int max_degree) {
  std::vector<BispectrumTriple> out;
  for (int n = 0; n <= max_degree; ++n)
    for (int np = n; np <= max_degree; ++np)
      for (int l = np; l <= std::min(n + np, max_degree); ++l) out.push_back({n, np, l});
  return out;
}

struct SpectrumBispectrumPair {
  cplx bispectrum;
  double spectrum;
};

/// (b^n_{0,n}, s_n). Under this normalization b^n_{0,n} = (2n+1) F_0^0 s_n.
inline SpectrumBispectrumPair spectrum_from_bispectrum_check(const SphericalFourierVector& f0,
                                                             const SphericalFourierVector& fn) {
  if (f0.degree() != 0) throw DomainError("first argument must have degree 0");
  return {bispectrum(f0, fn, fn, CGMatrix(0, fn.degree())), spectrum(fn)};
}

// ---------------------------------------------------------------------------
// Sparse evaluation plans, shared by the layer and the training caches.

/// One nonzero Clebsch-Gordan term of a bispectrum triple: coefficient and
/// orders (m1, m2), with m = m1 + m2.
struct CouplingTerm {
  int m1;
  int m2;
  double coeff;
};

/// The nonzero terms of b^l_{n,n'} for one triple.
struct TriplePlan {
  BispectrumTriple triple;
  std::vector<CouplingTerm> terms;
};

/// Immutable after construction; build once per degree bound and share.
class CGCache {
 public:
  explicit CGCache(int max_degree) : max_degree_(max_degree) {
    detail::check_degree(max_degree);
    for (int n1 = 0; n1 <= max_degree; ++n1)
      for (int n2 = 0; n2 <= max_degree; ++n2) mats_.emplace_back(n1, n2);
  }

  int max_degree() const { return max_degree_; }
  const CGMatrix& get(int n1, int n2) const {
    if (n1 < 0 || n2 < 0 || n1 > max_degree_ || n2 > max_degree_) throw DomainError("CG cache degree out of range");
    return mats_[static_cast<std::size_t>(n1 * (max_degree_ + 1) + n2)];
  }

  TriplePlan plan(const BispectrumTriple& t) const {
    TriplePlan p{t, {}};
    const CGMatrix& c = get(t.n, t.n_prime);
    for (int m1 = -t.n; m1 <= t.n; ++m1)
      for (int m2 = -t.n_prime; m2 <= t.n_prime; ++m2) {
        const int m = m1 + m2;
        if (std::abs(m) > t.ell) continue;
        const double v = c.coeff(t.ell, m, m1, m2);
        if (v != 0.0) p.terms.push_back({m1, m2, v});
      }
    return p;
  }

 private:
  int max_degree_;
  std::vector<CGMatrix> mats_;
};

}  // namespace lri
