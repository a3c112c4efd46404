#pragma once

// Exact pooled-feature statistics for training.
//
// With global (or masked) average pooling, each pooled SSE feature is a
// quadratic form in the radial weights of one degree and each pooled SSB
// feature a trilinear form in the weights of its three degrees:
//     s_{q,n}       = w_{q,n}^T M_n w_{q,n}
//     b_{q,n,n',l}  = sum T_{n,n',l}[j1][j2][j3] w_{q,n,j1} w_{q,n',j2} w_{q,l,j3}
// M and T depend only on the volume, so they are computed once per sample and
// every training step afterwards costs O(J^3) per feature instead of a full
// pass over the volume. Values and gradients match LriLayer to rounding.

#include <span>
#include <vector>

#include "lri/lri_layer.hpp"

namespace lri {

class PooledMoments {
 public:
  PooledMoments() = default;

  /// Computes M_n (spectrum) or T_t (bispectrum) from the basis responses of `vol`.
  PooledMoments(const Volume3D& vol, const LriLayer& layer) {
    const auto& cfg = layer.config();
    kind_ = cfg.kind;
    max_degree_ = cfg.max_degree;
    nj_ = layer.basis().radial_count();
    const auto cache = layer.prepare(vol);
    const auto& basis = cache.basis;
    const double inv = 1.0 / static_cast<double>(cache.pool_count);
    const std::size_t nj = static_cast<std::size_t>(nj_);

    if (kind_ == InvariantKind::spectrum) {
      data_.assign(static_cast<std::size_t>(max_degree_ + 1) * nj * nj, 0.0);
      for (std::size_t x = 0; x < basis.voxels(); ++x) {
        if (!cache.pool_mask.empty() && !cache.pool_mask[x]) continue;
        if (basis.is_zero(x)) continue;
        const auto b = basis.at(x);
        for (int n = 0; n <= max_degree_; ++n) {
          double* mat = &data_[static_cast<std::size_t>(n) * nj * nj];
          const double norm = 1.0 / (2.0 * n + 1.0);
          for (int m = 0; m <= n; ++m) {
            const cplx* row = b.data() + static_cast<std::size_t>(half_sh_index(n, m)) * nj;
            const double f = (m == 0 ? 1.0 : 2.0) * norm;
            for (std::size_t a = 0; a < nj; ++a)
              for (std::size_t c = 0; c < nj; ++c) mat[a * nj + c] += f * (row[a] * std::conj(row[c])).real();
          }
        }
      }
      for (auto& v : data_) v *= inv;
      return;
    }

    // Bispectrum. Terms (m1, m2) and (-m1, -m2) contribute equal projected
    // values for real input, so only one of each pair is evaluated.
    plans_ = layer.plans();
    const std::size_t per = nj * nj * nj;
    data_.assign(plans_.size() * per, 0.0);
    struct HalfTerm {
      int m1, m2;
      double weight;
    };
    std::vector<std::vector<HalfTerm>> half(plans_.size());
    for (std::size_t k = 0; k < plans_.size(); ++k) {
      if (plans_[k].triple.identically_zero()) continue;
      for (const auto& t : plans_[k].terms) {
        if (t.m1 > 0 || (t.m1 == 0 && t.m2 > 0)) half[k].push_back({t.m1, t.m2, 2.0 * t.coeff});
        else if (t.m1 == 0 && t.m2 == 0) half[k].push_back({0, 0, t.coeff});
      }
    }
    std::vector<cplx> ab(nj * nj);
    auto fetch = [&](std::span<const cplx> b, int n, int m, std::size_t j) {
      const cplx v = b[static_cast<std::size_t>(half_sh_index(n, std::abs(m))) * nj + j];
      return m >= 0 ? v : ((m & 1) ? -1.0 : 1.0) * std::conj(v);
    };
    for (std::size_t x = 0; x < basis.voxels(); ++x) {
      if (!cache.pool_mask.empty() && !cache.pool_mask[x]) continue;
      if (basis.is_zero(x)) continue;
      const auto b = basis.at(x);
      for (std::size_t k = 0; k < plans_.size(); ++k) {
        const auto& tr = plans_[k].triple;
        const cplx proj = tr.takes_imaginary_part() ? cplx(0.0, -1.0) : cplx(1.0, 0.0);
        double* ten = &data_[k * per];
        for (const auto& ht : half[k]) {
          const int m = ht.m1 + ht.m2;
          for (std::size_t a = 0; a < nj; ++a) {
            const cplx va = proj * ht.weight * fetch(b, tr.n, ht.m1, a);
            for (std::size_t c = 0; c < nj; ++c) ab[a * nj + c] = va * fetch(b, tr.n_prime, ht.m2, c);
          }
          for (std::size_t e = 0; e < nj; ++e) {
            const cplx d = std::conj(fetch(b, tr.ell, m, e));
            const double dr = d.real(), di = d.imag();
            for (std::size_t ac = 0; ac < nj * nj; ++ac) ten[ac * nj + e] += ab[ac].real() * dr - ab[ac].imag() * di;
          }
        }
      }
    }
    for (auto& v : data_) v *= inv;
  }

  InvariantKind kind() const { return kind_; }
  int radial_count() const { return nj_; }
  const std::vector<double>& data() const { return data_; }

  /// Pooled features for every stream of `bank`, stream-major.
  std::vector<double> pooled(const RadialProfileBank& bank) const {
    check(bank);
    std::vector<double> out;
    const std::size_t nj = static_cast<std::size_t>(nj_);
    for (int q = 0; q < bank.streams(); ++q) {
      if (kind_ == InvariantKind::spectrum) {
        for (int n = 0; n <= max_degree_; ++n) {
          const double* w = &bank.weights()[bank.index(q, n, 0)];
          const double* mat = &data_[static_cast<std::size_t>(n) * nj * nj];
          double acc = 0.0;
          for (std::size_t a = 0; a < nj; ++a)
            for (std::size_t c = 0; c < nj; ++c) acc += w[a] * mat[a * nj + c] * w[c];
          out.push_back(acc);
        }
      } else {
        for (std::size_t k = 0; k < plans_.size(); ++k) {
          const auto& t = plans_[k].triple;
          const double* w1 = &bank.weights()[bank.index(q, t.n, 0)];
          const double* w2 = &bank.weights()[bank.index(q, t.n_prime, 0)];
          const double* w3 = &bank.weights()[bank.index(q, t.ell, 0)];
          const double* ten = &data_[k * nj * nj * nj];
          double acc = 0.0;
          for (std::size_t a = 0; a < nj; ++a)
            for (std::size_t c = 0; c < nj; ++c) {
              const double wac = w1[a] * w2[c];
              const double* row = ten + (a * nj + c) * nj;
              double inner = 0.0;
              for (std::size_t e = 0; e < nj; ++e) inner += row[e] * w3[e];
              acc += wac * inner;
            }
          out.push_back(acc);
        }
      }
    }
    return out;
  }

  /// Accumulates d(sum_k upstream[k] * pooled[k]) / dw into `grad`.
  void backward(const RadialProfileBank& bank, std::span<const double> upstream, RadialProfileBank& grad) const {
    check(bank);
    check(grad);
    const std::size_t nj = static_cast<std::size_t>(nj_);
    const std::size_t per = kind_ == InvariantKind::spectrum ? static_cast<std::size_t>(max_degree_ + 1) : plans_.size();
    if (upstream.size() != per * static_cast<std::size_t>(bank.streams())) throw ShapeError("upstream gradient width mismatch");
    for (int q = 0; q < bank.streams(); ++q) {
      for (std::size_t k = 0; k < per; ++k) {
        const double u = upstream[static_cast<std::size_t>(q) * per + k];
        if (u == 0.0) continue;
        if (kind_ == InvariantKind::spectrum) {
          const int n = static_cast<int>(k);
          const double* w = &bank.weights()[bank.index(q, n, 0)];
          double* g = &grad.weights()[grad.index(q, n, 0)];
          const double* mat = &data_[k * nj * nj];
          for (std::size_t a = 0; a < nj; ++a) {
            double acc = 0.0;
            for (std::size_t c = 0; c < nj; ++c) acc += (mat[a * nj + c] + mat[c * nj + a]) * w[c];
            g[a] += u * acc;
          }
        } else {
          const auto& t = plans_[k].triple;
          const double* w1 = &bank.weights()[bank.index(q, t.n, 0)];
          const double* w2 = &bank.weights()[bank.index(q, t.n_prime, 0)];
          const double* w3 = &bank.weights()[bank.index(q, t.ell, 0)];
          double* g1 = &grad.weights()[grad.index(q, t.n, 0)];
          double* g2 = &grad.weights()[grad.index(q, t.n_prime, 0)];
          double* g3 = &grad.weights()[grad.index(q, t.ell, 0)];
          const double* ten = &data_[k * nj * nj * nj];
          for (std::size_t a = 0; a < nj; ++a)
            for (std::size_t c = 0; c < nj; ++c) {
              const double* row = ten + (a * nj + c) * nj;
              double inner = 0.0;
              for (std::size_t e = 0; e < nj; ++e) {
                inner += row[e] * w3[e];
                g3[e] += u * w1[a] * w2[c] * row[e];
              }
              g1[a] += u * w2[c] * inner;
              g2[c] += u * w1[a] * inner;
            }
        }
      }
    }
  }

 private:
  void check(const RadialProfileBank& bank) const {
    if (bank.max_degree() != max_degree_ || bank.radial_count() != nj_)
      throw ConfigError("radial bank does not match the pooled moments");
  }

  InvariantKind kind_ = InvariantKind::spectrum;
  int max_degree_ = 0;
  int nj_ = 0;
  std::vector<TriplePlan> plans_;
  std::vector<double> data_;
};

}  // namespace lri
