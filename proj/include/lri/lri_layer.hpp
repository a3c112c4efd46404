#pragma once

// The locally rotation invariant layer: correlation of a volume with solid
// spherical harmonic kernels, voxel-wise spectrum (SSE) or bispectrum (SSB)
// maps, global/masked average pooling, and the exact gradient of the pooled
// features with respect to the radial weights.
//
// Response convention: F_{q,n}^m(x) = sum_o I(x + o) conj(kappa_{q,n}^m(o)),
// the local projection of the image around x onto Y_n^m. Because the kernels
// are linear in the radial weights,
//     F_{q,n}^m(x) = sum_j w_{q,n,j} B_{n,m,j}(x),
// where B are the responses to the weight-free basis kernels psi_j Y_n^m.
// Only m >= 0 is computed; F^{-m} = (-1)^m conj(F^m) for real input.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lri/error.hpp"
#include "lri/invariants.hpp"
#include "lri/solid_kernels.hpp"
#include "lri/sph_core.hpp"
#include "lri/volume.hpp"

namespace lri {

enum class Padding { none, zero };
enum class InvariantKind { spectrum, bispectrum };

inline std::string to_string(Padding p) { return p == Padding::zero ? "zero" : "none"; }
inline Padding parse_padding(const std::string& s) {
  if (s == "zero") return Padding::zero;
  if (s == "none") return Padding::none;
  throw ConfigError("unknown padding '" + s + "'");
}

/// Maps output grid positions to input voxels: input = origin + stride * output.
struct LayerGeometry {
  Shape3 input;
  Shape3 output;
  int stride = 1;
  int radius = 0;
  Padding padding = Padding::zero;

  static LayerGeometry make(Shape3 in, int kernel_size, int stride, Padding padding) {
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel size must be odd");
    if (stride < 1) throw ConfigError("stride must be >= 1");
    LayerGeometry g{in, {}, stride, (kernel_size - 1) / 2, padding};
    auto extent = [&](int d) {
      if (padding == Padding::zero) return (d + stride - 1) / stride;
      const int valid = d - 2 * g.radius;
      if (valid < 1) throw ShapeError("volume smaller than kernel with padding=none");
      return (valid - 1) / stride + 1;
    };
    g.output = {extent(in.d1), extent(in.d2), extent(in.d3)};
    return g;
  }

  int origin() const { return padding == Padding::zero ? 0 : radius; }
  std::array<int, 3> input_position(int i, int j, int k) const {
    return {origin() + stride * i, origin() + stride * j, origin() + stride * k};
  }
};

/// B_{n,m,j}(x) for m >= 0, laid out [x][half_sh_index(n, m)][j].
class BasisResponses {
 public:
  BasisResponses() = default;
  BasisResponses(LayerGeometry g, int max_degree, int radial_count)
      : geom_(g), max_degree_(max_degree), radial_count_(radial_count),
        stride_x_(static_cast<std::size_t>(half_sh_count(max_degree)) * radial_count),
        data_(g.output.size() * stride_x_) {}

  const LayerGeometry& geometry() const { return geom_; }
  int max_degree() const { return max_degree_; }
  int radial_count() const { return radial_count_; }
  std::size_t voxels() const { return geom_.output.size(); }

  std::span<cplx> at(std::size_t x) { return {data_.data() + x * stride_x_, stride_x_}; }
  std::span<const cplx> at(std::size_t x) const { return {data_.data() + x * stride_x_, stride_x_}; }
  cplx get(std::size_t x, int n, int m, int j) const {
    return data_[x * stride_x_ + static_cast<std::size_t>(half_sh_index(n, m)) * radial_count_ + j];
  }
  /// True when every basis response at x is zero.
  bool is_zero(std::size_t x) const {
    for (const auto& v : at(x))
      if (v != cplx{}) return false;
    return true;
  }

 private:
  LayerGeometry geom_;
  int max_degree_ = 0;
  int radial_count_ = 0;
  std::size_t stride_x_ = 0;
  std::vector<cplx> data_;
};

/// Scatters every nonzero input voxel through the taps of the basis kernels.
inline BasisResponses basis_responses(const Volume3D& vol, const KernelBasis& basis, int stride, Padding padding) {
  const LayerGeometry g = LayerGeometry::make(vol.shape(), basis.kernel_size(), stride, padding);
  BasisResponses out(g, basis.max_degree(), basis.radial_count());
  const int nch = half_sh_count(basis.max_degree());
  const int nj = basis.radial_count();
  const Shape3 in = vol.shape();
  const int org = g.origin();
  for (int p1 = 0; p1 < in.d1; ++p1)
    for (int p2 = 0; p2 < in.d2; ++p2)
      for (int p3 = 0; p3 < in.d3; ++p3) {
        const double v = vol(p1, p2, p3);
        if (v == 0.0) continue;
        for (const auto& t : basis.taps()) {
          // x + o = p with x = origin + stride * out
          int q1 = p1 - t.dx1 - org, q2 = p2 - t.dx2 - org, q3 = p3 - t.dx3 - org;
          if (q1 < 0 || q2 < 0 || q3 < 0) continue;
          if (stride > 1) {
            if (q1 % stride || q2 % stride || q3 % stride) continue;
            q1 /= stride;
            q2 /= stride;
            q3 /= stride;
          }
          if (!g.output.contains(q1, q2, q3)) continue;
          auto blk = out.at(g.output.index(q1, q2, q3));
          const double a = v * t.psi_lo, b = v * t.psi_hi;
          for (int c = 0; c < nch; ++c) {
            const cplx y = t.conj_y[static_cast<std::size_t>(c)];
            cplx* row = blk.data() + static_cast<std::size_t>(c) * nj;
            if (a != 0.0) row[t.j_lo] += a * y;
            if (b != 0.0) row[t.j_lo + 1] += b * y;
          }
        }
      }
  return out;
}

/// F_{q,n}(x) for every stream, laid out [q][x][sh_index(n, m)] over all m.
class FourierFeatureMaps {
 public:
  FourierFeatureMaps() = default;
  FourierFeatureMaps(LayerGeometry g, int streams, int max_degree)
      : geom_(g), streams_(streams), max_degree_(max_degree),
        block_(static_cast<std::size_t>(sh_count(max_degree))),
        data_(static_cast<std::size_t>(streams) * g.output.size() * block_) {}

  const LayerGeometry& geometry() const { return geom_; }
  int streams() const { return streams_; }
  int max_degree() const { return max_degree_; }
  std::size_t voxels() const { return geom_.output.size(); }

  std::span<cplx> at(int q, std::size_t x) {
    return {data_.data() + (static_cast<std::size_t>(q) * voxels() + x) * block_, block_};
  }
  std::span<const cplx> at(int q, std::size_t x) const {
    return {data_.data() + (static_cast<std::size_t>(q) * voxels() + x) * block_, block_};
  }
  SphericalFourierVector vector(int q, std::size_t x, int n) const {
    const auto b = at(q, x);
    return SphericalFourierVector(n, std::vector<cplx>(b.begin() + sh_index(n, -n), b.begin() + sh_index(n, n) + 1));
  }

 private:
  LayerGeometry geom_;
  int streams_ = 0;
  int max_degree_ = 0;
  std::size_t block_ = 0;
  std::vector<cplx> data_;
};

inline FourierFeatureMaps combine_responses(const BasisResponses& basis, const RadialProfileBank& bank) {
  if (bank.max_degree() != basis.max_degree() || bank.radial_count() != basis.radial_count())
    throw ConfigError("radial bank does not match the kernel basis");
  const int nmax = bank.max_degree();
  const int nj = bank.radial_count();
  FourierFeatureMaps maps(basis.geometry(), bank.streams(), nmax);
  for (int q = 0; q < bank.streams(); ++q)
    for (std::size_t x = 0; x < basis.voxels(); ++x) {
      const auto b = basis.at(x);
      auto f = maps.at(q, x);
      for (int n = 0; n <= nmax; ++n) {
        const double* w = &bank.weights()[bank.index(q, n, 0)];
        for (int m = 0; m <= n; ++m) {
          const cplx* row = b.data() + static_cast<std::size_t>(half_sh_index(n, m)) * nj;
          cplx acc{};
          for (int j = 0; j < nj; ++j) acc += w[j] * row[j];
          f[sh_index(n, m)] = acc;
          if (m > 0) f[sh_index(n, -m)] = ((m & 1) ? -1.0 : 1.0) * std::conj(acc);
        }
      }
    }
  return maps;
}

inline FourierFeatureMaps fourier_feature_maps(const Volume3D& vol, const RadialProfileBank& bank, int kernel_size,
                                               int stride, Padding padding) {
  const KernelBasis basis(kernel_size, bank.max_degree(), bank.radial_count());
  return combine_responses(basis_responses(vol, basis, stride, padding), bank);
}

/// Real invariant channels per stream, laid out [q][channel][x].
class InvariantMaps {
 public:
  InvariantMaps() = default;
  InvariantMaps(LayerGeometry g, int streams, std::vector<std::string> labels)
      : geom_(g), streams_(streams), labels_(std::move(labels)),
        data_(static_cast<std::size_t>(streams) * labels_.size() * g.output.size()) {}

  const LayerGeometry& geometry() const { return geom_; }
  int streams() const { return streams_; }
  int channels() const { return static_cast<int>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t voxels() const { return geom_.output.size(); }

  std::span<double> channel(int q, int c) {
    return {data_.data() + (static_cast<std::size_t>(q) * labels_.size() + c) * voxels(), voxels()};
  }
  std::span<const double> channel(int q, int c) const {
    return {data_.data() + (static_cast<std::size_t>(q) * labels_.size() + c) * voxels(), voxels()};
  }

 private:
  LayerGeometry geom_;
  int streams_ = 0;
  std::vector<std::string> labels_;
  std::vector<double> data_;
};

inline InvariantMaps sse_forward(const FourierFeatureMaps& maps) {
  std::vector<std::string> labels;
  for (int n = 0; n <= maps.max_degree(); ++n) labels.push_back(std::to_string(n));
  InvariantMaps out(maps.geometry(), maps.streams(), labels);
  for (int q = 0; q < maps.streams(); ++q)
    for (int n = 0; n <= maps.max_degree(); ++n) {
      auto ch = out.channel(q, n);
      for (std::size_t x = 0; x < maps.voxels(); ++x) {
        const auto f = maps.at(q, x);
        double s = 0.0;
        for (int m = -n; m <= n; ++m) s += std::norm(f[sh_index(n, m)]);
        ch[x] = s / (2.0 * n + 1.0);
      }
    }
  return out;
}

/// Parity-projected b^l_{n,n'} at one voxel from a full sh_index-ordered block.
inline double projected_bispectrum(std::span<const cplx> f, const TriplePlan& plan) {
  const auto& t = plan.triple;
  cplx acc{};
  for (const auto& term : plan.terms)
    acc += term.coeff * f[sh_index(t.n, term.m1)] * f[sh_index(t.n_prime, term.m2)] *
           std::conj(f[sh_index(t.ell, term.m1 + term.m2)]);
  return parity_project(acc, t);
}

inline InvariantMaps ssb_forward(const FourierFeatureMaps& maps, std::span<const BispectrumTriple> triples,
                                 const CGCache& cg) {
  std::vector<std::string> labels;
  std::vector<TriplePlan> plans;
  for (const auto& t : triples) {
    if (t.ell > maps.max_degree()) throw DomainError("triple degree exceeds the feature maps");
    labels.push_back(t.label());
    plans.push_back(cg.plan(t));
  }
  InvariantMaps out(maps.geometry(), maps.streams(), labels);
  for (int q = 0; q < maps.streams(); ++q)
    for (std::size_t c = 0; c < plans.size(); ++c) {
      auto ch = out.channel(q, static_cast<int>(c));
      for (std::size_t x = 0; x < maps.voxels(); ++x) ch[x] = projected_bispectrum(maps.at(q, x), plans[c]);
    }
  return out;
}

/// Samples the input mask at the input voxel of every output position.
inline std::vector<std::uint8_t> downsample_mask(const std::vector<std::uint8_t>& mask, const LayerGeometry& g) {
  if (mask.size() != g.input.size()) throw ShapeError("mask does not match the layer input");
  std::vector<std::uint8_t> out(g.output.size(), 0);
  for (int i = 0; i < g.output.d1; ++i)
    for (int j = 0; j < g.output.d2; ++j)
      for (int k = 0; k < g.output.d3; ++k) {
        const auto p = g.input_position(i, j, k);
        out[g.output.index(i, j, k)] = mask[g.input.index(p[0], p[1], p[2])];
      }
  return out;
}

/// Per-channel mean over the (masked) output grid, stream-major: [q][channel].
/// The mask, when given, lives on the output grid.
inline std::vector<double> global_pool(const InvariantMaps& inv, const std::vector<std::uint8_t>* mask = nullptr) {
  std::size_t count = inv.voxels();
  if (mask) {
    if (mask->size() != inv.voxels()) throw ShapeError("pooling mask does not match the output grid");
    count = 0;
    for (auto m : *mask) count += m != 0;
    if (count == 0) throw DomainError("pooling mask is empty on the output grid");
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(inv.streams() * inv.channels()));
  for (int q = 0; q < inv.streams(); ++q)
    for (int c = 0; c < inv.channels(); ++c) {
      const auto ch = inv.channel(q, c);
      double acc = 0.0;
      for (std::size_t x = 0; x < ch.size(); ++x)
        if (!mask || (*mask)[x]) acc += ch[x];
      out.push_back(acc / static_cast<double>(count));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Layer with cached forward pass and analytic backward pass.

struct LayerConfig {
  InvariantKind kind = InvariantKind::bispectrum;
  int streams = 2;
  int max_degree = 2;
  int kernel_size = 7;
  int stride = 1;
  Padding padding = Padding::zero;
  bool prune_zero = false;
};

class LriLayer {
 public:
  explicit LriLayer(const LayerConfig& cfg)
      : cfg_(cfg), basis_(cfg.kernel_size, cfg.max_degree), cg_(cfg.kind == InvariantKind::bispectrum ? cfg.max_degree : 0) {
    if (cfg.streams < 1) throw ConfigError("stream count must be >= 1");
    if (cfg.stride < 1) throw ConfigError("stride must be >= 1");
    if (cfg.kind == InvariantKind::bispectrum) {
      triples_ = enumerate_triples(cfg.max_degree, cfg.prune_zero);
      for (const auto& t : triples_) plans_.push_back(cg_.plan(t));
    }
  }

  const LayerConfig& config() const { return cfg_; }
  const KernelBasis& basis() const { return basis_; }
  const CGCache& cg() const { return cg_; }
  const std::vector<BispectrumTriple>& triples() const { return triples_; }
  const std::vector<TriplePlan>& plans() const { return plans_; }

  int channels_per_stream() const {
    return cfg_.kind == InvariantKind::spectrum ? cfg_.max_degree + 1 : static_cast<int>(triples_.size());
  }
  int feature_width() const { return cfg_.streams * channels_per_stream(); }

  RadialProfileBank make_bank() const { return {cfg_.streams, cfg_.max_degree, basis_.radial_count()}; }

  struct Cache {
    BasisResponses basis;
    FourierFeatureMaps maps;
    std::vector<std::uint8_t> pool_mask;  // output grid; empty = all voxels
    std::size_t pool_count = 0;
  };

  Cache prepare(const Volume3D& vol) const {
    Cache c;
    c.basis = basis_responses(vol, basis_, cfg_.stride, cfg_.padding);
    if (vol.mask()) {
      c.pool_mask = downsample_mask(*vol.mask(), c.basis.geometry());
      for (auto m : c.pool_mask) c.pool_count += m != 0;
      if (c.pool_count == 0) throw DomainError("mask is empty on the output grid");
    } else {
      c.pool_count = c.basis.voxels();
    }
    return c;
  }

  InvariantMaps invariant_maps(const FourierFeatureMaps& maps) const {
    return cfg_.kind == InvariantKind::spectrum ? sse_forward(maps) : ssb_forward(maps, triples_, cg_);
  }

  /// Pooled features, stream-major. Fills `cache` for a later backward pass.
  std::vector<double> forward(const Volume3D& vol, const RadialProfileBank& bank, Cache* cache = nullptr) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    c = prepare(vol);
    return forward_cached(c, bank);
  }

  /// Forward from precomputed basis responses (recombines the feature maps).
  std::vector<double> forward_cached(Cache& c, const RadialProfileBank& bank) const {
    check_bank(bank);
    c.maps = combine_responses(c.basis, bank);
    const InvariantMaps inv = invariant_maps(c.maps);
    return global_pool(inv, c.pool_mask.empty() ? nullptr : &c.pool_mask);
  }

  /// Accumulates d(sum_k upstream[k] * pooled[k]) / dw into `grad`.
  void backward(const Cache& c, const RadialProfileBank& bank, std::span<const double> upstream,
                RadialProfileBank& grad) const {
    check_bank(bank);
    check_bank(grad);
    const int per = channels_per_stream();
    if (upstream.size() != static_cast<std::size_t>(feature_width())) throw ShapeError("upstream gradient width mismatch");
    const int nmax = cfg_.max_degree;
    const int nj = basis_.radial_count();
    const double inv_count = 1.0 / static_cast<double>(c.pool_count);
    std::vector<cplx> g(static_cast<std::size_t>(sh_count(nmax)));
    for (int q = 0; q < cfg_.streams; ++q) {
      const double* u = upstream.data() + static_cast<std::size_t>(q) * per;
      bool any = false;
      for (int k = 0; k < per; ++k) any = any || u[k] != 0.0;
      if (!any) continue;
      for (std::size_t x = 0; x < c.basis.voxels(); ++x) {
        if (!c.pool_mask.empty() && !c.pool_mask[x]) continue;
        const auto f = c.maps.at(q, x);
        std::fill(g.begin(), g.end(), cplx{});
        if (cfg_.kind == InvariantKind::spectrum) {
          for (int n = 0; n <= nmax; ++n) {
            const double s = 2.0 * u[n] * inv_count / (2.0 * n + 1.0);
            for (int m = -n; m <= n; ++m) g[sh_index(n, m)] += s * f[sh_index(n, m)];
          }
        } else {
          for (int k = 0; k < per; ++k) {
            if (u[k] == 0.0) continue;
            const auto& p = plans_[static_cast<std::size_t>(k)];
            const auto& t = p.triple;
            // v = Re(proj * b): proj = 1 keeps Re(b), proj = -i keeps Im(b).
            const cplx proj = t.takes_imaginary_part() ? cplx(0.0, -1.0) : cplx(1.0, 0.0);
            const double scale = u[k] * inv_count;
            for (const auto& term : p.terms) {
              const int i1 = sh_index(t.n, term.m1), i2 = sh_index(t.n_prime, term.m2),
                        i3 = sh_index(t.ell, term.m1 + term.m2);
              const cplx f3c = std::conj(f[i3]);
              g[i1] += scale * std::conj(proj * term.coeff * f[i2] * f3c);
              g[i2] += scale * std::conj(proj * term.coeff * f[i1] * f3c);
              g[i3] += scale * proj * term.coeff * f[i1] * f[i2];
            }
          }
        }
        const auto b = c.basis.at(x);
        for (int n = 0; n <= nmax; ++n) {
          double* gw = &grad.weights()[grad.index(q, n, 0)];
          for (int m = 0; m <= n; ++m) {
            // F^{-m} = (-1)^m conj(F^m) folds the negative orders onto B^m.
            const cplx h = m == 0 ? std::conj(g[sh_index(n, 0)])
                                  : std::conj(g[sh_index(n, m)]) + ((m & 1) ? -1.0 : 1.0) * g[sh_index(n, -m)];
            const cplx* row = b.data() + static_cast<std::size_t>(half_sh_index(n, m)) * nj;
            for (int j = 0; j < nj; ++j) gw[j] += (h * row[j]).real();
          }
        }
      }
    }
  }

 private:
  void check_bank(const RadialProfileBank& bank) const {
    if (bank.streams() != cfg_.streams || bank.max_degree() != cfg_.max_degree ||
        bank.radial_count() != basis_.radial_count())
      throw ConfigError("radial bank dimensions do not match the layer");
  }

  LayerConfig cfg_;
  KernelBasis basis_;
  CGCache cg_;
  std::vector<BispectrumTriple> triples_;
  std::vector<TriplePlan> plans_;
};

}  // namespace lri
