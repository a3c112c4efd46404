#pragma once

// Dense 3D correlation layer used by the Z3 baseline.

#include <span>
#include <vector>

#include "lri/lri_layer.hpp"
#include "lri/volume.hpp"

namespace lri {

/// out_q(x) = sum_o I(x + o) K_q(o); kernels laid out [q][o1][o2][o3].
class DenseConvLayer {
 public:
  DenseConvLayer(int filters, int kernel_size, int stride, Padding padding)
      : filters_(filters), size_(kernel_size), stride_(stride), padding_(padding) {
    if (filters < 1) throw ConfigError("filter count must be >= 1");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel size must be odd");
    if (stride < 1) throw ConfigError("stride must be >= 1");
  }

  int filters() const { return filters_; }
  int kernel_size() const { return size_; }
  std::size_t taps() const { return static_cast<std::size_t>(size_) * size_ * size_; }
  std::size_t weight_count() const { return taps() * filters_; }

  /// Mean of I(x + o) over the pooled output positions, one value per tap o.
  /// Pooled responses are K_q . window_means, so this is all training needs.
  std::vector<double> window_means(const Volume3D& vol) const {
    const LayerGeometry g = LayerGeometry::make(vol.shape(), size_, stride_, padding_);
    std::vector<std::uint8_t> pool;
    std::size_t count = g.output.size();
    if (vol.mask()) {
      pool = downsample_mask(*vol.mask(), g);
      count = 0;
      for (auto m : pool) count += m != 0;
      if (count == 0) throw DomainError("mask is empty on the output grid");
    }
    std::vector<double> s(taps(), 0.0);
    const int r = (size_ - 1) / 2;
    const Shape3 in = vol.shape();
    for (int p1 = 0; p1 < in.d1; ++p1)
      for (int p2 = 0; p2 < in.d2; ++p2)
        for (int p3 = 0; p3 < in.d3; ++p3) {
          const double v = vol(p1, p2, p3);
          if (v == 0.0) continue;
          std::size_t t = 0;
          for (int a = -r; a <= r; ++a)
            for (int b = -r; b <= r; ++b)
              for (int c = -r; c <= r; ++c, ++t) {
                int q1 = p1 - a - g.origin(), q2 = p2 - b - g.origin(), q3 = p3 - c - g.origin();
                if (q1 < 0 || q2 < 0 || q3 < 0 || q1 % stride_ || q2 % stride_ || q3 % stride_) continue;
                q1 /= stride_;
                q2 /= stride_;
                q3 /= stride_;
                if (!g.output.contains(q1, q2, q3)) continue;
                if (!pool.empty() && !pool[g.output.index(q1, q2, q3)]) continue;
                s[t] += v;
              }
        }
    for (auto& v : s) v /= static_cast<double>(count);
    return s;
  }

  /// Full response maps [q][x], for tests and diagnostics.
  std::vector<double> response_maps(const Volume3D& vol, std::span<const double> kernels, LayerGeometry* geom = nullptr) const {
    if (kernels.size() != weight_count()) throw ShapeError("dense kernel size mismatch");
    const LayerGeometry g = LayerGeometry::make(vol.shape(), size_, stride_, padding_);
    if (geom) *geom = g;
    const int r = (size_ - 1) / 2;
    std::vector<double> out(g.output.size() * filters_, 0.0);
    for (int i = 0; i < g.output.d1; ++i)
      for (int j = 0; j < g.output.d2; ++j)
        for (int k = 0; k < g.output.d3; ++k) {
          const auto p = g.input_position(i, j, k);
          const std::size_t x = g.output.index(i, j, k);
          for (int q = 0; q < filters_; ++q) {
            const double* kq = kernels.data() + static_cast<std::size_t>(q) * taps();
            double acc = 0.0;
            std::size_t t = 0;
            for (int a = -r; a <= r; ++a)
              for (int b = -r; b <= r; ++b)
                for (int c = -r; c <= r; ++c, ++t) acc += kq[t] * vol.get_or_zero(p[0] + a, p[1] + b, p[2] + c);
            out[static_cast<std::size_t>(q) * g.output.size() + x] = acc;
          }
        }
    return out;
  }

  /// Pooled responses computed by correlating the full maps.
  std::vector<double> forward(const Volume3D& vol, std::span<const double> kernels) const {
    LayerGeometry g;
    const auto maps = response_maps(vol, kernels, &g);
    std::vector<std::uint8_t> pool;
    if (vol.mask()) pool = downsample_mask(*vol.mask(), g);
    std::vector<double> out(filters_, 0.0);
    std::size_t count = 0;
    for (std::size_t x = 0; x < g.output.size(); ++x) {
      if (!pool.empty() && !pool[x]) continue;
      ++count;
      for (int q = 0; q < filters_; ++q) out[q] += maps[static_cast<std::size_t>(q) * g.output.size() + x];
    }
    if (count == 0) throw DomainError("mask is empty on the output grid");
    for (auto& v : out) v /= static_cast<double>(count);
    return out;
  }

 private:
  int filters_;
  int size_;
  int stride_;
  Padding padding_;
};

}  // namespace lri
