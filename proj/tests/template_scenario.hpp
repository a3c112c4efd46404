// Non-overlapping rotated copies of one smooth template; invariant values at the
// copy centers are compared across orientations.
#pragma once

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "lri/lri_layer.hpp"

namespace lri::testing {

struct TemplateErrors {
  double resampled = 0.0;  // worst center-vs-center error, all copies trilinearly resampled
  double analytic = 0.0;   // worst error of exactly sampled rotated copies against the unrotated template
};

inline double template_value(const Vec3& x) {
  static const std::array<Vec3, 3> blobs{Vec3(1.5, 0.0, 0.0), Vec3(-0.5, 1.2, 0.3), Vec3(0.0, -0.4, -1.6)};
  static const std::array<double, 3> amp{1.0, 0.7, -0.5};
  const double sigma = 1.5, envelope = 2.5;
  double acc = 0.0;
  for (std::size_t b = 0; b < blobs.size(); ++b) acc += amp[b] * std::exp(-(x - blobs[b]).squaredNorm() / (2.0 * sigma * sigma));
  return acc * std::exp(-x.squaredNorm() / (2.0 * envelope * envelope));
}

inline TemplateErrors template_center_errors(InvariantKind kind, std::uint64_t seed, int copies = 4) {
  const int t = 11, ct = 5, d = 30;
  const std::vector<std::array<int, 3>> all_centers{{7, 7, 7}, {7, 22, 7}, {22, 7, 22}, {22, 22, 15}, {7, 7, 22}, {22, 22, 7}};
  const std::vector<std::array<int, 3>> centers(all_centers.begin(), all_centers.begin() + std::min<int>(copies, 6));
  Volume3D tmpl(Shape3{t, t, t});
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < t; ++j)
      for (int k = 0; k < t; ++k) tmpl(i, j, k) = template_value(Vec3(i - ct, j - ct, k - ct));

  std::mt19937_64 rng(seed);
  Volume3D resampled(Shape3{d, d, d}), analytic(Shape3{d, d, d}), upright(Shape3{d, d, d});
  for (const auto& c : centers) {
    const Rotation r = random_rotation(rng);
    const auto tri = rotate_trilinear(tmpl, r);
    const Rotation r2 = random_rotation(rng);
    const Mat3 inv2 = r2.matrix().transpose();
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j)
        for (int k = 0; k < t; ++k) {
          const Vec3 x(i - ct, j - ct, k - ct);
          resampled(c[0] - ct + i, c[1] - ct + j, c[2] - ct + k) = tri(i, j, k);
          analytic(c[0] - ct + i, c[1] - ct + j, c[2] - ct + k) = template_value(inv2 * x);
          upright(c[0] - ct + i, c[1] - ct + j, c[2] - ct + k) = tmpl(i, j, k);
        }
  }

  LayerConfig cfg;
  cfg.kind = kind;
  cfg.max_degree = 2;
  cfg.streams = 1;
  cfg.kernel_size = 7;
  const LriLayer layer(cfg);
  RadialProfileBank bank = layer.make_bank();
  for (int n = 0; n <= 2; ++n)
    for (int j = 0; j < bank.radial_count(); ++j) bank(0, n, j) = std::exp(-0.3 * j);
  auto at_centers = [&](const Volume3D& v) {
    const auto maps = layer.invariant_maps(combine_responses(basis_responses(v, layer.basis(), 1, Padding::zero), bank));
    std::vector<std::vector<double>> out;
    for (const auto& c : centers) {
      std::vector<double> row;
      for (int ch = 0; ch < maps.channels(); ++ch) row.push_back(maps.channel(0, ch)[v.shape().index(c[0], c[1], c[2])]);
      out.push_back(row);
    }
    return out;
  };
  auto rel = [](const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      num += (a[i] - b[i]) * (a[i] - b[i]);
      den += b[i] * b[i];
    }
    return std::sqrt(num / den);
  };
  TemplateErrors e;
  const auto rs = at_centers(resampled), an = at_centers(analytic), up = at_centers(upright);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) e.resampled = std::max(e.resampled, rel(rs[i], rs[j]));
    e.analytic = std::max(e.analytic, rel(an[i], up[i]));
  }
  return e;
}

}  // namespace lri::testing
