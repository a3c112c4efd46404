#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lri/invariants.hpp"
#include "lri/lri_layer.hpp"
#include "lri/pooled_moments.hpp"
#include "lri/random.hpp"

namespace lri {

// ---------------------------------------------------------------------------
// Feature counts per maximal degree.

struct FeatureCountRow {
  int degree = 0;
  std::int64_t bispectrum = 0;
  std::int64_t spectrum = 0;
};

inline std::vector<FeatureCountRow> feature_count_table(const std::vector<int>& degrees) {
  std::vector<FeatureCountRow> rows;
  for (int n : degrees) rows.push_back({n, triple_count(n), n + 1});
  return rows;
}

/// Published value at N = 100; the enumeration rule gives triple_count(100).
inline constexpr std::int64_t kPublishedCountAt100 = 48127;

// ---------------------------------------------------------------------------
// Finite-difference gradient check of the pooled layer features.

struct GradCheckResult {
  std::size_t parameters = 0;
  double max_relative_error = 0.0;          // layer backward vs central differences
  double max_moment_relative_error = 0.0;   // pooled-moment backward vs layer backward
};

/// Checks d(u . pooled)/dw for a random upstream u and Gaussian-initialized
/// radial weights. Relative error |a - f| / max(|a|, |f|, floor).
inline GradCheckResult gradient_check(const LayerConfig& cfg, const Volume3D& vol, std::uint64_t seed,
                                      double step = 1e-4) {
  const LriLayer layer(cfg);
  Rng rng = make_rng(seed, 7);
  const RadialProfileBank bank = init_weights(rng, cfg.streams, cfg.max_degree, layer.basis().radial_count());
  std::normal_distribution<double> g;
  std::vector<double> up(static_cast<std::size_t>(layer.feature_width()));
  for (auto& u : up) u = g(rng);

  LriLayer::Cache cache = layer.prepare(vol);
  layer.forward_cached(cache, bank);
  RadialProfileBank grad = layer.make_bank();
  layer.backward(cache, bank, up, grad);

  auto objective = [&](const RadialProfileBank& b) {
    LriLayer::Cache c = cache;
    const auto p = layer.forward_cached(c, b);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += up[i] * p[i];
    return s;
  };
  double scale = 0.0;
  for (double x : grad.weights()) scale = std::max(scale, std::abs(x));
  const double floor = 1e-8 * std::max(1.0, scale);

  GradCheckResult r;
  r.parameters = bank.size();
  for (std::size_t i = 0; i < bank.size(); ++i) {
    RadialProfileBank bp = bank, bm = bank;
    bp.weights()[i] += step;
    bm.weights()[i] -= step;
    const double fd = (objective(bp) - objective(bm)) / (2.0 * step);
    const double a = grad.weights()[i];
    r.max_relative_error = std::max(r.max_relative_error, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor}));
  }

  const PooledMoments pm(vol, layer);
  RadialProfileBank mg = layer.make_bank();
  pm.backward(bank, up, mg);
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const double a = grad.weights()[i], b = mg.weights()[i];
    r.max_moment_relative_error =
        std::max(r.max_moment_relative_error, std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor}));
  }
  return r;
}

}  // namespace lri
