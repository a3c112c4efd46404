#pragma once

// Shallow classifiers: one LRI (or dense Z3) layer, global average pooling,
// per-feature bias, ReLU, one fully-connected layer and softmax cross-entropy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include "json.hpp"

#include "lri/conv_layer.hpp"
#include "lri/error.hpp"
#include "lri/lri_layer.hpp"
#include "lri/pooled_moments.hpp"
#include "lri/random.hpp"
#include "lri/volume.hpp"

namespace lri {

enum class ModelKind { sse, ssb, z3 };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::sse: return "sse";
    case ModelKind::ssb: return "ssb";
    case ModelKind::z3: return "z3";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "sse") return ModelKind::sse;
  if (s == "ssb") return ModelKind::ssb;
  if (s == "z3") return ModelKind::z3;
  throw ConfigError("unknown model kind '" + s + "' (expected sse, ssb or z3)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::ssb;
  int max_degree = 2;
  int filters = 2;
  int kernel_size = 7;
  int stride = 1;
  Padding padding = Padding::zero;
  int classes = 2;

  void validate() const {
    if (filters < 1) throw ConfigError("filters must be >= 1");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel size must be odd and positive");
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (classes < 2) throw ConfigError("class count must be >= 2");
    if (kind != ModelKind::z3 && (max_degree < 0 || max_degree > kMaxDegree))
      throw ConfigError("degree must lie in [0, " + std::to_string(kMaxDegree) + "]");
  }

  bool is_lri() const { return kind != ModelKind::z3; }

  LayerConfig layer_config() const {
    LayerConfig lc;
    lc.kind = kind == ModelKind::sse ? InvariantKind::spectrum : InvariantKind::bispectrum;
    lc.streams = filters;
    lc.max_degree = max_degree;
    lc.kernel_size = kernel_size;
    lc.stride = stride;
    lc.padding = padding;
    return lc;
  }

  /// Pooled features entering the head.
  int feature_width() const {
    switch (kind) {
      case ModelKind::sse: return filters * (max_degree + 1);
      case ModelKind::ssb: return filters * static_cast<int>(triple_count(max_degree));
      case ModelKind::z3: return filters;
    }
    return 0;
  }

  std::size_t layer_weight_count() const {
    if (kind == ModelKind::z3) return static_cast<std::size_t>(kernel_size) * kernel_size * kernel_size * filters;
    return static_cast<std::size_t>(filters) * (max_degree + 1) * radial_count_for_kernel(kernel_size);
  }
};

/// Layer weights + feature biases + FC weights (classes x features) + FC biases.
inline std::size_t count_parameters(const ModelConfig& cfg) {
  const std::size_t f = static_cast<std::size_t>(cfg.feature_width());
  return cfg.layer_weight_count() + f + f * cfg.classes + cfg.classes;
}

/// All trainable scalars in one flat vector: [layer | feature bias | fc weight | fc bias].
struct Model {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<double> params;

  std::size_t features() const { return static_cast<std::size_t>(config.feature_width()); }
  std::size_t classes() const { return static_cast<std::size_t>(config.classes); }
  std::size_t layer_size() const { return config.layer_weight_count(); }

  std::span<double> layer() { return {params.data(), layer_size()}; }
  std::span<const double> layer() const { return {params.data(), layer_size()}; }
  std::span<double> feature_bias() { return {params.data() + layer_size(), features()}; }
  std::span<const double> feature_bias() const { return {params.data() + layer_size(), features()}; }
  std::span<double> fc_weight() { return {params.data() + layer_size() + features(), features() * classes()}; }
  std::span<const double> fc_weight() const {
    return {params.data() + layer_size() + features(), features() * classes()};
  }
  std::span<double> fc_bias() { return {params.data() + params.size() - classes(), classes()}; }
  std::span<const double> fc_bias() const { return {params.data() + params.size() - classes(), classes()}; }
};

inline std::size_t count_parameters(const Model& m) { return m.params.size(); }

/// Radial weights ~ N(0,1); dense Z3 kernels and FC weights Glorot-uniform; biases 0.
inline Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m{cfg, seed, std::vector<double>(count_parameters(cfg), 0.0)};
  Rng rng = make_rng(seed, 0);
  if (cfg.is_lri()) {
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& w : m.layer()) w = g(rng);
  } else {
    const double fan_in = static_cast<double>(cfg.kernel_size) * cfg.kernel_size * cfg.kernel_size;
    const double a = std::sqrt(6.0 / (fan_in + fan_in * cfg.filters));
    std::uniform_real_distribution<double> u(-a, a);
    for (auto& w : m.layer()) w = u(rng);
  }
  const double a = std::sqrt(6.0 / static_cast<double>(m.features() + m.classes()));
  std::uniform_real_distribution<double> u(-a, a);
  for (auto& w : m.fc_weight()) w = u(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Pooled feature extraction.

/// Weight-independent per-sample statistics from which pooled features and
/// their gradients follow exactly.
struct SampleStats {
  PooledMoments moments;       // sse / ssb
  std::vector<double> window;  // z3: mean input under each kernel tap
};

class FeatureExtractor {
 public:
  explicit FeatureExtractor(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    if (cfg.is_lri()) layer_.emplace(cfg.layer_config());
    else dense_.emplace(cfg.filters, cfg.kernel_size, cfg.stride, cfg.padding);
  }

  const ModelConfig& config() const { return cfg_; }
  const LriLayer& lri() const { return *layer_; }

  SampleStats stats(const Volume3D& vol) const {
    SampleStats s;
    if (layer_) s.moments = PooledMoments(vol, *layer_);
    else s.window = dense_->window_means(vol);
    return s;
  }

  /// Statistics for many volumes on `jobs` threads; output order follows input order.
  std::vector<SampleStats> stats_all(const std::vector<const Volume3D*>& vols, int jobs = 1) const {
    std::vector<SampleStats> out(vols.size());
    const std::size_t nt = static_cast<std::size_t>(std::max(1, jobs));
    if (nt == 1 || vols.size() < 2) {
      for (std::size_t i = 0; i < vols.size(); ++i) out[i] = stats(*vols[i]);
      return out;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nt);
    for (std::size_t t = 0; t < nt; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < vols.size(); i += nt) out[i] = stats(*vols[i]);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    return out;
  }

  std::vector<double> pooled(const SampleStats& s, std::span<const double> layer_w) const {
    if (layer_) return s.moments.pooled(bank_from(layer_w));
    const std::size_t taps = dense_->taps();
    std::vector<double> out(static_cast<std::size_t>(cfg_.filters), 0.0);
    for (std::size_t q = 0; q < out.size(); ++q)
      for (std::size_t t = 0; t < taps; ++t) out[q] += layer_w[q * taps + t] * s.window[t];
    return out;
  }

  /// grad_layer += d(upstream . pooled) / d layer_w.
  void backward(const SampleStats& s, std::span<const double> layer_w, std::span<const double> upstream,
                std::span<double> grad_layer) const {
    if (layer_) {
      const RadialProfileBank bank = bank_from(layer_w);
      RadialProfileBank g = layer_->make_bank();
      s.moments.backward(bank, upstream, g);
      for (std::size_t i = 0; i < grad_layer.size(); ++i) grad_layer[i] += g.weights()[i];
      return;
    }
    const std::size_t taps = dense_->taps();
    for (std::size_t q = 0; q < upstream.size(); ++q)
      for (std::size_t t = 0; t < taps; ++t) grad_layer[q * taps + t] += upstream[q] * s.window[t];
  }

  /// Pooled features computed through the full feature maps.
  std::vector<double> pooled_direct(const Volume3D& vol, std::span<const double> layer_w) const {
    if (layer_) return layer_->forward(vol, bank_from(layer_w));
    return dense_->forward(vol, layer_w);
  }

  RadialProfileBank bank_from(std::span<const double> layer_w) const {
    RadialProfileBank bank = layer_->make_bank();
    if (layer_w.size() != bank.size()) throw ShapeError("layer weight count does not match the radial bank");
    std::copy(layer_w.begin(), layer_w.end(), bank.weights().begin());
    return bank;
  }

 private:
  ModelConfig cfg_;
  std::optional<LriLayer> layer_;
  std::optional<DenseConvLayer> dense_;
};

// ---------------------------------------------------------------------------
// Head.

struct HeadResult {
  std::vector<double> logits;
  std::vector<double> probabilities;
  double loss = 0.0;
  int predicted = 0;
};

/// pooled -> +bias -> ReLU -> FC -> softmax cross-entropy against `label`.
/// With `grad` non-null, accumulates head gradients scaled by `scale` into
/// `grad` (same layout as Model::params) and returns d loss / d pooled in `dz`.
inline HeadResult head_forward(const Model& m, std::span<const double> z, int label, std::vector<double>* grad = nullptr,
                               std::vector<double>* dz = nullptr, double scale = 1.0) {
  const std::size_t nf = m.features(), nc = m.classes();
  if (z.size() != nf) throw ShapeError("pooled feature width does not match the model");
  std::vector<double> a(nf);
  const auto fb = m.feature_bias();
  for (std::size_t i = 0; i < nf; ++i) a[i] = std::max(0.0, z[i] + fb[i]);
  HeadResult r;
  r.logits.assign(nc, 0.0);
  const auto w = m.fc_weight();
  const auto c = m.fc_bias();
  for (std::size_t k = 0; k < nc; ++k) {
    double acc = c[k];
    for (std::size_t i = 0; i < nf; ++i) acc += w[k * nf + i] * a[i];
    r.logits[k] = acc;
  }
  const double mx = *std::max_element(r.logits.begin(), r.logits.end());
  double sum = 0.0;
  r.probabilities.resize(nc);
  for (std::size_t k = 0; k < nc; ++k) sum += (r.probabilities[k] = std::exp(r.logits[k] - mx));
  for (auto& p : r.probabilities) p /= sum;
  r.predicted = static_cast<int>(std::max_element(r.logits.begin(), r.logits.end()) - r.logits.begin());
  if (label >= 0) r.loss = -(r.logits[static_cast<std::size_t>(label)] - mx - std::log(sum));
  if (!grad) return r;
  if (label < 0) throw DomainError("gradient needs a label");
  std::vector<double> dl(nc);
  for (std::size_t k = 0; k < nc; ++k) dl[k] = scale * (r.probabilities[k] - (static_cast<int>(k) == label ? 1.0 : 0.0));
  const std::size_t off_fb = m.layer_size(), off_w = off_fb + nf, off_c = off_w + nf * nc;
  std::vector<double> da(nf, 0.0);
  for (std::size_t k = 0; k < nc; ++k) {
    (*grad)[off_c + k] += dl[k];
    for (std::size_t i = 0; i < nf; ++i) {
      (*grad)[off_w + k * nf + i] += dl[k] * a[i];
      da[i] += dl[k] * w[k * nf + i];
    }
  }
  if (dz) dz->assign(nf, 0.0);
  for (std::size_t i = 0; i < nf; ++i) {
    const double d = z[i] + fb[i] > 0.0 ? da[i] : 0.0;
    (*grad)[off_fb + i] += d;
    if (dz) (*dz)[i] = d;
  }
  return r;
}

/// Mean cross-entropy over a batch of pooled features.
inline double batch_loss(const Model& m, const std::vector<std::vector<double>>& pooled, std::span<const int> labels) {
  if (pooled.size() != labels.size() || pooled.empty()) throw ShapeError("batch size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pooled.size(); ++i) acc += head_forward(m, pooled[i], labels[i]).loss;
  return acc / static_cast<double>(pooled.size());
}

/// Mean loss over `idx` and its gradient with respect to every parameter.
inline double loss_and_gradient(const Model& m, const FeatureExtractor& fx, std::span<const SampleStats> stats,
                                std::span<const int> labels, std::span<const std::size_t> idx, std::vector<double>& grad) {
  grad.assign(m.params.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(idx.size());
  double loss = 0.0;
  std::vector<double> dz;
  std::span<double> grad_layer(grad.data(), m.layer_size());
  for (std::size_t i : idx) {
    const auto z = fx.pooled(stats[i], m.layer());
    loss += head_forward(m, z, labels[i], &grad, &dz, scale).loss;
    fx.backward(stats[i], m.layer(), dz, grad_layer);
  }
  return loss * scale;
}

// ---------------------------------------------------------------------------
// Optimizer.

struct TrainConfig {
  int iterations = 10000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double beta1 = 0.99;
  double beta2 = 0.9999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  int eval_every = 500;

  void validate() const {
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (eval_every < 1) throw ConfigError("evaluation cadence must be >= 1");
  }
};

class Adam {
 public:
  Adam(std::size_t size, double lr, double beta1, double beta2, double eps)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}
  explicit Adam(std::size_t size, const TrainConfig& c = {})
      : Adam(size, c.learning_rate, c.beta1, c.beta2, c.epsilon) {}

  int steps() const { return t_; }

  void step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw ShapeError("Adam state size mismatch");
    for (std::size_t i = 0; i < grad.size(); ++i)
      if (!std::isfinite(grad[i]))
        throw NumericalError("non-finite gradient at parameter " + std::to_string(i) + " (step " +
                             std::to_string(t_ + 1) + ", value " + std::to_string(grad[i]) + ")");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

// ---------------------------------------------------------------------------
// Training and evaluation on precomputed statistics.

struct MetricsRow {
  int iteration = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// Statistics and labels of one split.
struct StatSplit {
  std::vector<SampleStats> stats;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

inline double evaluate(const Model& m, const FeatureExtractor& fx, const StatSplit& split) {
  if (split.size() == 0) throw DomainError("cannot evaluate on an empty split");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto z = fx.pooled(split.stats[i], m.layer());
    correct += head_forward(m, z, -1).predicted == split.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

/// Minibatch Adam. Batches are drawn from per-epoch shuffles of the training
/// split. A metrics row (mean loss since the previous row, accuracies on both
/// splits) is recorded every `eval_every` iterations and after the last one.
inline std::vector<MetricsRow> train(Model& m, const FeatureExtractor& fx, const StatSplit& train_split,
                                     const StatSplit* test_split, const TrainConfig& tc) {
  tc.validate();
  if (train_split.size() == 0) throw DomainError("training split is empty");
  Rng rng = make_rng(tc.seed, 1);
  Adam opt(m.params.size(), tc);
  std::vector<std::size_t> order(train_split.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  std::vector<double> grad;
  std::vector<std::size_t> batch(static_cast<std::size_t>(tc.batch_size));
  std::vector<MetricsRow> rows;
  double loss_acc = 0.0;
  int loss_n = 0;
  for (int it = 1; it <= tc.iterations; ++it) {
    for (auto& b : batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      b = order[cursor++];
    }
    const double loss = loss_and_gradient(m, fx, train_split.stats, train_split.labels, batch, grad);
    if (!std::isfinite(loss)) throw NumericalError("non-finite loss at iteration " + std::to_string(it));
    opt.step(m.params, grad);
    loss_acc += loss;
    ++loss_n;
    if (it % tc.eval_every == 0 || it == tc.iterations) {
      MetricsRow r{it, loss_acc / loss_n, evaluate(m, fx, train_split),
                   test_split && test_split->size() ? evaluate(m, fx, *test_split) : std::nan("")};
      rows.push_back(r);
      loss_acc = 0.0;
      loss_n = 0;
    }
  }
  return rows;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << "iteration,loss,train_accuracy,test_accuracy\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.6f,%.6f\n", r.iteration, r.loss, r.train_accuracy, r.test_accuracy);
    out << buf;
  }
  if (!out) throw IoError(path, "write failed");
}

// ---------------------------------------------------------------------------
// Statistics over runs.

struct ConfidenceInterval {
  double mean = 0.0;
  double half_width = 0.0;
};

/// mean +- t(0.975, k-1) * s / sqrt(k).
inline ConfidenceInterval confidence_interval(std::span<const double> values) {
  if (values.size() < 2) throw DomainError("confidence interval needs at least 2 values");
  const double k = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / k;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (k - 1.0));
  const boost::math::students_t dist(k - 1.0);
  return {mean, boost::math::quantile(dist, 0.975) * sd / std::sqrt(k)};
}

// ---------------------------------------------------------------------------
// Model file.

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"kind", to_string(c.kind)},   {"degree", c.max_degree}, {"filters", c.filters},
          {"kernel_size", c.kernel_size}, {"stride", c.stride},     {"padding", to_string(c.padding)},
          {"classes", c.classes}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.kind = parse_model_kind(j.at("kind").get<std::string>());
    c.max_degree = j.at("degree").get<int>();
    c.filters = j.at("filters").get<int>();
    c.kernel_size = j.at("kernel_size").get<int>();
    c.stride = j.at("stride").get<int>();
    c.padding = parse_padding(j.at("padding").get<std::string>());
    c.classes = j.at("classes").get<int>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid model config: ") + e.what());
  }
}

inline nlohmann::json model_to_json(const Model& m) {
  const auto& c = m.config;
  auto block = [](std::vector<std::size_t> shape, std::span<const double> v) {
    return nlohmann::json{{"shape", shape}, {"values", std::vector<double>(v.begin(), v.end())}};
  };
  std::vector<std::size_t> layer_shape;
  if (c.is_lri())
    layer_shape = {std::size_t(c.filters), std::size_t(c.max_degree + 1), std::size_t(radial_count_for_kernel(c.kernel_size))};
  else
    layer_shape = {std::size_t(c.filters), std::size_t(c.kernel_size), std::size_t(c.kernel_size), std::size_t(c.kernel_size)};
  return {{"format_version", 1},
          {"config", config_to_json(c)},
          {"seed", m.seed},
          {"weights",
           {{"layer", block(layer_shape, m.layer())},
            {"feature_bias", block({m.features()}, m.feature_bias())},
            {"fc_weight", block({m.classes(), m.features()}, m.fc_weight())},
            {"fc_bias", block({m.classes()}, m.fc_bias())}}}};
}

inline Model model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != 1) throw ConfigError("unsupported model format_version");
    Model m{config_from_json(j.at("config")), j.at("seed").get<std::uint64_t>(), {}};
    m.params.assign(count_parameters(m.config), 0.0);
    const auto& w = j.at("weights");
    auto load = [&](const char* name, std::span<double> dst) {
      const auto v = w.at(name).at("values").get<std::vector<double>>();
      if (v.size() != dst.size()) throw ConfigError(std::string("weight block '") + name + "' has the wrong size");
      std::copy(v.begin(), v.end(), dst.begin());
    };
    load("layer", m.layer());
    load("feature_bias", m.feature_bias());
    load("fc_weight", m.fc_weight());
    load("fc_bias", m.fc_bias());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid model file: ") + e.what());
  }
}

inline void save_model(const std::string& path, const Model& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << model_to_json(m).dump(1) << "\n";
  if (!out) throw IoError(path, "write failed");
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path, std::string("malformed JSON: ") + e.what());
  }
  return model_from_json(j);
}

}  // namespace lri
