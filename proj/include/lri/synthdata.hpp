#pragma once

// Synthetic data: the two-class rotated-pattern volumes and the toy
// experiments built from explicit spherical Fourier vectors.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "lri/error.hpp"
#include "lri/invariants.hpp"
#include "lri/random.hpp"
#include "lri/sph_core.hpp"
#include "lri/volume.hpp"

namespace lri {

// ---------------------------------------------------------------------------
// Patterns and placement.

enum class PatternKind { segment, cross };

inline std::string to_string(PatternKind k) { return k == PatternKind::segment ? "segment" : "cross"; }

inline constexpr int kPatternSize = 7;

/// Segment: 7 unit voxels along the central x3 axis. Cross: 13-voxel plus in
/// the central x3 plane, scaled to the segment's norm sqrt(7).
inline Volume3D make_pattern(PatternKind kind) {
  constexpr int s = kPatternSize, c = s / 2;
  Volume3D p(Shape3{s, s, s});
  if (kind == PatternKind::segment) {
    for (int k = 0; k < s; ++k) p(c, c, k) = 1.0;
    return p;
  }
  const double v = std::sqrt(7.0 / 13.0);
  for (int t = 0; t < s; ++t) {
    p(t, c, c) = v;
    p(c, t, c) = v;
  }
  return p;
}

struct GenConfig {
  int volume_size = 32;
  double density_min = 0.1;
  double density_max = 0.5;
  /// Probability of a segment for class 0 and class 1; crosses take the rest.
  std::array<double, 2> segment_fraction{0.3, 0.7};
  int n_per_class = 500;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  int jobs = 1;

  void validate() const {
    if (volume_size < kPatternSize) throw ConfigError("volume size must be >= pattern size");
    if (!(density_min > 0.0) || density_min > density_max) throw ConfigError("invalid density range");
    for (double f : segment_fraction)
      if (f < 0.0 || f > 1.0) throw ConfigError("class mixtures must lie in [0, 1]");
    if (n_per_class < 1) throw ConfigError("n-per-class must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train fraction must lie in (0, 1]");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
  }

  int train_per_class() const { return static_cast<int>(std::lround(train_fraction * n_per_class)); }
};

/// floor(d (s_v / s_p)^3).
inline int pattern_count(double density, int volume_size) {
  const double ratio = static_cast<double>(volume_size) / kPatternSize;
  return static_cast<int>(std::floor(density * ratio * ratio * ratio));
}

struct Placement {
  PatternKind kind;
  std::array<int, 3> center;
  std::array<double, 4> quaternion;
};

struct PlacedVolume {
  Volume3D volume;
  double density = 0.0;
  std::vector<Placement> placements;
};

/// Adds `count` Haar-rotated patterns (trilinear resampling about the pattern
/// center) at uniform positions that keep the 7^3 support inside the volume.
template <class R>
PlacedVolume place_patterns(int cls, R& rng, const GenConfig& cfg = {}) {
  if (cls < 0 || cls > 1) throw DomainError("class id must be 0 or 1");
  const int sv = cfg.volume_size, r = kPatternSize / 2;
  PlacedVolume out{Volume3D(Shape3{sv, sv, sv}), 0.0, {}};
  std::uniform_real_distribution<double> ud(cfg.density_min, cfg.density_max);
  out.density = ud(rng);
  const int count = pattern_count(out.density, sv);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> pos(r, sv - 1 - r);
  static const Volume3D segment = make_pattern(PatternKind::segment);
  static const Volume3D cross = make_pattern(PatternKind::cross);
  for (int i = 0; i < count; ++i) {
    const PatternKind kind = u01(rng) < cfg.segment_fraction[static_cast<std::size_t>(cls)] ? PatternKind::segment
                                                                                            : PatternKind::cross;
    const Rotation rot = random_rotation(rng);
    const std::array<int, 3> c{pos(rng), pos(rng), pos(rng)};
    const Volume3D p = rotate_trilinear(kind == PatternKind::segment ? segment : cross, rot);
    for (int a = 0; a < kPatternSize; ++a)
      for (int b = 0; b < kPatternSize; ++b)
        for (int d = 0; d < kPatternSize; ++d) {
          const double v = p(a, b, d);
          if (v != 0.0) out.volume(c[0] - r + a, c[1] - r + b, c[2] - r + d) += v;
        }
    out.placements.push_back({kind, c, rot.quaternion()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset on disk.

struct SampleRecord {
  std::string file;
  int label = 0;
  bool train = true;
  std::uint64_t seed = 0;
  double density = 0.0;
  int count = 0;
};

inline std::string sample_file_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%04d.f32raw", id);
  return buf;
}

/// Sample id i has class i / n_per_class; the first train_per_class samples of
/// each class form the training split. Sample seeds derive from the master seed.
inline PlacedVolume generate_sample(const GenConfig& cfg, int id, SampleRecord* rec = nullptr) {
  const int cls = id / cfg.n_per_class;
  const std::uint64_t seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(id));
  Rng rng(seed);
  PlacedVolume pv = place_patterns(cls, rng, cfg);
  if (rec) {
    *rec = {sample_file_name(id), cls, id % cfg.n_per_class < cfg.train_per_class(), seed, pv.density,
            static_cast<int>(pv.placements.size())};
  }
  return pv;
}

/// Writes every sample file and manifest.json into `dir`; returns the manifest.
inline nlohmann::json generate_dataset(const GenConfig& cfg, const std::string& dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir, "cannot create directory: " + ec.message());
  const int total = 2 * cfg.n_per_class;
  std::vector<SampleRecord> recs(static_cast<std::size_t>(total));
  std::vector<std::vector<Placement>> placements(static_cast<std::size_t>(total));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.jobs));
  auto work = [&](int t) {
    try {
      for (int id = t; id < total; id += cfg.jobs) {
        auto pv = generate_sample(cfg, id, &recs[static_cast<std::size_t>(id)]);
        write_f32raw((fs::path(dir) / recs[static_cast<std::size_t>(id)].file).string(), pv.volume);
        placements[static_cast<std::size_t>(id)] = std::move(pv.placements);
      }
    } catch (...) {
      errors[static_cast<std::size_t>(t)] = std::current_exception();
    }
  };
  if (cfg.jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < cfg.jobs; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  nlohmann::json samples = nlohmann::json::array();
  for (int id = 0; id < total; ++id) {
    const auto& r = recs[static_cast<std::size_t>(id)];
    nlohmann::json pl = nlohmann::json::array();
    for (const auto& p : placements[static_cast<std::size_t>(id)])
      pl.push_back({{"kind", to_string(p.kind)}, {"center", p.center}, {"quaternion", p.quaternion}});
    samples.push_back({{"id", id},
                       {"file", r.file},
                       {"class", r.label},
                       {"split", r.train ? "train" : "test"},
                       {"seed", r.seed},
                       {"density", r.density},
                       {"count", r.count},
                       {"placements", pl}});
  }
  nlohmann::json m = {
      {"format_version", 1},
      {"shape", {cfg.volume_size, cfg.volume_size, cfg.volume_size}},
      {"dtype", "float32"},
      {"byte_order", "little"},
      {"class_labels",
       {{{"id", 0}, {"segment_fraction", cfg.segment_fraction[0]}}, {{"id", 1}, {"segment_fraction", cfg.segment_fraction[1]}}}},
      {"generator",
       {{"seed", cfg.seed},
        {"n_per_class", cfg.n_per_class},
        {"train_per_class", cfg.train_per_class()},
        {"density_range", {cfg.density_min, cfg.density_max}},
        {"pattern_size", kPatternSize}}},
      {"samples", samples}};
  const std::string path = (fs::path(dir) / "manifest.json").string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << m.dump(1) << "\n";
  if (!out) throw IoError(path, "write failed");
  return m;
}

struct LabeledVolume {
  Volume3D volume;
  int label = 0;
  std::string file;
};

struct Dataset {
  nlohmann::json manifest;
  std::vector<LabeledVolume> train;
  std::vector<LabeledVolume> test;
};

inline nlohmann::json read_manifest(const std::string& dir) {
  const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path, std::string("malformed JSON: ") + e.what());
  }
  if (m.value("format_version", 0) != 1) throw ConfigError("unsupported manifest format_version");
  return m;
}

inline Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.manifest = read_manifest(dir);
  try {
    const auto shp = ds.manifest.at("shape").get<std::array<int, 3>>();
    const Shape3 shape{shp[0], shp[1], shp[2]};
    for (const auto& s : ds.manifest.at("samples")) {
      LabeledVolume lv;
      lv.file = s.at("file").get<std::string>();
      lv.label = s.at("class").get<int>();
      lv.volume = read_f32raw((std::filesystem::path(dir) / lv.file).string(), shape);
      (s.at("split").get<std::string>() == "train" ? ds.train : ds.test).push_back(std::move(lv));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid manifest: ") + e.what());
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Volumes synthesized from spherical Fourier vectors.

/// Band-pass profile cos((pi/2) log2(rho / rho0)) on (rho0/2, 2 rho0), zero elsewhere.
inline double simoncelli_profile(double rho, double rho0 = 8.0) {
  if (rho <= 0.5 * rho0 || rho >= 2.0 * rho0) return 0.0;
  return std::cos(0.5 * std::numbers::pi * std::log2(rho / rho0));
}

/// h(rho) sum_n sum_m F_n^m Y_n^m on a size^3 grid centered at voxel size/2.
/// `coeffs[n]` holds degree n. The origin keeps only the degree-0 term.
inline Volume3D synthesize_from_sh(const std::vector<SphericalFourierVector>& coeffs,
                                   const std::function<double(double)>& h, int size = 32) {
  if (size < 1) throw ShapeError("grid size must be positive");
  const int nmax = static_cast<int>(coeffs.size()) - 1;
  double scale = 1.0;
  for (int n = 0; n <= nmax; ++n) {
    if (coeffs[static_cast<std::size_t>(n)].degree() != n) throw DomainError("coefficient vector degree mismatch");
    scale = std::max(scale, coeffs[static_cast<std::size_t>(n)].norm());
  }
  Volume3D out(Shape3{size, size, size});
  if (nmax < 0) return out;
  const int c = size / 2;
  const double y00 = 0.5 / std::sqrt(std::numbers::pi);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j)
      for (int k = 0; k < size; ++k) {
        const Vec3 x(i - c, j - c, k - c);
        const double rho = x.norm();
        const double hv = h(rho);
        if (hv == 0.0) continue;
        cplx acc{};
        if (rho == 0.0) {
          acc = coeffs[0][0] * y00;
        } else {
          const auto y = sh_table(nmax, x);
          for (int n = 0; n <= nmax; ++n)
            for (int m = -n; m <= n; ++m) acc += coeffs[static_cast<std::size_t>(n)][m] * y[sh_index(n, m)];
        }
        if (std::abs(acc.imag()) * std::abs(hv) > 1e-9 * scale)
          throw DomainError("coefficients do not describe a real function (imaginary part " +
                            std::to_string(acc.imag() * hv) + ")");
        out(i, j, k) = hv * acc.real();
      }
  return out;
}

enum class Calibration { gram, scalar };

inline Calibration parse_calibration(const std::string& s) {
  if (s == "gram") return Calibration::gram;
  if (s == "scalar") return Calibration::scalar;
  throw ConfigError("unknown calibration '" + s + "' (expected gram or scalar)");
}

/// Projects the volume around its center voxel onto h(rho) Y_n^m, n <= N.
/// Filter responses r = G F where G is the Gram matrix of the sampled
/// filters; `gram` inverts G, `scalar` divides by its diagonal.
class OriginAnalyzer {
 public:
  OriginAnalyzer(int max_degree, int size, const std::function<double(double)>& h, Calibration cal = Calibration::gram)
      : nmax_(max_degree), size_(size), cal_(cal) {
    const int nc = sh_count(max_degree);
    const int c = size / 2;
    const double y00 = 0.5 / std::sqrt(std::numbers::pi);
    Eigen::MatrixXcd gram = Eigen::MatrixXcd::Zero(nc, nc);
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j)
        for (int k = 0; k < size; ++k) {
          const Vec3 x(i - c, j - c, k - c);
          const double rho = x.norm();
          const double hv = h(rho);
          if (hv == 0.0) continue;
          Eigen::VectorXcd f = Eigen::VectorXcd::Zero(nc);
          if (rho == 0.0) {
            f[0] = hv * y00;
          } else {
            const auto y = sh_table(max_degree, x);
            for (int a = 0; a < nc; ++a) f[a] = hv * y[static_cast<std::size_t>(a)];
          }
          index_.push_back(Shape3{size, size, size}.index(i, j, k));
          filters_.push_back(f.conjugate());
          gram += f.conjugate() * f.transpose();
        }
    if (cal == Calibration::gram) solver_ = gram.fullPivLu();
    diag_ = gram.diagonal();
  }

  /// Calibrated coefficients F_n, n = 0..N.
  std::vector<SphericalFourierVector> analyze(const Volume3D& vol) const {
    if (vol.shape() != Shape3{size_, size_, size_}) throw ShapeError("volume does not match the analyzer grid");
    const int nc = sh_count(nmax_);
    Eigen::VectorXcd r = Eigen::VectorXcd::Zero(nc);
    for (std::size_t t = 0; t < index_.size(); ++t) r += vol.values()[index_[t]] * filters_[t];
    Eigen::VectorXcd f = cal_ == Calibration::gram ? Eigen::VectorXcd(solver_.solve(r)) : Eigen::VectorXcd(r.cwiseQuotient(diag_));
    std::vector<SphericalFourierVector> out;
    for (int n = 0; n <= nmax_; ++n) {
      SphericalFourierVector v(n);
      for (int m = -n; m <= n; ++m) v[m] = f[sh_index(n, m)];
      out.push_back(v);
    }
    return out;
  }

 private:
  int nmax_;
  int size_;
  Calibration cal_;
  std::vector<std::size_t> index_;
  std::vector<Eigen::VectorXcd> filters_;
  Eigen::FullPivLU<Eigen::MatrixXcd> solver_;
  Eigen::VectorXcd diag_;
};

// ---------------------------------------------------------------------------
// Toy experiments.

struct ToySpec {
  int experiment = 1;
  int instances_per_class = 50;
  /// Gaussian sigma as a fraction of the largest |value| over all noiseless volumes.
  double noise = 0.1;
  double rho0 = 8.0;
  int size = 32;
  std::uint64_t seed = 0;
  Calibration calibration = Calibration::gram;

  void validate() const {
    if (experiment != 1 && experiment != 2) throw ConfigError("experiment must be 1 or 2");
    if (instances_per_class < 1) throw ConfigError("instance count must be >= 1");
    if (!(noise >= 0.0)) throw ConfigError("noise must be >= 0");
    if (!(rho0 > 0.0) || 2.0 * rho0 > size / 2 + 0.5) throw ConfigError("profile support must fit the grid");
  }
};

/// Coefficients listed in the real-valued convention F^{-m} = (-1)^{m+n} conj(F^m)
/// become Condon-Shortley coefficients after multiplication by i^n.
inline SphericalFourierVector from_listed(int n, std::vector<cplx> listed) {
  if (listed.size() != static_cast<std::size_t>(2 * n + 1)) throw DomainError("listed vector has the wrong length");
  cplx phase(1.0, 0.0);
  for (int k = 0; k < n; ++k) phase *= cplx(0.0, 1.0);
  for (auto& v : listed) v *= phase;
  return SphericalFourierVector(n, std::move(listed));
}

/// Class representatives (degrees 0..3) of a toy experiment.
inline std::array<std::vector<SphericalFourierVector>, 2> toy_classes(int experiment, std::uint64_t seed) {
  const cplx j(0.0, 1.0);
  std::array<std::vector<SphericalFourierVector>, 2> cls;
  if (experiment == 1) {
    cls[0] = {SphericalFourierVector(0), from_listed(1, {1.0, j, 1.0}), from_listed(2, {1.0, -1.0, 1.0, 1.0, 1.0}),
              from_listed(3, {1.0, -1.0, 1.0, j, 1.0, 1.0, 1.0})};
    // Distinct per-degree rotations R_1, R_2, R_3.
    Rng rng = make_rng(seed, 0x70791);
    cls[1] = cls[0];
    for (int n = 1; n <= 3; ++n)
      cls[1][static_cast<std::size_t>(n)] = rotate_fourier_vector(cls[0][static_cast<std::size_t>(n)], random_rotation(rng));
    return cls;
  }
  if (experiment != 2) throw ConfigError("experiment must be 1 or 2");
  const double s3 = std::sqrt(3.0), s5 = std::sqrt(5.0), s7 = std::sqrt(7.0);
  cls[0] = {SphericalFourierVector(0), from_listed(1, {0.0, s3 * j, 0.0}), from_listed(2, {0.0, 0.0, s5, 0.0, 0.0}),
            from_listed(3, {0.0, 0.0, 0.0, s7 * j, 0.0, 0.0, 0.0})};
  const double a1 = std::sqrt(1.5), a2 = std::sqrt(2.5), a3 = std::sqrt(3.5);
  cls[1] = {SphericalFourierVector(0), from_listed(1, {a1, 0.0, a1}), from_listed(2, {a2, 0.0, 0.0, 0.0, a2}),
            from_listed(3, {a3, 0.0, 0.0, 0.0, 0.0, 0.0, a3})};
  return cls;
}

struct ToyInstance {
  int instance = 0;
  int label = 0;
  std::vector<double> spectrum;    // n = 0..3
  std::vector<double> bispectrum;  // one per triple
};

struct ToyResult {
  std::vector<BispectrumTriple> triples;
  std::vector<ToyInstance> instances;
};

/// Instances alternate classes by block: ids [0, I) are class 0, [I, 2I) class 1.
/// Each instance applies one Haar rotation to all degrees, synthesizes, adds
/// noise, and analyzes the center voxel. The noise sigma is shared by every
/// instance: `noise` times the largest |value| over all noiseless volumes.
inline ToyResult run_toy(const ToySpec& spec) {
  spec.validate();
  constexpr int kDegree = 3;
  const auto h = [rho0 = spec.rho0](double rho) { return simoncelli_profile(rho, rho0); };
  const auto classes = toy_classes(spec.experiment, spec.seed);
  const OriginAnalyzer analyzer(kDegree, spec.size, h, spec.calibration);
  const CGCache cg(kDegree);
  ToyResult res;
  res.triples = enumerate_triples_bounded(kDegree);
  std::vector<Volume3D> volumes;
  std::vector<Rng> rngs;
  double mx = 0.0;
  for (int cls = 0; cls < 2; ++cls)
    for (int i = 0; i < spec.instances_per_class; ++i) {
      const int id = cls * spec.instances_per_class + i;
      rngs.push_back(make_rng(spec.seed, 1000 + static_cast<std::uint64_t>(id)));
      const Rotation r = random_rotation(rngs.back());
      std::vector<SphericalFourierVector> f;
      for (const auto& v : classes[static_cast<std::size_t>(cls)]) f.push_back(rotate_fourier_vector(v, r));
      volumes.push_back(synthesize_from_sh(f, h, spec.size));
      for (double v : volumes.back().values()) mx = std::max(mx, std::abs(v));
    }
  for (std::size_t id = 0; id < volumes.size(); ++id) {
    Volume3D& vol = volumes[id];
    if (spec.noise > 0.0) {
      std::normal_distribution<double> g(0.0, spec.noise * mx);
      for (auto& v : vol.values()) v += g(rngs[id]);
    }
    const auto est = analyzer.analyze(vol);
    const int cls = static_cast<int>(id) / spec.instances_per_class;
    ToyInstance inst{static_cast<int>(id), cls, {}, {}};
    for (const auto& v : est) inst.spectrum.push_back(spectrum(v));
    for (const auto& t : res.triples) {
      const cplx b = bispectrum(est[static_cast<std::size_t>(t.n)], est[static_cast<std::size_t>(t.n_prime)],
                                est[static_cast<std::size_t>(t.ell)], cg.get(t.n, t.n_prime));
      inst.bispectrum.push_back(parity_project(b, t));
    }
    res.instances.push_back(std::move(inst));
  }
  return res;
}

inline void write_toy_csv(const std::string& path, const ToyResult& res) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << "instance,class,kind,index,value\n";
  char buf[64];
  for (const auto& inst : res.instances) {
    for (std::size_t n = 0; n < inst.spectrum.size(); ++n) {
      std::snprintf(buf, sizeof buf, "%.12g", inst.spectrum[n]);
      out << inst.instance << ',' << inst.label << ",spectrum," << n << ',' << buf << '\n';
    }
    for (std::size_t k = 0; k < inst.bispectrum.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.12g", inst.bispectrum[k]);
      out << inst.instance << ',' << inst.label << ",bispectrum,\"" << res.triples[k].label() << "\"," << buf << '\n';
    }
  }
  if (!out) throw IoError(path, "write failed");
}

/// Accuracy of the rule "class 1 iff value is on class 1's side of the
/// midpoint between the class means".
inline double midpoint_threshold_accuracy(const std::vector<double>& values, const std::vector<int>& labels) {
  if (values.size() != labels.size() || values.empty()) throw ShapeError("value/label count mismatch");
  double s[2] = {0.0, 0.0};
  int n[2] = {0, 0};
  for (std::size_t i = 0; i < values.size(); ++i) {
    s[labels[i]] += values[i];
    ++n[labels[i]];
  }
  if (n[0] == 0 || n[1] == 0) throw DomainError("both classes must be present");
  const double m0 = s[0] / n[0], m1 = s[1] / n[1], mid = 0.5 * (m0 + m1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int pred = (m1 >= m0) == (values[i] > mid) ? 1 : 0;
    correct += pred == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(values.size());
}

}  // namespace lri
