// lri_cli: dataset generation, toy experiments, training, evaluation, feature
// count tables and gradient checks. Every run writes run.json.
//
// Exit codes: 0 success, 2 configuration error, 3 IO error, 4 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lri/lri.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

struct Run {
  std::string subcommand;
  json config = json::object();
  json outputs = json::object();
  std::string run_json;  // empty: nowhere to write
};

std::string sibling(const std::string& file, const std::string& name) {
  const fs::path parent = fs::path(file).parent_path();
  return (parent.empty() ? fs::path(name) : parent / name).string();
}

void ensure_parent(const std::string& file) {
  const fs::path parent = fs::path(file).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw lri::IoError(parent.string(), "cannot create directory: " + ec.message());
}

void write_run_json(const Run& run, const std::vector<std::string>& argv, int code, const std::string& error) {
  if (run.run_json.empty()) return;
  json j = {{"format_version", 1},
            {"subcommand", run.subcommand},
            {"arguments", argv},
            {"config", run.config},
            {"outputs", run.outputs},
            {"status", code == 0 ? "ok" : "error"},
            {"exit_code", code}};
  if (!error.empty()) j["error"] = error;
  std::error_code ec;
  const fs::path parent = fs::path(run.run_json).parent_path();
  if (!parent.empty()) fs::create_directories(parent, ec);
  std::ofstream out(run.run_json, std::ios::binary);
  if (out) out << j.dump(1) << "\n";
  if (!out) std::cerr << "warning: could not write " << run.run_json << "\n";
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out;
  int n_per_class = 500;
  std::uint64_t seed = 0;
  int jobs = 1;
};

void cmd_gen(const GenArgs& a, Run& run) {
  lri::GenConfig cfg;
  cfg.n_per_class = a.n_per_class;
  cfg.seed = a.seed;
  cfg.jobs = a.jobs;
  run.config = {{"out", a.out},
                {"n_per_class", cfg.n_per_class},
                {"seed", cfg.seed},
                {"jobs", cfg.jobs},
                {"volume_size", cfg.volume_size},
                {"density_range", {cfg.density_min, cfg.density_max}},
                {"segment_fraction", cfg.segment_fraction},
                {"train_fraction", cfg.train_fraction}};
  run.run_json = (fs::path(a.out) / "run.json").string();
  cfg.validate();
  const auto m = lri::generate_dataset(cfg, a.out);
  run.outputs = {{"manifest", (fs::path(a.out) / "manifest.json").string()}, {"samples", m.at("samples").size()}};
  std::cout << "wrote " << m.at("samples").size() << " samples and manifest.json to " << a.out << "\n";
}

// ---------------------------------------------------------------------------

struct ToyArgs {
  int experiment = 1;
  double noise = 0.1;
  std::string out;
  std::uint64_t seed = 0;
  std::string calibration = "gram";
  int instances = 50;
  double rho0 = 8.0;
};

void cmd_toy(const ToyArgs& a, Run& run) {
  lri::ToySpec spec;
  spec.experiment = a.experiment;
  spec.noise = a.noise;
  spec.seed = a.seed;
  spec.instances_per_class = a.instances;
  spec.rho0 = a.rho0;
  run.config = {{"experiment", a.experiment}, {"noise", a.noise},         {"out", a.out},         {"seed", a.seed},
                {"calibration", a.calibration}, {"instances_per_class", a.instances}, {"rho0", a.rho0}, {"size", spec.size}};
  run.run_json = sibling(a.out, "run.json");
  spec.calibration = lri::parse_calibration(a.calibration);
  const auto r = lri::run_toy(spec);
  ensure_parent(a.out);
  lri::write_toy_csv(a.out, r);
  run.outputs = {{"table", a.out}, {"instances", r.instances.size()}};

  std::vector<int> labels;
  for (const auto& i : r.instances) labels.push_back(i.label);
  auto accuracy = [&](bool bis, std::size_t k) {
    std::vector<double> v;
    for (const auto& i : r.instances) v.push_back(bis ? i.bispectrum[k] : i.spectrum[k]);
    return lri::midpoint_threshold_accuracy(v, labels);
  };
  std::cout << "experiment " << a.experiment << ": " << r.instances.size() << " instances written to " << a.out << "\n";
  std::cout << "threshold accuracy per coefficient (midpoint of class means)\n";
  json acc = json::object();
  for (std::size_t n = 0; n < 4; ++n) {
    const double x = accuracy(false, n);
    std::printf("  spectrum   %-7zu %.3f\n", n, x);
    acc["spectrum " + std::to_string(n)] = x;
  }
  for (std::size_t k = 0; k < r.triples.size(); ++k) {
    const double x = accuracy(true, k);
    std::printf("  bispectrum %-7s %.3f\n", r.triples[k].label().c_str(), x);
    acc["bispectrum " + r.triples[k].label()] = x;
  }
  run.outputs["threshold_accuracy"] = acc;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string model = "ssb";
  int degree = 2;
  int filters = 2;
  int kernel_size = 7;
  int stride = 1;
  std::string padding = "zero";
  int iters = 10000;
  double lr = 1e-3;
  int batch_size = 8;
  int eval_every = 500;
  std::uint64_t seed = 0;
  std::string data;
  std::string out;
  std::string metrics;
  int jobs = 1;
  int train_samples = 0;
};

// First `limit` training volumes, alternating classes; 0 keeps all.
std::vector<const lri::LabeledVolume*> select_train(const lri::Dataset& ds, int limit) {
  std::vector<const lri::LabeledVolume*> out;
  if (limit <= 0) {
    for (const auto& v : ds.train) out.push_back(&v);
    return out;
  }
  std::array<std::vector<const lri::LabeledVolume*>, 2> by_class;
  for (const auto& v : ds.train) by_class.at(static_cast<std::size_t>(v.label)).push_back(&v);
  const std::size_t half = static_cast<std::size_t>(limit) / 2;
  if (limit % 2 || by_class[0].size() < half || by_class[1].size() < half)
    throw lri::ConfigError("--train-samples must be even and at most the training split size");
  for (std::size_t i = 0; i < half; ++i) {
    out.push_back(by_class[0][i]);
    out.push_back(by_class[1][i]);
  }
  return out;
}

lri::StatSplit stat_split(const lri::FeatureExtractor& fx, const std::vector<const lri::LabeledVolume*>& vols, int jobs) {
  std::vector<const lri::Volume3D*> ptrs;
  lri::StatSplit s;
  for (const auto* v : vols) {
    ptrs.push_back(&v->volume);
    s.labels.push_back(v->label);
  }
  s.stats = fx.stats_all(ptrs, jobs);
  return s;
}

void cmd_train(const TrainArgs& a, Run& run) {
  lri::ModelConfig mc;
  mc.kind = lri::parse_model_kind(a.model);
  mc.max_degree = a.degree;
  mc.filters = a.filters;
  mc.kernel_size = a.kernel_size;
  mc.stride = a.stride;
  mc.padding = lri::parse_padding(a.padding);
  lri::TrainConfig tc;
  tc.iterations = a.iters;
  tc.learning_rate = a.lr;
  tc.batch_size = a.batch_size;
  tc.eval_every = a.eval_every;
  tc.seed = a.seed;
  const std::string metrics = a.metrics.empty() ? sibling(a.out, "metrics.csv") : a.metrics;
  run.config = {{"model", lri::config_to_json(mc)},
                {"train",
                 {{"iterations", tc.iterations},
                  {"learning_rate", tc.learning_rate},
                  {"batch_size", tc.batch_size},
                  {"beta1", tc.beta1},
                  {"beta2", tc.beta2},
                  {"epsilon", tc.epsilon},
                  {"eval_every", tc.eval_every},
                  {"seed", tc.seed}}},
                {"data", a.data},
                {"train_samples", a.train_samples},
                {"jobs", a.jobs}};
  run.run_json = sibling(a.out, "run.json");
  mc.validate();
  tc.validate();
  if (mc.is_lri()) lri::warn_if_above_degree_bound(mc.max_degree, mc.kernel_size);

  lri::Model model = lri::build_model(mc, a.seed);
  std::cout << "model " << lri::to_string(mc.kind) << ": " << lri::count_parameters(model) << " trainable parameters\n";
  const lri::Dataset ds = lri::load_dataset(a.data);
  const lri::FeatureExtractor fx(mc);
  const auto train_vols = select_train(ds, a.train_samples);
  std::vector<const lri::LabeledVolume*> test_vols;
  for (const auto& v : ds.test) test_vols.push_back(&v);
  const auto train_split = stat_split(fx, train_vols, a.jobs);
  const auto test_split = stat_split(fx, test_vols, a.jobs);
  const auto rows = lri::train(model, fx, train_split, test_split.size() ? &test_split : nullptr, tc);
  for (const auto& r : rows)
    std::printf("iter %6d  loss %.6f  train %.4f  test %.4f\n", r.iteration, r.loss, r.train_accuracy, r.test_accuracy);
  ensure_parent(a.out);
  ensure_parent(metrics);
  lri::save_model(a.out, model);
  lri::write_metrics_csv(metrics, rows);
  run.outputs = {{"model", a.out},
                 {"metrics", metrics},
                 {"parameters", lri::count_parameters(model)},
                 {"train_volumes", train_split.size()},
                 {"test_volumes", test_split.size()}};
  if (!rows.empty()) {
    run.outputs["final_train_accuracy"] = rows.back().train_accuracy;
    if (test_split.size()) run.outputs["final_test_accuracy"] = rows.back().test_accuracy;
  }
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string model_file;
  std::string data;
  std::string split = "test";
  std::string run_json = "run.json";
};

void cmd_eval(const EvalArgs& a, Run& run) {
  run.config = {{"model_file", a.model_file}, {"data", a.data}, {"split", a.split}};
  run.run_json = a.run_json;
  if (a.split != "train" && a.split != "test" && a.split != "all") throw lri::ConfigError("--split must be train, test or all");
  const lri::Model m = lri::load_model(a.model_file);
  const lri::Dataset ds = lri::load_dataset(a.data);
  const lri::FeatureExtractor fx(m.config);
  std::size_t correct = 0, total = 0;
  auto score = [&](const std::vector<lri::LabeledVolume>& vols) {
    for (const auto& v : vols) {
      const auto z = fx.pooled_direct(v.volume, m.layer());
      correct += lri::head_forward(m, z, -1).predicted == v.label;
      ++total;
    }
  };
  if (a.split != "test") score(ds.train);
  if (a.split != "train") score(ds.test);
  if (total == 0) throw lri::ConfigError("selected split is empty");
  const double acc = static_cast<double>(correct) / static_cast<double>(total);
  run.outputs = {{"accuracy", acc}, {"volumes", total}};
  std::printf("accuracy %.4f (%zu/%zu, split %s)\n", acc, correct, total, a.split.c_str());
}

// ---------------------------------------------------------------------------

struct TablesArgs {
  std::string which = "feature-counts";
  std::string run_json = "run.json";
};

void cmd_tables(const TablesArgs& a, Run& run) {
  run.config = {{"which", a.which}};
  run.run_json = a.run_json;
  if (a.which != "feature-counts") throw lri::ConfigError("unknown table '" + a.which + "' (expected feature-counts)");
  const auto rows = lri::feature_count_table({0, 1, 2, 4, 6, 8, 10, 100});
  std::cout << "N,bispectrum,spectrum\n";
  json out = json::array();
  for (const auto& r : rows) {
    std::cout << r.degree << ',' << r.bispectrum << ',' << r.spectrum << '\n';
    out.push_back({{"N", r.degree}, {"bispectrum", r.bispectrum}, {"spectrum", r.spectrum}});
  }
  std::cout << "note: at N=100 the enumeration rule gives " << lri::triple_count(100) << " bispectrum channels; the published table lists "
            << lri::kPublishedCountAt100 << " (see README, \"Feature count at N = 100\")\n";
  run.outputs = {{"rows", out}};
}

// ---------------------------------------------------------------------------

struct GradArgs {
  std::string model = "ssb";
  int degree = 2;
  int filters = 2;
  int kernel_size = 7;
  int size = 16;
  std::uint64_t seed = 0;
  double step = 1e-4;
  double tolerance = 1e-4;
  std::string run_json = "run.json";
};

void cmd_gradcheck(const GradArgs& a, Run& run) {
  run.config = {{"model", a.model}, {"degree", a.degree}, {"filters", a.filters},     {"kernel_size", a.kernel_size},
                {"size", a.size},   {"seed", a.seed},     {"step", a.step},           {"tolerance", a.tolerance}};
  run.run_json = a.run_json;
  lri::ModelConfig mc;
  mc.kind = lri::parse_model_kind(a.model);
  if (!mc.is_lri()) throw lri::ConfigError("gradcheck covers the sse and ssb layers");
  mc.max_degree = a.degree;
  mc.filters = a.filters;
  mc.kernel_size = a.kernel_size;
  mc.validate();
  if (a.size < 1) throw lri::ConfigError("--size must be positive");
  lri::Rng rng = lri::make_rng(a.seed, 3);
  std::normal_distribution<double> g;
  lri::Volume3D vol(lri::Shape3{a.size, a.size, a.size});
  for (auto& x : vol.values()) x = g(rng);
  const auto r = lri::gradient_check(mc.layer_config(), vol, a.seed, a.step);
  run.outputs = {{"parameters", r.parameters},
                 {"max_relative_error", r.max_relative_error},
                 {"max_moment_relative_error", r.max_moment_relative_error}};
  std::printf("parameters %zu\nmax relative error %.3e\nmoment path max relative error %.3e\n", r.parameters,
              r.max_relative_error, r.max_moment_relative_error);
  if (!(r.max_relative_error < a.tolerance) || !(r.max_moment_relative_error < a.tolerance))
    throw lri::NumericalError("gradient check exceeds tolerance " + std::to_string(a.tolerance));
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Locally rotation invariant 3D CNN layers: data, training and diagnostics"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate the synthetic segment/cross dataset");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--n-per-class", gen.n_per_class, "volumes per class")->capture_default_str();
  g->add_option("--seed", gen.seed, "master seed")->capture_default_str();
  g->add_option("--jobs", gen.jobs, "worker threads")->capture_default_str();

  ToyArgs toy;
  auto* t = app.add_subcommand("toy", "run a toy experiment and write its invariant table");
  t->add_option("--experiment", toy.experiment, "1 or 2")->capture_default_str();
  t->add_option("--noise", toy.noise, "noise sigma relative to the largest noiseless value")->capture_default_str();
  t->add_option("--out", toy.out, "output CSV")->required();
  t->add_option("--seed", toy.seed, "seed")->capture_default_str();
  t->add_option("--calibration", toy.calibration, "gram or scalar")->capture_default_str();
  t->add_option("--instances", toy.instances, "instances per class")->capture_default_str();
  t->add_option("--rho0", toy.rho0, "band-pass profile centre radius in voxels")->capture_default_str();

  TrainArgs tr;
  auto* r = app.add_subcommand("train", "train a classifier on a generated dataset");
  r->add_option("--model", tr.model, "ssb, sse or z3")->capture_default_str();
  r->add_option("--degree", tr.degree, "maximal degree N")->capture_default_str();
  r->add_option("--filters", tr.filters, "streams / filters Q")->capture_default_str();
  r->add_option("--kernel-size", tr.kernel_size, "kernel size c (odd)")->capture_default_str();
  r->add_option("--stride", tr.stride, "stride")->capture_default_str();
  r->add_option("--padding", tr.padding, "zero or none")->capture_default_str();
  r->add_option("--iters", tr.iters, "training iterations")->capture_default_str();
  r->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
  r->add_option("--batch-size", tr.batch_size, "minibatch size")->capture_default_str();
  r->add_option("--eval-every", tr.eval_every, "metrics cadence in iterations")->capture_default_str();
  r->add_option("--seed", tr.seed, "initialization and batching seed")->capture_default_str();
  r->add_option("--data", tr.data, "dataset directory")->required();
  r->add_option("--out", tr.out, "model JSON")->required();
  r->add_option("--metrics", tr.metrics, "metrics CSV (default: metrics.csv next to the model)");
  r->add_option("--jobs", tr.jobs, "threads for per-volume statistics")->capture_default_str();
  r->add_option("--train-samples", tr.train_samples, "use the first N training volumes, balanced (0: all)")
      ->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "accuracy of a saved model on a dataset split");
  e->add_option("--model-file", ev.model_file, "model JSON")->required();
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--split", ev.split, "train, test or all")->capture_default_str();
  e->add_option("--run-json", ev.run_json, "where to write run.json")->capture_default_str();

  TablesArgs tb;
  auto* b = app.add_subcommand("tables", "print reference tables");
  b->add_option("--which", tb.which, "feature-counts")->capture_default_str();
  b->add_option("--run-json", tb.run_json, "where to write run.json")->capture_default_str();

  GradArgs gc;
  auto* c = app.add_subcommand("gradcheck", "compare analytic layer gradients with central differences");
  c->add_option("--model", gc.model, "ssb or sse")->capture_default_str();
  c->add_option("--degree", gc.degree, "maximal degree N")->capture_default_str();
  c->add_option("--filters", gc.filters, "streams Q")->capture_default_str();
  c->add_option("--kernel-size", gc.kernel_size, "kernel size c")->capture_default_str();
  c->add_option("--size", gc.size, "random cubic volume edge")->capture_default_str();
  c->add_option("--seed", gc.seed, "seed")->capture_default_str();
  c->add_option("--step", gc.step, "finite-difference step")->capture_default_str();
  c->add_option("--tolerance", gc.tolerance, "failure threshold on the relative error")->capture_default_str();
  c->add_option("--run-json", gc.run_json, "where to write run.json")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  Run run;
  int code = 0;
  std::string message;
  try {
    if (*g) run.subcommand = "gen", cmd_gen(gen, run);
    else if (*t) run.subcommand = "toy", cmd_toy(toy, run);
    else if (*r) run.subcommand = "train", cmd_train(tr, run);
    else if (*e) run.subcommand = "eval", cmd_eval(ev, run);
    else if (*b) run.subcommand = "tables", cmd_tables(tb, run);
    else if (*c) run.subcommand = "gradcheck", cmd_gradcheck(gc, run);
  } catch (const lri::IoError& err) {
    code = kExitIo;
    message = err.what();
  } catch (const lri::NumericalError& err) {
    code = kExitNumerical;
    message = err.what();
  } catch (const lri::Error& err) {
    code = kExitConfig;
    message = err.what();
  } catch (const std::exception& err) {
    code = 1;
    message = err.what();
  }
  if (code != 0) std::cerr << "error: " << message << "\n";
  write_run_json(run, args, code, message);
  return code;
}
