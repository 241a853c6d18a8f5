// ibdyn: command-line front end. Every subcommand writes CSV/JSON artifacts
// plus one manifest.json into its output directory.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "ibdyn/bounds.hpp"
#include "ibdyn/datagen.hpp"
#include "ibdyn/diffusion.hpp"
#include "ibdyn/ib.hpp"
#include "ibdyn/infoplane.hpp"
#include "ibdyn/net.hpp"
#include "ibdyn/ntk.hpp"

#ifndef IBDYN_VERSION_STRING
#define IBDYN_VERSION_STRING "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ibdyn;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kInternal = 1;
constexpr int kUsage = 2;         // unknown flag, bad flag value
constexpr int kMissingInput = 3;  // input artifact absent or unreadable
constexpr int kInvalidInput = 4;  // input present but violates a precondition
constexpr int kNumerical = 5;     // calibration, divergence, singular kernels

constexpr int kSchemaVersion = 1;
constexpr const char* kOutRootEnv = "IBDYN_OUT_ROOT";

// ---------------------------------------------------------------------------
// Config files: `key = value` lines, `#` comments. A manifest.json from an
// earlier run is accepted too and replays its "config" object.

std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  std::vector<std::pair<std::string, std::string>> kv;
  if (fs::path(path).extension() == ".json") {
    json m;
    try {
      in >> m;
    } catch (const json::exception& e) {
      throw IoError("malformed manifest " + path + ": " + e.what());
    }
    if (!m.contains("config")) throw IoError("manifest " + path + " has no config object");
    for (const auto& [k, v] : m["config"].items())
      if (k != "out" && k != "config") kv.emplace_back(k, v.get<std::string>());
    return kv;
  }
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string{};
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgument(path + ":" + std::to_string(lineno) + ": expected key = value");
    auto key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (key != "config") kv.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

// Splices config entries into argv right after the subcommand token, unless
// the flag is already given on the command line.
std::vector<std::string> expand_args(int argc, char** argv, const std::vector<std::string>& subcommands) {
  std::vector<std::string> args(argv, argv + argc);
  std::size_t sub_pos = 0;
  for (std::size_t i = 1; i < args.size() && sub_pos == 0; ++i)
    for (const auto& s : subcommands)
      if (args[i] == s) sub_pos = i;
  if (sub_pos == 0) return args;
  std::string config;
  for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (config.empty()) return args;
  auto given = [&](const std::string& key) {
    for (std::size_t i = sub_pos + 1; i < args.size(); ++i)
      if (args[i] == "--" + key || args[i].rfind("--" + key + "=", 0) == 0) return true;
    return false;
  };
  std::vector<std::string> inject;
  for (const auto& [k, v] : read_config(config))
    if (!given(k)) inject.push_back("--" + k + "=" + v);
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, inject.begin(), inject.end());
  return args;
}

// ---------------------------------------------------------------------------

struct Common {
  std::string config;
  std::string out;
  int threads = 1;
};

struct Run {
  std::string name;
  CLI::App* app = nullptr;
  fs::path out;
  json seeds = json::object();
  json outputs = json::array();
  json results = json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  fs::path file(const std::string& rel) {
    outputs.push_back(rel);
    return out / rel;
  }
};

fs::path resolve_out(const std::string& flag, const std::string& sub) {
  if (!flag.empty()) return flag;
  const char* root = std::getenv(kOutRootEnv);
  return fs::path(root && *root ? root : "runs") / sub;
}

std::string option_value(const CLI::Option* o) {
  if (o->count() == 0) {
    std::string d = o->get_default_str();
    if (d.size() >= 2 && d.front() == '[' && d.back() == ']') d = d.substr(1, d.size() - 2);
    return d;
  }
  std::string s;
  for (const auto& r : o->results()) s += (s.empty() ? "" : ",") + r;
  return s;
}

void write_manifest(Run& r) {
  json cfg = json::object();
  for (const CLI::Option* o : r.app->get_options()) {
    const auto& name = o->get_single_name();
    if (o->get_lnames().empty() || name == "help" || name == "config") continue;
    cfg[name] = option_value(o);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - r.start).count();
  json m = {{"kind", "ibdyn_manifest"},
            {"schema_version", kSchemaVersion},
            {"subcommand", r.name},
            {"config", cfg},
            {"seeds", r.seeds},
            {"versions",
             {{"ibdyn", IBDYN_VERSION_STRING},
              {"csv_schema", kSchemaVersion},
              {"compiler", __VERSION__},
              {"cplusplus", __cplusplus}}},
            {"output_dir", fs::absolute(r.out).string()},
            {"outputs", r.outputs},
            {"results", r.results},
            {"wall_clock_seconds", secs}};
  std::ofstream(r.out / "manifest.json") << m.dump(2) << '\n';
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw IoError(std::string(what) + " not found: " + p.string());
}

std::ofstream open_csv(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw IoError("cannot write " + p.string());
  f << std::setprecision(17);
  return f;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream f(p);
  if (!f) throw IoError("cannot write " + p.string());
  f << j.dump(2) << '\n';
}

std::vector<double> geometric_betas(double lo, double hi, double factor) {
  if (!(lo > 0.0) || !(hi >= lo) || !(factor > 1.0)) throw InvalidArgument("beta grid needs 0 < min <= max, factor > 1");
  std::vector<double> b;
  for (double v = lo; v <= hi * (1.0 + 1e-12); v *= factor) b.push_back(v);
  return b;
}

// A train output directory: the run itself and the task it was trained on.
struct TrainedTask {
  TrainRun run;
  SymmetricTask task;
  Matrix inputs;  // every pattern, +-1
};

TrainedTask load_trained(const fs::path& dir) {
  require_file(dir / "run" / "run.json", "train run");
  require_file(dir / "rule.csv", "rule");
  TrainedTask t;
  t.run = load_run(dir / "run");
  t.task = read_rule_csv((dir / "rule.csv").string());
  t.inputs = symmetric_dataset(t.task, 1.0, 0).inputs;
  return t;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOpts {
  std::string task = "symmetric";
  std::uint64_t seed = 1;
  std::size_t dim_x = 30, dim_y = 1, samples = 0;
  double sigma_x = 1.0, sigma_y = 1.0;
  std::vector<double> spectrum{3.0};
};

void run_synth(Run& r, const SynthOpts& o) {
  r.seeds["task"] = o.seed;
  if (o.task == "symmetric") {
    const auto task = default_symmetric_task(o.seed);
    write_rule_csv(task, r.file("rule.csv").string());
    const auto joint = task.rule.joint();
    write_joint_csv(joint, r.file("joint.csv").string());
    r.results = {{"patterns", task.patterns.size()},
                 {"orbits", task.patterns.n_orbits},
                 {"i_xy_bits", mutual_information(joint)},
                 {"h_y_bits", entropy(joint.marginal_y())},
                 {"gain", task.rule.gain},
                 {"threshold", task.rule.threshold}};
  } else if (o.task == "gaussian") {
    const auto task = generate_joint_gaussian(o.dim_x, o.dim_y, o.seed, o.sigma_x, o.sigma_y, o.spectrum);
    write_json(r.file("task.json"), to_json(task));
    r.results = {{"i_xy_bits", analytic_mi_gaussian(task)},
                 {"h_y_bits", gaussian_label_entropy_bits(task)},
                 {"gib_eigenvalues", gib_spectrum(task).eigenvalues}};
    if (o.samples > 0) {
      r.seeds["sampler"] = o.seed + 1;
      GaussianSampler smp(task, o.seed + 1);
      const auto [x, y] = smp.sample(o.samples);
      auto f = open_csv(r.file("samples.csv"));
      for (std::size_t j = 0; j < task.dim_x; ++j) f << 'x' << j << ',';
      for (std::size_t j = 0; j < task.dim_y; ++j) f << 'y' << j << (j + 1 < task.dim_y ? "," : "\n");
      for (std::size_t i = 0; i < o.samples; ++i) {
        for (std::size_t j = 0; j < task.dim_x; ++j) f << x(i, j) << ',';
        for (std::size_t j = 0; j < task.dim_y; ++j) f << y(i, j) << (j + 1 < task.dim_y ? "," : "\n");
      }
    }
  } else {
    throw InvalidArgument("synth: unknown task '" + o.task + "'");
  }
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string rule;
  std::uint64_t task_seed = 1, split_seed = 1;
  NetworkSpec spec;
  TrainConfig cfg;
  std::string activation = "tanh";
};

void run_train(Run& r, TrainOpts o) {
  SymmetricTask task;
  if (o.rule.empty()) {
    task = default_symmetric_task(o.task_seed);
    r.seeds["task"] = o.task_seed;
  } else {
    require_file(o.rule, "rule");
    task = read_rule_csv(o.rule);
  }
  o.spec.activation = activation_from_string(o.activation);
  const auto data = symmetric_dataset(task, o.cfg.train_fraction, o.split_seed);
  r.seeds["split"] = o.split_seed;
  r.seeds["network"] = o.spec.seed;
  r.seeds["minibatch"] = o.cfg.seed;
  const auto run = train(o.spec, o.cfg, data);
  write_rule_csv(task, r.file("rule.csv").string());
  save_run(run, r.out / "run");
  r.outputs.push_back("run/");
  r.results = {{"epochs_run", run.epochs_run},
               {"batches_per_epoch", run.batches_per_epoch},
               {"snapshots", run.snapshots.size()},
               {"final_train_error", run.train_error.empty() ? 0.0 : run.train_error.back()},
               {"final_test_error", run.test_error.empty() ? 0.0 : run.test_error.back()}};
}

// ---------------------------------------------------------------------------
// infoplane

struct InfoplaneOpts {
  std::string train_dir;
  BinningConfig bins;
  int snr_layer = -1;
  int per_octave = 4;
};

void run_infoplane(Run& r, const InfoplaneOpts& o, int threads) {
  const auto t = load_trained(o.train_dir);
  const auto traj = estimate_layer_mi(t.run, t.inputs, t.task.rule.joint(), o.bins, threads);
  write_trajectory_csv(traj, r.file("trajectory.csv").string());
  const std::size_t layer = o.snr_layer < 0 ? default_snr_layer(t.run) : static_cast<std::size_t>(o.snr_layer);
  if (layer >= t.run.spec.n_layers()) throw InvalidArgument("infoplane: snr layer out of range");
  const auto phases = analyze_phases(t.run, traj, layer, o.per_octave);
  write_json(r.file("phases.json"), to_json(phases));
  auto f = open_csv(r.file("snr.csv"));
  f << "epoch,iteration,snr\n";
  for (const auto& p : gradient_snr_series(t.run, layer))
    if (p.defined) f << p.epoch << ',' << p.iteration << ',' << p.snr << '\n';
  r.results = {{"dpi_max_violation", phases.dpi.max_violation()},
               {"snr_transition_epoch", phases.snr_transition_epoch ? json(*phases.snr_transition_epoch) : json()},
               {"clipped", traj.clipped},
               {"i_xy_bits", traj.i_xy}};
}

// ---------------------------------------------------------------------------
// ib-curve

struct IbCurveOpts {
  std::string joint;
  double beta_min = 0.5, beta_max = 200.0, beta_factor = 1.05;
  int restarts = 3;
  std::size_t card_t = 0;
  IBOptions ib;
};

void run_ib_curve(Run& r, IbCurveOpts o, int threads) {
  require_file(o.joint, "joint");
  IBProblem pr(read_joint_csv(o.joint), o.card_t);
  o.ib.threads = threads;
  r.seeds["init"] = o.ib.seed;
  const auto betas = geometric_betas(o.beta_min, o.beta_max, o.beta_factor);
  const auto curve = sweep_info_curve(pr, betas, o.restarts, o.ib);
  auto f = open_csv(r.file("curve.csv"));
  f << "beta,i_x,i_y,converged,effective_t\n";
  for (const auto& p : curve.points)
    f << p.beta << ',' << p.i_x << ',' << p.i_y << ',' << int(p.converged) << ',' << p.effective_t << '\n';
  auto s = open_csv(r.file("slopes.csv"));
  s << "beta,slope,expected,relative_error\n";
  double worst = 0.0;
  for (const auto& c : interior_slopes(curve)) {
    s << c.beta << ',' << c.slope << ',' << c.expected << ',' << c.relative_error() << '\n';
    worst = std::max(worst, c.relative_error());
  }
  r.results = {{"points", curve.points.size()},
               {"concavity_violation", concavity_violation(curve)},
               {"monotonicity_violation", monotonicity_violation(curve)},
               {"worst_slope_relative_error", worst},
               {"i_xy_bits", mutual_information(pr.joint)}};
}

// ---------------------------------------------------------------------------
// beta-star

struct BetaStarOpts {
  std::string train_dir;
  std::vector<int> layers;  // empty: every hidden layer
  long long epoch = -1;     // -1: last snapshot
  BinningConfig bins;
  double beta_min = 0.1, beta_max = 1000.0, beta_factor = 1.1;
};

void run_beta_star(Run& r, const BetaStarOpts& o) {
  o.bins.validate();
  const auto t = load_trained(o.train_dir);
  const auto& snap = o.epoch < 0 ? t.run.snapshots.back() : t.run.snapshot_at_epoch(o.epoch);
  const auto xy = t.task.rule.joint();
  const IBProblem pr(xy);
  const auto grid = geometric_betas(o.beta_min, o.beta_max, o.beta_factor);
  const auto acts = forward_all(snap.net, t.inputs);
  std::vector<int> layers = o.layers;
  if (layers.empty())
    for (std::size_t k = 0; k + 1 < t.run.spec.n_layers(); ++k) layers.push_back(static_cast<int>(k));

  auto f = open_csv(r.file("beta_star.csv"));
  f << "layer,epoch,beta_star,kl_at_star,i_xt,i_ty,n_t\n";
  auto g = open_csv(r.file("kl_grid.csv"));
  g << "layer,beta,kl_bits\n";
  const std::size_t nx = xy.rows(), ny = xy.cols();
  for (int layer : layers) {
    if (layer < 0 || static_cast<std::size_t>(layer) >= acts.size())
      throw InvalidArgument("beta-star: layer " + std::to_string(layer) + " out of range");
    const auto& a = acts[static_cast<std::size_t>(layer)];
    double lo = o.bins.lo, hi = o.bins.hi;
    if (o.bins.adaptive) {
      lo = 0.0;
      hi = 0.0;
      for (double v : a.data()) hi = std::max(hi, v);
      if (hi <= 0.0) hi = 1.0;
    }
    std::size_t clipped = 0, nt = 0;
    const auto ids = discretize_rows(a, lo, hi, o.bins.n_bins, clipped, nt);
    // Deterministic layer encoder and its induced decoder p(y|t).
    std::vector<double> enc(nx * nt, 0.0), joint_ty(nt * ny, 0.0);
    for (std::size_t x = 0; x < nx; ++x) {
      enc[x * nt + ids[x]] = 1.0;
      for (std::size_t y = 0; y < ny; ++y) joint_ty[ids[x] * ny + y] += xy(x, y);
    }
    for (std::size_t t = 0; t < nt; ++t) {
      double pt = 0.0;
      for (std::size_t y = 0; y < ny; ++y) pt += joint_ty[t * ny + y];
      for (std::size_t y = 0; y < ny; ++y) joint_ty[t * ny + y] /= pt;  // every label is hit, so pt > 0
    }
    const ConditionalDistribution encoder(nx, nt, std::move(enc)), decoder(nt, ny, std::move(joint_ty));
    const auto fit = fit_beta_star(encoder, decoder, pr, grid);
    const auto [ixt, ity] = binned_layer_mi(xy, ids, nt);
    f << layer << ',' << snap.epoch << ',' << fit.beta_star << ',' << fit.kl_at_star << ',' << ixt << ',' << ity << ','
      << nt << '\n';
    for (std::size_t i = 0; i < grid.size(); ++i) g << layer << ',' << grid[i] << ',' << fit.kl_per_beta[i] << '\n';
    r.results["layer_" + std::to_string(layer)] = {{"beta_star", fit.beta_star}, {"kl_at_star", fit.kl_at_star}};
  }
}

// ---------------------------------------------------------------------------
// diffusion

struct DiffusionOpts {
  std::string train_dir;
  double transition_epoch = -1.0;  // < 0: detected from the gradient SNR
  double noise_ratio = 1e-4;
  double informative_growth = 2.0;
  std::vector<std::string> boost_runs;
};

void run_diffusion(Run& r, const DiffusionOpts& o) {
  const auto t = load_trained(o.train_dir);
  double te = o.transition_epoch;
  if (te < 0.0) {
    const auto det = snr_transition_epoch(t.run, default_snr_layer(t.run));
    if (!det) throw NumericalError("diffusion: no gradient SNR transition detected; pass --transition-epoch");
    te = *det;
  }
  const long long ep = nearest_snapshot_epoch(t.run, te);
  const auto dec = decompose_weights(t.run, ep, t.inputs, o.noise_ratio);
  std::vector<BoundReport> reps;
  for (std::size_t ti = 1; ti < dec.taus.size(); ++ti) reps.push_back(mi_gaussian_bound(dec, ti, o.informative_growth));
  write_bound_csv(reps, r.file("bound.csv").string());

  // CLT diagnostics need wide layers; narrower ones are listed as skipped.
  json clt = json::array();
  if (!reps.empty()) {
    const std::size_t ti = dec.taus.size() - 1;
    const auto acts = forward_all(t.run.snapshot_at_epoch(ep).net, t.inputs);
    for (std::size_t k = 0; k < dec.n_layers(); ++k) {
      const Matrix& in = k == 0 ? t.inputs : acts[k - 1];
      if (in.cols() < 64) {
        clt.push_back({{"layer", k}, {"skipped", "input width below 64"}});
        continue;
      }
      const auto c = clt_diagnostics(dec, k, ti, 0, in);
      clt.push_back({{"layer", k},
                     {"gp_ratio_star", c.gp_ratio_star},
                     {"gp_ratio_delta", c.gp_ratio_delta},
                     {"ks_p_star", c.ks_star.p_value},
                     {"ks_p_delta", c.ks_delta.p_value},
                     {"projection_correlation", c.projection_correlation},
                     {"general_position", c.general_position},
                     {"gaussian", c.gaussian}});
    }
  }
  write_json(r.file("clt.json"), clt);

  // Diffusion exponent of the weight MSD after the transition.
  std::vector<double> it(t.run.msd.size());
  for (std::size_t i = 0; i < it.size(); ++i) it[i] = static_cast<double>((i + 1) * t.run.batches_per_epoch);
  json msd_fit;
  const double lo = std::max(1.0, te) * static_cast<double>(t.run.batches_per_epoch);
  if (!it.empty() && it.back() > 2.0 * lo) {
    try {
      const auto fit = fit_diffusion_exponent(it, t.run.msd, lo, it.back());
      msd_fit = {{"alpha", fit.alpha}, {"gamma", fit.gamma}, {"r2", fit.r2}, {"log_r2", fit.log_r2},
                 {"ultra_slow", fit.ultra_slow}};
    } catch (const InvalidArgument&) {
      // too few epochs after the transition; left null
    }
  }

  json boost;
  if (!o.boost_runs.empty()) {
    std::map<int, double> iters;
    for (const auto& d : o.boost_runs) {
      require_file(fs::path(d) / "run.json", "boost run");
      const auto br = load_run(d);
      iters[static_cast<int>(br.spec.n_layers()) - 1] = static_cast<double>(br.epochs_run * br.batches_per_epoch);
    }
    const auto fit = layer_boost_fit(iters);
    auto f = open_csv(r.file("layer_boost.csv"));
    f << "hidden_layers,iterations\n";
    for (const auto& [k, v] : iters) f << k << ',' << v << '\n';
    boost = {{"alpha_hat", fit.alpha_hat}, {"c", fit.c}, {"r2", fit.r2}, {"monotone", fit.monotone}};
  }
  r.results = {{"transition_epoch", te}, {"window_start_epoch", ep}, {"diffusion_snapshots", dec.taus.size()},
               {"msd_fit", msd_fit}, {"layer_boost", boost}};
}

// ---------------------------------------------------------------------------
// ntk

struct NtkOpts {
  std::string dataset = "gaussian";
  std::size_t dim_x = 30;
  std::vector<double> spectrum{3.0};
  std::uint64_t task_seed = 1, sample_seed = 2, izx_seed = 7;
  std::size_t n_train = 100, n_eval = 1000;
  int depth = 2;
  std::string activation = "relu";
  std::vector<double> sigma_w2{0.5, 1.0, 2.0, 4.0};
  double sigma_b2 = 0.1;
  double tau_min = 1e-2, tau_max = 1e10;
  int per_decade = 2;
  int izx_samples = 1;
  std::size_t ib_bins = 24;
  bool write_kernels = false;
};

void run_ntk(Run& r, const NtkOpts& o) {
  if (o.dataset != "gaussian") throw InvalidArgument("ntk: only the gaussian dataset is supported");
  const auto task = generate_joint_gaussian(o.dim_x, 1, o.task_seed, 1.0, 1.0, o.spectrum);
  GaussianSampler smp(task, o.sample_seed);
  auto [xtr, ytr] = smp.sample(o.n_train);
  auto [xev, yev] = smp.sample(o.n_eval);
  r.seeds = {{"task", o.task_seed}, {"sampler", o.sample_seed}, {"izx", o.izx_seed}};
  Matrix pts(o.n_train + o.n_eval, o.dim_x);
  for (std::size_t i = 0; i < o.n_train; ++i)
    for (std::size_t j = 0; j < o.dim_x; ++j) pts(i, j) = xtr(i, j);
  for (std::size_t i = 0; i < o.n_eval; ++i)
    for (std::size_t j = 0; j < o.dim_x; ++j) pts(o.n_train + i, j) = xev(i, j);

  // Reference IB curve of the discretized task.
  IBProblem pr(discretized_gaussian_joint(task, o.ib_bins));
  std::vector<double> betas;
  for (double b = 0.5; b < 2000.0; b *= 1.15) betas.push_back(b);
  const auto curve = sweep_info_curve(pr, betas, 2);
  {
    auto f = open_csv(r.file("ib_curve.csv"));
    f << "beta,i_x,i_y\n";
    for (const auto& p : curve.points) f << p.beta << ',' << p.i_x << ',' << p.i_y << '\n';
  }
  const double hy = gaussian_label_entropy_bits(task);
  const auto taus = geometric_tau_grid(o.tau_min, o.tau_max, o.per_decade);

  auto f = open_csv(r.file("ntk.csv"));
  f << "sigma_w2,tau,izx_lower_bits,izx_upper_bits,izx_lower_nats,izy_lower_bits,izd_upper_bits,itheta_d_bits,"
       "path_length,expected_log_loss,waic,ib_at_izx_upper\n";
  json per_sw = json::array();
  for (double sw : o.sigma_w2) {
    ArchSpec a;
    a.depth = o.depth;
    a.activation = kernel_activation_from_string(o.activation);
    a.sigma_w2 = sw;
    a.sigma_b2 = o.sigma_b2;
    const auto kp = compute_kernels(a, pts);
    if (o.write_kernels) {
      std::ostringstream name;
      name << "kernels_sw" << sw << ".bin";
      write_kernels_bin(kp, a, r.file(name.str()).string());
    }
    PosteriorModel m(kp, o.n_train, ytr);
    const auto prior = m.prior_variance();
    double max_lower = 0.0;
    for (double tau : taus) {
      const auto p = m.at(tau);
      const auto izx = izx_minibatch_bounds(p, o.izx_samples, o.izx_seed);
      max_lower = std::max(max_lower, izx.lower_bits);
      f << sw << ',' << tau << ',' << izx.lower_bits << ',' << izx.upper_bits << ',' << izx.lower_nats << ','
        << izy_lower_bound(p, yev, hy) << ',' << izd_upper_bound(p, prior) << ',' << itheta_d_bound(m, tau) << ','
        << path_length_bound(m, tau) << ',' << expected_log_loss(p, yev) << ',' << waic(p, yev) << ','
        << info_curve_at(curve, izx.upper_bits) << '\n';
    }
    per_sw.push_back({{"sigma_w2", sw}, {"max_izx_lower_bits", max_lower}, {"ridge", m.ridge()},
                      {"kernel_clipped", kp.clipped}});
  }
  r.results = {{"log2_batch", std::log2(static_cast<double>(o.n_eval))},
               {"i_xy_bits", analytic_mi_gaussian(task)},
               {"h_y_bits", hy},
               {"per_sigma_w2", per_sw}};
}

// ---------------------------------------------------------------------------
// genbound

struct GenboundOpts {
  double ixt = 10.0, m = 1024.0, delta = 0.05, extra_bits = 0.0;
};

void run_genbound(Run& r, const GenboundOpts& o) {
  const CompressionBoundInput in{o.ixt, o.m, o.delta};
  r.results = {{"epsilon_squared", input_compression_bound(in)}, {"epsilon", input_compression_epsilon(in)}};
  if (o.extra_bits > 0.0) {
    const auto s = sample_equivalence_check(o.ixt, o.m, o.extra_bits, o.delta);
    r.results["sample_equivalence"] = {{"ratio", s.ratio},
                                       {"dominant_regime", s.dominant_regime},
                                       {"compressed_bound", s.compressed_bound},
                                       {"enlarged_bound", s.enlarged_bound}};
  }
  auto f = open_csv(r.file("genbound.csv"));
  f << "i_xt,m,delta,epsilon_squared,epsilon\n";
  for (double i = 0.0; i <= o.ixt + 1e-9; i += 1.0) {
    const CompressionBoundInput p{i, o.m, o.delta};
    f << i << ',' << o.m << ',' << o.delta << ',' << input_compression_bound(p) << ','
      << input_compression_epsilon(p) << '\n';
  }
  write_json(r.file("genbound.json"), r.results);
}

// ---------------------------------------------------------------------------
// report: concatenates the CSVs of several output directories, tagging
// every row with its source directory.

void run_report(Run& r, const std::vector<std::string>& inputs) {
  std::map<std::string, std::pair<std::string, std::vector<std::string>>> tables;  // name -> (header, rows)
  json index = json::array();
  for (const auto& dir : inputs) {
    const fs::path mp = fs::path(dir) / "manifest.json";
    require_file(mp, "manifest");
    json m;
    std::ifstream(mp) >> m;
    const std::string sub = m.at("subcommand").get<std::string>();
    index.push_back({{"source", dir}, {"subcommand", sub}, {"results", m.value("results", json::object())}});
    for (const auto& rel : m.value("outputs", json::array())) {
      const fs::path p = fs::path(dir) / rel.get<std::string>();
      if (p.extension() != ".csv") continue;
      require_file(p, "artifact");
      std::ifstream in(p);
      std::string header, line;
      std::getline(in, header);
      auto& [h, rows] = tables[sub + "_" + p.filename().string()];
      if (h.empty()) h = "source," + header;
      else if (h != "source," + header) throw InvalidArgument("report: header mismatch in " + p.string());
      while (std::getline(in, line))
        if (!line.empty()) rows.push_back(dir + "," + line);
    }
  }
  for (const auto& [name, t] : tables) {
    auto f = open_csv(r.file(name));
    f << t.first << '\n';
    for (const auto& row : t.second) f << row << '\n';
  }
  write_json(r.file("index.json"), index);
  r.results = {{"sources", inputs.size()}, {"tables", tables.size()}};
}

// ---------------------------------------------------------------------------

CLI::App* add_sub(CLI::App& app, const std::string& name, const std::string& help, Common& c) {
  auto* s = app.add_subcommand(name, help);
  s->option_defaults()->always_capture_default();
  s->add_option("--config", c.config, "key = value file (or an earlier manifest.json); flags override it");
  s->add_option("--out", c.out, std::string("output directory (default $") + kOutRootEnv + "/<subcommand>, or runs/)");
  s->add_option("--threads", c.threads, "worker threads; 1 is deterministic")->check(CLI::PositiveNumber);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ibdyn: information bottleneck analysis of neural-network training", "ibdyn"};
  app.set_version_flag("--version", IBDYN_VERSION_STRING);
  app.require_subcommand(1);
  Common common;

  SynthOpts synth;
  auto* s_synth = add_sub(app, "synth", "generate a symmetric rule or a joint Gaussian task", common);
  s_synth->add_option("--task", synth.task, "symmetric | gaussian")->check(CLI::IsMember({"symmetric", "gaussian"}));
  s_synth->add_option("--seed", synth.seed, "task seed");
  s_synth->add_option("--dim-x", synth.dim_x, "gaussian input dimension");
  s_synth->add_option("--dim-y", synth.dim_y, "gaussian output dimension");
  s_synth->add_option("--sigma-x", synth.sigma_x, "gaussian input std");
  s_synth->add_option("--sigma-y", synth.sigma_y, "gaussian output noise std");
  s_synth->add_option("--spectrum", synth.spectrum, "singular values of the mixing matrix")->delimiter(',');
  s_synth->add_option("--samples", synth.samples, "gaussian samples to write (0: none)");

  TrainOpts tr;
  auto* s_train = add_sub(app, "train", "train a network on a symmetric task with snapshots", common);
  s_train->add_option("--rule", tr.rule, "rule.csv from synth (default: generate from --task-seed)");
  s_train->add_option("--task-seed", tr.task_seed, "seed of the generated rule");
  s_train->add_option("--split-seed", tr.split_seed, "labels and train/test split");
  s_train->add_option("--widths", tr.spec.layer_widths, "layer widths, input first")->delimiter(',');
  s_train->add_option("--activation", tr.activation, "tanh | relu | erf | sigmoid");
  s_train->add_option("--init-std", tr.spec.init_weight_std, "weight init std (times 1/sqrt(fan_in))");
  s_train->add_option("--bias-std", tr.spec.init_bias_std, "bias init std");
  s_train->add_option("--net-seed", tr.spec.seed, "initialization seed");
  s_train->add_option("--lr", tr.cfg.learning_rate, "learning rate");
  s_train->add_option("--batch", tr.cfg.batch_size, "mini-batch size");
  s_train->add_option("--epochs", tr.cfg.epochs, "epochs");
  s_train->add_option("--train-fraction", tr.cfg.train_fraction, "fraction of patterns used for training");
  s_train->add_option("--seed", tr.cfg.seed, "mini-batch sampling seed");
  s_train->add_option("--stop-at", tr.cfg.stop_at_train_accuracy, "stop at this train accuracy (0: never)");
  s_train->add_option("--snapshot-epochs", tr.cfg.snapshot_epochs, "explicit snapshot epochs")->delimiter(',');

  InfoplaneOpts ip;
  auto* s_ip = add_sub(app, "infoplane", "binned MI trajectories and phase report of a train run", common);
  s_ip->add_option("--train", ip.train_dir, "output directory of `train`")->required();
  s_ip->add_option("--bins", ip.bins.n_bins, "bins per unit");
  s_ip->add_option("--lo", ip.bins.lo, "lower binning edge");
  s_ip->add_option("--hi", ip.bins.hi, "upper binning edge");
  s_ip->add_flag("--adaptive", ip.bins.adaptive, "per-layer range [0, max activation] for hidden layers");
  s_ip->add_option("--snr-layer", ip.snr_layer, "weight matrix for the SNR transition (-1: deepest hidden)");
  s_ip->add_option("--per-octave", ip.per_octave, "log bins per octave for the SNR series");

  IbCurveOpts ibc;
  auto* s_ib = add_sub(app, "ib-curve", "sweep the information curve of a discrete joint", common);
  s_ib->add_option("--joint", ibc.joint, "joint CSV, rows x, columns y")->required();
  s_ib->add_option("--beta-min", ibc.beta_min, "smallest beta");
  s_ib->add_option("--beta-max", ibc.beta_max, "largest beta");
  s_ib->add_option("--beta-factor", ibc.beta_factor, "geometric step of the beta grid");
  s_ib->add_option("--restarts", ibc.restarts, "random restarts per beta");
  s_ib->add_option("--card-t", ibc.card_t, "|T| (0: |X|)");
  s_ib->add_option("--tol", ibc.ib.tol, "convergence tolerance on the functional");
  s_ib->add_option("--max-iter", ibc.ib.max_iter, "iteration cap per solve");
  s_ib->add_option("--seed", ibc.ib.seed, "initialization seed");

  BetaStarOpts bs;
  auto* s_bs = add_sub(app, "beta-star", "fit the closest IB beta to each layer of a trained net", common);
  s_bs->add_option("--train", bs.train_dir, "output directory of `train`")->required();
  s_bs->add_option("--layers", bs.layers, "hidden layers (default: all)")->delimiter(',');
  s_bs->add_option("--epoch", bs.epoch, "snapshot epoch (-1: last)");
  s_bs->add_option("--bins", bs.bins.n_bins, "bins per unit");
  s_bs->add_option("--lo", bs.bins.lo, "lower binning edge");
  s_bs->add_option("--hi", bs.bins.hi, "upper binning edge");
  s_bs->add_flag("--adaptive", bs.bins.adaptive, "range [0, max activation]");
  s_bs->add_option("--beta-min", bs.beta_min, "smallest beta");
  s_bs->add_option("--beta-max", bs.beta_max, "largest beta");
  s_bs->add_option("--beta-factor", bs.beta_factor, "geometric step");

  DiffusionOpts df;
  auto* s_df = add_sub(app, "diffusion", "inter-layer MI bound, CLT diagnostics and layer boost", common);
  s_df->add_option("--train", df.train_dir, "output directory of `train`")->required();
  s_df->add_option("--transition-epoch", df.transition_epoch, "drift/diffusion transition (-1: detect)");
  s_df->add_option("--noise-ratio", df.noise_ratio, "sigma_z^2 / sigma_T^2");
  s_df->add_option("--informative-growth", df.informative_growth, "lambda growth marking a non-informative direction");
  s_df->add_option("--boost-runs", df.boost_runs, "run directories of equal-task nets of different depth")
      ->delimiter(',');

  NtkOpts nk;
  auto* s_nk = add_sub(app, "ntk", "infinite-width ensemble information quantities over tau", common);
  s_nk->add_option("--dataset", nk.dataset, "gaussian");
  s_nk->add_option("--dim-x", nk.dim_x, "input dimension");
  s_nk->add_option("--spectrum", nk.spectrum, "mixing singular value")->delimiter(',');
  s_nk->add_option("--task-seed", nk.task_seed, "task seed");
  s_nk->add_option("--sample-seed", nk.sample_seed, "sampler seed");
  s_nk->add_option("--izx-seed", nk.izx_seed, "seed of the I(Z;X) estimator");
  s_nk->add_option("--n-train", nk.n_train, "training points");
  s_nk->add_option("--n-eval", nk.n_eval, "evaluation batch");
  s_nk->add_option("--depth", nk.depth, "hidden layers");
  s_nk->add_option("--activation", nk.activation, "relu | erf");
  s_nk->add_option("--sigma-w", nk.sigma_w2, "weight variance grid")->delimiter(',');
  s_nk->add_option("--sigma-b", nk.sigma_b2, "bias variance");
  s_nk->add_option("--tau-min", nk.tau_min, "smallest training time");
  s_nk->add_option("--tau-max", nk.tau_max, "largest training time");
  s_nk->add_option("--per-decade", nk.per_decade, "tau grid points per decade");
  s_nk->add_option("--izx-samples", nk.izx_samples, "samples per point in the I(Z;X) estimator");
  s_nk->add_option("--ib-bins", nk.ib_bins, "bins of the discretized reference joint");
  s_nk->add_flag("--write-kernels", nk.write_kernels, "also write the kernel matrices");

  GenboundOpts gb;
  auto* s_gb = add_sub(app, "genbound", "input-compression generalization bound", common);
  s_gb->add_option("--ixt", gb.ixt, "I(X;T) in bits");
  s_gb->add_option("--m", gb.m, "training examples");
  s_gb->add_option("--delta", gb.delta, "confidence");
  s_gb->add_option("--extra-bits", gb.extra_bits, "M for the sample-equivalence check (0: skip)");

  std::vector<std::string> report_inputs;
  auto* s_rp = add_sub(app, "report", "aggregate CSVs of several output directories", common);
  s_rp->add_option("--inputs", report_inputs, "output directories")->required()->delimiter(',');

  const std::vector<std::string> names{"synth",     "train",     "infoplane", "ib-curve", "beta-star",
                                       "diffusion", "ntk",       "genbound",  "report"};

  try {
    auto args = expand_args(argc, argv, names);
    std::reverse(args.begin(), args.end());
    args.pop_back();  // program name
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissingInput;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }

  Run r;
  r.app = app.get_subcommands().front();
  r.name = r.app->get_name();
  try {
    r.out = resolve_out(common.out, r.name);
    fs::create_directories(r.out);
    if (r.name == "synth") run_synth(r, synth);
    else if (r.name == "train") run_train(r, tr);
    else if (r.name == "infoplane") run_infoplane(r, ip, common.threads);
    else if (r.name == "ib-curve") run_ib_curve(r, ibc, common.threads);
    else if (r.name == "beta-star") run_beta_star(r, bs);
    else if (r.name == "diffusion") run_diffusion(r, df);
    else if (r.name == "ntk") run_ntk(r, nk);
    else if (r.name == "genbound") run_genbound(r, gb);
    else if (r.name == "report") run_report(r, report_inputs);
    write_manifest(r);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissingInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissingInput;
  } catch (const std::invalid_argument& e) {  // InvalidArgument, InvalidDistribution, DimensionMismatch
    std::cerr << "error: " << e.what() << '\n';
    return kInvalidInput;
  } catch (const std::runtime_error& e) {  // NumericalError, CalibrationError, TrainingDiverged
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  std::cout << r.name << ": wrote " << (r.out / "manifest.json").string() << '\n';
  return kOk;
}
