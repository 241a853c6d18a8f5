#pragma once
// Small fully connected networks trained with plain mini-batch SGD, with the
// instrumentation the information-plane and diffusion analyses need:
// weight snapshots, per-epoch gradient statistics, and weight displacement.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibdyn/datagen.hpp"
#include "ibdyn/error.hpp"
#include "ibdyn/linalg.hpp"

namespace ibdyn {

enum class Activation { Tanh, Relu, Erf, Sigmoid };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Erf: return "erf";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "erf") return Activation::Erf;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw InvalidArgument("unknown activation '" + s + "'");
}

inline double activate(Activation a, double u) {
  switch (a) {
    case Activation::Tanh: return std::tanh(u);
    case Activation::Relu: return u > 0.0 ? u : 0.0;
    case Activation::Erf: return std::erf(u);
    case Activation::Sigmoid: return sigmoid(u);
  }
  return u;
}

/// Derivative expressed through the pre-activation u and the output h.
inline double activate_prime(Activation a, double u, double h) {
  switch (a) {
    case Activation::Tanh: return 1.0 - h * h;
    case Activation::Relu: return u > 0.0 ? 1.0 : 0.0;
    case Activation::Erf: return 2.0 / std::sqrt(M_PI) * std::exp(-u * u);
    case Activation::Sigmoid: return h * (1.0 - h);
  }
  return 1.0;
}

struct NetworkSpec {
  std::vector<std::size_t> layer_widths{12, 10, 7, 5, 4, 3, 2};  // input first, output last
  Activation activation = Activation::Tanh;
  double init_weight_std = 0.5;  // scaled by 1/sqrt(fan_in)
  double init_bias_std = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (layer_widths.size() < 3) throw InvalidArgument("NetworkSpec: need at least one hidden layer");
    for (auto w : layer_widths)
      if (w == 0) throw InvalidArgument("NetworkSpec: layer widths must be positive");
    if (!(init_weight_std >= 0.0) || !(init_bias_std >= 0.0)) throw InvalidArgument("NetworkSpec: negative init std");
  }
  std::size_t n_layers() const noexcept { return layer_widths.size() - 1; }
};

/// Weights and biases; w[k] maps layer k (width in) to layer k+1 (width out)
/// and is stored out x in.
struct Network {
  NetworkSpec spec;
  std::vector<Matrix> w;
  std::vector<std::vector<double>> b;

  static Network initialize(const NetworkSpec& spec) {
    spec.validate();
    Network n;
    n.spec = spec;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (std::size_t k = 0; k < spec.n_layers(); ++k) {
      const std::size_t in = spec.layer_widths[k], out = spec.layer_widths[k + 1];
      Matrix wk(out, in);
      const double sd = spec.init_weight_std / std::sqrt(static_cast<double>(in));
      for (double& v : wk.data()) v = sd * n01(rng);
      std::vector<double> bk(out);
      for (double& v : bk) v = spec.init_bias_std * n01(rng);
      n.w.push_back(std::move(wk));
      n.b.push_back(std::move(bk));
    }
    return n;
  }

  std::size_t n_layers() const noexcept { return w.size(); }
  std::size_t input_width() const noexcept { return spec.layer_widths.front(); }
  std::size_t output_width() const noexcept { return spec.layer_widths.back(); }

  std::size_t n_parameters() const noexcept {
    std::size_t n = 0;
    for (std::size_t k = 0; k < w.size(); ++k) n += w[k].size() + b[k].size();
    return n;
  }
};

/// Output nonlinearity: softmax over >= 2 units, a single sigmoid unit
/// otherwise (then the label is the probability of class 1).
inline void output_probabilities(std::span<const double> logits, std::span<double> out) {
  if (logits.size() == 1) {
    out[0] = sigmoid(logits[0]);
    return;
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (out[i] = std::exp(logits[i] - m));
  for (double& v : out) v /= z;
}

/// Cross-entropy in nats of label `y` given logits.
inline double cross_entropy(std::span<const double> logits, int y) {
  if (logits.size() == 1) {
    const double u = y == 1 ? logits[0] : -logits[0];
    return u > 0.0 ? std::log1p(std::exp(-u)) : -u + std::log1p(std::exp(u));
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  return m + std::log(z) - logits[static_cast<std::size_t>(y)];
}

/// Per-layer post-activation outputs for every row of `inputs`. Hidden
/// layers use the network's activation, the last entry holds output
/// probabilities.
inline std::vector<Matrix> forward_all(const Network& net, const Matrix& inputs) {
  if (inputs.cols() != net.input_width()) throw DimensionMismatch("forward_all: input width mismatch");
  std::vector<Matrix> out;
  const Matrix* cur = &inputs;
  for (std::size_t k = 0; k < net.n_layers(); ++k) {
    const bool last = k + 1 == net.n_layers();
    Matrix h(inputs.rows(), net.w[k].rows());
    std::vector<double> pre(net.w[k].rows());
    for (std::size_t i = 0; i < inputs.rows(); ++i) {
      const auto x = cur->row(i);
      for (std::size_t j = 0; j < pre.size(); ++j) {
        double s = net.b[k][j];
        const auto wr = net.w[k].row(j);
        for (std::size_t c = 0; c < x.size(); ++c) s += wr[c] * x[c];
        pre[j] = s;
      }
      if (last) {
        output_probabilities(pre, h.row(i));
      } else {
        for (std::size_t j = 0; j < pre.size(); ++j) h(i, j) = activate(net.spec.activation, pre[j]);
      }
    }
    out.push_back(std::move(h));
    cur = &out.back();
  }
  return out;
}

inline std::vector<double> logits(const Network& net, std::span<const double> x) {
  std::vector<double> cur(x.begin(), x.end());
  for (std::size_t k = 0; k < net.n_layers(); ++k) {
    std::vector<double> nxt(net.w[k].rows());
    for (std::size_t j = 0; j < nxt.size(); ++j) {
      double s = net.b[k][j];
      const auto wr = net.w[k].row(j);
      for (std::size_t c = 0; c < cur.size(); ++c) s += wr[c] * cur[c];
      nxt[j] = k + 1 == net.n_layers() ? s : activate(net.spec.activation, s);
    }
    cur = std::move(nxt);
  }
  return cur;
}

inline int predict(const Network& net, std::span<const double> x) {
  const auto l = logits(net, x);
  if (l.size() == 1) return l[0] > 0.0 ? 1 : 0;
  return static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
}

/// Same shapes as the network parameters.
struct Gradients {
  std::vector<Matrix> w;
  std::vector<std::vector<double>> b;

  static Gradients zeros_like(const Network& net) {
    Gradients g;
    for (std::size_t k = 0; k < net.n_layers(); ++k) {
      g.w.emplace_back(net.w[k].rows(), net.w[k].cols());
      g.b.emplace_back(net.b[k].size(), 0.0);
    }
    return g;
  }
  void clear() {
    for (auto& m : w) std::fill(m.data().begin(), m.data().end(), 0.0);
    for (auto& v : b) std::fill(v.begin(), v.end(), 0.0);
  }
};

/// Backprop workspace, reused across samples to avoid allocation.
class Backprop {
 public:
  explicit Backprop(const Network& net) {
    for (std::size_t k = 0; k <= net.n_layers(); ++k) {
      h_.emplace_back(net.spec.layer_widths[k], 0.0);
      u_.emplace_back(net.spec.layer_widths[k], 0.0);
      d_.emplace_back(net.spec.layer_widths[k], 0.0);
    }
  }

  /// Adds scale * d(loss)/d(params) for one sample into `g`; returns the loss.
  double accumulate(const Network& net, std::span<const double> x, int y, double scale, Gradients& g) {
    const std::size_t L = net.n_layers();
    const Activation act = net.spec.activation;
    std::copy(x.begin(), x.end(), h_[0].begin());
    for (std::size_t k = 0; k < L; ++k) {
      const Matrix& wk = net.w[k];
      const auto& in = h_[k];
      auto& u = u_[k + 1];
      auto& h = h_[k + 1];
      for (std::size_t j = 0; j < wk.rows(); ++j) {
        const double* wr = wk.row(j).data();
        double s = net.b[k][j];
        for (std::size_t c = 0; c < in.size(); ++c) s += wr[c] * in[c];
        u[j] = s;
        h[j] = k + 1 == L ? s : activate(act, s);
      }
    }
    const auto& out = u_[L];
    const double loss = cross_entropy(out, y);
    // dL/dlogits
    auto& dl = d_[L];
    if (out.size() == 1) {
      dl[0] = sigmoid(out[0]) - static_cast<double>(y);
    } else {
      output_probabilities(out, dl);
      dl[static_cast<std::size_t>(y)] -= 1.0;
    }
    for (std::size_t k = L; k-- > 0;) {
      const auto& delta = d_[k + 1];
      const auto& in = h_[k];
      Matrix& gw = g.w[k];
      for (std::size_t j = 0; j < delta.size(); ++j) {
        const double dj = scale * delta[j];
        g.b[k][j] += dj;
        double* gr = gw.row(j).data();
        for (std::size_t c = 0; c < in.size(); ++c) gr[c] += dj * in[c];
      }
      if (k == 0) break;
      auto& dprev = d_[k];
      const Matrix& wk = net.w[k];
      for (std::size_t c = 0; c < in.size(); ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < delta.size(); ++j) s += wk(j, c) * delta[j];
        dprev[c] = s * activate_prime(act, u_[k][c], h_[k][c]);
      }
    }
    return loss;
  }

 private:
  std::vector<std::vector<double>> h_, u_, d_;
};

/// Mean loss and gradient over the listed rows.
inline std::pair<double, Gradients> loss_and_gradient(const Network& net, const Matrix& inputs,
                                                      std::span<const int> labels, std::span<const std::size_t> rows) {
  Gradients g = Gradients::zeros_like(net);
  Backprop bp(net);
  double loss = 0.0;
  const double scale = 1.0 / static_cast<double>(rows.size());
  for (auto r : rows) loss += bp.accumulate(net, inputs.row(r), labels[r], scale, g);
  return {loss * scale, std::move(g)};
}

/// Inputs with labels and a train/test split.
struct Dataset {
  Matrix inputs;
  std::vector<int> labels;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::size_t n_classes = 2;
};

/// All patterns of a symmetric task encoded as +-1, labels drawn from
/// p(y|x), and a seeded split with round(train_fraction * n) training rows.
inline Dataset symmetric_dataset(const SymmetricTask& task, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0) || train_fraction > 1.0) throw InvalidArgument("train_fraction must be in (0, 1]");
  const auto& ps = task.patterns;
  Dataset d;
  d.inputs = Matrix(ps.size(), static_cast<std::size_t>(ps.n_bits));
  for (std::size_t x = 0; x < ps.size(); ++x)
    for (int i = 0; i < ps.n_bits; ++i) d.inputs(x, static_cast<std::size_t>(i)) = ps.bit(x, i) ? 1.0 : -1.0;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  d.labels.resize(ps.size());
  for (std::size_t x = 0; x < ps.size(); ++x) d.labels[x] = u01(rng) < task.rule.p_y1_given_x[x] ? 1 : 0;
  std::vector<std::size_t> idx(ps.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ps.size())));
  d.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  d.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(d.train.begin(), d.train.end());
  std::sort(d.test.begin(), d.test.end());
  return d;
}

/// Dense geometric epoch schedule: epoch 0 plus about `per_octave`
/// distinct epochs per doubling up to and including `epochs`.
inline std::vector<long long> geometric_schedule(long long epochs, int per_octave = 8) {
  std::set<long long> s{0};
  if (epochs > 0) {
    s.insert(epochs);
    for (double e = 1.0; e <= static_cast<double>(epochs); e *= std::exp2(1.0 / per_octave))
      s.insert(static_cast<long long>(std::llround(e)));
  }
  return {s.begin(), s.end()};
}

struct TrainConfig {
  double learning_rate = 0.005;
  std::size_t batch_size = 32;
  long long epochs = 8000;
  double train_fraction = 0.85;
  std::uint64_t seed = 1;                // mini-batch sampling
  std::vector<long long> snapshot_epochs;  // empty: geometric_schedule(epochs)
  bool record_errors = true;
  /// Stop once train accuracy reaches this value (checked each epoch); <= 0 disables.
  double stop_at_train_accuracy = 0.0;

  void validate(const Dataset& d) const {
    if (!(learning_rate >= 0.0)) throw InvalidArgument("TrainConfig: learning rate must be >= 0");
    if (batch_size == 0 || batch_size > d.train.size())
      throw InvalidArgument("TrainConfig: batch size must be in [1, train set size]");
    if (epochs < 0) throw InvalidArgument("TrainConfig: epochs must be >= 0");
  }
};

/// Per layer, per epoch: Frobenius norm of the mean weight gradient over the
/// epoch's mini-batches, and of its element-wise standard deviation.
struct GradientStats {
  std::vector<long long> epochs;
  std::vector<std::vector<double>> mean_norm;  // [layer][epoch index]
  std::vector<std::vector<double>> std_norm;

  std::size_t n_layers() const noexcept { return mean_norm.size(); }
};

struct Snapshot {
  long long epoch = 0;
  long long iteration = 0;
  Network net;
};

struct TrainRun {
  NetworkSpec spec;
  TrainConfig config;
  long long batches_per_epoch = 1;
  std::vector<Snapshot> snapshots;
  GradientStats grad_stats;
  std::vector<double> train_error;  // after each epoch
  std::vector<double> test_error;
  std::vector<double> train_loss;
  std::vector<double> msd;  // squared distance of all weights from init, after each epoch
  Network final_net;
  long long epochs_run = 0;

  const Snapshot& snapshot_at_epoch(long long epoch) const {
    for (const auto& s : snapshots)
      if (s.epoch == epoch) return s;
    throw InvalidArgument("no snapshot recorded at epoch " + std::to_string(epoch));
  }
};

inline double error_rate(const Network& net, const Dataset& d, std::span<const std::size_t> rows) {
  if (rows.empty()) return 0.0;
  std::size_t max_w = 0;
  for (auto w : net.spec.layer_widths) max_w = std::max(max_w, w);
  std::vector<double> cur(max_w), nxt(max_w);
  std::size_t wrong = 0;
  for (auto r : rows) {
    const auto x = d.inputs.row(r);
    std::copy(x.begin(), x.end(), cur.begin());
    std::size_t width = x.size();
    for (std::size_t k = 0; k < net.n_layers(); ++k) {
      const bool last = k + 1 == net.n_layers();
      for (std::size_t j = 0; j < net.w[k].rows(); ++j) {
        const double* wr = net.w[k].row(j).data();
        double s = net.b[k][j];
        for (std::size_t c = 0; c < width; ++c) s += wr[c] * cur[c];
        nxt[j] = last ? s : activate(net.spec.activation, s);
      }
      width = net.w[k].rows();
      std::swap(cur, nxt);
    }
    const int y = width == 1 ? (cur[0] > 0.0 ? 1 : 0)
                             : static_cast<int>(std::max_element(cur.begin(), cur.begin() + static_cast<std::ptrdiff_t>(width)) - cur.begin());
    wrong += y != d.labels[r];
  }
  return static_cast<double>(wrong) / static_cast<double>(rows.size());
}

inline double squared_weight_distance(const Network& a, const Network& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.n_layers(); ++k)
    for (std::size_t i = 0; i < a.w[k].size(); ++i) {
      const double d = a.w[k].data()[i] - b.w[k].data()[i];
      s += d * d;
    }
  return s;
}

/// Mini-batch SGD with batches drawn with replacement; one epoch is
/// ceil(n_train / batch_size) iterations. Deterministic given the spec and
/// config seeds.
inline TrainRun train(const NetworkSpec& spec, const TrainConfig& config, const Dataset& data) {
  spec.validate();
  config.validate(data);
  if (data.inputs.cols() != spec.layer_widths.front())
    throw DimensionMismatch("train: dataset width does not match the input layer");
  const std::size_t out_w = spec.layer_widths.back();
  for (int y : data.labels)
    if (y < 0 || (out_w == 1 ? y > 1 : static_cast<std::size_t>(y) >= out_w))
      throw DimensionMismatch("train: label out of range for the output layer");

  TrainRun run;
  run.spec = spec;
  run.config = config;
  if (run.config.snapshot_epochs.empty()) run.config.snapshot_epochs = geometric_schedule(config.epochs);
  std::set<long long> snap(run.config.snapshot_epochs.begin(), run.config.snapshot_epochs.end());

  Network net = Network::initialize(spec);
  const Network init = net;
  const std::size_t n_train = data.train.size();
  const std::size_t m = config.batch_size;
  run.batches_per_epoch = static_cast<long long>((n_train + m - 1) / m);
  const std::size_t L = net.n_layers();
  run.grad_stats.mean_norm.assign(L, {});
  run.grad_stats.std_norm.assign(L, {});

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n_train - 1);
  Backprop bp(net);
  Gradients g = Gradients::zeros_like(net);
  Gradients sum = Gradients::zeros_like(net), sumsq = Gradients::zeros_like(net);
  std::vector<std::size_t> batch(m);

  auto take_snapshot = [&](long long epoch) {
    if (snap.count(epoch)) run.snapshots.push_back({epoch, epoch * run.batches_per_epoch, net});
  };
  take_snapshot(0);

  long long iteration = 0;
  for (long long epoch = 1; epoch <= config.epochs; ++epoch) {
    sum.clear();
    sumsq.clear();
    double epoch_loss = 0.0;
    for (long long it = 0; it < run.batches_per_epoch; ++it, ++iteration) {
      for (auto& r : batch) r = data.train[pick(rng)];
      g.clear();
      double loss = 0.0;
      const double scale = 1.0 / static_cast<double>(m);
      for (auto r : batch) loss += bp.accumulate(net, data.inputs.row(r), data.labels[r], scale, g);
      loss *= scale;
      if (!std::isfinite(loss)) throw TrainingDiverged("train: loss is not finite", iteration);
      epoch_loss += loss;
      for (std::size_t k = 0; k < L; ++k) {
        auto& wd = net.w[k].data();
        const auto& gd = g.w[k].data();
        auto& s1 = sum.w[k].data();
        auto& s2 = sumsq.w[k].data();
        for (std::size_t i = 0; i < wd.size(); ++i) {
          s1[i] += gd[i];
          s2[i] += gd[i] * gd[i];
          wd[i] -= config.learning_rate * gd[i];
        }
        for (std::size_t j = 0; j < net.b[k].size(); ++j) net.b[k][j] -= config.learning_rate * g.b[k][j];
      }
    }
    const auto nb = static_cast<double>(run.batches_per_epoch);
    run.grad_stats.epochs.push_back(epoch);
    for (std::size_t k = 0; k < L; ++k) {
      double mn = 0.0, sd = 0.0;
      const auto& s1 = sum.w[k].data();
      const auto& s2 = sumsq.w[k].data();
      for (std::size_t i = 0; i < s1.size(); ++i) {
        const double mu = s1[i] / nb;
        mn += mu * mu;
        sd += std::max(0.0, s2[i] / nb - mu * mu);
      }
      run.grad_stats.mean_norm[k].push_back(std::sqrt(mn));
      run.grad_stats.std_norm[k].push_back(std::sqrt(sd));
    }
    run.train_loss.push_back(epoch_loss / nb);
    run.msd.push_back(squared_weight_distance(net, init));
    double train_acc = -1.0;
    if (config.record_errors || config.stop_at_train_accuracy > 0.0) {
      const double te = error_rate(net, data, data.train);
      train_acc = 1.0 - te;
      run.train_error.push_back(te);
      run.test_error.push_back(error_rate(net, data, data.test));
    }
    take_snapshot(epoch);
    run.epochs_run = epoch;
    if (config.stop_at_train_accuracy > 0.0 && train_acc >= config.stop_at_train_accuracy) break;
  }
  run.final_net = std::move(net);
  return run;
}

struct SnrPoint {
  long long epoch = 0;
  long long iteration = 0;
  double snr = 0.0;
  bool defined = false;  // false when the std norm is zero
};

inline std::vector<double> median_smooth(std::span<const double> v, int window) {
  if (window <= 1) return {v.begin(), v.end()};
  const auto h = static_cast<std::ptrdiff_t>(window / 2);
  const auto n = static_cast<std::ptrdiff_t>(v.size());
  std::vector<double> out(v.size());
  std::vector<double> buf;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    buf.assign(v.begin() + std::max<std::ptrdiff_t>(0, i - h), v.begin() + std::min(n, i + h + 1));
    std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(buf.size() / 2), buf.end());
    out[static_cast<std::size_t>(i)] = buf[buf.size() / 2];
  }
  return out;
}

/// Per-epoch gradient SNR M_k / S_k for one layer (0 = first weight matrix).
/// `median_window` > 1 smooths the defined values.
inline std::vector<SnrPoint> gradient_snr_series(const TrainRun& run, std::size_t layer, int median_window = 0) {
  const auto& gs = run.grad_stats;
  if (layer >= gs.n_layers()) throw InvalidArgument("gradient_snr_series: layer out of range");
  std::vector<SnrPoint> out;
  for (std::size_t i = 0; i < gs.epochs.size(); ++i) {
    SnrPoint p;
    p.epoch = gs.epochs[i];
    p.iteration = p.epoch * run.batches_per_epoch;
    const double s = gs.std_norm[layer][i];
    p.defined = s > 0.0;
    p.snr = p.defined ? gs.mean_norm[layer][i] / s : std::numeric_limits<double>::quiet_NaN();
    out.push_back(p);
  }
  if (median_window > 1) {
    std::vector<double> vals;
    for (const auto& p : out)
      if (p.defined) vals.push_back(p.snr);
    const auto sm = median_smooth(vals, median_window);
    std::size_t j = 0;
    for (auto& p : out)
      if (p.defined) p.snr = sm[j++];
  }
  return out;
}

/// Snapshot statistics from a set of per-batch gradient samples: returns
/// (||mean||_F, ||element-wise std||_F, snr). Used to test the estimator.
inline std::tuple<double, double, double> gradient_snr_of(const std::vector<std::vector<double>>& batches) {
  if (batches.empty()) throw InvalidArgument("gradient_snr_of: no batches");
  const std::size_t n = batches.front().size();
  const auto nb = static_cast<double>(batches.size());
  double mn = 0.0, sd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s1 = 0.0, s2 = 0.0;
    for (const auto& b : batches) {
      s1 += b[i];
      s2 += b[i] * b[i];
    }
    const double mu = s1 / nb;
    mn += mu * mu;
    sd += std::max(0.0, s2 / nb - mu * mu);
  }
  mn = std::sqrt(mn);
  sd = std::sqrt(sd);
  return {mn, sd, sd > 0.0 ? mn / sd : std::numeric_limits<double>::quiet_NaN()};
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

inline LinearFit least_squares(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("least_squares: need >= 2 paired points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw InvalidArgument("least_squares: x values are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

struct DiffusionFit {
  double alpha = 0.0;  // MSD ~ gamma t^alpha
  double gamma = 0.0;
  double r2 = 0.0;
  double log_r2 = 0.0;  // r2 of MSD ~ a + b log t
  bool ultra_slow = false;
};

/// Power-law fit of MSD against iteration over t in [t_lo, t_hi].
inline DiffusionFit fit_diffusion_exponent(std::span<const double> t, std::span<const double> msd, double t_lo,
                                           double t_hi) {
  if (t.size() != msd.size()) throw DimensionMismatch("fit_diffusion_exponent: series lengths differ");
  std::vector<double> lt, lm, m;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < t_lo || t[i] > t_hi) continue;
    if (!(msd[i] > 0.0) || !(t[i] > 0.0)) throw InvalidArgument("fit_diffusion_exponent: nonpositive value in window");
    lt.push_back(std::log(t[i]));
    lm.push_back(std::log(msd[i]));
    m.push_back(msd[i]);
  }
  if (lt.size() < 10) throw InvalidArgument("fit_diffusion_exponent: need >= 10 points in the window");
  const auto pw = least_squares(lt, lm);
  DiffusionFit f;
  f.alpha = pw.slope;
  f.gamma = std::exp(pw.intercept);
  f.r2 = pw.r2;
  f.log_r2 = least_squares(lt, m).r2;
  f.ultra_slow = f.log_r2 > f.r2;
  return f;
}

// ---------------------------------------------------------------------------
// Persistence: manifest.json, snapshots/epoch_<n>.bin (little-endian float64,
// per layer W row-major then b), grad_stats.csv, errors.csv, msd.csv.

namespace net_detail {

inline std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffU) << (8 * (7 - i));
  return r;
}

inline void write_f64(std::ostream& out, double v) {
  const auto bits = to_little(std::bit_cast<std::uint64_t>(v));
  char buf[8];
  std::memcpy(buf, &bits, 8);
  out.write(buf, 8);
}

inline double read_f64(std::istream& in) {
  char buf[8];
  if (!in.read(buf, 8)) throw IoError("snapshot file is truncated");
  std::uint64_t bits;
  std::memcpy(&bits, buf, 8);
  return std::bit_cast<double>(to_little(bits));
}

}  // namespace net_detail

inline nlohmann::json to_json(const NetworkSpec& s) {
  return {{"layer_widths", s.layer_widths},
          {"activation", to_string(s.activation)},
          {"init_weight_std", s.init_weight_std},
          {"init_bias_std", s.init_bias_std},
          {"seed", s.seed}};
}

inline NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.layer_widths = j.at("layer_widths").get<std::vector<std::size_t>>();
  s.activation = activation_from_string(j.at("activation").get<std::string>());
  s.init_weight_std = j.at("init_weight_std").get<double>();
  s.init_bias_std = j.at("init_bias_std").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},   {"batch_size", c.batch_size},
          {"epochs", c.epochs},                 {"train_fraction", c.train_fraction},
          {"seed", c.seed},                     {"snapshot_epochs", c.snapshot_epochs},
          {"record_errors", c.record_errors},   {"stop_at_train_accuracy", c.stop_at_train_accuracy}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<long long>();
  c.train_fraction = j.at("train_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.snapshot_epochs = j.at("snapshot_epochs").get<std::vector<long long>>();
  c.record_errors = j.value("record_errors", true);
  c.stop_at_train_accuracy = j.value("stop_at_train_accuracy", 0.0);
  return c;
}

inline void write_network_bin(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (std::size_t k = 0; k < net.n_layers(); ++k) {
    for (double v : net.w[k].data()) net_detail::write_f64(out, v);
    for (double v : net.b[k]) net_detail::write_f64(out, v);
  }
}

inline Network read_network_bin(const NetworkSpec& spec, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Network net = Network::initialize(spec);
  for (std::size_t k = 0; k < net.n_layers(); ++k) {
    for (double& v : net.w[k].data()) v = net_detail::read_f64(in);
    for (double& v : net.b[k]) v = net_detail::read_f64(in);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + ": trailing bytes");
  return net;
}

inline void save_run(const TrainRun& run, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "snapshots");
  nlohmann::json snaps = nlohmann::json::array();
  for (const auto& s : run.snapshots) {
    const std::string name = "snapshots/epoch_" + std::to_string(s.epoch) + ".bin";
    write_network_bin(s.net, dir / name);
    snaps.push_back({{"epoch", s.epoch}, {"iteration", s.iteration}, {"file", name}});
  }
  write_network_bin(run.final_net, dir / "snapshots/final.bin");
  nlohmann::json m = {{"kind", "train_run"},
                      {"schema_version", 1},
                      {"spec", to_json(run.spec)},
                      {"config", to_json(run.config)},
                      {"batches_per_epoch", run.batches_per_epoch},
                      {"epochs_run", run.epochs_run},
                      {"snapshots", snaps},
                      {"final", "snapshots/final.bin"}};
  std::ofstream(dir / "run.json") << m.dump(2) << '\n';

  std::ofstream gs(dir / "grad_stats.csv");
  gs << "epoch,iteration,layer,mean_norm,std_norm,snr\n" << std::setprecision(17);
  for (std::size_t i = 0; i < run.grad_stats.epochs.size(); ++i)
    for (std::size_t k = 0; k < run.grad_stats.n_layers(); ++k) {
      const double mn = run.grad_stats.mean_norm[k][i], sd = run.grad_stats.std_norm[k][i];
      gs << run.grad_stats.epochs[i] << ',' << run.grad_stats.epochs[i] * run.batches_per_epoch << ',' << k << ','
         << mn << ',' << sd << ',';
      if (sd > 0.0) gs << mn / sd;
      gs << '\n';
    }
  std::ofstream er(dir / "errors.csv");
  er << "epoch,train_error,test_error,train_loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < run.train_loss.size(); ++i) {
    er << i + 1 << ',';
    if (i < run.train_error.size()) er << run.train_error[i] << ',' << run.test_error[i];
    else er << ',';
    er << ',' << run.train_loss[i] << '\n';
  }
  std::ofstream ms(dir / "msd.csv");
  ms << "epoch,iteration,msd\n" << std::setprecision(17);
  for (std::size_t i = 0; i < run.msd.size(); ++i)
    ms << i + 1 << ',' << static_cast<long long>(i + 1) * run.batches_per_epoch << ',' << run.msd[i] << '\n';
}

namespace net_detail {

inline std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace net_detail

inline TrainRun load_run(const std::filesystem::path& dir) {
  std::ifstream in(dir / "run.json");
  if (!in) throw IoError("missing " + (dir / "run.json").string());
  const auto m = nlohmann::json::parse(in);
  TrainRun run;
  run.spec = network_spec_from_json(m.at("spec"));
  run.config = train_config_from_json(m.at("config"));
  run.batches_per_epoch = m.at("batches_per_epoch").get<long long>();
  run.epochs_run = m.at("epochs_run").get<long long>();
  for (const auto& s : m.at("snapshots"))
    run.snapshots.push_back({s.at("epoch").get<long long>(), s.at("iteration").get<long long>(),
                             read_network_bin(run.spec, dir / s.at("file").get<std::string>())});
  run.final_net = read_network_bin(run.spec, dir / m.at("final").get<std::string>());

  const std::size_t L = run.spec.n_layers();
  run.grad_stats.mean_norm.assign(L, {});
  run.grad_stats.std_norm.assign(L, {});
  for (const auto& r : net_detail::read_csv_rows(dir / "grad_stats.csv")) {
    const auto k = static_cast<std::size_t>(std::stoul(r.at(2)));
    if (k == 0) run.grad_stats.epochs.push_back(std::stoll(r.at(0)));
    run.grad_stats.mean_norm.at(k).push_back(std::stod(r.at(3)));
    run.grad_stats.std_norm.at(k).push_back(std::stod(r.at(4)));
  }
  for (const auto& r : net_detail::read_csv_rows(dir / "errors.csv")) {
    if (!r.at(1).empty()) {
      run.train_error.push_back(std::stod(r[1]));
      run.test_error.push_back(std::stod(r.at(2)));
    }
    run.train_loss.push_back(std::stod(r.at(3)));
  }
  for (const auto& r : net_detail::read_csv_rows(dir / "msd.csv")) run.msd.push_back(std::stod(r.at(2)));
  return run;
}

}  // namespace ibdyn
