#pragma once
// Binned information-plane estimates over training snapshots, DPI audits and
// the phase detectors that relate gradient SNR to representation compression.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibdyn/error.hpp"
#include "ibdyn/net.hpp"
#include "ibdyn/parallel.hpp"
#include "ibdyn/prob.hpp"

namespace ibdyn {

struct BinningConfig {
  int n_bins = 30;
  double lo = -1.0;
  double hi = 1.0;
  /// Per hidden layer range [0, max activation over all snapshots] (ReLU).
  bool adaptive = false;

  void validate() const {
    if (n_bins < 2) throw InvalidArgument("BinningConfig: n_bins must be >= 2");
    if (!(lo < hi)) throw InvalidArgument("BinningConfig: lo must be < hi");
  }
};

/// Equal-width bin of `v` on [lo, hi]; values outside are clipped into the
/// edge bins and counted in `clipped`.
inline int bin_index(double v, double lo, double hi, int n_bins, std::size_t& clipped) {
  if (v < lo || v > hi) ++clipped;
  const auto b = static_cast<long long>(std::floor((v - lo) / (hi - lo) * n_bins));
  return static_cast<int>(std::clamp<long long>(b, 0, n_bins - 1));
}

/// Dense labels for the binned rows of `act`, numbered in order of first
/// appearance.
inline std::vector<std::size_t> discretize_rows(const Matrix& act, double lo, double hi, int n_bins,
                                                std::size_t& clipped, std::size_t& n_labels) {
  std::map<std::vector<int>, std::size_t> ids;
  std::vector<std::size_t> t(act.rows());
  std::vector<int> key(act.cols());
  for (std::size_t x = 0; x < act.rows(); ++x) {
    for (std::size_t j = 0; j < act.cols(); ++j) key[j] = bin_index(act(x, j), lo, hi, n_bins, clipped);
    t[x] = ids.emplace(key, ids.size()).first->second;
  }
  n_labels = ids.size();
  return t;
}

/// (I(X;T), I(T;Y)) in bits for a deterministic labelling T = t_of_x[x].
inline std::pair<double, double> binned_layer_mi(const JointDistribution& xy, std::span<const std::size_t> t_of_x,
                                                 std::size_t n_t) {
  const auto px = xy.row_sums();
  const double ixt = mutual_information_deterministic(px, t_of_x, n_t);
  std::vector<double> ty(n_t * xy.cols(), 0.0);
  for (std::size_t x = 0; x < xy.rows(); ++x)
    for (std::size_t y = 0; y < xy.cols(); ++y) ty[t_of_x[x] * xy.cols() + y] += xy(x, y);
  return {ixt, mutual_information(JointDistribution(n_t, xy.cols(), std::move(ty)))};
}

struct LayerMI {
  std::size_t layer = 0;  // 0 = first hidden layer; the last index is the output
  long long epoch = 0;
  long long iteration = 0;
  double i_xt = 0.0;
  double i_ty = 0.0;
};

struct InfoPlaneTrajectory {
  std::vector<std::vector<LayerMI>> layers;  // [layer][snapshot]
  std::vector<std::pair<double, double>> ranges;  // binning range used per layer
  std::size_t clipped = 0;
  double h_y = 0.0;
  double i_xy = 0.0;

  std::size_t n_layers() const noexcept { return layers.size(); }
  std::size_t n_snapshots() const noexcept { return layers.empty() ? 0 : layers.front().size(); }
};

/// Binned information plane of every layer at every snapshot, using the full
/// enumerable input set with exact p(x, y).
inline InfoPlaneTrajectory estimate_layer_mi(const TrainRun& run, const Matrix& inputs, const JointDistribution& xy,
                                             const BinningConfig& bins = {}, int threads = 1) {
  bins.validate();
  if (inputs.rows() != xy.rows()) throw DimensionMismatch("estimate_layer_mi: inputs and joint differ in |X|");
  if (inputs.rows() > 100000) throw InvalidArgument("estimate_layer_mi: input set is too large to enumerate");
  if (run.snapshots.empty()) throw InvalidArgument("estimate_layer_mi: run has no snapshots");
  const std::size_t L = run.spec.n_layers();
  const std::size_t S = run.snapshots.size();

  InfoPlaneTrajectory traj;
  traj.layers.assign(L, std::vector<LayerMI>(S));
  traj.ranges.assign(L, {bins.lo, bins.hi});
  if (bins.adaptive) {
    std::vector<std::vector<double>> maxes(S, std::vector<double>(L, 0.0));
    parallel_for(S, threads, [&](std::size_t s) {
      const auto acts = forward_all(run.snapshots[s].net, inputs);
      for (std::size_t k = 0; k + 1 < L; ++k)
        for (double v : acts[k].data()) maxes[s][k] = std::max(maxes[s][k], v);
    });
    for (std::size_t k = 0; k + 1 < L; ++k) {
      double m = 0.0;
      for (std::size_t s = 0; s < S; ++s) m = std::max(m, maxes[s][k]);
      traj.ranges[k] = {0.0, m > 0.0 ? m : 1.0};
    }
  }
  std::vector<std::size_t> clipped(S, 0);
  parallel_for(S, threads, [&](std::size_t s) {
    const auto& snap = run.snapshots[s];
    const auto acts = forward_all(snap.net, inputs);
    for (std::size_t k = 0; k < L; ++k) {
      std::size_t n_t = 0;
      const auto t = discretize_rows(acts[k], traj.ranges[k].first, traj.ranges[k].second, bins.n_bins, clipped[s], n_t);
      const auto [ixt, ity] = binned_layer_mi(xy, t, n_t);
      traj.layers[k][s] = {k, snap.epoch, snap.iteration, ixt, ity};
    }
  });
  for (auto c : clipped) traj.clipped += c;
  traj.h_y = entropy(xy.marginal_y());
  traj.i_xy = mutual_information(xy);
  return traj;
}

struct DpiReport {
  double max_violation_x = 0.0;  // max over snapshots of I(X;T_{k+1}) - I(X;T_k)
  double max_violation_y = 0.0;  // same for I(T;Y)
  std::size_t n_violations = 0;  // pairs above `tol`
  long long worst_epoch = -1;
  std::size_t worst_layer = 0;

  double max_violation() const noexcept { return std::max(max_violation_x, max_violation_y); }
};

/// Checks I(X;T_1) >= I(X;T_2) >= ... and the same chain in Y at every
/// snapshot. Report only.
inline DpiReport dpi_check(const InfoPlaneTrajectory& traj, double tol = 1e-9) {
  DpiReport r;
  if (traj.n_layers() < 2) return r;
  for (std::size_t s = 0; s < traj.n_snapshots(); ++s)
    for (std::size_t k = 0; k + 1 < traj.n_layers(); ++k) {
      const auto& a = traj.layers[k][s];
      const auto& b = traj.layers[k + 1][s];
      const double vx = b.i_xt - a.i_xt, vy = b.i_ty - a.i_ty;
      if (vx > tol || vy > tol) ++r.n_violations;
      if (std::max(vx, vy) > r.max_violation()) {
        r.worst_epoch = a.epoch;
        r.worst_layer = k + 1;
      }
      r.max_violation_x = std::max(r.max_violation_x, vx);
      r.max_violation_y = std::max(r.max_violation_y, vy);
    }
  return r;
}

struct SeriesPoint {
  double time = 0.0;  // iteration (or epoch)
  double value = 0.0;
};

/// Geometric-mean aggregation of a positive series into logarithmic time
/// bins, `per_octave` bins per doubling. Non-positive or non-finite values
/// are skipped.
inline std::vector<SeriesPoint> log_bin_series(std::span<const SeriesPoint> series, int per_octave = 4) {
  if (per_octave < 1) throw InvalidArgument("log_bin_series: per_octave must be >= 1");
  std::map<long long, std::pair<double, std::pair<double, int>>> acc;  // bin -> (sum log t, (sum log v, n))
  for (const auto& p : series) {
    if (!(p.time > 0.0) || !(p.value > 0.0) || !std::isfinite(p.value)) continue;
    const auto b = static_cast<long long>(std::floor(std::log2(p.time) * per_octave));
    auto& a = acc[b];
    a.first += std::log(p.time);
    a.second.first += std::log(p.value);
    a.second.second += 1;
  }
  std::vector<SeriesPoint> out;
  for (const auto& [b, a] : acc)
    out.push_back({std::exp(a.first / a.second.second), std::exp(a.second.first / a.second.second)});
  return out;
}

struct Transition {
  std::size_t index = 0;
  double time = 0.0;
};

/// Position of the steepest decrease of the median-smoothed log SNR. None
/// when the smoothed series never falls by more than `min_drop_log` (ln 2 by
/// default), i.e. no decay phase.
inline std::optional<Transition> detect_snr_transition(std::span<const SeriesPoint> snr, int median_window = 5,
                                                       double min_drop_log = std::log(2.0)) {
  if (snr.size() < 20) throw InvalidArgument("detect_snr_transition: need >= 20 points");
  std::vector<double> ls;
  for (const auto& p : snr) {
    if (!(p.value > 0.0)) throw InvalidArgument("detect_snr_transition: SNR values must be positive");
    ls.push_back(std::log(p.value));
  }
  const auto sm = median_smooth(ls, median_window);
  std::size_t best = 0;
  double steepest = 0.0;
  for (std::size_t i = 0; i + 1 < sm.size(); ++i)
    if (sm[i] - sm[i + 1] > steepest) {
      steepest = sm[i] - sm[i + 1];
      best = i + 1;
    }
  if (steepest <= 0.0) return std::nullopt;
  const double before = *std::max_element(sm.begin(), sm.begin() + static_cast<std::ptrdiff_t>(best));
  const double after = *std::min_element(sm.begin() + static_cast<std::ptrdiff_t>(best), sm.end());
  if (before - after < min_drop_log) return std::nullopt;
  return Transition{best, snr[best].time};
}

struct CompressionOnset {
  std::size_t index = 0;  // snapshot index of the I(X;T) peak
  long long epoch = 0;
  long long iteration = 0;
  double peak = 0.0;
  double final_value = 0.0;
};

/// Global maximum of I(X;T) for `layer`, accepted when the next
/// `min_consecutive` snapshots all lie below it and the last snapshot is at
/// least `min_drop` bits under it.
inline std::optional<CompressionOnset> detect_compression_onset(std::span<const LayerMI> series, int min_consecutive = 3,
                                                                double min_drop = 0.05) {
  if (series.size() < 20) throw InvalidArgument("detect_compression_onset: need >= 20 snapshots");
  std::size_t peak = 0;
  for (std::size_t i = 1; i < series.size(); ++i)
    if (series[i].i_xt > series[peak].i_xt) peak = i;
  const auto need = static_cast<std::size_t>(min_consecutive);
  if (peak + need >= series.size()) return std::nullopt;
  for (std::size_t i = peak + 1; i <= peak + need; ++i)
    if (!(series[i].i_xt < series[peak].i_xt)) return std::nullopt;
  if (series.back().i_xt > series[peak].i_xt - min_drop) return std::nullopt;
  return CompressionOnset{peak, series[peak].epoch, series[peak].iteration, series[peak].i_xt, series.back().i_xt};
}

inline std::optional<CompressionOnset> detect_compression_onset(const InfoPlaneTrajectory& traj, std::size_t layer,
                                                                int min_consecutive = 3, double min_drop = 0.05) {
  if (layer >= traj.n_layers()) throw InvalidArgument("detect_compression_onset: layer out of range");
  return detect_compression_onset(traj.layers[layer], min_consecutive, min_drop);
}

/// First epoch after which the median-smoothed training error stays within
/// `tol` of its final value.
inline long long detect_error_saturation(std::span<const double> train_error, double tol = 0.01, int window = 5) {
  if (train_error.empty()) throw InvalidArgument("detect_error_saturation: empty series");
  const auto sm = median_smooth(train_error, window);
  const double fin = sm.back();
  std::size_t i = sm.size();
  while (i > 0 && std::abs(sm[i - 1] - fin) <= tol) --i;
  return static_cast<long long>(i) + 1;
}

struct TransitionCorrelation {
  double pearson_r = 0.0;
  double slope = 0.0;
  std::vector<std::pair<double, double>> pairs;  // (snr transition, compression onset)
};

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("pearson: need >= 2 paired values");
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Pearson r and least-squares slope between per-run SNR-transition and
/// compression-onset iterations; runs with a missing detection are skipped.
inline TransitionCorrelation correlate_transitions(
    std::span<const std::pair<std::optional<double>, std::optional<double>>> runs) {
  TransitionCorrelation c;
  for (const auto& [s, o] : runs)
    if (s && o) c.pairs.emplace_back(*s, *o);
  if (c.pairs.size() < 4) throw InvalidArgument("correlate_transitions: need >= 4 runs with both detections");
  std::vector<double> a, b;
  for (auto [x, y] : c.pairs) {
    a.push_back(x);
    b.push_back(y);
  }
  c.pearson_r = pearson(a, b);
  c.slope = least_squares(a, b).slope;
  return c;
}

inline void write_trajectory_csv(const InfoPlaneTrajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "iteration,epoch,layer,i_xt_bits,i_ty_bits\n" << std::setprecision(17);
  for (std::size_t s = 0; s < traj.n_snapshots(); ++s)
    for (std::size_t k = 0; k < traj.n_layers(); ++k) {
      const auto& p = traj.layers[k][s];
      out << p.iteration << ',' << p.epoch << ',' << p.layer << ',' << p.i_xt << ',' << p.i_ty << '\n';
    }
}

/// SNR transition of weight matrix `layer`, in epochs: per-epoch SNR,
/// log-binned at `per_octave` bins per doubling, then the steepest drop.
inline std::optional<double> snr_transition_epoch(const TrainRun& run, std::size_t layer, int per_octave = 4) {
  std::vector<SeriesPoint> sp;
  for (const auto& p : gradient_snr_series(run, layer))
    if (p.defined) sp.push_back({static_cast<double>(p.epoch), p.snr});
  const auto binned = log_bin_series(sp, per_octave);
  if (binned.size() < 20) return std::nullopt;
  const auto t = detect_snr_transition(binned);
  if (!t) return std::nullopt;
  return t->time;
}

/// Weight matrix feeding the deepest hidden layer.
inline std::size_t default_snr_layer(const TrainRun& run) {
  const std::size_t n = run.spec.n_layers();
  return n >= 2 ? n - 2 : 0;
}

struct PhaseReport {
  std::size_t snr_layer = 0;
  std::optional<double> snr_transition_epoch;
  std::optional<double> snr_transition_iteration;
  std::vector<std::optional<CompressionOnset>> onsets;  // per layer
  long long error_saturation_epoch = 0;
  std::vector<double> peak_i_xt;
  std::vector<double> final_i_xt;
  std::vector<double> final_i_ty;
  DpiReport dpi;
  double i_xy = 0.0;
};

inline PhaseReport analyze_phases(const TrainRun& run, const InfoPlaneTrajectory& traj, std::size_t snr_layer,
                                  int per_octave = 4) {
  PhaseReport r;
  r.snr_layer = snr_layer;
  r.snr_transition_epoch = snr_transition_epoch(run, snr_layer, per_octave);
  if (r.snr_transition_epoch)
    r.snr_transition_iteration = *r.snr_transition_epoch * static_cast<double>(run.batches_per_epoch);
  for (std::size_t k = 0; k < traj.n_layers(); ++k) {
    r.onsets.push_back(traj.n_snapshots() >= 20 ? detect_compression_onset(traj, k) : std::nullopt);
    double peak = 0.0;
    for (const auto& p : traj.layers[k]) peak = std::max(peak, p.i_xt);
    r.peak_i_xt.push_back(peak);
    r.final_i_xt.push_back(traj.layers[k].back().i_xt);
    r.final_i_ty.push_back(traj.layers[k].back().i_ty);
  }
  if (!run.train_error.empty()) r.error_saturation_epoch = detect_error_saturation(run.train_error);
  r.dpi = dpi_check(traj);
  r.i_xy = traj.i_xy;
  return r;
}

inline nlohmann::json to_json(const PhaseReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t k = 0; k < r.onsets.size(); ++k) {
    nlohmann::json l = {{"layer", k},
                        {"peak_i_xt_bits", r.peak_i_xt[k]},
                        {"final_i_xt_bits", r.final_i_xt[k]},
                        {"final_i_ty_bits", r.final_i_ty[k]}};
    if (r.onsets[k]) {
      l["compression_onset_epoch"] = r.onsets[k]->epoch;
      l["compression_onset_iteration"] = r.onsets[k]->iteration;
    } else {
      l["compression_onset_epoch"] = nullptr;
      l["compression_onset_iteration"] = nullptr;
    }
    layers.push_back(l);
  }
  nlohmann::json j = {{"snr_layer", r.snr_layer},
                      {"error_saturation_epoch", r.error_saturation_epoch},
                      {"i_xy_bits", r.i_xy},
                      {"dpi", {{"max_violation_x", r.dpi.max_violation_x},
                               {"max_violation_y", r.dpi.max_violation_y},
                               {"n_violations", r.dpi.n_violations}}},
                      {"layers", layers}};
  j["snr_transition_epoch"] = r.snr_transition_epoch ? nlohmann::json(*r.snr_transition_epoch) : nlohmann::json(nullptr);
  j["snr_transition_iteration"] =
      r.snr_transition_iteration ? nlohmann::json(*r.snr_transition_iteration) : nlohmann::json(nullptr);
  return j;
}

}  // namespace ibdyn
