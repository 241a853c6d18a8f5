#pragma once
// Gaussian-channel view of a trained layer after the drift phase: weights
// split into the transition point W* plus a diffusing deviation dW(tau), the
// resulting upper bound on I(T_k; T_{k+1}), compression-time scaling, and
// checks of the central-limit assumptions behind the Gaussian channel.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ibdyn/error.hpp"
#include "ibdyn/infoplane.hpp"
#include "ibdyn/linalg.hpp"
#include "ibdyn/net.hpp"

namespace ibdyn {

struct WeightDecomposition {
  long long transition_epoch = 0;
  std::vector<Matrix> w_star;                // per weight matrix, out x in
  std::vector<long long> taus;               // epochs of the later snapshots
  std::vector<std::vector<Matrix>> delta_w;  // [tau index][layer]
  std::vector<double> sigma_t2;              // variance of each layer's input activations
  std::vector<double> sigma_z2;              // per layer noise variance

  std::size_t n_layers() const noexcept { return w_star.size(); }
};

/// Mean per-unit variance of the columns of `act` (patterns x units).
inline double activation_variance(const Matrix& act) {
  if (act.rows() < 2) throw InvalidArgument("activation_variance: need >= 2 patterns");
  double total = 0.0;
  for (std::size_t j = 0; j < act.cols(); ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < act.rows(); ++i) m += act(i, j);
    m /= static_cast<double>(act.rows());
    for (std::size_t i = 0; i < act.rows(); ++i) v += (act(i, j) - m) * (act(i, j) - m);
    total += v / static_cast<double>(act.rows());
  }
  return total / static_cast<double>(act.cols());
}

/// Snapshot epoch closest to `epoch` (ties go to the later snapshot).
inline long long nearest_snapshot_epoch(const TrainRun& run, double epoch) {
  if (run.snapshots.empty()) throw InvalidArgument("nearest_snapshot_epoch: run has no snapshots");
  long long best = run.snapshots.front().epoch;
  for (const auto& s : run.snapshots)
    if (std::abs(static_cast<double>(s.epoch) - epoch) <= std::abs(static_cast<double>(best) - epoch)) best = s.epoch;
  return best;
}

/// W^k(tau) = W*^k + dW^k(tau) with W* the snapshot at `transition_epoch`
/// and one dW per later snapshot. Input activation variances are measured at
/// the transition over the rows of `inputs`; sigma_z2 = noise_ratio *
/// sigma_t2.
inline WeightDecomposition decompose_weights(const TrainRun& run, long long transition_epoch, const Matrix& inputs,
                                             double noise_ratio = 1e-4) {
  if (!(noise_ratio > 0.0)) throw InvalidArgument("decompose_weights: noise ratio must be positive");
  std::size_t at = run.snapshots.size();
  for (std::size_t s = 0; s < run.snapshots.size(); ++s)
    if (run.snapshots[s].epoch == transition_epoch) at = s;
  if (at == run.snapshots.size())
    throw InvalidArgument("decompose_weights: transition epoch " + std::to_string(transition_epoch) +
                          " is not a recorded snapshot");
  WeightDecomposition d;
  d.transition_epoch = transition_epoch;
  const Network& star = run.snapshots[at].net;
  d.w_star = star.w;
  const auto acts = forward_all(star, inputs);
  for (std::size_t k = 0; k < star.n_layers(); ++k) {
    const double v = activation_variance(k == 0 ? inputs : acts[k - 1]);
    if (!(v > 0.0)) throw NumericalError("decompose_weights: zero activation variance feeding layer " + std::to_string(k));
    d.sigma_t2.push_back(v);
    d.sigma_z2.push_back(noise_ratio * v);
  }
  for (std::size_t s = at; s < run.snapshots.size(); ++s) {
    d.taus.push_back(run.snapshots[s].epoch);
    std::vector<Matrix> dw;
    for (std::size_t k = 0; k < star.n_layers(); ++k) dw.push_back(run.snapshots[s].net.w[k] - star.w[k]);
    d.delta_w.push_back(std::move(dw));
  }
  return d;
}

/// Closed-form bound pieces for one channel T' = (W* + dW) T + Z.
struct ChannelBound {
  double bound_bits = 0.0;       // 1/2 sum log2(1 + A_ii / (lambda_i + s))
  double exact_bits = 0.0;       // 1/2 log2 det(I + N^{-1} S), never above bound_bits
  std::vector<double> a_diag;    // A = Q^T W* W*^T Q
  std::vector<double> lambdas;   // eigenvalues of dW dW^T, ascending
};

/// 1/2 sum log2(1 + A_ii / (lambda_i + s)) with s = sigma_z^2 / sigma_T^2.
inline double hadamard_bound_bits(std::span<const double> a_diag, std::span<const double> lambdas, double s) {
  if (a_diag.size() != lambdas.size()) throw DimensionMismatch("hadamard_bound_bits: spectrum sizes differ");
  if (s < 0.0) throw InvalidArgument("hadamard_bound_bits: negative noise ratio");
  double b = 0.0;
  for (std::size_t i = 0; i < a_diag.size(); ++i) {
    const double a = std::max(0.0, a_diag[i]);
    if (a == 0.0) continue;
    const double den = std::max(0.0, lambdas[i]) + s;
    if (den == 0.0) return std::numeric_limits<double>::infinity();
    b += 0.5 * std::log2(1.0 + a / den);
  }
  return b;
}

inline ChannelBound gaussian_channel_bound(const Matrix& w_star, const Matrix& delta_w, double s) {
  if (w_star.rows() != delta_w.rows() || w_star.cols() != delta_w.cols())
    throw DimensionMismatch("gaussian_channel_bound: W* and dW differ in shape");
  if (!(s > 0.0)) throw InvalidArgument("gaussian_channel_bound: noise ratio must be positive");
  const Matrix noise = delta_w * delta_w.transpose();
  const Matrix signal = w_star * w_star.transpose();
  const auto eig = jacobi_eigen(symmetrized(noise));
  const Matrix a = eig.vectors.transpose() * signal * eig.vectors;
  ChannelBound b;
  b.lambdas = eig.values;
  for (double& l : b.lambdas) l = std::max(0.0, l);
  b.a_diag = a.diag();
  b.bound_bits = hadamard_bound_bits(b.a_diag, b.lambdas, s);
  const Matrix n = noise + Matrix::identity(noise.rows()) * s;
  b.exact_bits = std::max(0.0, 0.5 * (log_det_spd(symmetrized(n + signal)) - log_det_spd(symmetrized(n))) / std::log(2.0));
  return b;
}

struct LayerBound {
  std::size_t layer = 0;
  long long tau = 0;
  double bound_bits = 0.0;
  double exact_bits = 0.0;
  std::vector<double> a_diag;
  std::vector<double> lambdas;
  double r_constant = 0.0;
  std::size_t n_informative = 0;
};

struct BoundReport {
  std::vector<LayerBound> layers;
};

/// R = 1/2 sum_i A_ii / lambda_i^0 with lambda^0 the spectrum at the first
/// diffusion snapshot after the transition (noise floor added).
inline double r_constant(const WeightDecomposition& dec, std::size_t layer) {
  if (dec.delta_w.size() < 2) throw InvalidArgument("r_constant: need a snapshot after the transition");
  const double s = dec.sigma_z2[layer] / dec.sigma_t2[layer];
  const auto b0 = gaussian_channel_bound(dec.w_star[layer], dec.delta_w[1][layer], s);
  double r = 0.0;
  for (std::size_t i = 0; i < b0.lambdas.size(); ++i) r += 0.5 * std::max(0.0, b0.a_diag[i]) / (b0.lambdas[i] + s);
  return r;
}

/// Eigendirections (ascending order index) whose lambda grows by more than
/// `growth` across the window are non-informative; the rest are counted.
inline std::size_t count_informative(std::span<const double> lambda_first, std::span<const double> lambda_last,
                                     double growth = 2.0) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < lambda_first.size(); ++i)
    if (!(lambda_last[i] > growth * lambda_first[i])) ++n;
  return n;
}

/// Bound for every layer at the tau index `ti` of the decomposition.
inline BoundReport mi_gaussian_bound(const WeightDecomposition& dec, std::size_t ti, double informative_growth = 2.0) {
  if (ti >= dec.taus.size()) throw InvalidArgument("mi_gaussian_bound: tau index out of range");
  BoundReport rep;
  for (std::size_t k = 0; k < dec.n_layers(); ++k) {
    const double s = dec.sigma_z2[k] / dec.sigma_t2[k];
    const auto b = gaussian_channel_bound(dec.w_star[k], dec.delta_w[ti][k], s);
    LayerBound lb;
    lb.layer = k;
    lb.tau = dec.taus[ti];
    lb.bound_bits = b.bound_bits;
    lb.exact_bits = b.exact_bits;
    lb.a_diag = b.a_diag;
    lb.lambdas = b.lambdas;
    if (dec.delta_w.size() >= 2) {
      lb.r_constant = r_constant(dec, k);
      const auto first = gaussian_channel_bound(dec.w_star[k], dec.delta_w[1][k], s).lambdas;
      lb.n_informative = count_informative(first, b.lambdas, informative_growth);
    } else {
      lb.n_informative = b.lambdas.size();
    }
    rep.layers.push_back(std::move(lb));
  }
  return rep;
}

inline void write_bound_csv(const std::vector<BoundReport>& reports, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "layer,tau,bound_bits,exact_bits,n_informative,r_constant\n" << std::setprecision(17);
  for (const auto& r : reports)
    for (const auto& l : r.layers)
      out << l.layer << ',' << l.tau << ',' << l.bound_bits << ',' << l.exact_bits << ',' << l.n_informative << ','
          << l.r_constant << '\n';
}

/// Relative time (R / dI)^(1/alpha) to bring the bound down to dI bits.
inline double compression_time(double r, double delta_i, double alpha) {
  if (!(r > 0.0) || !(delta_i > 0.0)) throw InvalidArgument("compression_time: R and dI must be positive");
  if (!(alpha > 0.0) || alpha > 1.0) throw InvalidArgument("compression_time: alpha must be in (0, 1]");
  return std::pow(r / delta_i, 1.0 / alpha);
}

/// Total relative time when K layers in sequence each carry R/K of the
/// compression: K ((R/K)/dI)^(1/alpha). The ratio to the single-layer time
/// is K^(1/alpha)/K.
inline double split_compression_time(double r, double delta_i, double alpha, int k) {
  if (k < 1) throw InvalidArgument("split_compression_time: K must be >= 1");
  return static_cast<double>(k) * compression_time(r / static_cast<double>(k), delta_i, alpha);
}

struct LayerBoostFit {
  double alpha_hat = 0.0;  // iteration ~ c K^(-1/alpha)
  double c = 0.0;
  double r2 = 0.0;
  bool monotone = true;  // strictly decreasing in K
};

inline LayerBoostFit layer_boost_fit(const std::map<int, double>& convergence_iters) {
  if (convergence_iters.size() < 3) throw InvalidArgument("layer_boost_fit: need >= 3 depths");
  std::vector<double> lk, li;
  LayerBoostFit f;
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& [k, it] : convergence_iters) {
    if (k < 1 || !(it > 0.0)) throw InvalidArgument("layer_boost_fit: depths and iterations must be positive");
    if (!(it < prev)) f.monotone = false;
    prev = it;
    lk.push_back(std::log(static_cast<double>(k)));
    li.push_back(std::log(it));
  }
  const auto lf = least_squares(lk, li);
  f.alpha_hat = lf.slope < 0.0 ? -1.0 / lf.slope : std::numeric_limits<double>::infinity();
  f.c = std::exp(lf.intercept);
  f.r2 = lf.r2;
  return f;
}

/// ||W* dW^T||_F / (||W*||_F ||dW||_F).
inline double weight_alignment(const Matrix& w_star, const Matrix& delta_w) {
  const double d = w_star.frobenius() * delta_w.frobenius();
  if (d == 0.0) throw InvalidArgument("weight_alignment: zero-norm matrix");
  return (w_star * delta_w.transpose()).frobenius() / d;
}

// ---------------------------------------------------------------------------
// Central-limit diagnostics.

/// sum a_i^4 / (sum a_i^2)^2: 1/d for a flat direction, 1 for a single axis.
inline double general_position_ratio(std::span<const double> a) {
  double s2 = 0.0, s4 = 0.0;
  for (double v : a) {
    s2 += v * v;
    s4 += v * v * v * v;
  }
  if (s2 == 0.0) throw InvalidArgument("general_position_ratio: zero-norm direction");
  return s4 / (s2 * s2);
}

inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Asymptotic Kolmogorov survival function Q(lambda).
inline double kolmogorov_q(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double q = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    q += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(q, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample KS test of `x` against N(0, 1).
inline KsResult ks_test_normal(std::vector<double> x) {
  if (x.empty()) throw InvalidArgument("ks_test_normal: empty sample");
  std::sort(x.begin(), x.end());
  const auto n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = standard_normal_cdf(x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double sn = std::sqrt(n);
  return {d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)};
}

struct CltReport {
  double gp_ratio_star = 0.0;
  double gp_ratio_delta = 0.0;
  KsResult ks_star;
  KsResult ks_delta;
  double projection_correlation = 0.0;
  bool general_position = true;  // both ratios <= gp_threshold
  bool gaussian = true;          // both KS p-values >= alpha
};

/// Normalized projections of centred activations T (patterns x d) onto the
/// directions w_star and delta_w, tested for Gaussianity and correlation.
inline CltReport clt_diagnostics(std::span<const double> w_star, std::span<const double> delta_w, const Matrix& t,
                                 double gp_threshold = 0.05, double ks_alpha = 0.01) {
  const std::size_t d = t.cols();
  if (d < 64) throw InvalidArgument("clt_diagnostics: layer width must be >= 64");
  if (w_star.size() != d || delta_w.size() != d) throw DimensionMismatch("clt_diagnostics: direction length != width");
  CltReport r;
  r.gp_ratio_star = general_position_ratio(w_star);
  r.gp_ratio_delta = general_position_ratio(delta_w);
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += t(i, j);
  for (double& m : mean) m /= static_cast<double>(t.rows());
  double var = 0.0;
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j) var += (t(i, j) - mean[j]) * (t(i, j) - mean[j]);
  const double sigma = std::sqrt(var / static_cast<double>(t.rows() * d));
  if (!(sigma > 0.0)) throw InvalidArgument("clt_diagnostics: activations have zero variance");
  const double n1 = norm2(w_star) * sigma, n2 = norm2(delta_w) * sigma;
  std::vector<double> p1(t.rows()), p2(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double a = 0.0, b = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      a += w_star[j] * (t(i, j) - mean[j]);
      b += delta_w[j] * (t(i, j) - mean[j]);
    }
    p1[i] = a / n1;
    p2[i] = b / n2;
  }
  r.projection_correlation = pearson(p1, p2);
  r.ks_star = ks_test_normal(p1);
  r.ks_delta = ks_test_normal(p2);
  r.general_position = r.gp_ratio_star <= gp_threshold && r.gp_ratio_delta <= gp_threshold;
  r.gaussian = r.ks_star.p_value >= ks_alpha && r.ks_delta.p_value >= ks_alpha;
  return r;
}

/// Diagnostics for output unit `unit` of layer `layer`: its incoming row of
/// W* and of dW at tau index `ti`, projected against activations T_k.
inline CltReport clt_diagnostics(const WeightDecomposition& dec, std::size_t layer, std::size_t ti, std::size_t unit,
                                 const Matrix& t) {
  if (layer >= dec.n_layers() || ti >= dec.taus.size()) throw InvalidArgument("clt_diagnostics: index out of range");
  if (unit >= dec.w_star[layer].rows()) throw InvalidArgument("clt_diagnostics: unit out of range");
  return clt_diagnostics(dec.w_star[layer].row(unit), dec.delta_w[ti][layer].row(unit), t);
}

}  // namespace ibdyn
