#pragma once
// Infinite-width ensembles: NNGP and NTK kernels of fully connected
// networks, the Gaussian output distribution of an ensemble trained by
// gradient flow on squared loss, and the information quantities that follow
// from it in closed form.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibdyn/datagen.hpp"
#include "ibdyn/error.hpp"
#include "ibdyn/ib.hpp"
#include "ibdyn/linalg.hpp"
#include "ibdyn/net.hpp"

namespace ibdyn {

enum class KernelActivation { Relu, Erf };

inline std::string to_string(KernelActivation a) { return a == KernelActivation::Relu ? "relu" : "erf"; }

inline KernelActivation kernel_activation_from_string(const std::string& s) {
  if (s == "relu") return KernelActivation::Relu;
  if (s == "erf") return KernelActivation::Erf;
  throw InvalidArgument("unknown kernel activation '" + s + "' (expected relu or erf)");
}

/// `depth` hidden layers followed by a linear readout, NTK parameterization:
/// h = sigma_w / sqrt(fan_in) W a + sigma_b b.
struct ArchSpec {
  int depth = 2;
  KernelActivation activation = KernelActivation::Relu;
  double sigma_w2 = 2.0;
  double sigma_b2 = 0.1;

  void validate() const {
    if (depth < 1) throw InvalidArgument("ArchSpec: depth must be >= 1");
    if (!(sigma_w2 > 0.0) || !(sigma_b2 > 0.0)) throw InvalidArgument("ArchSpec: variances must be positive");
  }
};

struct KernelPair {
  Matrix nngp;  // K
  Matrix ntk;   // Theta
  std::size_t clipped = 0;  // arccos / arcsin arguments pulled back into [-1, 1]
};

namespace ntk_detail {

struct Expectation {
  double k = 0.0;     // E[phi(u) phi(v)]
  double kdot = 0.0;  // E[phi'(u) phi'(v)]
};

inline double clip_unit(double r, std::size_t& clipped) {
  if (r > 1.0 || r < -1.0) {
    ++clipped;
    return std::clamp(r, -1.0, 1.0);
  }
  return r;
}

/// Gaussian expectations for (u, v) ~ N(0, [[k11, k12], [k12, k22]]).
inline Expectation expect(KernelActivation act, double k11, double k22, double k12, std::size_t& clipped) {
  constexpr double pi = std::numbers::pi;
  if (act == KernelActivation::Relu) {
    // Arc-cosine kernel of degree 1 and 0.
    const double n = std::sqrt(k11 * k22);
    if (n == 0.0) return {0.0, 0.25};
    const double theta = std::acos(clip_unit(k12 / n, clipped));
    return {n / (2.0 * pi) * (std::sin(theta) + (pi - theta) * std::cos(theta)), (pi - theta) / (2.0 * pi)};
  }
  const double a = 1.0 + 2.0 * k11, b = 1.0 + 2.0 * k22;
  const double r = clip_unit(2.0 * k12 / std::sqrt(a * b), clipped);
  const double det = std::max(a * b - 4.0 * k12 * k12, std::numeric_limits<double>::min());
  return {2.0 / pi * std::asin(r), 4.0 / pi / std::sqrt(det)};
}

}  // namespace ntk_detail

/// Layerwise recursion from K^0 = sigma_b^2 + sigma_w^2 x.x'/d with
/// Theta^{l+1} = K^{l+1} + sigma_w^2 Kdot^{l+1} Theta^l. Rows of `points` are
/// inputs. Both matrices are exactly symmetric.
inline KernelPair compute_kernels(const ArchSpec& arch, const Matrix& points) {
  arch.validate();
  const std::size_t n = points.rows(), d = points.cols();
  if (n < 1 || d < 1) throw InvalidArgument("compute_kernels: need at least one point with one feature");
  for (double v : points.data())
    if (!std::isfinite(v)) throw InvalidArgument("compute_kernels: non-finite input");
  KernelPair kp;
  Matrix k(n, n), theta(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const double v = arch.sigma_b2 + arch.sigma_w2 * dot(points.row(i), points.row(j)) / static_cast<double>(d);
      k(i, j) = k(j, i) = v;
    }
  theta = k;
  for (int l = 0; l < arch.depth; ++l) {
    Matrix kn(n, n), tn(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) {
        const auto e = ntk_detail::expect(arch.activation, k(i, i), k(j, j), k(i, j), kp.clipped);
        const double kv = arch.sigma_b2 + arch.sigma_w2 * e.k;
        const double tv = kv + arch.sigma_w2 * e.kdot * theta(i, j);
        kn(i, j) = kn(j, i) = kv;
        tn(i, j) = tn(j, i) = tv;
      }
    k = std::move(kn);
    theta = std::move(tn);
  }
  kp.nngp = std::move(k);
  kp.ntk = std::move(theta);
  return kp;
}

/// Sub-block [r0, r0 + nr) x [c0, c0 + nc).
inline Matrix block(const Matrix& m, std::size_t r0, std::size_t nr, std::size_t c0, std::size_t nc) {
  if (r0 + nr > m.rows() || c0 + nc > m.cols()) throw DimensionMismatch("block: out of range");
  Matrix b(nr, nc);
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < nc; ++j) b(i, j) = m(r0 + i, c0 + j);
  return b;
}

// ---------------------------------------------------------------------------
// Ensemble posterior.

struct EnsemblePosterior {
  double tau = 0.0;
  Matrix mu;                        // eval points x outputs
  std::vector<double> sigma_diag;  // per-point variance, shared by all outputs
  Matrix sigma;                     // full eval covariance, empty unless requested

  std::size_t n_points() const noexcept { return mu.rows(); }
  std::size_t n_outputs() const noexcept { return mu.cols(); }
};

/// Gradient-flow ensemble over kernels computed on train followed by eval
/// points. Theta(X, X) is eigendecomposed once; every tau reuses it.
class PosteriorModel {
 public:
  PosteriorModel(const KernelPair& kp, std::size_t n_train, Matrix y_train) : y_(std::move(y_train)) {
    const std::size_t n = kp.ntk.rows();
    if (kp.nngp.rows() != n || n_train < 1 || n_train > n) throw DimensionMismatch("PosteriorModel: bad split");
    if (y_.rows() != n_train || y_.cols() < 1) throw DimensionMismatch("PosteriorModel: targets must be n_train rows");
    const std::size_t m = n - n_train;
    k_xx_ = block(kp.nngp, 0, n_train, 0, n_train);
    t_xx_ = block(kp.ntk, 0, n_train, 0, n_train);
    k_ex_ = block(kp.nngp, n_train, m, 0, n_train);
    t_ex_ = block(kp.ntk, n_train, m, 0, n_train);
    k_ee_ = block(kp.nngp, n_train, m, n_train, m);
    eig_ = jacobi_eigen(t_xx_);
    const double lmax = eig_.values.back(), lmin = eig_.values.front();
    if (!(lmax > 0.0)) throw NumericalError("PosteriorModel: NTK on the training set is zero");
    if (!(lmin > 0.0) || lmax / lmin > 1e12) {
      ridge_ = 1e-10 * t_xx_.trace() / static_cast<double>(n_train);
      for (double& l : eig_.values) l += ridge_;
      if (!(eig_.values.front() > 0.0)) throw NumericalError("PosteriorModel: NTK is singular even with ridge");
    }
  }

  double ridge() const noexcept { return ridge_; }
  std::size_t n_train() const noexcept { return y_.rows(); }
  std::size_t n_eval() const noexcept { return k_ee_.rows(); }
  const Matrix& targets() const noexcept { return y_; }
  const Matrix& k_train() const noexcept { return k_xx_; }
  const Matrix& ntk_train() const noexcept { return t_xx_; }
  const SymmetricEigen& ntk_eigen() const noexcept { return eig_; }

  /// Prior predictive variance K(x, x) at each eval point.
  std::vector<double> prior_variance() const { return k_ee_.diag(); }

  /// mu = Theta(x,X) Theta^{-1}(I - e^{-tau Theta}) Y and the matching
  /// covariance. tau may be +infinity.
  EnsemblePosterior at(double tau, bool full_covariance = false) const {
    if (!(tau >= 0.0)) throw InvalidArgument("PosteriorModel::at: tau must be >= 0");
    // g(lambda) = (1 - e^{-tau lambda}) / lambda, finite for small lambda.
    const auto g = spectral_apply(eig_, [tau](double l) { return std::isinf(tau) ? 1.0 / l : -std::expm1(-tau * l) / l; });
    const Matrix a = t_ex_ * g;  // m x n
    EnsemblePosterior p;
    p.tau = tau;
    p.mu = a * y_;
    const Matrix ak = a * k_xx_;
    const std::size_t m = a.rows(), n = a.cols();
    p.sigma_diag.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      double quad = 0.0, cross = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        quad += ak(i, j) * a(i, j);
        cross += a(i, j) * k_ex_(i, j);
      }
      p.sigma_diag[i] = std::max(0.0, k_ee_(i, i) + quad - 2.0 * cross);
    }
    if (full_covariance) {
      const Matrix ake = a * k_ex_.transpose();
      p.sigma = symmetrized(k_ee_ + ak * a.transpose() - ake - ake.transpose());
    }
    return p;
  }

 private:
  Matrix y_, k_xx_, t_xx_, k_ex_, t_ex_, k_ee_;
  SymmetricEigen eig_;
  double ridge_ = 0.0;
};

// ---------------------------------------------------------------------------
// Gaussian closed forms on a single output vector z ~ N(mu, Sigma) with the
// observation model q(y|z) = N(y; z, I). Natural logs.

inline double gibbs_log_likelihood(std::span<const double> mu, const Matrix& sigma, std::span<const double> y) {
  if (mu.size() != y.size() || sigma.rows() != mu.size() || !sigma.square())
    throw DimensionMismatch("gibbs_log_likelihood: dimensions differ");
  double r2 = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) r2 += (y[i] - mu[i]) * (y[i] - mu[i]);
  const auto k = static_cast<double>(y.size());
  return -0.5 * r2 - 0.5 * sigma.trace() - 0.5 * k * std::log(2.0 * std::numbers::pi);
}

/// log N(y; mu, I + Sigma).
inline double bayes_log_likelihood(std::span<const double> mu, const Matrix& sigma, std::span<const double> y) {
  const std::size_t k = y.size();
  const Matrix c = Matrix::identity(k) + sigma;
  Matrix r(k, 1);
  for (std::size_t i = 0; i < k; ++i) r(i, 0) = y[i] - mu[i];
  const Matrix s = solve_spd(c, r);
  double q = 0.0;
  for (std::size_t i = 0; i < k; ++i) q += r(i, 0) * s(i, 0);
  return -0.5 * q - 0.5 * log_det_spd(c) - 0.5 * static_cast<double>(k) * std::log(2.0 * std::numbers::pi);
}

/// Bayes minus Gibbs: 1/2 r^T (I+Sigma)^{-1} Sigma r + 1/2 Tr Sigma -
/// 1/2 log det(I + Sigma), nats.
inline double waic_gaussian(std::span<const double> mu, const Matrix& sigma, std::span<const double> y) {
  const std::size_t k = y.size();
  if (mu.size() != k || sigma.rows() != k || !sigma.square()) throw DimensionMismatch("waic_gaussian: dimensions differ");
  const Matrix c = Matrix::identity(k) + sigma;
  Matrix r(k, 1);
  for (std::size_t i = 0; i < k; ++i) r(i, 0) = y[i] - mu[i];
  const Matrix s = solve_spd(c, sigma * r);
  double q = 0.0;
  for (std::size_t i = 0; i < k; ++i) q += r(i, 0) * s(i, 0);
  return 0.5 * q + 0.5 * sigma.trace() - 0.5 * log_det_spd(c);
}

/// KL[N(m1, S1) || N(m0, S0)] in nats.
inline double gaussian_kl(std::span<const double> m1, const Matrix& s1, std::span<const double> m0, const Matrix& s0) {
  const std::size_t k = m1.size();
  if (m0.size() != k || s1.rows() != k || s0.rows() != k) throw DimensionMismatch("gaussian_kl: dimensions differ");
  Matrix dm(k, 1);
  for (std::size_t i = 0; i < k; ++i) dm(i, 0) = m0[i] - m1[i];
  double ld0 = 0.0;
  try {
    ld0 = log_det_spd(s0);
  } catch (const NumericalError&) {
    throw NumericalError("gaussian_kl: reference covariance is not positive definite");
  }
  const double ld1 = log_det_spd(s1);
  const double tr = solve_spd(s0, s1).trace();
  const Matrix sd = solve_spd(s0, dm);
  double quad = 0.0;
  for (std::size_t i = 0; i < k; ++i) quad += dm(i, 0) * sd(i, 0);
  return std::max(0.0, 0.5 * (tr + quad - static_cast<double>(k) + ld0 - ld1));
}

// ---------------------------------------------------------------------------
// Ensemble-level quantities. Each eval point carries z ~ N(mu_i, s_i I_k);
// per-point values are averaged over the eval set.

inline void check_targets(const EnsemblePosterior& p, const Matrix& y) {
  if (y.rows() != p.n_points() || y.cols() != p.n_outputs())
    throw DimensionMismatch("ensemble targets must match the eval set");
}

/// Mean over eval points of E[log q(y|z)], nats.
inline double expected_log_loss(const EnsemblePosterior& p, const Matrix& y) {
  check_targets(p, y);
  const auto k = static_cast<double>(p.n_outputs());
  double s = 0.0;
  for (std::size_t i = 0; i < p.n_points(); ++i) {
    double r2 = 0.0;
    for (std::size_t c = 0; c < p.n_outputs(); ++c) r2 += (y(i, c) - p.mu(i, c)) * (y(i, c) - p.mu(i, c));
    s += -0.5 * r2 - 0.5 * k * p.sigma_diag[i] - 0.5 * k * std::log(2.0 * std::numbers::pi);
  }
  return s / static_cast<double>(p.n_points());
}

/// Mean over eval points of the per-point WAIC, nats.
inline double waic(const EnsemblePosterior& p, const Matrix& y) {
  check_targets(p, y);
  double s = 0.0;
  for (std::size_t i = 0; i < p.n_points(); ++i) {
    const double v = p.sigma_diag[i];
    for (std::size_t c = 0; c < p.n_outputs(); ++c) {
      const double r = y(i, c) - p.mu(i, c);
      s += 0.5 * r * r * v / (1.0 + v) + 0.5 * v - 0.5 * std::log1p(v);
    }
  }
  return s / static_cast<double>(p.n_points());
}

enum class ObservationModel { Unit, FittedDiagonal };

/// H(Y) + E[log q(y|z)] in bits. FittedDiagonal replaces the unit
/// observation variance by the mean residual second moment per output.
inline double izy_lower_bound(const EnsemblePosterior& p, const Matrix& y, double label_entropy_bits,
                              ObservationModel obs = ObservationModel::Unit) {
  check_targets(p, y);
  if (obs == ObservationModel::Unit) return label_entropy_bits + expected_log_loss(p, y) / std::numbers::ln2;
  double e = 0.0;
  for (std::size_t c = 0; c < p.n_outputs(); ++c) {
    double m2 = 0.0;
    for (std::size_t i = 0; i < p.n_points(); ++i) {
      const double r = y(i, c) - p.mu(i, c);
      m2 += r * r + p.sigma_diag[i];
    }
    m2 /= static_cast<double>(p.n_points());
    if (!(m2 > 0.0)) throw NumericalError("izy_lower_bound: zero residual variance");
    e += -0.5 - 0.5 * std::log(2.0 * std::numbers::pi * m2);
  }
  return label_entropy_bits + e / std::numbers::ln2;
}

/// Plug-in entropy of discrete labels, bits.
inline double empirical_label_entropy_bits(std::span<const int> labels) {
  if (labels.empty()) throw InvalidArgument("empirical_label_entropy_bits: no labels");
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  std::vector<double> p;
  for (const auto& [l, c] : counts) p.push_back(static_cast<double>(c) / static_cast<double>(labels.size()));
  return entropy(DiscreteDistribution(std::move(p)));
}

struct IzxBounds {
  double lower_bits = 0.0;
  double upper_bits = 0.0;
  double lower_nats = 0.0;
  double upper_nats = 0.0;
  std::size_t batch = 0;
};

/// Multi-sample bounds on I(Z;X|D) from the conditionals N(mu_i, var_i I_k)
/// of a batch: the lower bound averages log p(z_i|x_i) / mean_j p(z_i|x_j),
/// the upper bound leaves j = i out of the mean. Log domain throughout.
inline IzxBounds izx_minibatch_bounds(const Matrix& mu, std::span<const double> var, int samples, std::uint64_t seed) {
  const std::size_t n = mu.rows(), k = mu.cols();
  if (n < 2) throw InvalidArgument("izx_minibatch_bounds: batch must be >= 2");
  if (samples < 1) throw InvalidArgument("izx_minibatch_bounds: need >= 1 sample per point");
  if (var.size() != n) throw DimensionMismatch("izx_minibatch_bounds: one variance per point");
  for (double v : var)
    if (!(v > 0.0) || !std::isfinite(v)) throw NumericalError("izx_minibatch_bounds: conditional variance must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> log_norm(n), z(k), lp(n);
  for (std::size_t j = 0; j < n; ++j) log_norm[j] = -0.5 * static_cast<double>(k) * std::log(2.0 * std::numbers::pi * var[j]);
  const double log_n = std::log(static_cast<double>(n)), log_n1 = std::log(static_cast<double>(n - 1));
  double lower = 0.0, upper = 0.0;
  for (int s = 0; s < samples; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) z[c] = mu(i, c) + std::sqrt(var[i]) * n01(rng);
      for (std::size_t j = 0; j < n; ++j) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < k; ++c) d2 += (z[c] - mu(j, c)) * (z[c] - mu(j, c));
        lp[j] = log_norm[j] - 0.5 * d2 / var[j];
      }
      double mx_all = lp[0], mx_loo = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        mx_all = std::max(mx_all, lp[j]);
        if (j != i) mx_loo = std::max(mx_loo, lp[j]);
      }
      double sa = 0.0, sl = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        sa += std::exp(lp[j] - mx_all);
        if (j != i) sl += std::exp(lp[j] - mx_loo);
      }
      lower += lp[i] - (mx_all + std::log(sa) - log_n);
      upper += lp[i] - (mx_loo + std::log(sl) - log_n1);
    }
  }
  const double norm = static_cast<double>(n) * samples;
  IzxBounds b;
  b.batch = n;
  b.lower_nats = std::min(lower / norm, log_n);
  b.upper_nats = upper / norm;
  b.lower_bits = b.lower_nats / std::numbers::ln2;
  b.upper_bits = b.upper_nats / std::numbers::ln2;
  return b;
}

/// Posterior version. Conditionals that have collapsed (training points at
/// late tau) are floored at `rel_floor` times the mean conditional variance
/// scale `prior_scale`, which keeps the densities finite; the lower bound
/// then sits at its log N ceiling.
inline IzxBounds izx_minibatch_bounds(const EnsemblePosterior& p, int samples, std::uint64_t seed,
                                      double prior_scale = 1.0, double rel_floor = 1e-9) {
  std::vector<double> v = p.sigma_diag;
  for (double& x : v) x = std::max(x, rel_floor * prior_scale);
  return izx_minibatch_bounds(p.mu, v, samples, seed);
}

/// Mean over eval points of KL[posterior || prior predictive N(0, K(x,x))],
/// bits.
inline double izd_upper_bound(const EnsemblePosterior& p, std::span<const double> prior_variance) {
  if (prior_variance.size() != p.n_points()) throw DimensionMismatch("izd_upper_bound: one prior variance per point");
  double s = 0.0;
  for (std::size_t i = 0; i < p.n_points(); ++i) {
    const double k0 = prior_variance[i], v = p.sigma_diag[i];
    if (!(k0 > 0.0)) throw NumericalError("izd_upper_bound: prior predictive variance is not positive");
    if (!(v > 0.0)) return std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < p.n_outputs(); ++c)
      s += 0.5 * (v / k0 + p.mu(i, c) * p.mu(i, c) / k0 - 1.0 + std::log(k0 / v));
  }
  return std::max(0.0, s / static_cast<double>(p.n_points())) / std::numbers::ln2;
}

/// Tr F = Tr Theta over the training set.
inline double fisher_trace(const Matrix& ntk_train) { return ntk_train.trace(); }

namespace ntk_detail {

/// k Tr(K f(Theta)) + sum_c y_c^T f(Theta) y_c for a spectral function f.
inline double trace_plus_quadratic(const PosteriorModel& m, const std::function<double(double)>& f) {
  const Matrix ft = spectral_apply(m.ntk_eigen(), f);
  const Matrix& y = m.targets();
  double quad = 0.0;
  const Matrix fy = ft * y;
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t c = 0; c < y.cols(); ++c) quad += y(i, c) * fy(i, c);
  return static_cast<double>(y.cols()) * (m.k_train() * ft).trace() + quad;
}

}  // namespace ntk_detail

/// sqrt of E[L^2] = 1/2 [Tr(K Theta(1 - e^{-2 tau Theta})) + Y^T Theta(1 -
/// e^{-2 tau Theta}) Y], which bounds the expected parameter path length.
inline double path_length_bound(const PosteriorModel& m, double tau) {
  if (!(tau >= 0.0)) throw InvalidArgument("path_length_bound: tau must be >= 0");
  const double v = 0.5 * ntk_detail::trace_plus_quadratic(m, [tau](double l) {
    return std::isinf(tau) ? l : -l * std::expm1(-2.0 * tau * l);
  });
  return std::sqrt(std::max(0.0, v));
}

/// Tr(K Theta^{-1}(I - e^{-tau Theta})^2) + Y^T Theta^{-1}(I - e^{-tau
/// Theta})^2 Y + tau k Tr Theta, nats.
inline double itheta_d_bound(const PosteriorModel& m, double tau) {
  if (!(tau >= 0.0) || std::isinf(tau)) throw InvalidArgument("itheta_d_bound: tau must be finite and >= 0");
  const double v = ntk_detail::trace_plus_quadratic(m, [tau](double l) {
    const double e = std::expm1(-tau * l);
    return e * e / l;
  });
  double tr = 0.0;
  for (double l : m.ntk_eigen().values) tr += l;
  return v + tau * static_cast<double>(m.targets().cols()) * tr;
}

/// Geometric grid from lo to hi with `per_decade` points per decade.
inline std::vector<double> geometric_tau_grid(double lo = 1e-2, double hi = 1e10, int per_decade = 4) {
  if (!(lo > 0.0) || !(hi > lo) || per_decade < 1) throw InvalidArgument("geometric_tau_grid: bad range");
  std::vector<double> g;
  const int n = static_cast<int>(std::round(std::log10(hi / lo) * per_decade));
  for (int i = 0; i <= n; ++i) g.push_back(lo * std::pow(10.0, static_cast<double>(i) / per_decade));
  return g;
}

// ---------------------------------------------------------------------------
// Reference curve for the Gaussian regression task.

/// Analytic IB curve of a scalar Gaussian pair with squared correlation
/// rho2: I_Y = -1/2 log2(1 - rho2 (1 - 2^{-2 I_X})).
inline double gaussian_ib_curve_scalar(double rho2, double ix) {
  if (!(rho2 >= 0.0 && rho2 < 1.0) || ix < 0.0) throw InvalidArgument("gaussian_ib_curve_scalar: bad arguments");
  return -0.5 * std::log2(1.0 - rho2 * (1.0 - std::exp2(-2.0 * ix)));
}

/// Discrete joint of (A x, y) for a task with one output, each axis cut into
/// `bins` equal-width cells over +-5 standard deviations (outer cells take
/// the tails). I(X;Y) only flows through A x, so the IB curve of this joint
/// is a discretized version of the task's curve.
inline JointDistribution discretized_gaussian_joint(const JointGaussianTask& t, std::size_t bins = 24,
                                                    int quad_per_bin = 64) {
  if (t.dim_y != 1) throw InvalidArgument("discretized_gaussian_joint: task must have one output");
  if (bins < 2 || quad_per_bin < 2) throw InvalidArgument("discretized_gaussian_joint: bins must be >= 2");
  const double vs = t.cov_y(0, 0) - t.sigma_y * t.sigma_y;  // variance of A x
  if (!(vs > 0.0)) throw InvalidArgument("discretized_gaussian_joint: A x is degenerate");
  const double ss = std::sqrt(vs), sy = std::sqrt(t.cov_y(0, 0)), sn = t.sigma_y;
  auto edges = [&](double sd) {
    std::vector<double> e(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) e[i] = sd * (-5.0 + 10.0 * static_cast<double>(i) / static_cast<double>(bins));
    e.front() = -std::numeric_limits<double>::infinity();
    e.back() = std::numeric_limits<double>::infinity();
    return e;
  };
  const auto es = edges(ss), ey = edges(sy);
  const auto phi = [](double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); };
  std::vector<double> p(bins * bins, 0.0);
  for (std::size_t a = 0; a < bins; ++a) {
    // Simpson's rule on s over the cell, tails truncated at 9 sd.
    const double lo = std::max(es[a], -9.0 * ss), hi = std::min(es[a + 1], 9.0 * ss);
    const int m = 2 * quad_per_bin;
    const double h = (hi - lo) / m;
    for (int q = 0; q <= m; ++q) {
      const double s = lo + h * q;
      const double w = (q == 0 || q == m) ? 1.0 : (q % 2 ? 4.0 : 2.0);
      const double dens = std::exp(-0.5 * s * s / vs) / (ss * std::sqrt(2.0 * std::numbers::pi));
      for (std::size_t b = 0; b < bins; ++b) {
        const double pb = phi((ey[b + 1] - s) / sn) - phi((ey[b] - s) / sn);
        p[a * bins + b] += w * h / 3.0 * dens * pb;
      }
    }
  }
  double z = 0.0;
  for (double v : p) z += v;
  for (double& v : p) v /= z;
  return JointDistribution(bins, bins, std::move(p));
}

// ---------------------------------------------------------------------------
// Persistence: one JSON header line, then K and Theta as little-endian
// float64, row-major.

inline void write_kernels_bin(const KernelPair& kp, const ArchSpec& arch, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const nlohmann::json h = {{"format", "ibdyn-kernels"},
                            {"version", 1},
                            {"n", kp.nngp.rows()},
                            {"depth", arch.depth},
                            {"activation", to_string(arch.activation)},
                            {"sigma_w2", arch.sigma_w2},
                            {"sigma_b2", arch.sigma_b2},
                            {"clipped", kp.clipped}};
  out << h.dump() << '\n';
  for (const Matrix* m : {&kp.nngp, &kp.ntk})
    for (double v : m->data()) net_detail::write_f64(out, v);
  if (!out) throw IoError("write failed for " + path);
}

inline std::pair<KernelPair, ArchSpec> read_kernels_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": missing header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": bad header: " + e.what());
  }
  if (h.value("format", "") != "ibdyn-kernels") throw IoError(path + ": not a kernel file");
  ArchSpec arch;
  arch.depth = h.at("depth").get<int>();
  arch.activation = kernel_activation_from_string(h.at("activation").get<std::string>());
  arch.sigma_w2 = h.at("sigma_w2").get<double>();
  arch.sigma_b2 = h.at("sigma_b2").get<double>();
  const auto n = h.at("n").get<std::size_t>();
  KernelPair kp;
  kp.clipped = h.value("clipped", std::size_t{0});
  kp.nngp = Matrix(n, n);
  kp.ntk = Matrix(n, n);
  for (Matrix* m : {&kp.nngp, &kp.ntk})
    for (double& v : m->data()) v = net_detail::read_f64(in);
  return {std::move(kp), arch};
}

}  // namespace ibdyn
