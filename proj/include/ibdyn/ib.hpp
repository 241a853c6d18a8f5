#pragma once
// Discrete Information Bottleneck: the self-consistent encoder / marginal /
// decoder iteration, best-of-restarts solves, beta sweeps along the
// information curve, and the beta* fit of a layer's encoder.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "ibdyn/error.hpp"
#include "ibdyn/parallel.hpp"
#include "ibdyn/prob.hpp"

namespace ibdyn {

struct IBProblem {
  JointDistribution joint;    // p(x, y)
  std::size_t cardinality_t;  // |T|

  IBProblem(JointDistribution j, std::size_t card_t = 0)
      : joint(std::move(j)), cardinality_t(card_t == 0 ? joint.rows() : card_t) {
    if (cardinality_t < 1) throw InvalidArgument("IBProblem: |T| must be at least 1");
  }

  std::size_t nx() const noexcept { return joint.rows(); }
  std::size_t ny() const noexcept { return joint.cols(); }
};

struct IBSolution {
  double beta = 0.0;
  ConditionalDistribution encoder;  // p(t|x)
  ConditionalDistribution decoder;  // p(y|t)
  DiscreteDistribution marginal_t;  // p(t)
  double i_x = 0.0;                 // I(X;T), bits
  double i_y = 0.0;                 // I(T;Y), bits
  double functional = 0.0;          // I(X;T) - beta I(T;Y)
  int iterations = 0;
  bool converged = false;
};

struct CurvePoint {
  double beta = 0.0;
  double i_x = 0.0;
  double i_y = 0.0;
  bool converged = false;
  std::size_t effective_t = 0;
};

struct InfoCurve {
  std::vector<CurvePoint> points;
};

struct IBOptions {
  double tol = 1e-10;
  int max_iter = 5000;
  std::uint64_t seed = 1;
  int threads = 1;
};

namespace ib_detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Cache {
  std::vector<double> px;       // p(x)
  std::vector<double> py_x;     // p(y|x), nx * ny
  std::vector<double> log_py_x; // log p(y|x), -inf where zero
  std::vector<double> neg_h;    // sum_y p(y|x) log p(y|x), nats
};

inline Cache make_cache(const IBProblem& pr) {
  Cache c;
  c.px = pr.joint.row_sums();
  const auto cond = pr.joint.conditional_y_given_x();
  c.py_x = cond.data();
  c.log_py_x.resize(c.py_x.size());
  c.neg_h.assign(pr.nx(), 0.0);
  for (std::size_t x = 0; x < pr.nx(); ++x) {
    for (std::size_t y = 0; y < pr.ny(); ++y) {
      const double v = c.py_x[x * pr.ny() + y];
      c.log_py_x[x * pr.ny() + y] = v > 0.0 ? std::log(v) : kNegInf;
      if (v > 0.0) c.neg_h[x] += v * std::log(v);
    }
  }
  return c;
}

// KL[p(y|x) || dec(y|t)] in nats; +inf on a support violation.
inline double kl_row_nats(const Cache& c, std::size_t ny, std::size_t x, std::span<const double> dec_row) {
  double cross = 0.0;
  for (std::size_t y = 0; y < ny; ++y) {
    const double p = c.py_x[x * ny + y];
    if (p <= 0.0) continue;
    if (dec_row[y] <= 0.0) return std::numeric_limits<double>::infinity();
    cross += p * std::log(dec_row[y]);
  }
  return std::max(0.0, c.neg_h[x] - cross);
}

// Encoder rows from log-weights with per-row max subtraction.
inline std::vector<double> normalize_log_rows(std::vector<double> logw, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = logw.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    if (!std::isfinite(mx)) throw NumericalError("IB encoder update: every weight in a row underflowed");
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= z;
  }
  return logw;
}

struct Derived {
  std::vector<double> pt;
  std::vector<double> decoder;  // nt * ny
  double i_x = 0.0;
  double i_y = 0.0;
};

// Marginal, Markov-consistent decoder and both informations for an encoder.
inline Derived derive(const IBProblem& pr, const Cache& c, const std::vector<double>& enc) {
  const std::size_t nx = pr.nx(), ny = pr.ny(), nt = pr.cardinality_t;
  Derived d;
  d.pt.assign(nt, 0.0);
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t t = 0; t < nt; ++t) d.pt[t] += c.px[x] * enc[x * nt + t];
  std::vector<double> pty(nt * ny, 0.0);
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t t = 0; t < nt; ++t) {
      const double e = enc[x * nt + t];
      if (e == 0.0) continue;
      for (std::size_t y = 0; y < ny; ++y) pty[t * ny + y] += e * pr.joint(x, y);
    }
  }
  const auto py = pr.joint.col_sums();
  d.decoder.assign(nt * ny, 0.0);
  for (std::size_t t = 0; t < nt; ++t) {
    // Normalize by the row's own total (equal to p(t) up to rounding) so
    // nearly empty clusters still carry a proper distribution.
    double z = 0.0;
    for (std::size_t y = 0; y < ny; ++y) z += pty[t * ny + y];
    for (std::size_t y = 0; y < ny; ++y)
      d.decoder[t * ny + y] = z >= std::numeric_limits<double>::min() ? pty[t * ny + y] / z : py[y];
  }

  double ix = 0.0;
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t t = 0; t < nt; ++t) {
      const double pxt = c.px[x] * enc[x * nt + t];
      if (pxt > 0.0) ix += pxt * std::log2(enc[x * nt + t] / d.pt[t]);
    }
  double iy = 0.0;
  for (std::size_t t = 0; t < nt; ++t)
    for (std::size_t y = 0; y < ny; ++y) {
      const double v = pty[t * ny + y];
      if (v > 0.0) iy += v * std::log2(v / (d.pt[t] * py[y]));
    }
  d.i_x = std::max(0.0, ix);
  d.i_y = std::max(0.0, iy);
  return d;
}

inline IBSolution assemble(const IBProblem& pr, double beta, std::vector<double> enc, Derived d, int iterations,
                           bool converged) {
  IBSolution s;
  s.beta = beta;
  s.i_x = d.i_x;
  s.i_y = d.i_y;
  s.functional = d.i_x - beta * d.i_y;
  s.iterations = iterations;
  s.converged = converged;
  s.encoder = ConditionalDistribution(pr.nx(), pr.cardinality_t, std::move(enc));
  s.decoder = ConditionalDistribution(pr.cardinality_t, pr.ny(), std::move(d.decoder));
  s.marginal_t = DiscreteDistribution(std::move(d.pt));
  return s;
}

}  // namespace ib_detail

/// A consistent state (marginal and decoder derived from the encoder).
inline IBSolution make_consistent_state(const IBProblem& problem, double beta, const ConditionalDistribution& encoder) {
  if (encoder.rows() != problem.nx() || encoder.cols() != problem.cardinality_t)
    throw DimensionMismatch("make_consistent_state: encoder shape does not match problem");
  const auto cache = ib_detail::make_cache(problem);
  auto d = ib_detail::derive(problem, cache, encoder.data());
  return ib_detail::assemble(problem, beta, encoder.data(), std::move(d), 0, false);
}

/// Random encoder with i.i.d. uniform weights per row, then made consistent.
inline IBSolution random_state(const IBProblem& problem, double beta, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t nx = problem.nx(), nt = problem.cardinality_t;
  std::vector<double> enc(nx * nt);
  for (std::size_t x = 0; x < nx; ++x) {
    double z = 0.0;
    for (std::size_t t = 0; t < nt; ++t) z += (enc[x * nt + t] = u(rng) + 1e-3);
    for (std::size_t t = 0; t < nt; ++t) enc[x * nt + t] /= z;
  }
  return make_consistent_state(problem, beta, ConditionalDistribution(nx, nt, std::move(enc)));
}

/// One synchronous pass: (i) encoder from the current marginal and decoder,
/// (ii) marginal, (iii) decoder.
inline IBSolution ib_iterate(const IBProblem& problem, const IBSolution& state) {
  const std::size_t nx = problem.nx(), ny = problem.ny(), nt = problem.cardinality_t;
  if (state.encoder.rows() != nx || state.encoder.cols() != nt || state.decoder.rows() != nt ||
      state.decoder.cols() != ny || state.marginal_t.size() != nt)
    throw DimensionMismatch("ib_iterate: state dimensions do not match problem");
  const auto cache = ib_detail::make_cache(problem);
  const double beta = state.beta;
  std::vector<double> logw(nx * nt);
  for (std::size_t t = 0; t < nt; ++t) {
    const double lpt = state.marginal_t[t] > 0.0 ? std::log(state.marginal_t[t]) : ib_detail::kNegInf;
    for (std::size_t x = 0; x < nx; ++x) {
      double v = lpt;
      if (std::isfinite(v) && beta != 0.0) v -= beta * ib_detail::kl_row_nats(cache, ny, x, state.decoder.row(t));
      logw[x * nt + t] = std::isnan(v) ? ib_detail::kNegInf : v;
    }
  }
  auto enc = ib_detail::normalize_log_rows(std::move(logw), nx, nt);
  auto d = ib_detail::derive(problem, cache, enc);
  return ib_detail::assemble(problem, beta, std::move(enc), std::move(d), state.iterations + 1, false);
}

namespace ib_detail {

inline IBSolution run_from(const IBProblem& pr, IBSolution s, const IBOptions& opt) {
  s.iterations = 0;
  double prev = s.functional;
  for (int it = 0; it < opt.max_iter; ++it) {
    s = ib_iterate(pr, s);
    if (std::abs(prev - s.functional) < opt.tol) {
      s.converged = true;
      return s;
    }
    prev = s.functional;
  }
  s.converged = false;
  return s;
}

}  // namespace ib_detail

/// Iterates from a seeded random encoder until the functional changes by
/// less than `tol` or `max_iter` passes; `converged` reports which.
inline IBSolution solve_ib(const IBProblem& problem, double beta, std::uint64_t init_seed, double tol = 1e-10,
                           int max_iter = 5000) {
  if (!(beta >= 0.0)) throw InvalidArgument("solve_ib: beta must be non-negative");
  IBOptions opt;
  opt.tol = tol;
  opt.max_iter = max_iter;
  return ib_detail::run_from(problem, random_state(problem, beta, init_seed), opt);
}

/// Continues iteration from an existing encoder at a new beta.
inline IBSolution solve_ib_from(const IBProblem& problem, double beta, const ConditionalDistribution& encoder,
                                const IBOptions& opt = {}) {
  return ib_detail::run_from(problem, make_consistent_state(problem, beta, encoder), opt);
}

inline bool better_solution(const IBSolution& a, const IBSolution& b) { return a.functional < b.functional - 1e-13; }

/// Best functional over `restarts` seeded random starts.
inline IBSolution solve_ib_best(const IBProblem& problem, double beta, int restarts, const IBOptions& opt = {}) {
  if (restarts < 1) throw InvalidArgument("solve_ib_best: need at least one restart");
  std::optional<IBSolution> best;
  for (int r = 0; r < restarts; ++r) {
    auto s = solve_ib(problem, beta, opt.seed * 1000003ULL + static_cast<std::uint64_t>(r), opt.tol, opt.max_iter);
    if (!best || better_solution(s, *best)) best = std::move(s);
  }
  return *best;
}

/// Number of distinct clusters: occupied t values, merging those whose
/// decoders agree within `tol` in L1.
inline std::size_t effective_cardinality(const IBSolution& s, double mass_tol = 1e-8, double tol = 1e-4) {
  std::vector<std::size_t> reps;
  for (std::size_t t = 0; t < s.marginal_t.size(); ++t) {
    if (s.marginal_t[t] <= mass_tol) continue;
    bool merged = false;
    for (std::size_t r : reps) {
      double l1 = 0.0;
      for (std::size_t y = 0; y < s.decoder.cols(); ++y) l1 += std::abs(s.decoder(t, y) - s.decoder(r, y));
      if (l1 < tol) {
        merged = true;
        break;
      }
    }
    if (!merged) reps.push_back(t);
  }
  return reps.size();
}

/// Sweeps the information curve. Each beta first gets `restarts` independent
/// random solves (these may run concurrently); then warm-start continuation
/// passes run sequentially upward and downward through the grid, and the
/// best functional per beta is kept. The result does not depend on the
/// thread count.
inline InfoCurve sweep_info_curve(const IBProblem& problem, std::span<const double> betas, int restarts,
                                  const IBOptions& opt = {}) {
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] >= 0.0)) throw InvalidArgument("sweep_info_curve: betas must be non-negative");
    if (i > 0 && betas[i] <= betas[i - 1]) throw InvalidArgument("sweep_info_curve: betas must be ascending");
  }
  const std::size_t n = betas.size();
  std::vector<std::optional<IBSolution>> best(n);
  if (restarts > 0) {
    parallel_for(n, opt.threads, [&](std::size_t i) {
      IBOptions o = opt;
      o.seed = opt.seed + 7919ULL * i;
      best[i] = solve_ib_best(problem, betas[i], restarts, o);
    });
  }
  auto consider = [&](std::size_t i, IBSolution s) {
    if (!best[i] || better_solution(s, *best[i])) best[i] = std::move(s);
  };
  // Upward continuation from the trivial solution side.
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0) {
      if (!best[0]) consider(0, solve_ib(problem, betas[0], opt.seed, opt.tol, opt.max_iter));
      continue;
    }
    consider(i, solve_ib_from(problem, betas[i], best[i - 1]->encoder, opt));
  }
  // Downward continuation from the most informative end.
  for (std::size_t i = n; i-- > 1;) consider(i - 1, solve_ib_from(problem, betas[i - 1], best[i]->encoder, opt));
  // Cross-beta exchange: any encoder found anywhere is a candidate at every
  // beta. Adopted encoders are re-solved at their new beta, and a final
  // exchange without re-solving leaves each point the best candidate for its
  // own beta.
  auto exchange = [&](bool refine) {
    bool changed = false;
    std::vector<std::optional<IBSolution>> next(best.begin(), best.end());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const auto& c = *best[j];
        const double f = c.i_x - betas[i] * c.i_y;
        if (f < next[i]->functional - 1e-13) {
          IBSolution s = c;
          s.beta = betas[i];
          s.functional = f;
          s.converged = false;
          next[i] = std::move(s);
          changed = true;
        }
      }
    for (std::size_t i = 0; i < n; ++i) {
      if (refine && next[i]->beta == betas[i] && !next[i]->converged) {
        auto r = solve_ib_from(problem, betas[i], next[i]->encoder, opt);
        if (!better_solution(*next[i], r)) next[i] = std::move(r);
      }
      best[i] = std::move(next[i]);
    }
    return changed;
  };
  for (int round = 0; round < 4 && exchange(true); ++round) {
  }
  exchange(false);

  InfoCurve curve;
  curve.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = *best[i];
    curve.points.push_back({betas[i], s.i_x, s.i_y, s.converged, effective_cardinality(s)});
  }
  return curve;
}

/// Largest violation of concavity: over consecutive triples with strictly
/// increasing I_X, how far the middle point falls below the chord.
inline double concavity_violation(const InfoCurve& c) {
  double worst = 0.0;
  const auto& p = c.points;
  for (std::size_t i = 1; i + 1 < p.size(); ++i) {
    const double x0 = p[i - 1].i_x, x1 = p[i].i_x, x2 = p[i + 1].i_x;
    if (!(x0 < x1 && x1 < x2)) continue;
    const double chord = p[i - 1].i_y + (p[i + 1].i_y - p[i - 1].i_y) * (x1 - x0) / (x2 - x0);
    worst = std::max(worst, chord - p[i].i_y);
  }
  return worst;
}

/// Largest decrease of I_X or I_Y between consecutive points.
inline double monotonicity_violation(const InfoCurve& c) {
  double worst = 0.0;
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    worst = std::max(worst, c.points[i - 1].i_x - c.points[i].i_x);
    worst = std::max(worst, c.points[i - 1].i_y - c.points[i].i_y);
  }
  return worst;
}

/// Upper envelope of the swept points evaluated at I_X = ix: the largest
/// I_Y reachable by interpolating between two points, flat beyond the most
/// informative point.
inline double info_curve_at(const InfoCurve& c, double ix) {
  if (c.points.empty()) throw InvalidArgument("info_curve_at: empty curve");
  double best = 0.0;
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    const auto& a = c.points[i];
    if (a.i_x <= ix) best = std::max(best, a.i_y);
    for (std::size_t j = 0; j < c.points.size(); ++j) {
      const auto& b = c.points[j];
      if (a.i_x < ix && ix < b.i_x) best = std::max(best, a.i_y + (b.i_y - a.i_y) * (ix - a.i_x) / (b.i_x - a.i_x));
    }
  }
  return best;
}

struct SlopeCheck {
  double beta = 0.0;
  double slope = 0.0;     // central finite difference dI_Y / dI_X
  double expected = 0.0;  // 1 / beta
  double relative_error() const { return std::abs(slope - expected) / expected; }
};

/// Central-difference slopes at interior points whose neighbours both differ
/// in I_X by at least `min_dx` bits.
inline std::vector<SlopeCheck> interior_slopes(const InfoCurve& c, double min_dx = 1e-3) {
  std::vector<SlopeCheck> out;
  const auto& p = c.points;
  for (std::size_t i = 1; i + 1 < p.size(); ++i) {
    const double dx_lo = p[i].i_x - p[i - 1].i_x;
    const double dx_hi = p[i + 1].i_x - p[i].i_x;
    if (dx_lo < min_dx || dx_hi < min_dx || p[i].beta <= 0.0) continue;
    const double slope = (p[i + 1].i_y - p[i - 1].i_y) / (p[i + 1].i_x - p[i - 1].i_x);
    out.push_back({p[i].beta, slope, 1.0 / p[i].beta});
  }
  return out;
}

struct BetaStarFit {
  double beta_star = 0.0;
  double kl_at_star = 0.0;          // E_x KL[layer || IB], bits
  std::vector<double> kl_per_beta;  // aligned with the grid; +inf allowed
};

/// IB-optimal encoder built from a fixed decoder (the encoder update of the
/// self-consistent set), using the marginal p(t) induced by `layer_encoder`.
inline std::vector<double> ib_encoder_log_from_decoder(const IBProblem& problem,
                                                       const ConditionalDistribution& layer_encoder,
                                                       const ConditionalDistribution& layer_decoder, double beta) {
  const std::size_t nx = problem.nx(), ny = problem.ny(), nt = layer_encoder.cols();
  const auto cache = ib_detail::make_cache(problem);
  std::vector<double> pt(nt, 0.0);
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t t = 0; t < nt; ++t) pt[t] += cache.px[x] * layer_encoder(x, t);
  std::vector<double> logw(nx * nt);
  for (std::size_t x = 0; x < nx; ++x) {
    double mx = ib_detail::kNegInf;
    for (std::size_t t = 0; t < nt; ++t) {
      double v = pt[t] > 0.0 ? std::log(pt[t]) : ib_detail::kNegInf;
      if (std::isfinite(v) && beta != 0.0) v -= beta * ib_detail::kl_row_nats(cache, ny, x, layer_decoder.row(t));
      if (std::isnan(v)) v = ib_detail::kNegInf;
      logw[x * nt + t] = v;
      mx = std::max(mx, v);
    }
    if (!std::isfinite(mx)) throw NumericalError("ib encoder: every weight in a row underflowed");
    double z = 0.0;
    for (std::size_t t = 0; t < nt; ++t) z += std::exp(logw[x * nt + t] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t t = 0; t < nt; ++t) logw[x * nt + t] -= lz;
  }
  return logw;
}

/// beta* = argmin over the grid of E_x KL[layer(.|x) || IB_beta(.|x)].
/// Ties go to the smaller beta.
inline BetaStarFit fit_beta_star(const ConditionalDistribution& layer_encoder,
                                 const ConditionalDistribution& layer_decoder, const IBProblem& problem,
                                 std::span<const double> beta_grid) {
  if (beta_grid.empty()) throw InvalidArgument("fit_beta_star: empty beta grid");
  if (layer_encoder.rows() != problem.nx() || layer_decoder.rows() != layer_encoder.cols() ||
      layer_decoder.cols() != problem.ny())
    throw DimensionMismatch("fit_beta_star: encoder/decoder shapes do not match the problem");
  const std::size_t nx = problem.nx(), nt = layer_encoder.cols();
  const auto px = problem.joint.row_sums();
  std::vector<double> grid(beta_grid.begin(), beta_grid.end());
  std::sort(grid.begin(), grid.end());
  BetaStarFit fit;
  fit.kl_at_star = std::numeric_limits<double>::infinity();
  fit.beta_star = grid.front();
  for (double beta : grid) {
    const auto logq = ib_encoder_log_from_decoder(problem, layer_encoder, layer_decoder, beta);
    double kl = 0.0;
    for (std::size_t x = 0; x < nx && std::isfinite(kl); ++x) {
      for (std::size_t t = 0; t < nt; ++t) {
        const double p = layer_encoder(x, t);
        if (p <= 0.0) continue;
        if (!std::isfinite(logq[x * nt + t])) {
          kl = std::numeric_limits<double>::infinity();
          break;
        }
        kl += px[x] * p * (std::log(p) - logq[x * nt + t]);
      }
    }
    kl = std::isfinite(kl) ? std::max(0.0, kl / std::log(2.0)) : kl;
    fit.kl_per_beta.push_back(kl);
    if (kl < fit.kl_at_star - 1e-12) {
      fit.kl_at_star = kl;
      fit.beta_star = beta;
    }
  }
  return fit;
}

}  // namespace ibdyn
