#pragma once
// Benchmark worlds: a rotation/reflection-symmetric binary rule over the 12
// vertices of an icosahedron, and a jointly Gaussian regression task with a
// closed-form mutual information.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibdyn/error.hpp"
#include "ibdyn/linalg.hpp"
#include "ibdyn/prob.hpp"

namespace ibdyn {

using Permutation = std::vector<int>;

/// A finite permutation group on `degree` positions, stored as its full
/// element list (identity included).
struct PermutationGroup {
  int degree = 0;
  std::vector<Permutation> elements;

  static PermutationGroup trivial(int degree) {
    Permutation id(static_cast<std::size_t>(degree));
    for (int i = 0; i < degree; ++i) id[static_cast<std::size_t>(i)] = i;
    return {degree, {id}};
  }

  /// Closure of a generator set under composition.
  static PermutationGroup generated_by(int degree, const std::vector<Permutation>& gens) {
    for (const auto& g : gens) {
      if (static_cast<int>(g.size()) != degree) throw InvalidArgument("generator has the wrong degree");
      std::vector<int> sorted = g;
      std::sort(sorted.begin(), sorted.end());
      for (int i = 0; i < degree; ++i)
        if (sorted[static_cast<std::size_t>(i)] != i) throw InvalidArgument("generator is not a permutation");
    }
    auto group = trivial(degree);
    std::set<Permutation> seen(group.elements.begin(), group.elements.end());
    std::vector<Permutation> frontier = group.elements;
    while (!frontier.empty()) {
      std::vector<Permutation> next;
      for (const auto& a : frontier) {
        for (const auto& g : gens) {
          Permutation c(static_cast<std::size_t>(degree));
          for (int i = 0; i < degree; ++i) c[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(g[static_cast<std::size_t>(i)])];
          if (seen.insert(c).second) {
            next.push_back(c);
            group.elements.push_back(c);
          }
        }
      }
      frontier = std::move(next);
    }
    return group;
  }

  std::size_t order() const noexcept { return elements.size(); }
};

namespace datagen_detail {

inline std::array<std::array<double, 3>, 12> icosahedron_vertices() {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::array<std::array<double, 3>, 12> v{};
  std::size_t k = 0;
  for (double s1 : {1.0, -1.0})
    for (double s2 : {1.0, -1.0}) {
      v[k++] = {0.0, s1, s2 * phi};
      v[k++] = {s1, s2 * phi, 0.0};
      v[k++] = {s2 * phi, 0.0, s1};
    }
  return v;
}

inline Permutation vertex_permutation(const std::array<std::array<double, 3>, 12>& v,
                                      const std::array<std::array<double, 3>, 3>& r) {
  Permutation p(12);
  for (std::size_t i = 0; i < 12; ++i) {
    std::array<double, 3> w{};
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b) w[a] += r[a][b] * v[i][b];
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t j = 0; j < 12; ++j) {
      double d = 0.0;
      for (std::size_t a = 0; a < 3; ++a) d += (w[a] - v[j][a]) * (w[a] - v[j][a]);
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    if (bd > 1e-9) throw NumericalError("icosahedral symmetry does not map vertices onto vertices");
    p[i] = static_cast<int>(best);
  }
  return p;
}

inline std::array<std::array<double, 3>, 3> axis_rotation(std::array<double, 3> axis, double angle) {
  const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  for (double& a : axis) a /= n;
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  const double x = axis[0], y = axis[1], z = axis[2];
  return {{{t * x * x + c, t * x * y - s * z, t * x * z + s * y},
           {t * x * y + s * z, t * y * y + c, t * y * z - s * x},
           {t * x * z - s * y, t * y * z + s * x, t * z * z + c}}};
}

}  // namespace datagen_detail

/// The full symmetry group of the icosahedron (rotations and reflections,
/// 120 elements) acting on its 12 vertices.
inline PermutationGroup icosahedral_group() {
  using namespace datagen_detail;
  const auto v = icosahedron_vertices();
  const double a = 2.0 * M_PI / 5.0;
  const std::array<std::array<double, 3>, 3> inversion{{{-1, 0, 0}, {0, -1, 0}, {0, 0, -1}}};
  return PermutationGroup::generated_by(
      12, {vertex_permutation(v, axis_rotation(v[0], a)), vertex_permutation(v, axis_rotation(v[1], a)),
           vertex_permutation(v, inversion)});
}

/// Orbit-invariant geometric features of a vertex pattern: active vertices,
/// edges with both ends active, antipodal pairs both active, faces fully active.
inline std::array<double, 4> icosahedral_features(unsigned pattern) {
  static const auto geom = [] {
    const auto v = datagen_detail::icosahedron_vertices();
    std::vector<std::pair<int, int>> edges, antipodes;
    std::vector<std::array<int, 3>> faces;
    auto d2 = [&](int i, int j) {
      double s = 0.0;
      for (std::size_t a = 0; a < 3; ++a) s += (v[static_cast<std::size_t>(i)][a] - v[static_cast<std::size_t>(j)][a]) *
                                               (v[static_cast<std::size_t>(i)][a] - v[static_cast<std::size_t>(j)][a]);
      return s;
    };
    for (int i = 0; i < 12; ++i)
      for (int j = i + 1; j < 12; ++j) {
        if (std::abs(d2(i, j) - 4.0) < 1e-9) edges.emplace_back(i, j);
        if (d2(i, j) > 4.0 * (1.0 + 2.618034) - 1e-6) antipodes.emplace_back(i, j);
      }
    for (int i = 0; i < 12; ++i)
      for (int j = i + 1; j < 12; ++j)
        for (int k = j + 1; k < 12; ++k)
          if (std::abs(d2(i, j) - 4.0) < 1e-9 && std::abs(d2(j, k) - 4.0) < 1e-9 && std::abs(d2(i, k) - 4.0) < 1e-9)
            faces.push_back({i, j, k});
    return std::make_tuple(edges, antipodes, faces);
  }();
  const auto& [edges, antipodes, faces] = geom;
  auto on = [&](int i) { return (pattern >> i) & 1U; };
  std::array<double, 4> f{};
  for (int i = 0; i < 12; ++i) f[0] += on(i);
  for (auto [i, j] : edges) f[1] += on(i) & on(j);
  for (auto [i, j] : antipodes) f[2] += on(i) & on(j);
  for (const auto& t : faces) f[3] += on(t[0]) & on(t[1]) & on(t[2]);
  return f;
}

/// Dense labels of the distinct (active vertices, active edges, active
/// antipodal pairs) triples over all 4096 patterns. These degree <= 2
/// invariants split the patterns into 64 classes, coarser than the 82
/// orbits of the full symmetry group.
inline std::vector<int> invariant_class_ids() {
  std::map<std::array<double, 3>, int> ids;
  std::vector<int> out(1U << 12);
  for (unsigned x = 0; x < out.size(); ++x) {
    const auto f = icosahedral_features(x);
    auto [it, inserted] = ids.emplace(std::array<double, 3>{f[0], f[1], f[2]}, static_cast<int>(ids.size()));
    out[x] = it->second;
  }
  return out;
}

struct PatternSet {
  int n_bits = 12;
  std::vector<unsigned> patterns;  // bit i of patterns[x] is input position i
  std::vector<int> orbit_id;       // dense ids, in order of first appearance
  int n_orbits = 0;

  std::size_t size() const noexcept { return patterns.size(); }
  int bit(std::size_t x, int i) const noexcept { return static_cast<int>((patterns[x] >> i) & 1U); }
  std::vector<double> orbit_masses() const {
    std::vector<double> m(static_cast<std::size_t>(n_orbits), 0.0);
    for (int o : orbit_id) m[static_cast<std::size_t>(o)] += 1.0 / static_cast<double>(patterns.size());
    return m;
  }
};

/// All 2^degree patterns with their orbit labels under `group`.
inline PatternSet enumerate_orbits(const PermutationGroup& group) {
  if (group.degree < 1 || group.degree > 20) throw InvalidArgument("enumerate_orbits: degree must be in [1, 20]");
  PatternSet ps;
  ps.n_bits = group.degree;
  const unsigned n = 1U << group.degree;
  ps.patterns.resize(n);
  ps.orbit_id.assign(n, -1);
  std::map<unsigned, int> canonical_to_id;
  for (unsigned x = 0; x < n; ++x) {
    ps.patterns[x] = x;
    unsigned canon = x;
    for (const auto& g : group.elements) {
      unsigned img = 0;
      for (int i = 0; i < group.degree; ++i)
        if ((x >> i) & 1U) img |= 1U << g[static_cast<std::size_t>(i)];
      canon = std::min(canon, img);
    }
    auto [it, inserted] = canonical_to_id.emplace(canon, static_cast<int>(canonical_to_id.size()));
    ps.orbit_id[x] = it->second;
  }
  ps.n_orbits = static_cast<int>(canonical_to_id.size());
  return ps;
}

inline double sigmoid(double u) {
  return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
}

inline double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -(p * std::log2(p) + (1.0 - p) * std::log2(1.0 - p));
}

struct CalibrationTargets {
  double p1 = 0.5;   // p(y = 1)
  double mi = 0.99;  // I(X;Y), bits
};

struct Calibration {
  double theta = 0.0;
  double gain = 1.0;
  double p1 = 0.0;
  double mi = 0.0;
};

/// p(y=1) and I(X;Y) of the rule sigmoid(gain (s - theta)) with orbit
/// probabilities `masses`.
inline std::pair<double, double> rule_statistics(const std::vector<double>& scores, const std::vector<double>& masses,
                                                 double theta, double gain) {
  double p1 = 0.0, hcond = 0.0;
  for (std::size_t o = 0; o < scores.size(); ++o) {
    const double q = sigmoid(gain * (scores[o] - theta));
    p1 += masses[o] * q;
    hcond += masses[o] * binary_entropy(q);
  }
  return {p1, std::max(0.0, binary_entropy(p1) - hcond)};
}

/// Calibrates sigmoid(gain (s - theta)). With finitely many orbits p(y=1)
/// = 0.5 exactly forces a straddling orbit in the large-gain limit, so theta
/// is confined to the central half of the gap between consecutive distinct scores whose
/// deterministic split is closest to the target p(y=1). Inside that gap,
/// bisection on theta for p(y=1) alternates with a log-scale bisection on
/// the gain for I(X;Y). Throws when the result misses p(y=1) by more than
/// `p1_tol` or the gain interval does not bracket the target MI.
inline Calibration calibrate_threshold_and_gain(const std::vector<double>& scores, const std::vector<double>& masses,
                                                const CalibrationTargets& targets = {}, double gain_lo = 1e-3,
                                                double gain_hi = 1e5, double p1_tol = 0.01) {
  if (scores.size() != masses.size()) throw DimensionMismatch("calibrate: scores and masses differ in length");
  std::map<double, double> mass_at;
  for (std::size_t o = 0; o < scores.size(); ++o) mass_at[scores[o]] += masses[o];
  if (mass_at.size() < 2) throw CalibrationError("calibrate: need at least two distinct scores");

  // Gap g lies between the g-th and (g+1)-th distinct scores.
  std::vector<double> distinct;
  std::vector<double> above;  // mass strictly above each gap
  double total = 0.0;
  for (const auto& [s, m] : mass_at) total += m;
  double below = 0.0;
  for (const auto& [s, m] : mass_at) {
    distinct.push_back(s);
    below += m;
    above.push_back(total - below);
  }
  std::size_t gap = 0;
  for (std::size_t g = 0; g + 1 < distinct.size(); ++g)
    if (std::abs(above[g] - targets.p1) < std::abs(above[gap] - targets.p1)) gap = g;
  // Central half of the gap, so theta never sits on an orbit score.
  const double width = distinct[gap + 1] - distinct[gap];
  const double t_lo = distinct[gap] + 0.25 * width, t_hi = distinct[gap + 1] - 0.25 * width;

  auto theta_for = [&](double gain) {
    double lo = t_lo, hi = t_hi;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (rule_statistics(scores, masses, mid, gain).first > targets.p1) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
  };
  auto gain_for = [&](double theta) {
    auto mi = [&](double g) { return rule_statistics(scores, masses, theta, g).second; };
    if (mi(gain_lo) > targets.mi || mi(gain_hi) < targets.mi)
      throw CalibrationError("calibrate: gain search interval does not bracket the target I(X;Y)");
    double lo = std::log(gain_lo), hi = std::log(gain_hi);
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mi(std::exp(mid)) < targets.mi) lo = mid; else hi = mid;
    }
    return std::exp(0.5 * (lo + hi));
  };

  Calibration c;
  c.theta = 0.5 * (t_lo + t_hi);
  for (int round = 0; round < 8; ++round) {
    c.gain = gain_for(c.theta);
    c.theta = theta_for(c.gain);
  }
  c.gain = gain_for(c.theta);
  std::tie(c.p1, c.mi) = rule_statistics(scores, masses, c.theta, c.gain);
  if (std::abs(c.p1 - targets.p1) > p1_tol)
    throw CalibrationError("calibrate: no threshold gap reaches the target p(y=1)");
  return c;
}

struct RuleDistribution {
  std::vector<double> p_y1_given_x;  // per pattern
  std::vector<double> orbit_scores;  // per orbit
  double gain = 1.0;
  double threshold = 0.0;
  std::uint64_t seed = 0;

  /// p(x, y) over all patterns with uniform p(x); column 1 is y = 1.
  JointDistribution joint() const {
    const std::size_t n = p_y1_given_x.size();
    std::vector<double> t(2 * n);
    const double px = 1.0 / static_cast<double>(n);
    for (std::size_t x = 0; x < n; ++x) {
      t[2 * x] = px * (1.0 - p_y1_given_x[x]);
      t[2 * x + 1] = px * p_y1_given_x[x];
    }
    return JointDistribution(n, 2, std::move(t));
  }
};

struct SymmetricTask {
  PatternSet patterns;
  RuleDistribution rule;
};

/// Per-orbit scores: a seeded random combination of the standardized
/// rotation invariants of degree <= 2 in the +-1 encoding (active vertex
/// count, active edges, active antipodal pairs), plus an optional seeded
/// jitter that separates orbits sharing the same invariants. Groups other
/// than the icosahedral one use the active vertex count alone.
inline std::vector<double> orbit_scores(const PatternSet& ps, std::uint64_t seed, bool icosahedral_geometry,
                                        double jitter = 0.0) {
  const std::size_t nf = icosahedral_geometry ? 3 : 1;
  std::vector<std::vector<double>> feat(static_cast<std::size_t>(ps.n_orbits), std::vector<double>(nf, 0.0));
  std::vector<bool> done(static_cast<std::size_t>(ps.n_orbits), false);
  for (std::size_t x = 0; x < ps.size(); ++x) {
    const auto o = static_cast<std::size_t>(ps.orbit_id[x]);
    if (done[o]) continue;
    done[o] = true;
    if (icosahedral_geometry) {
      const auto f = icosahedral_features(ps.patterns[x]);
      feat[o].assign(f.begin(), f.begin() + 3);
    } else {
      feat[o][0] = static_cast<double>(std::popcount(ps.patterns[x]));
    }
  }
  // Standardize each feature over patterns (uniform p(x)).
  const auto masses = ps.orbit_masses();
  for (std::size_t k = 0; k < nf; ++k) {
    double m = 0.0, v = 0.0;
    for (std::size_t o = 0; o < feat.size(); ++o) m += masses[o] * feat[o][k];
    for (std::size_t o = 0; o < feat.size(); ++o) v += masses[o] * (feat[o][k] - m) * (feat[o][k] - m);
    const double sd = v > 0.0 ? std::sqrt(v) : 1.0;
    for (auto& f : feat) f[k] = (f[k] - m) / sd;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> coef(nf);
  for (auto& c : coef) c = n01(rng);
  std::vector<double> scores(feat.size());
  for (std::size_t o = 0; o < feat.size(); ++o) {
    double s = 0.0;
    for (std::size_t k = 0; k < nf; ++k) s += coef[k] * feat[o][k];
    scores[o] = s + jitter * n01(rng);
  }
  return scores;
}

/// Patterns, orbits and a calibrated orbit-constant rule for `group`.
/// Throws CalibrationError when the group has no symmetry to exploit (every
/// orbit a singleton) or the targets cannot be met.
inline SymmetricTask generate_symmetric_rule(std::uint64_t seed, const PermutationGroup& group,
                                             const CalibrationTargets& targets = {}) {
  SymmetricTask task;
  task.patterns = enumerate_orbits(group);
  const auto& ps = task.patterns;
  if (static_cast<std::size_t>(ps.n_orbits) == ps.size())
    throw CalibrationError("generate_symmetric_rule: group is trivial, every pattern is its own orbit");
  const bool ico = group.degree == 12 && group.order() == 120;
  auto scores = orbit_scores(ps, seed, ico);
  const auto cal = calibrate_threshold_and_gain(scores, ps.orbit_masses(), targets);
  auto& rule = task.rule;
  rule.seed = seed;
  rule.gain = cal.gain;
  rule.threshold = cal.theta;
  rule.orbit_scores = std::move(scores);
  rule.p_y1_given_x.resize(ps.size());
  for (std::size_t x = 0; x < ps.size(); ++x)
    rule.p_y1_given_x[x] = sigmoid(rule.gain * (rule.orbit_scores[static_cast<std::size_t>(ps.orbit_id[x])] - rule.threshold));
  return task;
}

inline SymmetricTask default_symmetric_task(std::uint64_t seed = 1) {
  return generate_symmetric_rule(seed, icosahedral_group());
}

/// CSV: bit columns b0..b{n-1}, orbit, p_y1.
inline void write_rule_csv(const SymmetricTask& task, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const auto& ps = task.patterns;
  for (int i = 0; i < ps.n_bits; ++i) out << 'b' << i << ',';
  out << "orbit,p_y1\n" << std::setprecision(17);
  for (std::size_t x = 0; x < ps.size(); ++x) {
    for (int i = 0; i < ps.n_bits; ++i) out << ps.bit(x, i) << ',';
    out << ps.orbit_id[x] << ',' << task.rule.p_y1_given_x[x] << '\n';
  }
}

/// Reads the CSV written by write_rule_csv. Scores, gain and threshold are
/// not part of the file and come back zeroed.
inline SymmetricTask read_rule_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty file");
  const auto n_cols = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
  const int n_bits = n_cols - 2;
  if (n_bits < 1) throw IoError(path + ": header has too few columns");
  SymmetricTask task;
  task.patterns.n_bits = n_bits;
  int max_orbit = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    unsigned pat = 0;
    for (int i = 0; i < n_bits; ++i) {
      if (!std::getline(ss, cell, ',')) throw IoError(path + ": short row");
      if (cell == "1") pat |= 1U << i;
      else if (cell != "0") throw IoError(path + ": bit cell is not 0/1");
    }
    std::getline(ss, cell, ',');
    const int orbit = std::stoi(cell);
    std::getline(ss, cell, ',');
    task.patterns.patterns.push_back(pat);
    task.patterns.orbit_id.push_back(orbit);
    task.rule.p_y1_given_x.push_back(std::stod(cell));
    max_orbit = std::max(max_orbit, orbit);
  }
  task.patterns.n_orbits = max_orbit + 1;
  return task;
}

// ---------------------------------------------------------------------------
// Jointly Gaussian regression task: x = sigma_x eps_x, y = sigma_y eps_y + A x.

struct JointGaussianTask {
  std::size_t dim_x = 30;
  std::size_t dim_y = 1;
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  std::vector<double> spectrum;  // singular values of A
  std::uint64_t seed = 0;
  Matrix mixing;  // A, dim_y x dim_x
  Matrix cov_x;   // dim_x x dim_x
  Matrix cov_y;   // dim_y x dim_y
  Matrix cov_xy;  // dim_x x dim_y

  /// Joint covariance of (x, y), (dim_x + dim_y) square.
  Matrix joint_covariance() const {
    const std::size_t n = dim_x + dim_y;
    Matrix c(n, n);
    for (std::size_t i = 0; i < dim_x; ++i)
      for (std::size_t j = 0; j < dim_x; ++j) c(i, j) = cov_x(i, j);
    for (std::size_t i = 0; i < dim_y; ++i)
      for (std::size_t j = 0; j < dim_y; ++j) c(dim_x + i, dim_x + j) = cov_y(i, j);
    for (std::size_t i = 0; i < dim_x; ++i)
      for (std::size_t j = 0; j < dim_y; ++j) c(i, dim_x + j) = c(dim_x + j, i) = cov_xy(i, j);
    return c;
  }
};

inline Matrix random_orthogonal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix g(n, n);
  for (double& v : g.data()) v = n01(rng);
  return orthonormalize(g);
}

inline JointGaussianTask generate_joint_gaussian(std::size_t dim_x, std::size_t dim_y, std::uint64_t seed,
                                                 double sigma_x, double sigma_y, std::vector<double> spectrum) {
  if (dim_x < 1 || dim_y < 1) throw InvalidArgument("generate_joint_gaussian: dimensions must be positive");
  if (!(sigma_x > 0.0) || !(sigma_y > 0.0)) throw InvalidArgument("generate_joint_gaussian: sigmas must be positive");
  if (spectrum.size() != std::min(dim_x, dim_y))
    throw InvalidArgument("generate_joint_gaussian: spectrum length must be min(dim_x, dim_y)");
  JointGaussianTask t;
  t.dim_x = dim_x;
  t.dim_y = dim_y;
  t.sigma_x = sigma_x;
  t.sigma_y = sigma_y;
  t.spectrum = std::move(spectrum);
  t.seed = seed;
  std::mt19937_64 rng(seed);
  const Matrix u = random_orthogonal(dim_y, rng);
  const Matrix v = random_orthogonal(dim_x, rng);
  t.mixing = Matrix(dim_y, dim_x);
  for (std::size_t i = 0; i < dim_y; ++i)
    for (std::size_t j = 0; j < dim_x; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < t.spectrum.size(); ++k) s += u(i, k) * t.spectrum[k] * v(j, k);
      t.mixing(i, j) = s;
    }
  t.cov_x = Matrix::identity(dim_x) * (sigma_x * sigma_x);
  t.cov_y = Matrix::identity(dim_y) * (sigma_y * sigma_y) + t.mixing * t.cov_x * t.mixing.transpose();
  t.cov_xy = t.cov_x * t.mixing.transpose();
  return t;
}

/// Draws i.i.d. (x, y) pairs from a task.
class GaussianSampler {
 public:
  GaussianSampler(const JointGaussianTask& task, std::uint64_t seed) : task_(&task), rng_(seed) {}

  /// Returns (X, Y) with one sample per row.
  std::pair<Matrix, Matrix> sample(std::size_t n) {
    const auto& t = *task_;
    Matrix x(n, t.dim_x), y(n, t.dim_y);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < t.dim_x; ++j) x(i, j) = t.sigma_x * n01_(rng_);
      for (std::size_t j = 0; j < t.dim_y; ++j) {
        double s = t.sigma_y * n01_(rng_);
        for (std::size_t k = 0; k < t.dim_x; ++k) s += t.mixing(j, k) * x(i, k);
        y(i, j) = s;
      }
    }
    return {std::move(x), std::move(y)};
  }

 private:
  const JointGaussianTask* task_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> n01_{0.0, 1.0};
};

/// I(X;Y) = 1/2 sum_i log2(1 + sigma_x^2 s_i^2 / sigma_y^2).
inline double analytic_mi_gaussian(const JointGaussianTask& t) {
  double mi = 0.0;
  for (double s : t.spectrum) mi += 0.5 * std::log2(1.0 + t.sigma_x * t.sigma_x * s * s / (t.sigma_y * t.sigma_y));
  return mi;
}

/// Differential entropy of y in bits.
inline double gaussian_label_entropy_bits(const JointGaussianTask& t) {
  const double n = static_cast<double>(t.dim_y);
  return 0.5 * n * std::log2(2.0 * M_PI * M_E) + 0.5 * log_det_spd(t.cov_y) / std::log(2.0);
}

struct GibSpectrum {
  std::vector<double> eigenvalues;  // ascending, clipped to [0, 1]
};

/// Eigenvalues of Sigma_{x|y} Sigma_xx^{-1} = I - Sigma_xy Sigma_yy^{-1}
/// Sigma_yx Sigma_xx^{-1}, computed through the similar symmetric matrix
/// I - C^{-1} Sigma_xy Sigma_yy^{-1} Sigma_yx C^{-T} with C C^T = Sigma_xx.
inline GibSpectrum gib_spectrum(const JointGaussianTask& t) {
  Matrix c;
  try {
    c = cholesky(t.cov_x);
  } catch (const NumericalError&) {
    throw NumericalError("gib_spectrum: cov_xx is singular");
  }
  const std::size_t n = t.dim_x;
  // B = C^{-1} Sigma_xy via forward substitution.
  Matrix b = t.cov_xy;
  for (std::size_t col = 0; col < b.cols(); ++col)
    for (std::size_t i = 0; i < n; ++i) {
      double s = b(i, col);
      for (std::size_t k = 0; k < i; ++k) s -= c(i, k) * b(k, col);
      b(i, col) = s / c(i, i);
    }
  const Matrix m = Matrix::identity(n) - b * solve_spd(t.cov_y, b.transpose());
  auto e = jacobi_eigen(symmetrized(m));
  GibSpectrum g;
  g.eigenvalues = e.values;
  for (double& v : g.eigenvalues) v = std::clamp(v, 0.0, 1.0);
  return g;
}

inline nlohmann::json to_json(const JointGaussianTask& t) {
  return {{"dim_x", t.dim_x}, {"dim_y", t.dim_y},       {"sigma_x", t.sigma_x},
          {"sigma_y", t.sigma_y}, {"spectrum", t.spectrum}, {"seed", t.seed}};
}

inline JointGaussianTask gaussian_task_from_json(const nlohmann::json& j) {
  return generate_joint_gaussian(j.at("dim_x").get<std::size_t>(), j.at("dim_y").get<std::size_t>(),
                                 j.at("seed").get<std::uint64_t>(), j.at("sigma_x").get<double>(),
                                 j.at("sigma_y").get<double>(), j.at("spectrum").get<std::vector<double>>());
}

}  // namespace ibdyn
