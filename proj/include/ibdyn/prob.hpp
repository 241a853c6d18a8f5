#pragma once
// Finite-alphabet probability objects and the information measures built on
// them. Every measure is in bits; 0 log 0 is taken as 0.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "ibdyn/error.hpp"

namespace ibdyn {

namespace prob_detail {

inline constexpr double kValidTol = 1e-12;
inline constexpr double kRenormTol = 1e-9;

// Validates a probability vector in place: rejects negatives beyond the
// validity tolerance and totals further than kRenormTol from one; totals
// between the two tolerances are renormalized.
inline void validate_and_normalize(std::vector<double>& p, const char* what) {
  if (p.empty()) throw InvalidDistribution(std::string(what) + ": empty distribution");
  double total = 0.0;
  for (double& v : p) {
    if (!std::isfinite(v)) throw InvalidDistribution(std::string(what) + ": non-finite entry");
    if (v < 0.0) {
      if (v < -kValidTol) throw InvalidDistribution(std::string(what) + ": negative entry");
      v = 0.0;
    }
    total += v;
  }
  const double dev = std::abs(total - 1.0);
  if (dev > kRenormTol) {
    throw InvalidDistribution(std::string(what) + ": entries sum to " + std::to_string(total));
  }
  if (dev > kValidTol) {
    for (double& v : p) v /= total;
  }
}

inline double plogp_ratio(double p, double q) {
  // p * log2(p / q) with 0 log 0 = 0; callers guarantee q > 0 when p > 0.
  return p > 0.0 ? p * std::log2(p / q) : 0.0;
}

}  // namespace prob_detail

class DiscreteDistribution {
 public:
  DiscreteDistribution() = default;
  explicit DiscreteDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
    prob_detail::validate_and_normalize(probs_, "DiscreteDistribution");
  }

  static DiscreteDistribution uniform(std::size_t n) {
    if (n == 0) throw InvalidDistribution("uniform: zero outcomes");
    return DiscreteDistribution(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }
  static DiscreteDistribution point_mass(std::size_t n, std::size_t at) {
    if (at >= n) throw InvalidArgument("point_mass: index out of range");
    std::vector<double> p(n, 0.0);
    p[at] = 1.0;
    return DiscreteDistribution(std::move(p));
  }

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const noexcept { return probs_[i]; }
  std::span<const double> probs() const noexcept { return probs_; }
  std::size_t support_size() const {
    return static_cast<std::size_t>(std::count_if(probs_.begin(), probs_.end(), [](double v) { return v > 0.0; }));
  }

  bool operator==(const DiscreteDistribution&) const = default;

 private:
  std::vector<double> probs_;
};

/// Row-stochastic matrix: row i is a distribution over the conditioned
/// variable's codomain.
class ConditionalDistribution {
 public:
  ConditionalDistribution() = default;
  ConditionalDistribution(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw DimensionMismatch("ConditionalDistribution: data size does not match shape");
    if (rows_ == 0 || cols_ == 0) throw InvalidDistribution("ConditionalDistribution: empty table");
    for (std::size_t r = 0; r < rows_; ++r) {
      std::vector<double> row(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_),
                              data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols_));
      prob_detail::validate_and_normalize(row, "ConditionalDistribution row");
      std::copy(row.begin(), row.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * cols_));
    }
  }

  static ConditionalDistribution from_rows(const std::vector<DiscreteDistribution>& rows) {
    if (rows.empty()) throw InvalidDistribution("ConditionalDistribution: no rows");
    const std::size_t cols = rows.front().size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw DimensionMismatch("ConditionalDistribution: ragged rows");
      data.insert(data.end(), r.probs().begin(), r.probs().end());
    }
    return ConditionalDistribution(rows.size(), cols, std::move(data));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }
  DiscreteDistribution row_distribution(std::size_t r) const {
    return DiscreteDistribution(std::vector<double>(row(r).begin(), row(r).end()));
  }
  const std::vector<double>& data() const noexcept { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// p(x, y) table indexed (x, y).
class JointDistribution {
 public:
  JointDistribution() = default;
  JointDistribution(std::size_t rows, std::size_t cols, std::vector<double> table)
      : rows_(rows), cols_(cols), table_(std::move(table)) {
    if (table_.size() != rows_ * cols_) throw DimensionMismatch("JointDistribution: table size does not match shape");
    prob_detail::validate_and_normalize(table_, "JointDistribution");
  }

  /// p(x, y) = p(x) p(y|x).
  static JointDistribution from_prior_and_channel(const DiscreteDistribution& px, const ConditionalDistribution& py_x) {
    if (px.size() != py_x.rows()) throw DimensionMismatch("from_prior_and_channel: prior/channel size mismatch");
    std::vector<double> t(py_x.rows() * py_x.cols());
    for (std::size_t x = 0; x < py_x.rows(); ++x)
      for (std::size_t y = 0; y < py_x.cols(); ++y) t[x * py_x.cols() + y] = px[x] * py_x(x, y);
    return JointDistribution(py_x.rows(), py_x.cols(), std::move(t));
  }

  static JointDistribution product(const DiscreteDistribution& px, const DiscreteDistribution& py) {
    std::vector<double> t(px.size() * py.size());
    for (std::size_t x = 0; x < px.size(); ++x)
      for (std::size_t y = 0; y < py.size(); ++y) t[x * py.size() + y] = px[x] * py[y];
    return JointDistribution(px.size(), py.size(), std::move(t));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double operator()(std::size_t x, std::size_t y) const noexcept { return table_[x * cols_ + y]; }
  const std::vector<double>& table() const noexcept { return table_; }

  std::vector<double> row_sums() const {
    std::vector<double> s(rows_, 0.0);
    for (std::size_t x = 0; x < rows_; ++x)
      for (std::size_t y = 0; y < cols_; ++y) s[x] += (*this)(x, y);
    return s;
  }
  std::vector<double> col_sums() const {
    std::vector<double> s(cols_, 0.0);
    for (std::size_t x = 0; x < rows_; ++x)
      for (std::size_t y = 0; y < cols_; ++y) s[y] += (*this)(x, y);
    return s;
  }
  DiscreteDistribution marginal_x() const { return DiscreteDistribution(row_sums()); }
  DiscreteDistribution marginal_y() const { return DiscreteDistribution(col_sums()); }

  /// p(y|x); rows with p(x)=0 are set to the y-marginal.
  ConditionalDistribution conditional_y_given_x() const {
    const auto px = row_sums();
    const auto py = col_sums();
    std::vector<double> c(rows_ * cols_);
    for (std::size_t x = 0; x < rows_; ++x)
      for (std::size_t y = 0; y < cols_; ++y) c[x * cols_ + y] = px[x] > 0.0 ? (*this)(x, y) / px[x] : py[y];
    return ConditionalDistribution(rows_, cols_, std::move(c));
  }

  JointDistribution transposed() const {
    std::vector<double> t(rows_ * cols_);
    for (std::size_t x = 0; x < rows_; ++x)
      for (std::size_t y = 0; y < cols_; ++y) t[y * rows_ + x] = (*this)(x, y);
    return JointDistribution(cols_, rows_, std::move(t));
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> table_;
};

inline double entropy(const DiscreteDistribution& p) {
  double h = 0.0;
  for (double v : p.probs())
    if (v > 0.0) h -= v * std::log2(v);
  return std::max(0.0, h);
}

/// D[p || q] in bits. Throws when q(i) = 0 < p(i) instead of returning +inf.
inline double kl_divergence(const DiscreteDistribution& p, const DiscreteDistribution& q) {
  if (p.size() != q.size()) throw DimensionMismatch("kl_divergence: support sizes differ");
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      if (q[i] <= 0.0) throw InvalidDistribution("kl_divergence: p is not absolutely continuous w.r.t. q");
      d += p[i] * std::log2(p[i] / q[i]);
    }
  }
  return std::max(0.0, d);
}

/// I(X;Y) = D[p(x,y) || p(x)p(y)].
inline double mutual_information(const JointDistribution& j) {
  const auto px = j.row_sums();
  const auto py = j.col_sums();
  double mi = 0.0;
  for (std::size_t x = 0; x < j.rows(); ++x)
    for (std::size_t y = 0; y < j.cols(); ++y) mi += prob_detail::plogp_ratio(j(x, y), px[x] * py[y]);
  return std::max(0.0, mi);
}

/// I(X;T) when T = t_of_x[x] is a deterministic function of X. Sums exactly
/// the nonzero terms that mutual_information would on the dense (x, t)
/// table, in the same order, so the two agree bit for bit.
inline double mutual_information_deterministic(std::span<const double> px, std::span<const std::size_t> t_of_x,
                                               std::size_t n_t) {
  if (px.size() != t_of_x.size()) throw DimensionMismatch("mutual_information_deterministic: size mismatch");
  std::vector<double> pt(n_t, 0.0);
  for (std::size_t x = 0; x < px.size(); ++x) {
    if (t_of_x[x] >= n_t) throw InvalidArgument("mutual_information_deterministic: label out of range");
    pt[t_of_x[x]] += px[x];
  }
  double mi = 0.0;
  for (std::size_t x = 0; x < px.size(); ++x) mi += prob_detail::plogp_ratio(px[x], px[x] * pt[t_of_x[x]]);
  return std::max(0.0, mi);
}

/// H(X|Y) = H(X,Y) - H(Y).
inline double conditional_entropy_x_given_y(const JointDistribution& j) {
  double hxy = 0.0;
  for (double v : j.table())
    if (v > 0.0) hxy -= v * std::log2(v);
  return std::max(0.0, hxy - entropy(j.marginal_y()));
}

inline double variation_distance(const DiscreteDistribution& p, const DiscreteDistribution& q) {
  if (p.size() != q.size()) throw DimensionMismatch("variation_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return s;
}

struct BayesInversion {
  ConditionalDistribution posterior;  // p(x|t), rows indexed by t
  DiscreteDistribution marginal;      // p(t)
  std::vector<bool> reachable;        // false where p(t) = 0; those rows hold the prior
};

/// Given p(x) and a channel p(t|x), returns p(x|t) and p(t).
inline BayesInversion bayes_invert(const DiscreteDistribution& prior, const ConditionalDistribution& channel) {
  if (prior.size() != channel.rows()) throw DimensionMismatch("bayes_invert: prior/channel size mismatch");
  const std::size_t nx = channel.rows();
  const std::size_t nt = channel.cols();
  std::vector<double> pt(nt, 0.0);
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t t = 0; t < nt; ++t) pt[t] += prior[x] * channel(x, t);
  std::vector<double> post(nt * nx);
  std::vector<bool> reachable(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    reachable[t] = pt[t] > 0.0;
    for (std::size_t x = 0; x < nx; ++x)
      post[t * nx + x] = reachable[t] ? prior[x] * channel(x, t) / pt[t] : prior[x];
  }
  return {ConditionalDistribution(nt, nx, std::move(post)), DiscreteDistribution(std::move(pt)), std::move(reachable)};
}

/// Joint of (X, Z) for the chain X -> Y -> Z given p(x, y) and p(z|y).
inline JointDistribution compose_channel(const JointDistribution& xy, const ConditionalDistribution& z_given_y) {
  if (xy.cols() != z_given_y.rows()) throw DimensionMismatch("compose_channel: dimension mismatch");
  std::vector<double> t(xy.rows() * z_given_y.cols(), 0.0);
  for (std::size_t x = 0; x < xy.rows(); ++x)
    for (std::size_t y = 0; y < xy.cols(); ++y)
      for (std::size_t z = 0; z < z_given_y.cols(); ++z) t[x * z_given_y.cols() + z] += xy(x, y) * z_given_y(y, z);
  return JointDistribution(xy.rows(), z_given_y.cols(), std::move(t));
}

// CSV layout: one line per x, one column per y, cells are probabilities.

inline void write_joint_csv(const JointDistribution& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << std::setprecision(17);
  for (std::size_t x = 0; x < j.rows(); ++x) {
    for (std::size_t y = 0; y < j.cols(); ++y) out << (y ? "," : "") << j(x, y);
    out << '\n';
  }
}

inline JointDistribution read_joint_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<double> table;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        table.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError(path + ": unparsable cell '" + cell + "'");
      }
      ++c;
    }
    if (rows == 0) cols = c;
    if (c != cols) throw IoError(path + ": ragged row " + std::to_string(rows));
    ++rows;
  }
  if (rows == 0) throw IoError(path + ": no data");
  return JointDistribution(rows, cols, std::move(table));
}

}  // namespace ibdyn
