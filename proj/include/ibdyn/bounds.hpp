#pragma once
// Generalization-gap bound from input compression: the squared gap scales
// with 2^{I(X;T)} / m, so each bit of compression is worth doubling the
// training set.

#include <cmath>

#include "ibdyn/error.hpp"

namespace ibdyn {

struct CompressionBoundInput {
  double i_xt = 0.0;   // bits
  double m = 1.0;      // training examples
  double delta = 0.05; // confidence

  void validate() const {
    if (!(i_xt >= 0.0) || !std::isfinite(i_xt)) throw InvalidArgument("compression bound: I(X;T) must be finite and >= 0");
    if (!(m >= 1.0)) throw InvalidArgument("compression bound: m must be >= 1");
    // delta = 1 is accepted as the degenerate boundary case.
    if (!(delta > 0.0 && delta <= 1.0)) throw InvalidArgument("compression bound: delta must be in (0, 1]");
  }
};

/// epsilon^2 <= (2^{I(X;T)} + log2(2/delta)) / (2m).
inline double input_compression_bound(const CompressionBoundInput& in) {
  in.validate();
  return (std::exp2(in.i_xt) + std::log2(2.0 / in.delta)) / (2.0 * in.m);
}

inline double input_compression_epsilon(const CompressionBoundInput& in) { return std::sqrt(input_compression_bound(in)); }

struct SampleEquivalence {
  double ratio = 1.0;             // bound(I - M, m) / bound(I, 2^M m)
  bool dominant_regime = true;    // 2^{I-M} >= factor * log2(2/delta)
  double compressed_bound = 0.0;  // bound(I - M, m)
  double enlarged_bound = 0.0;    // bound(I, 2^M m)
};

/// Compares M extra bits of compression against 2^M times more data. The
/// ratio tends to 1 once the exponential term dominates the confidence term.
inline SampleEquivalence sample_equivalence_check(double i_xt, double m, double extra_bits, double delta,
                                                  double dominance_factor = 100.0) {
  if (!(extra_bits >= 0.0)) throw InvalidArgument("sample_equivalence_check: M must be >= 0");
  if (extra_bits > i_xt) throw InvalidArgument("sample_equivalence_check: M cannot exceed I(X;T)");
  SampleEquivalence r;
  r.compressed_bound = input_compression_bound({i_xt - extra_bits, m, delta});
  r.enlarged_bound = input_compression_bound({i_xt, std::exp2(extra_bits) * m, delta});
  r.ratio = extra_bits == 0.0 ? 1.0 : r.compressed_bound / r.enlarged_bound;
  r.dominant_regime = std::exp2(i_xt - extra_bits) >= dominance_factor * std::log2(2.0 / delta);
  return r;
}

}  // namespace ibdyn
