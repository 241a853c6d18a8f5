#pragma once
// Shared fixtures for unit and acceptance tests.

#include <cstdint>
#include <random>
#include <vector>

#include "ibdyn/datagen.hpp"
#include "ibdyn/net.hpp"
#include "ibdyn/prob.hpp"

namespace ibdyn::fixtures {

inline std::vector<double> random_simplex(std::size_t n, std::mt19937_64& rng, double alpha = 1.0) {
  std::gamma_distribution<double> g(alpha, 1.0);
  std::vector<double> p(n);
  double z = 0.0;
  for (double& v : p) z += (v = g(rng) + 1e-12);
  for (double& v : p) v /= z;
  return p;
}

inline JointDistribution random_joint(std::size_t nx, std::size_t ny, std::mt19937_64& rng, double alpha = 1.0) {
  return JointDistribution(nx, ny, random_simplex(nx * ny, rng, alpha));
}

}  // namespace ibdyn::fixtures
