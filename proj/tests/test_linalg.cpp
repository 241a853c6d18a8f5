#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ibdyn/linalg.hpp"

using namespace ibdyn;

namespace {

Matrix random_spd(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix g(n, n);
  for (auto& v : g.data()) v = n01(rng);
  return g * g.transpose() + Matrix::identity(n) * 0.5;
}

}  // namespace

TEST(Matrix, ProductAndTranspose) {
  Matrix a(2, 3), b(3, 2);
  for (std::size_t i = 0; i < 6; ++i) {
    a.data()[i] = static_cast<double>(i + 1);
    b.data()[i] = static_cast<double>(6 - i);
  }
  const Matrix c = a * b;  // [[1 2 3],[4 5 6]] x [[6 5],[4 3],[2 1]]
  EXPECT_EQ(c.data(), (std::vector<double>{20, 14, 56, 41}));
  EXPECT_EQ(a.transpose().transpose(), a);
  EXPECT_DOUBLE_EQ(c.trace(), 61.0);
}

TEST(Eigen, KnownTwoByTwo) {
  Matrix m(2, 2);
  m(0, 0) = 2;
  m(0, 1) = m(1, 0) = 1;
  m(1, 1) = 2;
  const auto e = jacobi_eigen(m);
  EXPECT_NEAR(e.values[0], 1.0, 1e-14);
  EXPECT_NEAR(e.values[1], 3.0, 1e-14);
  EXPECT_NEAR(std::abs(e.vectors(0, 1)), std::sqrt(0.5), 1e-14);
}

TEST(Eigen, ReconstructsRandomSymmetric) {
  const Matrix m = random_spd(12, 4);
  const auto e = jacobi_eigen(m);
  EXPECT_TRUE(std::is_sorted(e.values.begin(), e.values.end()));
  const Matrix back = spectral_apply(e, [](double l) { return l; });
  EXPECT_LT((back - m).frobenius(), 1e-11 * m.frobenius());
  const Matrix qtq = e.vectors.transpose() * e.vectors;
  EXPECT_LT((qtq - Matrix::identity(12)).frobenius(), 1e-12);
}

TEST(Spd, CholeskySolveLogDet) {
  const Matrix m = random_spd(8, 7);
  const Matrix l = cholesky(m);
  EXPECT_LT((l * l.transpose() - m).frobenius(), 1e-12 * m.frobenius());
  double ld = 0.0;
  for (double v : jacobi_eigen(m).values) ld += std::log(v);
  EXPECT_NEAR(log_det_spd(m), ld, 1e-11);
  EXPECT_LT((m * inverse_spd(m) - Matrix::identity(8)).frobenius(), 1e-10);
  Matrix bad = Matrix::identity(3);
  bad(2, 2) = -1.0;
  EXPECT_THROW(cholesky(bad), NumericalError);
}

TEST(Orthonormalize, ColumnsAreOrthonormal) {
  const Matrix q = orthonormalize(random_spd(6, 2));
  EXPECT_LT((q.transpose() * q - Matrix::identity(6)).frobenius(), 1e-12);
}
