#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "ibdyn/ntk.hpp"

using namespace ibdyn;

namespace {

Matrix random_points(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix m(n, d);
  for (auto& v : m.data()) v = n01(rng);
  return m;
}

Matrix stack(const Matrix& a, const Matrix& b) {
  Matrix m(a.rows() + b.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m(i, j) = a(i, j);
  for (std::size_t i = 0; i < b.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) m(a.rows() + i, j) = b(i, j);
  return m;
}

}  // namespace

TEST(Kernels, ReluDepthOneByHand) {
  Matrix x(1, 2);
  x(0, 0) = x(0, 1) = 1.0;
  ArchSpec a;
  a.depth = 1;
  const auto kp = compute_kernels(a, x);
  // K0 = 2.1; K1 = 0.1 + 2 * 2.1 / 2; Theta1 = K1 + 2 * 1/2 * K0.
  EXPECT_NEAR(kp.nngp(0, 0), 2.2, 1e-14);
  EXPECT_NEAR(kp.ntk(0, 0), 4.3, 1e-14);
}

TEST(Kernels, ErfAtOrigin) {
  Matrix x(1, 3);
  ArchSpec a;
  a.depth = 1;
  a.activation = KernelActivation::Erf;
  const auto kp = compute_kernels(a, x);
  EXPECT_NEAR(kp.nngp(0, 0), 0.31320151615245473, 1e-14);
  EXPECT_NEAR(kp.ntk(0, 0), 0.5284182798567592, 1e-14);
}

TEST(Kernels, SymmetricAndPsd) {
  for (auto act : {KernelActivation::Relu, KernelActivation::Erf}) {
    ArchSpec a;
    a.depth = 3;
    a.activation = act;
    const auto kp = compute_kernels(a, random_points(15, 5, 2));
    EXPECT_EQ(kp.nngp, kp.nngp.transpose());
    EXPECT_EQ(kp.ntk, kp.ntk.transpose());
    EXPECT_GT(jacobi_eigen(kp.ntk).values.front(), -1e-10);
    EXPECT_GT(jacobi_eigen(kp.nngp).values.front(), -1e-10);
  }
  ArchSpec bad;
  bad.depth = 0;
  EXPECT_THROW(compute_kernels(bad, random_points(2, 2, 1)), InvalidArgument);
  EXPECT_THROW(kernel_activation_from_string("tanh"), InvalidArgument);
}

TEST(Posterior, PriorAtZeroAndInterpolationAtInfinity) {
  const Matrix x = random_points(20, 4, 3), xe = random_points(5, 4, 4);
  const Matrix y = random_points(20, 2, 5);
  const auto kp = compute_kernels(ArchSpec{}, stack(x, xe));
  PosteriorModel m(kp, 20, y);
  const auto p0 = m.at(0.0);
  const auto prior = m.prior_variance();
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(p0.mu(i, 0), 0.0);
    EXPECT_EQ(p0.sigma_diag[i], prior[i]);
  }
  // tau = inf mean equals Theta_eX Theta_XX^{-1} Y from a direct solve.
  const auto pinf = m.at(std::numeric_limits<double>::infinity());
  const Matrix direct = block(kp.ntk, 20, 5, 0, 20) * solve_spd(block(kp.ntk, 0, 20, 0, 20), y);
  EXPECT_LT((pinf.mu - direct).frobenius(), 1e-8 * direct.frobenius());
  EXPECT_THROW(m.at(-1.0), InvalidArgument);
  EXPECT_THROW(PosteriorModel(kp, 20, Matrix(19, 1)), DimensionMismatch);
}

TEST(Posterior, FullCovarianceMatchesDiagonal) {
  const auto kp = compute_kernels(ArchSpec{}, random_points(12, 3, 6));
  PosteriorModel m(kp, 8, random_points(8, 1, 7));
  const auto p = m.at(0.7, true);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p.sigma(i, i), p.sigma_diag[i], 1e-12);
}

TEST(Gaussian, ScalarClosedForms) {
  Matrix s(1, 1);
  s(0, 0) = 0.5;
  const std::vector<double> mu{0.2}, y{1.2};
  // E log N(y; z, 1) = -1/2 (r^2 + v) - 1/2 log 2 pi.
  EXPECT_NEAR(gibbs_log_likelihood(mu, s, y), -0.5 * 1.5 - 0.5 * std::log(2 * M_PI), 1e-15);
  EXPECT_NEAR(bayes_log_likelihood(mu, s, y), -0.5 / 1.5 - 0.5 * std::log(2 * M_PI * 1.5), 1e-15);
  EXPECT_NEAR(waic_gaussian(mu, s, y), bayes_log_likelihood(mu, s, y) - gibbs_log_likelihood(mu, s, y), 1e-14);
  Matrix s0(1, 1);
  s0(0, 0) = 3.0;
  Matrix s1(1, 1);
  s1(0, 0) = 2.0;
  const std::vector<double> m1{1.0}, m0{0.0};
  EXPECT_NEAR(gaussian_kl(m1, s1, m0, s0), 0.2027325540540822, 1e-14);
}

TEST(Gaussian, EnsembleAveragesMatchPerPointForms) {
  EnsemblePosterior p;
  p.mu = Matrix(2, 1);
  p.mu(0, 0) = 0.2;
  p.mu(1, 0) = -1.0;
  p.sigma_diag = {0.5, 0.1};
  Matrix y(2, 1);
  y(0, 0) = 1.2;
  y(1, 0) = 0.0;
  double g = 0.0, w = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    Matrix s(1, 1);
    s(0, 0) = p.sigma_diag[i];
    const std::vector<double> mu{p.mu(i, 0)}, yy{y(i, 0)};
    g += gibbs_log_likelihood(mu, s, yy) / 2.0;
    w += waic_gaussian(mu, s, yy) / 2.0;
  }
  EXPECT_NEAR(expected_log_loss(p, y), g, 1e-15);
  EXPECT_NEAR(waic(p, y), w, 1e-15);
  EXPECT_NEAR(izy_lower_bound(p, y, 2.0), 2.0 + g / std::log(2.0), 1e-14);
  EXPECT_THROW(expected_log_loss(p, Matrix(3, 1)), DimensionMismatch);
}

TEST(Izx, SeparatedAndCollapsedBatches) {
  Matrix far(8, 1), same(8, 1);
  for (std::size_t i = 0; i < 8; ++i) far(i, 0) = 100.0 * static_cast<double>(i);
  const std::vector<double> v(8, 1.0);
  const auto a = izx_minibatch_bounds(far, v, 4, 1);
  EXPECT_NEAR(a.lower_nats, std::log(8.0), 1e-9);
  EXPECT_GE(a.upper_nats, a.lower_nats);
  const auto b = izx_minibatch_bounds(same, v, 4, 1);
  EXPECT_NEAR(b.lower_nats, 0.0, 1e-12);
  EXPECT_NEAR(b.upper_nats, 0.0, 1e-12);
  EXPECT_NEAR(a.lower_bits, a.lower_nats / std::log(2.0), 1e-15);
  EXPECT_THROW(izx_minibatch_bounds(far, std::vector<double>(8, 0.0), 1, 1), NumericalError);
  EXPECT_THROW(izx_minibatch_bounds(Matrix(1, 1), std::vector<double>(1, 1.0), 1, 1), InvalidArgument);
}

TEST(Izd, ZeroAtPrior) {
  const auto kp = compute_kernels(ArchSpec{}, random_points(10, 3, 8));
  PosteriorModel m(kp, 6, random_points(6, 1, 9));
  EXPECT_NEAR(izd_upper_bound(m.at(0.0), m.prior_variance()), 0.0, 1e-15);
  EXPECT_GT(izd_upper_bound(m.at(10.0), m.prior_variance()), 0.0);
}

TEST(PathBounds, MonotoneWithKnownLimits) {
  const auto kp = compute_kernels(ArchSpec{}, random_points(10, 3, 10));
  PosteriorModel m(kp, 10 - 2, random_points(8, 1, 11));
  EXPECT_NEAR(itheta_d_bound(m, 0.0), 0.0, 1e-15);
  EXPECT_NEAR(path_length_bound(m, 0.0), 0.0, 1e-15);
  double prev = 0.0;
  for (double tau : geometric_tau_grid(1e-3, 1e3, 3)) {
    const double v = itheta_d_bound(m, tau);
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_TRUE(std::isfinite(path_length_bound(m, std::numeric_limits<double>::infinity())));
  EXPECT_THROW(itheta_d_bound(m, std::numeric_limits<double>::infinity()), InvalidArgument);
}

TEST(Grid, GeometricTau) {
  const auto g = geometric_tau_grid(1e-2, 1e10, 4);
  EXPECT_EQ(g.size(), 49u);
  EXPECT_DOUBLE_EQ(g.front(), 1e-2);
  EXPECT_NEAR(g.back(), 1e10, 1e-3);
}

TEST(Reference, ScalarCurveAndDiscretization) {
  EXPECT_DOUBLE_EQ(gaussian_ib_curve_scalar(0.9, 0.0), 0.0);
  EXPECT_NEAR(gaussian_ib_curve_scalar(0.9, 50.0), -0.5 * std::log2(0.1), 1e-12);
  const auto t = generate_joint_gaussian(30, 1, 1, 1.0, 1.0, {3.0});
  const auto j = discretized_gaussian_joint(t, 24);
  const double mi = mutual_information(j);
  EXPECT_LT(mi, analytic_mi_gaussian(t));
  EXPECT_GT(mi, analytic_mi_gaussian(t) - 0.25);
  EXPECT_THROW(discretized_gaussian_joint(generate_joint_gaussian(3, 2, 1, 1.0, 1.0, {1.0, 1.0})), InvalidArgument);
}

TEST(LabelEntropy, Empirical) {
  EXPECT_DOUBLE_EQ(empirical_label_entropy_bits(std::vector<int>{0, 1, 1, 0}), 1.0);
  EXPECT_THROW(empirical_label_entropy_bits(std::vector<int>{}), InvalidArgument);
}

TEST(Persistence, KernelRoundTrip) {
  ArchSpec a;
  a.activation = KernelActivation::Erf;
  a.depth = 3;
  const auto kp = compute_kernels(a, random_points(6, 2, 12));
  const auto path = (std::filesystem::temp_directory_path() / "ibdyn_kernels_test.bin").string();
  write_kernels_bin(kp, a, path);
  const auto [back, arch] = read_kernels_bin(path);
  EXPECT_EQ(back.ntk, kp.ntk);
  EXPECT_EQ(back.nngp, kp.nngp);
  EXPECT_EQ(arch.depth, 3);
  EXPECT_EQ(arch.activation, KernelActivation::Erf);
  std::filesystem::remove(path);
  EXPECT_THROW(read_kernels_bin(path), IoError);
}
