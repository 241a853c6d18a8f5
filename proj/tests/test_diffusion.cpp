#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "ibdyn/diffusion.hpp"

using namespace ibdyn;

TEST(Hadamard, HandComputed) {
  const std::vector<double> a{4.0, 1.0}, lam{1.0, 0.0};
  EXPECT_NEAR(hadamard_bound_bits(a, lam, 1.0), 0.5 * (std::log2(3.0) + 1.0), 1e-15);
  EXPECT_TRUE(std::isinf(hadamard_bound_bits(a, lam, 0.0)));
  EXPECT_EQ(hadamard_bound_bits(std::vector<double>{0.0}, std::vector<double>{0.0}, 0.0), 0.0);
}

TEST(Channel, AlignedCaseIsTight) {
  Matrix ws(2, 2), dw(2, 2);
  ws(0, 0) = 2.0;
  ws(1, 1) = 1.0;
  dw(0, 0) = 1.0;
  dw(1, 1) = 0.5;
  const auto b = gaussian_channel_bound(ws, dw, 0.1);
  EXPECT_NEAR(b.bound_bits, 2.0802631517200316, 1e-13);
  EXPECT_NEAR(b.exact_bits, 2.0802631517200316, 1e-13);
  EXPECT_THROW(gaussian_channel_bound(ws, Matrix(2, 3), 0.1), DimensionMismatch);
  EXPECT_THROW(gaussian_channel_bound(ws, dw, 0.0), InvalidArgument);
}

TEST(Channel, BoundDominatesExact) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t d = 1 + rng() % 6, in = 1 + rng() % 8;
    Matrix ws(d, in), dw(d, in);
    for (auto& v : ws.data()) v = n01(rng);
    for (auto& v : dw.data()) v = 0.5 * n01(rng);
    const auto b = gaussian_channel_bound(ws, dw, 0.05);
    EXPECT_GE(b.bound_bits, b.exact_bits - 1e-10);
  }
}

TEST(Scaling, CompressionTimes) {
  EXPECT_DOUBLE_EQ(compression_time(2.0, 0.5, 0.5), 16.0);
  EXPECT_NEAR(split_compression_time(2.0, 0.5, 0.5, 3), 16.0 / 3.0, 1e-13);
  // With alpha = 1 splitting gains nothing.
  EXPECT_NEAR(split_compression_time(2.0, 0.5, 1.0, 4), compression_time(2.0, 0.5, 1.0), 1e-13);
  EXPECT_THROW(compression_time(1.0, 1.0, 1.5), InvalidArgument);
  EXPECT_THROW(split_compression_time(1.0, 1.0, 0.5, 0), InvalidArgument);
}

TEST(Scaling, LayerBoostFitRecoversExponent) {
  std::map<int, double> it;
  for (int k = 1; k <= 5; ++k) it[k] = 1000.0 * std::pow(k, -2.0);
  const auto f = layer_boost_fit(it);
  EXPECT_NEAR(f.alpha_hat, 0.5, 1e-12);
  EXPECT_NEAR(f.c, 1000.0, 1e-9);
  EXPECT_TRUE(f.monotone);
  it[5] = it[4];
  EXPECT_FALSE(layer_boost_fit(it).monotone);
  EXPECT_THROW(layer_boost_fit({{1, 1.0}, {2, 0.5}}), InvalidArgument);
}

TEST(Alignment, Extremes) {
  Matrix a(1, 2), b(1, 2);
  a(0, 0) = 1.0;
  b(0, 1) = 3.0;
  EXPECT_DOUBLE_EQ(weight_alignment(a, a), 1.0);
  EXPECT_DOUBLE_EQ(weight_alignment(a, b), 0.0);
}

TEST(Clt, GeneralPositionRatio) {
  EXPECT_NEAR(general_position_ratio(std::vector<double>(64, 0.3)), 1.0 / 64.0, 1e-15);
  std::vector<double> spike(64, 0.0);
  spike[3] = -2.0;
  EXPECT_DOUBLE_EQ(general_position_ratio(spike), 1.0);
}

TEST(Clt, KolmogorovAndKs) {
  EXPECT_NEAR(kolmogorov_q(1.36), 0.049485876755377876, 1e-12);
  EXPECT_NEAR(kolmogorov_q(0.5), 0.9639452436648751, 1e-12);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> g(2000), u(2000);
  for (auto& v : g) v = n01(rng);
  for (auto& v : u) v = 3.0 * std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  EXPECT_GT(ks_test_normal(g).p_value, 0.01);
  EXPECT_LT(ks_test_normal(u).p_value, 1e-6);
}

TEST(Clt, RequiresWideLayers) {
  Matrix t(10, 8);
  std::vector<double> w(8, 1.0);
  EXPECT_THROW(clt_diagnostics(w, w, t), InvalidArgument);
}

TEST(Decomposition, FromShortRun) {
  std::mt19937_64 rng(2);
  Dataset ds;
  ds.inputs = Matrix(64, 6);
  for (auto& v : ds.inputs.data()) v = rng() & 1U ? 1.0 : -1.0;
  ds.labels.resize(64);
  for (std::size_t i = 0; i < 64; ++i) ds.labels[i] = ds.inputs(i, 0) > 0 ? 1 : 0;
  ds.train.resize(64);
  std::iota(ds.train.begin(), ds.train.end(), std::size_t{0});
  NetworkSpec spec;
  spec.layer_widths = {6, 5, 4, 2};
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 8;
  cfg.snapshot_epochs = {0, 10, 20, 30, 40};
  const auto run = train(spec, cfg, ds);
  EXPECT_EQ(nearest_snapshot_epoch(run, 14.0), 10);
  EXPECT_EQ(nearest_snapshot_epoch(run, 15.0), 20);
  EXPECT_THROW(decompose_weights(run, 15, ds.inputs), InvalidArgument);
  const auto dec = decompose_weights(run, 20, ds.inputs, 1e-3);
  ASSERT_EQ(dec.taus, (std::vector<long long>{20, 30, 40}));
  EXPECT_EQ(dec.delta_w[0][1].frobenius(), 0.0);
  EXPECT_NEAR(dec.sigma_t2[0], 1.0, 0.05);  // +-1 inputs
  EXPECT_NEAR(dec.sigma_z2[1] / dec.sigma_t2[1], 1e-3, 1e-15);
  std::vector<BoundReport> reps;
  for (std::size_t ti = 1; ti < dec.taus.size(); ++ti) reps.push_back(mi_gaussian_bound(dec, ti));
  ASSERT_EQ(reps.front().layers.size(), 3u);
  for (const auto& l : reps.back().layers) {
    EXPECT_GE(l.bound_bits, l.exact_bits - 1e-10);
    EXPECT_GT(l.r_constant, 0.0);
    EXPECT_LE(l.n_informative, l.lambdas.size());
  }
  const auto path = (std::filesystem::temp_directory_path() / "ibdyn_bound_test.csv").string();
  write_bound_csv(reps, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "layer,tau,bound_bits,exact_bits,n_informative,r_constant");
  std::filesystem::remove(path);
}

TEST(Informative, CountsNonGrowingDirections) {
  EXPECT_EQ(count_informative(std::vector<double>{1.0, 1.0, 1.0}, std::vector<double>{1.5, 2.5, 1.0}), 2u);
}
