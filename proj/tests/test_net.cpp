#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "ibdyn/net.hpp"

using namespace ibdyn;

namespace {

Dataset small_dataset(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Dataset ds;
  ds.inputs = Matrix(n, d);
  for (auto& v : ds.inputs.data()) v = n01(rng);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = ds.inputs(i, 0) + 0.3 * ds.inputs(i, 1) > 0.0 ? 1 : 0;
  ds.train.resize(n);
  std::iota(ds.train.begin(), ds.train.end(), std::size_t{0});
  ds.test = {0, 1, 2};
  return ds;
}

}  // namespace

class GradientCheck : public ::testing::TestWithParam<std::tuple<Activation, std::size_t>> {};

TEST_P(GradientCheck, MatchesCentralDifferences) {
  const auto [act, out] = GetParam();
  NetworkSpec spec;
  spec.layer_widths = {4, 5, 3, out};
  spec.activation = act;
  spec.init_weight_std = 1.0;
  spec.init_bias_std = 0.2;
  spec.seed = 3;
  auto net = Network::initialize(spec);
  const auto ds = small_dataset(7, 4, 2);
  const auto [loss, g] = loss_and_gradient(net, ds.inputs, ds.labels, ds.train);
  const double h = 1e-6;
  for (std::size_t k = 0; k < net.n_layers(); ++k) {
    for (std::size_t i = 0; i < net.w[k].data().size(); ++i) {
      const double w0 = net.w[k].data()[i];
      net.w[k].data()[i] = w0 + h;
      const double lp = loss_and_gradient(net, ds.inputs, ds.labels, ds.train).first;
      net.w[k].data()[i] = w0 - h;
      const double lm = loss_and_gradient(net, ds.inputs, ds.labels, ds.train).first;
      net.w[k].data()[i] = w0;
      EXPECT_NEAR(g.w[k].data()[i], (lp - lm) / (2 * h), 1e-6);
    }
    for (std::size_t j = 0; j < net.b[k].size(); ++j) {
      const double b0 = net.b[k][j];
      net.b[k][j] = b0 + h;
      const double lp = loss_and_gradient(net, ds.inputs, ds.labels, ds.train).first;
      net.b[k][j] = b0 - h;
      const double lm = loss_and_gradient(net, ds.inputs, ds.labels, ds.train).first;
      net.b[k][j] = b0;
      EXPECT_NEAR(g.b[k][j], (lp - lm) / (2 * h), 1e-6);
    }
  }
  EXPECT_GT(loss, 0.0);
}

INSTANTIATE_TEST_SUITE_P(Activations, GradientCheck,
                         ::testing::Combine(::testing::Values(Activation::Tanh, Activation::Relu, Activation::Erf,
                                                              Activation::Sigmoid),
                                            ::testing::Values(std::size_t{1}, std::size_t{2})));

TEST(Net, OutputProbabilitiesSumToOne) {
  std::vector<double> l{1000.0, 999.0, -5.0}, p(3);
  output_probabilities(l, p);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
  EXPECT_NEAR(p[0] / p[1], std::exp(1.0), 1e-12);
  EXPECT_NEAR(cross_entropy(l, 0), std::log1p(std::exp(-1.0) + std::exp(-1005.0)), 1e-12);
}

TEST(Net, ForwardAllLastLayerIsProbabilities) {
  NetworkSpec spec;
  spec.layer_widths = {3, 4, 2};
  const auto net = Network::initialize(spec);
  const auto ds = small_dataset(5, 3, 1);
  const auto acts = forward_all(net, ds.inputs);
  ASSERT_EQ(acts.size(), 2u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(acts[1](i, 0) + acts[1](i, 1), 1.0, 1e-15);
  EXPECT_THROW(forward_all(net, Matrix(2, 4)), DimensionMismatch);
}

TEST(Train, DeterministicAndLearns) {
  NetworkSpec spec;
  spec.layer_widths = {4, 6, 2};
  const auto ds = small_dataset(200, 4, 5);
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.learning_rate = 0.1;
  cfg.batch_size = 16;
  const auto a = train(spec, cfg, ds), b = train(spec, cfg, ds);
  EXPECT_EQ(a.final_net.w[0].data(), b.final_net.w[0].data());
  EXPECT_LT(a.train_error.back(), 0.1);
  EXPECT_EQ(a.batches_per_epoch, 13);
  EXPECT_EQ(a.snapshots.front().epoch, 0);
  EXPECT_EQ(a.snapshots.back().epoch, 300);
  EXPECT_EQ(a.grad_stats.mean_norm.size(), 2u);
  EXPECT_EQ(a.msd.size(), 300u);
}

TEST(Train, EarlyStopAndValidation) {
  NetworkSpec spec;
  spec.layer_widths = {4, 6, 2};
  const auto ds = small_dataset(200, 4, 5);
  TrainConfig cfg;
  cfg.epochs = 5000;
  cfg.learning_rate = 0.1;
  cfg.stop_at_train_accuracy = 0.9;
  EXPECT_LT(train(spec, cfg, ds).epochs_run, 5000);
  cfg.batch_size = 1000;
  EXPECT_THROW(train(spec, cfg, ds), InvalidArgument);
  spec.layer_widths = {3, 4, 2};
  cfg.batch_size = 8;
  EXPECT_THROW(train(spec, cfg, ds), DimensionMismatch);
}

TEST(Train, DivergenceIsReported) {
  NetworkSpec spec;
  spec.layer_widths = {4, 6, 2};
  spec.activation = Activation::Relu;
  auto ds = small_dataset(50, 4, 5);
  for (auto& v : ds.inputs.data()) v *= 1e150;
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.learning_rate = 1e10;
  EXPECT_THROW(train(spec, cfg, ds), TrainingDiverged);
}

TEST(Schedule, GeometricContainsEndpoints) {
  const auto s = geometric_schedule(8000);
  EXPECT_EQ(s.front(), 0);
  EXPECT_EQ(s.back(), 8000);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_GT(s.size(), 80u);
}

TEST(Snr, KnownBatches) {
  // Two coordinates, two batches: means (1, 0), std (1, 1).
  const auto [mn, sd, snr] = gradient_snr_of({{0.0, 1.0}, {2.0, -1.0}});
  EXPECT_DOUBLE_EQ(mn, 1.0);
  EXPECT_DOUBLE_EQ(sd, std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(snr, 1.0 / std::sqrt(2.0));
}

TEST(Diffusion, PowerLawRecovered) {
  std::vector<double> t, m;
  for (int i = 1; i <= 100; ++i) {
    t.push_back(i * 10.0);
    m.push_back(0.3 * std::pow(i * 10.0, 0.7));
  }
  const auto f = fit_diffusion_exponent(t, m, 10.0, 1000.0);
  EXPECT_NEAR(f.alpha, 0.7, 1e-12);
  EXPECT_NEAR(f.gamma, 0.3, 1e-12);
  EXPECT_FALSE(f.ultra_slow);
  EXPECT_THROW(fit_diffusion_exponent(t, m, 10.0, 50.0), InvalidArgument);
}

TEST(Persistence, RunRoundTrip) {
  NetworkSpec spec;
  spec.layer_widths = {4, 3, 2};
  const auto ds = small_dataset(64, 4, 1);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.learning_rate = 0.05;
  const auto run = train(spec, cfg, ds);
  const auto dir = std::filesystem::temp_directory_path() / "ibdyn_run_test";
  std::filesystem::remove_all(dir);
  save_run(run, dir);
  const auto back = load_run(dir);
  ASSERT_EQ(back.snapshots.size(), run.snapshots.size());
  EXPECT_EQ(back.snapshots.back().net.w[1].data(), run.snapshots.back().net.w[1].data());
  EXPECT_EQ(back.grad_stats.mean_norm, run.grad_stats.mean_norm);
  EXPECT_EQ(back.train_error, run.train_error);
  EXPECT_EQ(back.batches_per_epoch, run.batches_per_epoch);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_run(dir), IoError);
}
