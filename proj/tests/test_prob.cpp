#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "ibdyn/prob.hpp"
#include "support.hpp"

using namespace ibdyn;

TEST(Discrete, RejectsBadInput) {
  EXPECT_THROW(DiscreteDistribution({0.5, 0.6}), InvalidDistribution);
  EXPECT_THROW(DiscreteDistribution({-0.1, 1.1}), InvalidDistribution);
  EXPECT_THROW(DiscreteDistribution::uniform(0), InvalidDistribution);
  EXPECT_THROW(DiscreteDistribution::point_mass(3, 3), InvalidArgument);
}

TEST(Discrete, RenormalizesTinyDrift) {
  DiscreteDistribution p({0.5 + 1e-11, 0.5});
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-15);
}

TEST(Discrete, EntropyAndKl) {
  DiscreteDistribution p({0.5, 0.25, 0.25}), q({0.25, 0.5, 0.25});
  EXPECT_DOUBLE_EQ(entropy(p), 1.5);
  EXPECT_DOUBLE_EQ(kl_divergence(p, q), 0.25);
  EXPECT_DOUBLE_EQ(entropy(DiscreteDistribution::point_mass(4, 2)), 0.0);
  EXPECT_DOUBLE_EQ(entropy(DiscreteDistribution::uniform(8)), 3.0);
  EXPECT_THROW(kl_divergence(p, DiscreteDistribution({1.0, 0.0, 0.0})), InvalidDistribution);
  EXPECT_DOUBLE_EQ(variation_distance(p, q), 0.5);
}

TEST(Joint, BinarySymmetricChannel) {
  // Uniform input through a crossover-0.1 channel: 1 - h(0.1).
  JointDistribution j(2, 2, {0.45, 0.05, 0.05, 0.45});
  EXPECT_NEAR(mutual_information(j), 0.5310044064107188, 1e-15);
  EXPECT_NEAR(conditional_entropy_x_given_y(j), 1.0 - 0.5310044064107188, 1e-15);
}

TEST(Joint, IndependentHasZeroInformation) {
  const auto j = JointDistribution::product(DiscreteDistribution({0.2, 0.8}), DiscreteDistribution({0.3, 0.3, 0.4}));
  EXPECT_NEAR(mutual_information(j), 0.0, 1e-15);
}

TEST(Joint, ShapeErrors) {
  EXPECT_THROW(JointDistribution(2, 2, {0.5, 0.5}), DimensionMismatch);
  EXPECT_THROW(ConditionalDistribution(1, 2, {0.5}), DimensionMismatch);
  EXPECT_THROW(ConditionalDistribution(2, 2, {0.5, 0.5, 0.9, 0.9}), InvalidDistribution);
}

TEST(Joint, DeterministicMiMatchesDenseBitForBit) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t nx = 2 + rng() % 20, nt = 1 + rng() % 6;
    const auto px = fixtures::random_simplex(nx, rng);
    std::vector<std::size_t> t(nx);
    for (auto& v : t) v = rng() % nt;
    std::vector<double> dense(nx * nt, 0.0);
    for (std::size_t x = 0; x < nx; ++x) dense[x * nt + t[x]] = px[x];
    EXPECT_EQ(mutual_information_deterministic(px, t, nt), mutual_information(JointDistribution(nx, nt, dense)));
  }
}

TEST(Joint, FromPriorAndChannelRoundTrip) {
  std::mt19937_64 rng(1);
  const auto j = fixtures::random_joint(5, 3, rng);
  const auto back = JointDistribution::from_prior_and_channel(j.marginal_x(), j.conditional_y_given_x());
  for (std::size_t i = 0; i < j.table().size(); ++i) EXPECT_NEAR(back.table()[i], j.table()[i], 1e-15);
}

TEST(Bayes, InversionReproducesJoint) {
  DiscreteDistribution prior({0.2, 0.3, 0.5});
  ConditionalDistribution ch(3, 3, {1, 0, 0, 0.5, 0.5, 0, 0, 1, 0});
  const auto inv = bayes_invert(prior, ch);
  EXPECT_NEAR(inv.marginal[0], 0.35, 1e-15);
  EXPECT_NEAR(inv.marginal[1], 0.65, 1e-15);
  EXPECT_FALSE(inv.reachable[2]);
  EXPECT_NEAR(inv.posterior(0, 0), 0.2 / 0.35, 1e-15);
  EXPECT_NEAR(inv.posterior(2, 2), 0.5, 0.0);  // unreachable row holds the prior
}

TEST(Chain, ComposedChannelObeysDpi) {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 100; ++rep) {
    const auto xy = fixtures::random_joint(4, 5, rng);
    std::vector<double> c;
    for (int r = 0; r < 5; ++r) {
      const auto row = fixtures::random_simplex(3, rng);
      c.insert(c.end(), row.begin(), row.end());
    }
    const auto xz = compose_channel(xy, ConditionalDistribution(5, 3, c));
    EXPECT_LE(mutual_information(xz), mutual_information(xy) + 1e-12);
  }
}

TEST(Csv, RoundTripAndErrors) {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string path = (dir / "ibdyn_joint_test.csv").string();
  JointDistribution j(2, 3, {0.1, 0.2, 0.3, 0.15, 0.05, 0.2});
  write_joint_csv(j, path);
  EXPECT_EQ(read_joint_csv(path).table(), j.table());
  {
    std::ofstream out(path);
    out << "0.5,0.25\n0.25\n";
  }
  EXPECT_THROW(read_joint_csv(path), IoError);
  EXPECT_THROW(read_joint_csv((dir / "does_not_exist.csv").string()), IoError);
  std::filesystem::remove(path);
}
