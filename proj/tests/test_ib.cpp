#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ibdyn/ib.hpp"
#include "support.hpp"

using namespace ibdyn;

namespace {

// Doubly symmetric binary source with crossover eps.
JointDistribution dsbs(double eps) { return JointDistribution(2, 2, {0.5 * (1 - eps), 0.5 * eps, 0.5 * eps, 0.5 * (1 - eps)}); }

}  // namespace

TEST(IBIterate, FunctionalNeverIncreases) {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 30; ++rep) {
    IBProblem pr(fixtures::random_joint(2 + rng() % 8, 2 + rng() % 8, rng));
    auto s = random_state(pr, 0.5 + 10.0 * (rng() % 100) / 100.0, rng());
    for (int it = 0; it < 100; ++it) {
      auto next = ib_iterate(pr, s);
      ASSERT_LE(next.functional, s.functional + 1e-12);
      s = std::move(next);
    }
  }
}

TEST(IBSolve, CriticalBetaOfBinarySource) {
  // For this source the trivial solution loses stability at beta = 1 / (1 - 2 eps)^2 = 1.5625.
  IBProblem pr(dsbs(0.1));
  const auto below = solve_ib_best(pr, 1.4, 4);
  const auto above = solve_ib_best(pr, 2.0, 4);
  EXPECT_LT(below.i_x, 1e-6);
  EXPECT_GT(above.i_x, 1e-2);
  EXPECT_LE(above.i_y, mutual_information(pr.joint) + 1e-12);
}

TEST(IBSolve, LargeBetaRecoversAllInformation) {
  IBProblem pr(JointDistribution(2, 2, {0.5, 0.0, 0.0, 0.5}));
  const auto s = solve_ib_best(pr, 50.0, 4);
  EXPECT_NEAR(s.i_x, 1.0, 1e-6);
  EXPECT_NEAR(s.i_y, 1.0, 1e-6);
  EXPECT_EQ(effective_cardinality(s), 2u);
}

TEST(IBSolve, ConsistentStateFromEncoder) {
  std::mt19937_64 rng(2);
  IBProblem pr(fixtures::random_joint(4, 3, rng));
  ConditionalDistribution id(4, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  const auto s = make_consistent_state(pr, 3.0, id);
  EXPECT_NEAR(s.i_x, entropy(pr.joint.marginal_x()), 1e-12);
  EXPECT_NEAR(s.i_y, mutual_information(pr.joint), 1e-12);
  EXPECT_NEAR(s.functional, s.i_x - 3.0 * s.i_y, 1e-12);
}

TEST(IBCurve, ConcaveMonotoneAndSlopes) {
  std::mt19937_64 rng(31);
  IBProblem pr(fixtures::random_joint(6, 4, rng));
  std::vector<double> betas;
  for (double b = 0.5; b <= 100.0; b *= 1.1) betas.push_back(b);
  const auto c = sweep_info_curve(pr, betas, 1);
  ASSERT_EQ(c.points.size(), betas.size());
  EXPECT_LE(concavity_violation(c), 1e-6);
  EXPECT_LE(monotonicity_violation(c), 1e-6);
  for (const auto& s : interior_slopes(c)) EXPECT_LE(s.relative_error(), 0.1) << "beta " << s.beta;
  EXPECT_LE(c.points.back().i_y, mutual_information(pr.joint) + 1e-9);
}

TEST(IBCurve, ThreadCountDoesNotChangeResult) {
  std::mt19937_64 rng(5);
  IBProblem pr(fixtures::random_joint(5, 3, rng));
  std::vector<double> betas{1.0, 2.0, 4.0, 8.0};
  IBOptions one, four;
  four.threads = 4;
  const auto a = sweep_info_curve(pr, betas, 2, one), b = sweep_info_curve(pr, betas, 2, four);
  for (std::size_t i = 0; i < betas.size(); ++i) {
    EXPECT_EQ(a.points[i].i_x, b.points[i].i_x);
    EXPECT_EQ(a.points[i].i_y, b.points[i].i_y);
  }
}

TEST(IBCurve, EnvelopeLookup) {
  InfoCurve c;
  c.points = {{1, 0.0, 0.0, true, 1}, {2, 1.0, 0.5, true, 2}, {3, 2.0, 0.6, true, 2}};
  EXPECT_DOUBLE_EQ(info_curve_at(c, 0.5), 0.25);
  EXPECT_DOUBLE_EQ(info_curve_at(c, 1.5), 0.55);
  EXPECT_DOUBLE_EQ(info_curve_at(c, 9.0), 0.6);
  EXPECT_THROW(info_curve_at(InfoCurve{}, 1.0), InvalidArgument);
}

TEST(BetaStar, RecoversSolverBeta) {
  std::mt19937_64 rng(17);
  IBProblem pr(fixtures::random_joint(6, 3, rng));
  const auto s = solve_ib_best(pr, 5.0, 3);
  const std::vector<double> grid{1.0, 2.0, 3.0, 5.0, 8.0, 13.0};
  const auto fit = fit_beta_star(s.encoder, s.decoder, pr, grid);
  EXPECT_DOUBLE_EQ(fit.beta_star, 5.0);
  EXPECT_LT(fit.kl_at_star, 1e-6);
  EXPECT_EQ(fit.kl_per_beta.size(), grid.size());
}

TEST(BetaStar, RejectsBadShapes) {
  std::mt19937_64 rng(1);
  IBProblem pr(fixtures::random_joint(3, 2, rng));
  ConditionalDistribution enc(2, 2, {1, 0, 0, 1});
  ConditionalDistribution dec(2, 2, {1, 0, 0, 1});
  const std::vector<double> grid{1.0};
  EXPECT_THROW(fit_beta_star(enc, dec, pr, grid), DimensionMismatch);
  EXPECT_THROW(fit_beta_star(enc, dec, pr, std::vector<double>{}), InvalidArgument);
}
