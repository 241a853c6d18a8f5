#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "ibdyn/datagen.hpp"

using namespace ibdyn;

namespace {

// Burnside: orbits of 2^n patterns = mean over the group of 2^{cycles}.
double burnside_orbits(const PermutationGroup& g) {
  double total = 0.0;
  for (const auto& p : g.elements) {
    std::vector<bool> seen(p.size(), false);
    int cycles = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (seen[i]) continue;
      ++cycles;
      for (std::size_t j = i; !seen[j]; j = static_cast<std::size_t>(p[j])) seen[j] = true;
    }
    total += std::exp2(cycles);
  }
  return total / static_cast<double>(g.order());
}

}  // namespace

TEST(Group, IcosahedralOrderAndOrbitCount) {
  const auto g = icosahedral_group();
  EXPECT_EQ(g.degree, 12);
  EXPECT_EQ(g.order(), 120u);
  const auto ps = enumerate_orbits(g);
  EXPECT_EQ(ps.size(), 4096u);
  EXPECT_EQ(ps.n_orbits, 82);
  EXPECT_DOUBLE_EQ(burnside_orbits(g), 82.0);
}

TEST(Group, CyclicGroupMatchesBurnside) {
  Permutation shift(6);
  for (int i = 0; i < 6; ++i) shift[static_cast<std::size_t>(i)] = (i + 1) % 6;
  const auto g = PermutationGroup::generated_by(6, {shift});
  EXPECT_EQ(g.order(), 6u);
  EXPECT_EQ(enumerate_orbits(g).n_orbits, 14);  // necklaces of length 6
  EXPECT_DOUBLE_EQ(burnside_orbits(g), 14.0);
  EXPECT_THROW(PermutationGroup::generated_by(3, {{0, 0, 1}}), InvalidArgument);
}

TEST(Group, OrbitLabelsAreInvariant) {
  const auto g = icosahedral_group();
  const auto ps = enumerate_orbits(g);
  for (unsigned x = 0; x < 4096; x += 37) {
    for (const auto& p : g.elements) {
      unsigned y = 0;
      for (int i = 0; i < 12; ++i)
        if ((x >> i) & 1U) y |= 1U << p[static_cast<std::size_t>(i)];
      ASSERT_EQ(ps.orbit_id[x], ps.orbit_id[y]);
    }
  }
}

TEST(Invariants, SixtyFourClasses) {
  const auto ids = invariant_class_ids();
  ASSERT_EQ(ids.size(), 4096u);
  EXPECT_EQ(std::set<int>(ids.begin(), ids.end()).size(), 64u);
}

TEST(Rule, DefaultTaskHitsTargets) {
  const auto task = default_symmetric_task(1);
  const auto j = task.rule.joint();
  EXPECT_NEAR(mutual_information(j), 0.99, 1e-3);
  EXPECT_NEAR(j.marginal_y()[1], 0.5, 0.01);
  // The rule is constant on orbits.
  for (std::size_t x = 0; x < task.patterns.size(); ++x)
    for (std::size_t z = x + 1; z < task.patterns.size() && z < x + 200; ++z)
      if (task.patterns.orbit_id[x] == task.patterns.orbit_id[z])
        ASSERT_EQ(task.rule.p_y1_given_x[x], task.rule.p_y1_given_x[z]);
}

TEST(Rule, SomeSeedsCannotBeCalibrated) { EXPECT_THROW(default_symmetric_task(6), CalibrationError); }

TEST(Rule, Deterministic) {
  EXPECT_EQ(default_symmetric_task(2).rule.p_y1_given_x, default_symmetric_task(2).rule.p_y1_given_x);
}

TEST(Rule, CalibrationNeedsTwoScores) {
  EXPECT_THROW(calibrate_threshold_and_gain({1.0, 1.0}, {0.5, 0.5}), CalibrationError);
  EXPECT_THROW(calibrate_threshold_and_gain({1.0}, {0.5, 0.5}), DimensionMismatch);
}

TEST(Rule, CsvRoundTrip) {
  const auto task = default_symmetric_task(1);
  const auto path = (std::filesystem::temp_directory_path() / "ibdyn_rule_test.csv").string();
  write_rule_csv(task, path);
  const auto back = read_rule_csv(path);
  EXPECT_EQ(back.patterns.patterns, task.patterns.patterns);
  EXPECT_EQ(back.patterns.orbit_id, task.patterns.orbit_id);
  EXPECT_EQ(back.rule.p_y1_given_x, task.rule.p_y1_given_x);
  std::filesystem::remove(path);
}

TEST(Gaussian, AnalyticQuantities) {
  const auto t = generate_joint_gaussian(30, 1, 1, 1.0, 1.0, {3.0});
  EXPECT_NEAR(analytic_mi_gaussian(t), 0.5 * std::log2(10.0), 1e-14);
  // log det of the joint covariance equals log det Sxx + log det S_{y|x}.
  EXPECT_NEAR(log_det_spd(t.joint_covariance()), 0.0, 1e-10);
  EXPECT_NEAR(gaussian_label_entropy_bits(t), 0.5 * std::log2(2 * M_PI * M_E * 10.0), 1e-12);
  const auto g = gib_spectrum(t);
  ASSERT_EQ(g.eigenvalues.size(), 30u);
  EXPECT_NEAR(g.eigenvalues.front(), 0.1, 1e-12);
  EXPECT_NEAR(g.eigenvalues.back(), 1.0, 1e-12);
  EXPECT_THROW(generate_joint_gaussian(3, 2, 1, 1.0, 1.0, {1.0}), InvalidArgument);
}

TEST(Gaussian, SamplerMoments) {
  const auto t = generate_joint_gaussian(4, 2, 3, 1.0, 0.5, {2.0, 1.0});
  GaussianSampler s(t, 7);
  const auto [x, y] = s.sample(200000);
  // Empirical cov(x, y) against the model.
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double c = 0.0;
      for (std::size_t r = 0; r < x.rows(); ++r) c += x(r, i) * y(r, j);
      EXPECT_NEAR(c / static_cast<double>(x.rows()), t.cov_xy(i, j), 0.02);
    }
}

TEST(Gaussian, JsonRoundTrip) {
  const auto t = generate_joint_gaussian(5, 2, 9, 1.5, 0.7, {1.0, 0.3});
  const auto back = gaussian_task_from_json(to_json(t));
  EXPECT_EQ(back.mixing.data(), t.mixing.data());
}
