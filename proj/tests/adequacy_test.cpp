#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "fdrcast/adequacy.hpp"

namespace fdrcast {
namespace {

// Labels {3, 5, 3, 7}, all correctly predicted; M1 mispredicts the first two
// inputs, M2 mispredicts all four.
OutcomeMatrix worked_example() {
  OutcomeMatrix o;
  o.num_inputs = 4;
  o.num_mutants = 2;
  o.true_labels = {3, 5, 3, 7};
  o.correct = {true, true, true, true};
  o.predictions = {3, 0, 0,   //
                   5, 0, 0,   //
                   3, 3, 0,   //
                   7, 7, 0};
  o.validate();
  return o;
}

SubsetRef all_of(std::size_t n) {
  SubsetRef s;
  for (std::size_t i = 0; i < n; ++i) s.indices.push_back(i);
  return s;
}

TEST(MutationScore, WorkedExample) {
  const auto o = worked_example();
  EXPECT_DOUBLE_EQ(mutation_score(o, all_of(4), MsVariant::kDeepMutation, 10), 0.25);
  EXPECT_DOUBLE_EQ(mutation_score(o, all_of(4), MsVariant::kStandard, 10), 1.0);
}

TEST(MutationScore, WorkedExampleKillingScore) {
  EXPECT_DOUBLE_EQ(mutation_score(worked_example(), all_of(4), MsVariant::kKillingScore, 10), 0.75);
}

TEST(MutationScore, NothingKilled) {
  OutcomeMatrix o;
  o.num_inputs = 3;
  o.num_mutants = 2;
  o.true_labels = {0, 1, 2};
  o.correct = {true, true, true};
  o.predictions = {0, 0, 0, 1, 1, 1, 2, 2, 2};
  for (auto v : {MsVariant::kStandard, MsVariant::kDeepMutation, MsVariant::kKillingScore}) {
    EXPECT_EQ(mutation_score(o, all_of(3), v, 3), 0.0);
  }
}

TEST(MutationScore, MispredictedInputsDoNotKill) {
  auto o = worked_example();
  o.true_labels[0] = 4;
  o.true_labels[1] = 4;
  o.correct[0] = o.correct[1] = false;
  SubsetRef first_two;
  first_two.indices = {0, 1};
  EXPECT_EQ(mutation_score(o, first_two, MsVariant::kStandard, 10), 0.0);
  EXPECT_EQ(mutation_score(o, first_two, MsVariant::kDeepMutation, 10), 0.0);
  // The killing score ignores labels.
  EXPECT_DOUBLE_EQ(mutation_score(o, first_two, MsVariant::kKillingScore, 10), 1.0);
}

TEST(MutationScore, DuplicatesCountOnceExceptForKillingScore) {
  const auto o = worked_example();
  SubsetRef s;
  s.indices = {2, 2, 2, 0};
  EXPECT_DOUBLE_EQ(mutation_score(o, s, MsVariant::kStandard, 10), 1.0);
  EXPECT_DOUBLE_EQ(mutation_score(o, s, MsVariant::kDeepMutation, 10), 2.0 / 20.0);
  EXPECT_DOUBLE_EQ(mutation_score(o, s, MsVariant::kKillingScore, 10), (0.5 * 3 + 1.0) / 4.0);
}

TEST(MutationScore, OutOfBoundsSubsetIsRejected) {
  SubsetRef s;
  s.indices = {4};
  EXPECT_THROW(mutation_score(worked_example(), s, MsVariant::kStandard, 10), Error);
}

TEST(MutationScore, MatchesOracleOnRandomOutcomes) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const auto o = testing::random_outcomes(rng, 60, 1 + trial % 9, 7, 0.1, 0.8);
    MutationScorer scorer(o, 7);
    const auto subset = testing::random_subset(rng, 60, 1 + trial);
    EXPECT_NEAR(scorer.score(subset, MsVariant::kStandard), oracle::ms_standard(o, subset), 1e-12);
    EXPECT_NEAR(scorer.score(subset, MsVariant::kDeepMutation), oracle::ms_deepmutation(o, subset, 7), 1e-12);
    EXPECT_NEAR(scorer.score(subset, MsVariant::kKillingScore), oracle::ms_killing_score(o, subset), 1e-12);
    for (std::size_t i : subset) {
      const std::vector<std::size_t> one = {i};
      EXPECT_NEAR(scorer.killing_score(i), oracle::ms_killing_score(o, one), 1e-12);
    }
  }
}

TEST(SurpriseAdequacy, DsaNearestNeighbour) {
  Matrix train(2, 1);
  train << 0.0, 1.0;
  Matrix test(2, 1);
  test << 0.4, 1.0;
  const auto sa = surprise_adequacy(test, train, SaKind::kDSA, false);
  EXPECT_DOUBLE_EQ(sa[0], 0.4);
  EXPECT_DOUBLE_EQ(sa[1], 0.0);
}

TEST(SurpriseAdequacy, DsaLeaveOneOutSkipsOwnRow) {
  Matrix train(3, 1);
  train << 0.0, 1.0, 3.0;
  const auto sa = surprise_adequacy(train, train, SaKind::kDSA, true);
  EXPECT_DOUBLE_EQ(sa[0], 1.0);
  EXPECT_DOUBLE_EQ(sa[1], 1.0);
  EXPECT_DOUBLE_EQ(sa[2], 2.0);
}

TEST(SurpriseAdequacy, DsaIsPermutationInvariant) {
  std::mt19937_64 rng(2);
  const Matrix train = testing::random_matrix(rng, 40, 3);
  const Matrix test = testing::random_matrix(rng, 10, 3);
  std::vector<Eigen::Index> order(40);
  for (Eigen::Index i = 0; i < 40; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  Matrix shuffled(40, 3);
  for (Eigen::Index i = 0; i < 40; ++i) shuffled.row(i) = train.row(order[static_cast<std::size_t>(i)]);
  EXPECT_EQ(surprise_adequacy(test, train, SaKind::kDSA, false),
            surprise_adequacy(test, shuffled, SaKind::kDSA, false));
}

TEST(SurpriseAdequacy, LsaIsHigherOutsideTheCloud) {
  std::mt19937_64 rng(4);
  const Matrix train = testing::random_matrix(rng, 200, 2, 0.5);
  Matrix test(2, 2);
  test << 0.0, 0.0, 5.0, 5.0;
  const auto sa = surprise_adequacy(test, train, SaKind::kLSA, false);
  EXPECT_LT(sa[0], sa[1]);
}

TEST(SurpriseAdequacy, LsaIgnoresConstantDimensions) {
  std::mt19937_64 rng(6);
  const Matrix train = testing::random_matrix(rng, 50, 2);
  const Matrix test = testing::random_matrix(rng, 8, 2);
  Matrix train_wide(50, 3);
  train_wide << train, Matrix::Constant(50, 1, 7.0);
  Matrix test_wide(8, 3);
  test_wide << test, Matrix::Constant(8, 1, 7.0);
  const auto a = surprise_adequacy(test, train, SaKind::kLSA, false);
  const auto b = surprise_adequacy(test_wide, train_wide, SaKind::kLSA, false);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(SurpriseAdequacy, LsaWithNoVarianceIsAnError) {
  const Matrix train = Matrix::Constant(10, 2, 1.0);
  EXPECT_THROW(surprise_adequacy(train, train, SaKind::kLSA, false), Error);
}

TEST(SurpriseAdequacy, WidthMismatchIsAnError) {
  EXPECT_THROW(surprise_adequacy(Matrix::Zero(2, 2), Matrix::Zero(3, 3), SaKind::kDSA, false), Error);
  EXPECT_THROW(surprise_adequacy(Matrix::Zero(1, 2), Matrix::Zero(1, 2), SaKind::kDSA, true), Error);
}

TEST(SurpriseCoverage, HandEnumeratedBuckets) {
  ScConfig config;
  config.n_buckets = 10;
  const std::vector<double> values = {0.1, 0.5};
  EXPECT_EQ(sc_bucket(0.1, config), 1);
  EXPECT_EQ(sc_bucket(0.5, config), 5);
  EXPECT_DOUBLE_EQ(surprise_coverage(values, config), 0.2);
}

TEST(SurpriseCoverage, SingleAndFull) {
  ScConfig config;
  config.n_buckets = 4;
  const std::vector<double> one = {0.3};
  EXPECT_DOUBLE_EQ(surprise_coverage(one, config), 0.25);
  const std::vector<double> all = {0.0, 0.3, 0.6, 1.0};
  EXPECT_DOUBLE_EQ(surprise_coverage(all, config), 1.0);
}

TEST(SurpriseCoverage, OutOfRangeClamps) {
  ScConfig config;
  config.n_buckets = 5;
  EXPECT_EQ(sc_bucket(-3.0, config), 0);
  EXPECT_EQ(sc_bucket(1.0, config), 4);
  EXPECT_EQ(sc_bucket(42.0, config), 4);
}

TEST(LatentCoverage, HandEnumeratedCells) {
  LatentConfig config;
  config.dims = 2;
  config.bins = 2;
  config.min = {0.0, 0.0};
  config.max = {1.0, 1.0};
  Matrix one(1, 2);
  one << 0.2, 0.2;
  EXPECT_DOUBLE_EQ(idc_coverage(one, config), 0.25);
  Matrix two(2, 2);
  two << 0.2, 0.2, 0.8, 0.9;
  EXPECT_DOUBLE_EQ(idc_coverage(two, config), 0.5);
  Matrix four(4, 2);
  four << 0.2, 0.2, 0.8, 0.9, 0.1, 0.7, 0.9, 0.0;
  EXPECT_DOUBLE_EQ(idc_coverage(four, config), 1.0);
}

TEST(LatentCoverage, ThreeDimensionsCountAllPairs) {
  LatentConfig config;
  config.dims = 3;
  config.bins = 2;
  config.min = {0.0, 0.0, 0.0};
  config.max = {1.0, 1.0, 1.0};
  EXPECT_EQ(config.total_cells(), 12u);
  Matrix x(1, 3);
  x << 0.1, 0.9, 0.1;
  EXPECT_DOUBLE_EQ(idc_coverage(x, config), 3.0 / 12.0);
}

TEST(LatentCoverage, NeedsTwoDimensions) {
  EXPECT_THROW(LatentConfig::fit(Matrix::Zero(3, 1), 10), Error);
}

TEST(CellCoverage, MatchesDirectCoverage) {
  std::mt19937_64 rng(8);
  const Matrix latents = testing::random_matrix(rng, 80, 4);
  const auto config = LatentConfig::fit(latents, 3);
  const auto cells = CellCoverage::for_latents(latents, config);
  for (int trial = 0; trial < 20; ++trial) {
    const auto subset = testing::random_subset(rng, 80, 1 + trial * 3);
    Matrix rows(static_cast<Eigen::Index>(subset.size()), 4);
    for (std::size_t i = 0; i < subset.size(); ++i) {
      rows.row(static_cast<Eigen::Index>(i)) = latents.row(static_cast<Eigen::Index>(subset[i]));
    }
    EXPECT_DOUBLE_EQ(cells.score(subset), idc_coverage(rows, config));
  }
}

}  // namespace
}  // namespace fdrcast
