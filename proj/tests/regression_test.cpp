#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "support/oracles.hpp"
#include "fdrcast/regression.hpp"

namespace fdrcast {
namespace {

std::vector<Point> noisy_points(std::mt19937_64& rng, std::size_t n, double a, double b, double c, double noise) {
  std::uniform_real_distribution<double> ux(0.0, 1.0);
  std::normal_distribution<double> e(0.0, noise);
  std::vector<Point> pts(n);
  for (auto& p : pts) {
    p.x = ux(rng);
    p.y = a + b * p.x + c * p.x * p.x + e(rng);
  }
  return pts;
}

TEST(Fit, LinearAndQuadraticMatchNormalEquations) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pts = noisy_points(rng, 40 + trial, 0.1, 0.6, 0.2, 0.05);
    for (int degree : {1, 2}) {
      const auto model = fit_regression(pts, degree == 1 ? Family::kLinear : Family::kQuadratic);
      const auto beta = oracle::polynomial_ols(pts, degree);
      ASSERT_EQ(model.coefficients.size(), beta.size());
      for (std::size_t k = 0; k < beta.size(); ++k) EXPECT_NEAR(model.coefficients[k], beta[k], 1e-8);
    }
  }
}

TEST(Fit, ExponentialFitsLogSpaceWithFloor) {
  std::mt19937_64 rng(2);
  std::vector<Point> pts;
  std::uniform_real_distribution<double> ux(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const double x = ux(rng);
    pts.push_back({x, 0.05 * std::exp(2.0 * x)});
  }
  pts.push_back({0.0, 0.0});  // floored to 1e-3 before the log
  std::vector<Point> logged;
  for (const auto& p : pts) logged.push_back({p.x, std::log(std::max(p.y, kExponentialFloor))});
  const auto beta = oracle::polynomial_ols(logged, 1);
  const auto model = fit_regression(pts, Family::kExponential);
  EXPECT_NEAR(model.coefficients[0], std::exp(beta[0]), 1e-8);
  EXPECT_NEAR(model.coefficients[1], beta[1], 1e-8);
  EXPECT_NEAR(model.predict(0.5), std::exp(beta[0] + 0.5 * beta[1]), 1e-8);
}

TEST(Fit, RankDeficientDesignIsDegenerate) {
  const std::vector<Point> pts = {{0.3, 0.1}, {0.3, 0.2}, {0.3, 0.4}, {0.3, 0.5}};
  try {
    fit_regression(pts, Family::kLinear);
    FAIL() << "expected a degenerate error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerate);
  }
  const std::vector<Point> two_x = {{0.1, 0.1}, {0.1, 0.2}, {0.9, 0.4}, {0.9, 0.5}};
  EXPECT_NO_THROW(fit_regression(two_x, Family::kLinear));
  EXPECT_THROW(fit_regression(two_x, Family::kQuadratic), Error);
}

TEST(Tree, RecoversStepFunction) {
  std::vector<Point> pts;
  for (int i = 0; i < 40; ++i) {
    const double x = i / 40.0;
    pts.push_back({x, x < 0.5 ? 0.2 : 0.8});
  }
  const auto tree = RegressionTree::fit(pts, {});
  EXPECT_DOUBLE_EQ(tree.predict(0.1), 0.2);
  EXPECT_DOUBLE_EQ(tree.predict(0.9), 0.8);
  EXPECT_EQ(tree.leaf_count(), 2u);
}

TEST(Tree, RespectsDepthAndLeafSize) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pts = noisy_points(rng, 300, 0.0, 1.0, 0.0, 0.2);
    TreeOptions options;
    const auto tree = RegressionTree::fit(pts, options);
    EXPECT_LE(tree.depth(), options.max_depth);
    for (const auto& node : tree.nodes()) {
      if (node.left < 0) EXPECT_GE(node.count, static_cast<std::size_t>(options.min_leaf));
    }
    const auto back = RegressionTree::from_json(tree.to_json());
    for (double x : {0.0, 0.13, 0.5, 0.77, 1.0}) EXPECT_EQ(back.predict(x), tree.predict(x));
  }
}

TEST(Tree, LeafValuesAreMeans) {
  std::mt19937_64 rng(4);
  const auto pts = noisy_points(rng, 120, 0.0, 1.0, 0.0, 0.1);
  const auto tree = RegressionTree::fit(pts, {3, 10});
  for (const auto& p : pts) {
    const double leaf = tree.predict(p.x);
    double sum = 0.0;
    int count = 0;
    for (const auto& q : pts) {
      if (tree.predict(q.x) == leaf) {
        sum += q.y;
        ++count;
      }
    }
    EXPECT_NEAR(leaf, sum / count, 1e-12);
  }
}

TEST(Tree, TooFewPointsIsDegenerate) {
  std::vector<Point> pts(9, {0.5, 0.5});
  EXPECT_THROW(RegressionTree::fit(pts, {}), Error);
}

TEST(Percentile, LinearInterpolation) {
  const std::vector<double> v = {4.0, 1.0, 3.0, 2.0};
  EXPECT_DOUBLE_EQ(percentile(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(percentile(v, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(percentile(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(percentile(v, 1.0), 4.0);
  EXPECT_THROW(percentile({}, 0.5), Error);
}

TEST(Interval, ParametricCoverageNearNominal) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> e(0.0, 0.03);
  int covered = 0;
  constexpr int kTrials = 400;
  for (int t = 0; t < kTrials; ++t) {
    const auto pts = noisy_points(rng, 60, 0.2, 0.5, 0.0, 0.03);
    const auto model = fit_regression(pts, Family::kLinear);
    const double x = 0.7;
    const double y = 0.2 + 0.5 * x + e(rng);
    const auto pi = predict_with_interval(model, x, pts);
    covered += pi.low <= y && y <= pi.high;
  }
  const double rate = static_cast<double>(covered) / kTrials;
  EXPECT_GE(rate, 0.9);
  EXPECT_LE(rate, 0.98);
}

TEST(Interval, WidthFollowsLeverage) {
  std::mt19937_64 rng(6);
  const auto pts = noisy_points(rng, 80, 0.1, 0.5, 0.0, 0.02);
  const auto model = fit_regression(pts, Family::kLinear);
  const auto im = IntervalModel::build(model, pts, {});
  double mx = 0.0;
  for (const auto& p : pts) mx += p.x;
  mx /= static_cast<double>(pts.size());
  double sxx = 0.0;
  for (const auto& p : pts) sxx += (p.x - mx) * (p.x - mx);
  const double n = static_cast<double>(pts.size());
  auto half_width = [&](double x) {
    const auto pi = im.predict(x);
    return (pi.high - pi.low) / 2.0;
  };
  auto factor = [&](double x) { return std::sqrt(1.0 + 1.0 / n + (x - mx) * (x - mx) / sxx); };
  const double near = std::clamp(mx, 0.0, 1.0);
  EXPECT_NEAR(half_width(0.95) / half_width(near), factor(0.95) / factor(near), 1e-8);
  EXPECT_GT(half_width(0.95), half_width(near));
}

TEST(Interval, ClampedAndRejectsOutOfRange) {
  std::mt19937_64 rng(7);
  const auto pts = noisy_points(rng, 50, 0.9, 0.5, 0.0, 0.05);
  const auto im = IntervalModel::build(fit_regression(pts, Family::kLinear), pts, {});
  const auto pi = im.predict(1.0);
  EXPECT_LE(pi.high, 1.0);
  EXPECT_LE(pi.center, 1.0);
  EXPECT_GE(pi.low, 0.0);
  EXPECT_THROW(im.predict(1.01), Error);
  EXPECT_THROW(im.predict(-0.1), Error);
}

TEST(Interval, TreeBootstrapIsSeededAndOrdered) {
  std::mt19937_64 rng(8);
  const auto pts = noisy_points(rng, 150, 0.1, 0.7, 0.0, 0.05);
  const auto model = fit_regression(pts, Family::kTree);
  IntervalOptions options;
  options.bootstrap = 200;
  options.seed = 42;
  const auto a = IntervalModel::build(model, pts, options);
  options.threads = 4;
  const auto b = IntervalModel::build(model, pts, options);
  for (double x : {0.05, 0.3, 0.6, 0.95}) {
    const auto pa = a.predict(x);
    const auto pb = b.predict(x);
    EXPECT_EQ(pa.low, pb.low);
    EXPECT_EQ(pa.high, pb.high);
    EXPECT_LE(pa.low, pa.high);
    EXPECT_EQ(pa.method, IntervalMethod::kBootstrapPercentile);
  }
}

TEST(Folds, SizesDifferByAtMostOne) {
  const auto folds = make_folds(103, 5, 9);
  std::vector<std::size_t> sizes;
  std::set<std::size_t> all;
  for (const auto& f : folds) {
    sizes.push_back(f.size());
    all.insert(f.begin(), f.end());
  }
  EXPECT_EQ(sizes, std::vector<std::size_t>({21, 21, 21, 20, 20}));
  EXPECT_EQ(all.size(), 103u);
  EXPECT_EQ(*all.rbegin(), 102u);
  EXPECT_EQ(make_folds(103, 5, 9), folds);
  EXPECT_THROW(make_folds(3, 5, 1), Error);
  EXPECT_THROW(make_folds(10, 1, 1), Error);
}

TEST(CrossValidation, FoldMetricsMatchReplay) {
  std::mt19937_64 rng(10);
  const auto pts = noisy_points(rng, 97, 0.05, 0.4, 0.4, 0.04);
  const Family families[] = {Family::kLinear, Family::kQuadratic};
  const auto report = cross_validate(pts, families, 5, 17, {}, 2);
  for (int degree : {1, 2}) {
    const auto& cv = report.at(degree == 1 ? Family::kLinear : Family::kQuadratic);
    const auto expected = oracle::polynomial_cv(pts, report.folds, degree);
    ASSERT_EQ(cv.folds.size(), expected.size());
    double mean = 0.0;
    for (std::size_t f = 0; f < expected.size(); ++f) {
      EXPECT_NEAR(cv.folds[f].r2, expected[f].r2, 1e-8);
      EXPECT_NEAR(cv.folds[f].mmre, expected[f].mmre, 1e-8);
      EXPECT_NEAR(cv.folds[f].rmse, expected[f].rmse, 1e-8);
      mean += expected[f].r2 / static_cast<double>(expected.size());
    }
    EXPECT_NEAR(cv.mean_r2, mean, 1e-8);
  }
}

TEST(CrossValidation, ZeroVarianceFoldsAreSkipped) {
  std::vector<Point> pts;
  for (int i = 0; i < 30; ++i) pts.push_back({i / 30.0, 0.5});
  const Family families[] = {Family::kLinear};
  const auto report = cross_validate(pts, families, 3, 1);
  EXPECT_TRUE(report.families[0].failed);
  EXPECT_THROW(select_best(report), Error);
}

TEST(CrossValidation, FailedFamilyRecorded) {
  std::vector<Point> pts;
  for (int i = 0; i < 12; ++i) pts.push_back({(i % 2) * 0.5, i / 12.0});
  const Family families[] = {Family::kLinear, Family::kQuadratic};
  const auto report = cross_validate(pts, families, 3, 2);
  EXPECT_FALSE(report.at(Family::kLinear).failed);
  EXPECT_TRUE(report.at(Family::kQuadratic).failed);
  EXPECT_EQ(select_best(report), Family::kLinear);
  EXPECT_NE(cv_report_to_csv(report).find("quadratic,failed"), std::string::npos);
}

TEST(Select, TiesGoToSimplerFamilyRegardlessOfOrder) {
  CvReport report;
  for (Family f : {Family::kTree, Family::kExponential, Family::kQuadratic, Family::kLinear}) {
    FamilyCv cv;
    cv.family = f;
    cv.mean_r2 = f == Family::kLinear ? 0.5 : 0.9;
    report.families.push_back(cv);
  }
  EXPECT_EQ(select_best(report), Family::kQuadratic);
  std::reverse(report.families.begin(), report.families.end());
  EXPECT_EQ(select_best(report), Family::kQuadratic);
  report.families[0].failed = true;  // linear
  report.families[1].failed = true;  // quadratic
  EXPECT_EQ(select_best(report), Family::kExponential);
}

TEST(Spearman, MatchesOracleWithTies) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> small(0, 5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> x(25);
    std::vector<double> y(25);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = small(rng);
      y[i] = x[i] + small(rng);
    }
    EXPECT_NEAR(spearman(x, y), oracle::spearman(x, y), 1e-12);
  }
}

TEST(Spearman, AverageRanks) {
  const std::vector<double> v = {10.0, 20.0, 10.0, 5.0};
  EXPECT_EQ(average_ranks(v), std::vector<double>({2.5, 4.0, 2.5, 1.0}));
  const std::vector<double> a = {1, 2, 3, 4};
  const std::vector<double> b = {1, 4, 9, 16};
  EXPECT_DOUBLE_EQ(spearman(a, b), 1.0);
}

TEST(ScoreMetrics, ThroughOriginSlope) {
  const std::vector<double> pred = {0.2, 0.4, 0.6, 0.8};
  const std::vector<double> actual = {0.1, 0.2, 0.3, 0.4};
  const auto m = score_metrics(actual, pred);
  EXPECT_DOUBLE_EQ(m.through_origin_slope, 0.5);
  EXPECT_NEAR(m.through_origin_r2, 1.0, 1e-12);
  EXPECT_NEAR(m.rmse, std::sqrt((0.01 + 0.04 + 0.09 + 0.16) / 4.0), 1e-12);
  EXPECT_NEAR(m.mmre, 1.0, 1e-12);
}

TEST(Serialization, FittedModelRoundTrip) {
  std::mt19937_64 rng(12);
  const auto pts = noisy_points(rng, 80, 0.1, 0.5, 0.1, 0.05);
  for (Family f : kAllFamilies) {
    const auto model = fit_regression(pts, f);
    const auto back = fitted_model_from_json(fitted_model_to_json(model));
    EXPECT_EQ(back.family, f);
    for (double x : {0.0, 0.33, 0.9}) EXPECT_EQ(back.predict(x), model.predict(x));
  }
  EXPECT_EQ(parse_family(family_name(Family::kExponential)), Family::kExponential);
  EXPECT_THROW(parse_family("cubic"), Error);
}

}  // namespace
}  // namespace fdrcast
