#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fdrcast/common.hpp"

namespace fdrcast {

// One (adequacy score, FDR) observation.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Declaration order is the simplicity order used to break R^2 ties.
enum class Family { kLinear, kQuadratic, kExponential, kTree };
inline constexpr Family kAllFamilies[] = {Family::kLinear, Family::kQuadratic, Family::kExponential, Family::kTree};

std::string family_name(Family family);
Family parse_family(const std::string& name);

struct TreeOptions {
  int max_depth = 5;
  int min_leaf = 5;
};

// Single-feature CART tree grown greedily on squared error.
class RegressionTree {
 public:
  struct Node {
    double threshold = 0.0;  // x <= threshold goes left
    int left = -1;           // -1 marks a leaf
    int right = -1;
    double value = 0.0;      // mean response of the node
    std::size_t count = 0;
    int depth = 0;
  };

  static RegressionTree fit(std::span<const Point> points, const TreeOptions& options);

  double predict(double x) const;
  int depth() const;
  std::size_t leaf_count() const;
  const std::vector<Node>& nodes() const { return nodes_; }

  nlohmann::json to_json() const;
  static RegressionTree from_json(const nlohmann::json& doc);

 private:
  std::vector<Node> nodes_;
};

struct FittedModel {
  Family family = Family::kLinear;
  // Linear: a, b (y = a + b x). Quadratic: a, b, c (y = a + b x + c x^2).
  // Exponential: a, b (y = a e^{b x}).
  std::vector<double> coefficients;
  RegressionTree tree;

  double predict(double x) const;
};

inline constexpr double kExponentialFloor = 1e-3;

FittedModel fit_regression(std::span<const Point> points, Family family, const TreeOptions& tree = {});

// ---------------------------------------------------------------------------
// Prediction intervals

enum class IntervalMethod { kParametricT, kBootstrapPercentile };
std::string interval_method_name(IntervalMethod method);

struct PredictionInterval {
  double center = 0.0;
  double low = 0.0;
  double high = 0.0;
  double level = 0.95;
  IntervalMethod method = IntervalMethod::kParametricT;
};

struct IntervalOptions {
  double level = 0.95;
  int bootstrap = 1000;
  std::uint64_t seed = 0;
  TreeOptions tree;
  int threads = 1;
};

// Residual statistics of a least-squares fit in its fitting space (log space
// for the exponential family).
struct ParametricStats {
  double sigma2 = 0.0;
  int dof = 0;
  Eigen::MatrixXd xtx_inverse;
};

// Interval machinery for one fitted model. Parametric families keep residual
// statistics; trees keep a seeded bootstrap ensemble refit on resampled points.
class IntervalModel {
 public:
  static IntervalModel build(const FittedModel& model, std::span<const Point> training, const IntervalOptions& options);

  // Center, low and high are clamped to [0, 1]. Throws for x outside [0, 1].
  PredictionInterval predict(double x) const;

  const FittedModel& model() const { return model_; }
  const ParametricStats& stats() const { return stats_; }

 private:
  FittedModel model_;
  IntervalOptions options_;
  ParametricStats stats_;
  std::vector<RegressionTree> ensemble_;
};

PredictionInterval predict_with_interval(const FittedModel& model, double x, std::span<const Point> training,
                                         const IntervalOptions& options = {});

// Percentile with linear interpolation between order statistics.
double percentile(std::vector<double> values, double q);

// ---------------------------------------------------------------------------
// Cross-validation and selection

struct FoldMetrics {
  double r2 = 0.0;    // NaN when the held-out fold has zero variance
  double mmre = 0.0;  // NaN when the held-out fold has no positive y
  double rmse = 0.0;
};

struct FamilyCv {
  Family family = Family::kLinear;
  bool failed = false;
  std::string failure;
  std::vector<FoldMetrics> folds;
  double mean_r2 = 0.0;
  double mean_mmre = 0.0;
  double mean_rmse = 0.0;
  int skipped_r2 = 0;
};

struct CvReport {
  int k = 5;
  std::vector<std::vector<std::size_t>> folds;
  std::vector<FamilyCv> families;

  const FamilyCv& at(Family family) const;
};

// Shuffles once with `seed` and cuts K contiguous folds whose sizes differ by
// at most one (larger folds first).
std::vector<std::vector<std::size_t>> make_folds(std::size_t n, int k, std::uint64_t seed);

CvReport cross_validate(std::span<const Point> points, std::span<const Family> families, int k, std::uint64_t seed,
                        const TreeOptions& tree = {}, int threads = 1);

// Highest mean R^2 among families that fitted; ties go to the simpler family.
Family select_best(const CvReport& report);

std::string cv_report_to_csv(const CvReport& report);

// ---------------------------------------------------------------------------
// Evaluation statistics

std::vector<double> average_ranks(std::span<const double> values);
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

struct FitMetrics {
  double r2 = 0.0;
  double mmre = 0.0;
  double rmse = 0.0;
  // Zero-intercept regression of y_true on y_pred.
  double through_origin_slope = 0.0;
  double through_origin_r2 = 0.0;
};

FitMetrics score_metrics(std::span<const double> y_true, std::span<const double> y_pred);

nlohmann::json fitted_model_to_json(const FittedModel& model);
FittedModel fitted_model_from_json(const nlohmann::json& doc);

}  // namespace fdrcast
