#pragma once

// Slow, independent reference implementations used to cross-check the
// library. They work from definitions with plain loops and share no code with
// the code under test.

#include <cstddef>
#include <span>
#include <vector>

#include "fdrcast/faults.hpp"
#include "fdrcast/mutation.hpp"
#include "fdrcast/regression.hpp"

namespace fdrcast::oracle {

// Duplicate indices count once for kill decisions.
double ms_standard(const OutcomeMatrix& o, std::span<const std::size_t> subset);
double ms_deepmutation(const OutcomeMatrix& o, std::span<const std::size_t> subset, int num_classes);
// Averages over the multiset.
double ms_killing_score(const OutcomeMatrix& o, std::span<const std::size_t> subset);

// Ranks by counting (ties share the mean position), then the textbook
// correlation formula.
double spearman(std::span<const double> x, std::span<const double> y);

// Mean silhouette over non-noise points; singleton clusters contribute 0.
double silhouette(const Matrix& points, const std::vector<int>& labels);

// Least squares through the normal equations solved by Gauss-Jordan
// elimination in long double. `degree` 1 or 2 gives polynomial features.
std::vector<double> polynomial_ols(std::span<const Point> points, int degree);

// Cluster id of the nearest core point to the projected feature; the
// projection is recomputed with explicit loops.
int nearest_core(std::span<const double> feature, const FaultClusters& clusters);

// Per-fold R^2, MMRE and RMSE of a polynomial fit of `degree` replayed on the
// given folds.
std::vector<FoldMetrics> polynomial_cv(std::span<const Point> points,
                                       const std::vector<std::vector<std::size_t>>& folds, int degree);

double fdr(const MispredictionMap& map, std::span<const std::size_t> subset, std::size_t denominator);

}  // namespace fdrcast::oracle
