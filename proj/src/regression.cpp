#include "fdrcast/regression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "fdrcast/io.hpp"

namespace fdrcast {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int parameter_count(Family family) { return family == Family::kQuadratic ? 3 : 2; }

Eigen::VectorXd basis(Family family, double x) {
  Eigen::VectorXd phi(parameter_count(family));
  phi(0) = 1.0;
  phi(1) = x;
  if (family == Family::kQuadratic) phi(2) = x * x;
  return phi;
}

double response(Family family, double y) {
  return family == Family::kExponential ? std::log(std::max(y, kExponentialFloor)) : y;
}

struct LeastSquares {
  Eigen::VectorXd beta;
  Eigen::MatrixXd r;  // upper-triangular factor of the design
  double sse = 0.0;
};

LeastSquares solve_least_squares(std::span<const Point> points, Family family) {
  const int p = parameter_count(family);
  const auto n = static_cast<Eigen::Index>(points.size());
  if (n < p + 1) {
    throw Error(ErrorCode::kDegenerate, family_name(family) + " fit needs at least " + std::to_string(p + 1) +
                                            " points, got " + std::to_string(n));
  }
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = basis(family, points[static_cast<std::size_t>(i)].x).transpose();
    y(i) = response(family, points[static_cast<std::size_t>(i)].y);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> pivoted(x);
  if (pivoted.rank() < p) {
    throw Error(ErrorCode::kDegenerate,
                family_name(family) + " fit is rank deficient: too few distinct adequacy values");
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
  LeastSquares out;
  out.beta = qr.solve(y);
  out.r = qr.matrixQR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  out.sse = (y - x * out.beta).squaredNorm();
  return out;
}

}  // namespace

std::string family_name(Family family) {
  switch (family) {
    case Family::kLinear: return "linear";
    case Family::kQuadratic: return "quadratic";
    case Family::kExponential: return "exponential";
    case Family::kTree: return "tree";
  }
  return "unknown";
}

Family parse_family(const std::string& name) {
  for (Family f : kAllFamilies) {
    if (family_name(f) == name) return f;
  }
  throw Error(ErrorCode::kParse, "unknown regression family: " + name);
}

// ---------------------------------------------------------------------------
// Tree

RegressionTree RegressionTree::fit(std::span<const Point> points, const TreeOptions& options) {
  if (options.max_depth < 0 || options.min_leaf < 1) throw Error(ErrorCode::kConfig, "invalid tree options");
  const std::size_t min_leaf = static_cast<std::size_t>(options.min_leaf);
  if (points.size() < 2 * min_leaf) {
    throw Error(ErrorCode::kDegenerate, "tree fit needs at least " + std::to_string(2 * min_leaf) + " points, got " +
                                            std::to_string(points.size()));
  }
  std::vector<Point> sorted(points.begin(), points.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
  std::vector<double> prefix(sorted.size() + 1, 0.0);
  for (std::size_t i = 0; i < sorted.size(); ++i) prefix[i + 1] = prefix[i] + sorted[i].y;

  RegressionTree tree;
  // Each node covers a contiguous range of the x-sorted points.
  struct Pending {
    int node;
    std::size_t begin, end;
  };
  std::vector<Pending> stack;
  tree.nodes_.push_back(Node{});
  stack.push_back({0, 0, sorted.size()});
  while (!stack.empty()) {
    const Pending cur = stack.back();
    stack.pop_back();
    const std::size_t count = cur.end - cur.begin;
    const double total = prefix[cur.end] - prefix[cur.begin];
    {
      Node& node = tree.nodes_[static_cast<std::size_t>(cur.node)];
      node.count = count;
      node.value = total / static_cast<double>(count);
    }
    const int depth = tree.nodes_[static_cast<std::size_t>(cur.node)].depth;
    if (depth >= options.max_depth || count < 2 * min_leaf) continue;

    const double parent_term = total * total / static_cast<double>(count);
    double best_gain = 0.0;
    std::size_t best_split = 0;
    for (std::size_t k = cur.begin + min_leaf; k + min_leaf <= cur.end; ++k) {
      if (sorted[k - 1].x == sorted[k].x) continue;
      const double left = prefix[k] - prefix[cur.begin];
      const double right = total - left;
      const auto nl = static_cast<double>(k - cur.begin);
      const auto nr = static_cast<double>(cur.end - k);
      const double gain = left * left / nl + right * right / nr - parent_term;
      if (gain > best_gain + 1e-12) {
        best_gain = gain;
        best_split = k;
      }
    }
    if (best_split == 0) continue;

    const int left_id = static_cast<int>(tree.nodes_.size());
    const int right_id = left_id + 1;
    Node child;
    child.depth = depth + 1;
    tree.nodes_.push_back(child);
    tree.nodes_.push_back(child);
    Node& node = tree.nodes_[static_cast<std::size_t>(cur.node)];
    node.threshold = 0.5 * (sorted[best_split - 1].x + sorted[best_split].x);
    node.left = left_id;
    node.right = right_id;
    stack.push_back({right_id, best_split, cur.end});
    stack.push_back({left_id, cur.begin, best_split});
  }
  return tree;
}

double RegressionTree::predict(double x) const {
  if (nodes_.empty()) throw Error(ErrorCode::kInvalidArgument, "predict on an unfitted tree");
  std::size_t i = 0;
  while (nodes_[i].left >= 0) {
    i = static_cast<std::size_t>(x <= nodes_[i].threshold ? nodes_[i].left : nodes_[i].right);
  }
  return nodes_[i].value;
}

int RegressionTree::depth() const {
  int d = 0;
  for (const auto& n : nodes_) d = std::max(d, n.depth);
  return d;
}

std::size_t RegressionTree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.left < 0; }));
}

json RegressionTree::to_json() const {
  json nodes = json::array();
  for (const auto& n : nodes_) {
    nodes.push_back({{"threshold", n.threshold},
                     {"left", n.left},
                     {"right", n.right},
                     {"value", n.value},
                     {"count", n.count},
                     {"depth", n.depth}});
  }
  return nodes;
}

RegressionTree RegressionTree::from_json(const json& doc) {
  RegressionTree tree;
  for (const auto& n : doc) {
    Node node;
    node.threshold = n.at("threshold").get<double>();
    node.left = n.at("left").get<int>();
    node.right = n.at("right").get<int>();
    node.value = n.at("value").get<double>();
    node.count = n.at("count").get<std::size_t>();
    node.depth = n.at("depth").get<int>();
    tree.nodes_.push_back(node);
  }
  const auto size = static_cast<int>(tree.nodes_.size());
  if (size == 0) throw Error(ErrorCode::kParse, "tree has no nodes");
  for (const auto& n : tree.nodes_) {
    if ((n.left >= 0) != (n.right >= 0) || n.left >= size || n.right >= size) {
      throw Error(ErrorCode::kParse, "tree node has invalid children");
    }
  }
  return tree;
}

// ---------------------------------------------------------------------------
// Parametric fits

double FittedModel::predict(double x) const {
  switch (family) {
    case Family::kLinear: return coefficients.at(0) + coefficients.at(1) * x;
    case Family::kQuadratic: return coefficients.at(0) + coefficients.at(1) * x + coefficients.at(2) * x * x;
    case Family::kExponential: return coefficients.at(0) * std::exp(coefficients.at(1) * x);
    case Family::kTree: return tree.predict(x);
  }
  return kNaN;
}

FittedModel fit_regression(std::span<const Point> points, Family family, const TreeOptions& tree) {
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw Error(ErrorCode::kInvalidArgument, "non-finite point");
  }
  FittedModel model;
  model.family = family;
  if (family == Family::kTree) {
    model.tree = RegressionTree::fit(points, tree);
    return model;
  }
  const auto ls = solve_least_squares(points, family);
  model.coefficients.assign(ls.beta.data(), ls.beta.data() + ls.beta.size());
  if (family == Family::kExponential) model.coefficients[0] = std::exp(model.coefficients[0]);
  return model;
}

// ---------------------------------------------------------------------------
// Intervals

std::string interval_method_name(IntervalMethod method) {
  return method == IntervalMethod::kParametricT ? "parametric_t" : "bootstrap_percentile";
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "percentile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "percentile q outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

IntervalModel IntervalModel::build(const FittedModel& model, std::span<const Point> training,
                                   const IntervalOptions& options) {
  if (!(options.level > 0.0 && options.level < 1.0)) throw Error(ErrorCode::kConfig, "interval level outside (0, 1)");
  IntervalModel out;
  out.model_ = model;
  out.options_ = options;
  if (model.family == Family::kTree) {
    if (options.bootstrap < 2) throw Error(ErrorCode::kConfig, "bootstrap count must be >= 2");
    const std::size_t n = training.size();
    if (n == 0) throw Error(ErrorCode::kInvalidArgument, "bootstrap needs training points");
    out.ensemble_.resize(static_cast<std::size_t>(options.bootstrap));
    parallel_for(out.ensemble_.size(), options.threads, [&](std::size_t b) {
      std::mt19937_64 rng(derive_seed(options.seed, Stream::kBootstrap, b));
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      std::vector<Point> resample(n);
      for (auto& p : resample) p = training[pick(rng)];
      out.ensemble_[b] = RegressionTree::fit(resample, options.tree);
    });
    return out;
  }
  const auto ls = solve_least_squares(training, model.family);
  const int p = parameter_count(model.family);
  const Eigen::MatrixXd r_inv =
      ls.r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  out.stats_.dof = static_cast<int>(training.size()) - p;
  out.stats_.sigma2 = ls.sse / out.stats_.dof;
  out.stats_.xtx_inverse = r_inv * r_inv.transpose();
  return out;
}

PredictionInterval IntervalModel::predict(double x) const {
  if (!(x >= 0.0 && x <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "adequacy score outside [0, 1]");
  PredictionInterval pi;
  pi.level = options_.level;
  const double alpha = 1.0 - options_.level;
  if (model_.family == Family::kTree) {
    pi.method = IntervalMethod::kBootstrapPercentile;
    std::vector<double> preds(ensemble_.size());
    for (std::size_t b = 0; b < ensemble_.size(); ++b) preds[b] = ensemble_[b].predict(x);
    pi.center = model_.predict(x);
    pi.low = percentile(preds, alpha / 2.0);
    pi.high = percentile(std::move(preds), 1.0 - alpha / 2.0);
  } else {
    pi.method = IntervalMethod::kParametricT;
    const Eigen::VectorXd phi = basis(model_.family, x);
    const double leverage = phi.dot(stats_.xtx_inverse * phi);
    const double se = std::sqrt(stats_.sigma2 * (1.0 + leverage));
    const boost::math::students_t dist(stats_.dof);
    const double t = boost::math::quantile(dist, 1.0 - alpha / 2.0);
    if (model_.family == Family::kExponential) {
      const double center = std::log(model_.coefficients[0]) + model_.coefficients[1] * x;
      pi.center = std::exp(center);
      pi.low = std::exp(center - t * se);
      pi.high = std::exp(center + t * se);
    } else {
      pi.center = model_.predict(x);
      pi.low = pi.center - t * se;
      pi.high = pi.center + t * se;
    }
  }
  pi.center = std::clamp(pi.center, 0.0, 1.0);
  pi.low = std::clamp(pi.low, 0.0, 1.0);
  pi.high = std::clamp(pi.high, 0.0, 1.0);
  return pi;
}

PredictionInterval predict_with_interval(const FittedModel& model, double x, std::span<const Point> training,
                                         const IntervalOptions& options) {
  return IntervalModel::build(model, training, options).predict(x);
}

// ---------------------------------------------------------------------------
// Cross-validation

const FamilyCv& CvReport::at(Family family) const {
  for (const auto& f : families) {
    if (f.family == family) return f;
  }
  throw Error(ErrorCode::kInvalidArgument, "family not in CV report: " + family_name(family));
}

std::vector<std::vector<std::size_t>> make_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::kConfig, "cross-validation needs K >= 2");
  if (n < static_cast<std::size_t>(k)) {
    throw Error(ErrorCode::kDegenerate,
                "cross-validation needs at least " + std::to_string(k) + " points, got " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto folds_k = static_cast<std::size_t>(k);
  std::vector<std::vector<std::size_t>> folds(folds_k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds_k; ++f) {
    const std::size_t size = n / folds_k + (f < n % folds_k ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                    order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return folds;
}

namespace {

FoldMetrics fold_metrics(std::span<const double> y, std::span<const double> pred) {
  FoldMetrics m;
  const auto n = static_cast<double>(y.size());
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sse = 0.0;
  double sst = 0.0;
  double rel = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = pred[i] - y[i];
    sse += e * e;
    sst += (y[i] - mean) * (y[i] - mean);
    if (y[i] > 0.0) {
      rel += std::abs(e) / y[i];
      ++positives;
    }
  }
  m.r2 = sst > 0.0 ? 1.0 - sse / sst : kNaN;
  m.mmre = positives > 0 ? rel / static_cast<double>(positives) : kNaN;
  m.rmse = std::sqrt(sse / n);
  return m;
}

double nan_mean(const std::vector<FoldMetrics>& folds, double FoldMetrics::*field, int* skipped) {
  double sum = 0.0;
  int used = 0;
  int missing = 0;
  for (const auto& f : folds) {
    const double v = f.*field;
    if (std::isnan(v)) {
      ++missing;
    } else {
      sum += v;
      ++used;
    }
  }
  if (skipped != nullptr) *skipped = missing;
  return used > 0 ? sum / used : kNaN;
}

}  // namespace

CvReport cross_validate(std::span<const Point> points, std::span<const Family> families, int k, std::uint64_t seed,
                        const TreeOptions& tree, int threads) {
  CvReport report;
  report.k = k;
  report.folds = make_folds(points.size(), k, seed);
  report.families.resize(families.size());
  parallel_for(families.size(), threads, [&](std::size_t fi) {
    FamilyCv& cv = report.families[fi];
    cv.family = families[fi];
    try {
      for (std::size_t f = 0; f < report.folds.size(); ++f) {
        std::vector<Point> train;
        train.reserve(points.size());
        for (std::size_t g = 0; g < report.folds.size(); ++g) {
          if (g == f) continue;
          for (std::size_t idx : report.folds[g]) train.push_back(points[idx]);
        }
        const FittedModel model = fit_regression(train, cv.family, tree);
        std::vector<double> y;
        std::vector<double> pred;
        for (std::size_t idx : report.folds[f]) {
          y.push_back(points[idx].y);
          pred.push_back(model.predict(points[idx].x));
        }
        cv.folds.push_back(fold_metrics(y, pred));
      }
      cv.mean_r2 = nan_mean(cv.folds, &FoldMetrics::r2, &cv.skipped_r2);
      cv.mean_mmre = nan_mean(cv.folds, &FoldMetrics::mmre, nullptr);
      cv.mean_rmse = nan_mean(cv.folds, &FoldMetrics::rmse, nullptr);
      if (std::isnan(cv.mean_r2)) {
        cv.failed = true;
        cv.failure = "every held-out fold has zero FDR variance";
      }
    } catch (const Error& e) {
      cv.failed = true;
      cv.failure = e.what();
      cv.folds.clear();
    }
  });
  return report;
}

Family select_best(const CvReport& report) {
  const FamilyCv* best = nullptr;
  for (const auto& f : report.families) {
    if (f.failed) continue;
    if (best == nullptr || f.mean_r2 > best->mean_r2 ||
        (f.mean_r2 == best->mean_r2 && static_cast<int>(f.family) < static_cast<int>(best->family))) {
      best = &f;
    }
  }
  if (best == nullptr) {
    std::string reasons;
    for (const auto& f : report.families) reasons += " " + family_name(f.family) + ": " + f.failure + ";";
    throw Error(ErrorCode::kDegenerate, "no regression family could be fitted:" + reasons);
  }
  return best->family;
}

std::string cv_report_to_csv(const CvReport& report) {
  std::ostringstream out;
  out << "family,fold,r2,mmre,rmse\n";
  auto cell = [](double v) { return std::isnan(v) ? std::string("nan") : io::format_double(v); };
  for (const auto& f : report.families) {
    if (f.failed) {
      out << family_name(f.family) << ",failed,nan,nan,nan\n";
      continue;
    }
    for (std::size_t i = 0; i < f.folds.size(); ++i) {
      out << family_name(f.family) << ',' << i << ',' << cell(f.folds[i].r2) << ',' << cell(f.folds[i].mmre) << ','
          << cell(f.folds[i].rmse) << '\n';
    }
    out << family_name(f.family) << ",mean," << cell(f.mean_r2) << ',' << cell(f.mean_mmre) << ','
        << cell(f.mean_rmse) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Statistics

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::kDimensionMismatch, "pearson: length mismatch");
  if (x.size() < 2) throw Error(ErrorCode::kInvalidArgument, "pearson needs at least two points");
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::kDegenerate, "correlation of a constant series");
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::kDimensionMismatch, "spearman: length mismatch");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

FitMetrics score_metrics(std::span<const double> y_true, std::span<const double> y_pred) {
  if (y_true.size() != y_pred.size()) throw Error(ErrorCode::kDimensionMismatch, "score_metrics: length mismatch");
  if (y_true.empty()) throw Error(ErrorCode::kInvalidArgument, "score_metrics on empty input");
  FitMetrics m;
  const FoldMetrics base = fold_metrics(y_true, y_pred);
  m.r2 = base.r2;
  m.mmre = base.mmre;
  m.rmse = base.rmse;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    sxy += y_pred[i] * y_true[i];
    sxx += y_pred[i] * y_pred[i];
  }
  if (sxx == 0.0) throw Error(ErrorCode::kDegenerate, "through-origin slope undefined: all predictions are zero");
  m.through_origin_slope = sxy / sxx;
  const double mean = std::accumulate(y_true.begin(), y_true.end(), 0.0) / static_cast<double>(y_true.size());
  double sse = 0.0;
  double sst = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double e = y_true[i] - m.through_origin_slope * y_pred[i];
    sse += e * e;
    sst += (y_true[i] - mean) * (y_true[i] - mean);
  }
  m.through_origin_r2 = sst > 0.0 ? 1.0 - sse / sst : kNaN;
  return m;
}

json fitted_model_to_json(const FittedModel& model) {
  json doc = {{"family", family_name(model.family)}};
  if (model.family == Family::kTree) {
    doc["tree"] = model.tree.to_json();
  } else {
    doc["coefficients"] = model.coefficients;
  }
  return doc;
}

FittedModel fitted_model_from_json(const json& doc) {
  FittedModel model;
  try {
    model.family = parse_family(doc.at("family").get<std::string>());
    if (model.family == Family::kTree) {
      model.tree = RegressionTree::from_json(doc.at("tree"));
    } else {
      model.coefficients = doc.at("coefficients").get<std::vector<double>>();
      if (model.coefficients.size() != static_cast<std::size_t>(parameter_count(model.family))) {
        throw Error(ErrorCode::kParse, "wrong coefficient count for " + family_name(model.family));
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("regression model: ") + e.what());
  }
  return model;
}

}  // namespace fdrcast
