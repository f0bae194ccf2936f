#include "fdrcast/assess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "fdrcast/io.hpp"

namespace fdrcast {

using nlohmann::json;

std::string metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::kMsStandard: return "ms_standard";
    case MetricKind::kMsDeepMutation: return "ms_deepmutation";
    case MetricKind::kMsKs: return "ms_ks";
    case MetricKind::kDsc: return "dsc";
    case MetricKind::kLsc: return "lsc";
    case MetricKind::kIdc: return "idc";
  }
  return "unknown";
}

MetricKind parse_metric(const std::string& name) {
  for (MetricKind k : kAllMetrics) {
    if (metric_name(k) == name) return k;
  }
  throw Error(ErrorCode::kConfig, "metric: unknown adequacy metric '" + name + "'");
}

bool is_mutation_metric(MetricKind kind) {
  return kind == MetricKind::kMsStandard || kind == MetricKind::kMsDeepMutation || kind == MetricKind::kMsKs;
}

namespace {

MsVariant variant_of(MetricKind kind) {
  switch (kind) {
    case MetricKind::kMsStandard: return MsVariant::kStandard;
    case MetricKind::kMsDeepMutation: return MsVariant::kDeepMutation;
    default: return MsVariant::kKillingScore;
  }
}

void check_rows(const std::optional<Matrix>& m, std::size_t rows, const char* what) {
  if (m && static_cast<std::size_t>(m->rows()) != rows) {
    throw Error(ErrorCode::kDimensionMismatch, std::string(what) + " has " + std::to_string(m->rows()) +
                                                   " rows but the dataset has " + std::to_string(rows));
  }
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

// Tree intervals are raw bootstrap percentiles and may miss the point estimate.
PredictionInterval enclose_center(PredictionInterval pi) {
  pi.low = std::min(pi.low, pi.center);
  pi.high = std::max(pi.high, pi.center);
  return pi;
}

json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double number_from(const json& v) {
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

}  // namespace

bool DatasetArtifacts::labeled() const {
  return !labels.empty() && std::all_of(labels.begin(), labels.end(), [](int l) { return l >= 0; });
}

DatasetArtifacts DatasetArtifacts::without_labels() const {
  DatasetArtifacts out = *this;
  out.labels.assign(size(), -1);
  return out;
}

int resolve_trace_layer(const Model& model, int layer_index) {
  const int layers = static_cast<int>(model.layers.size());
  if (layer_index < 0) return std::max(0, layers - 2);
  if (layer_index >= layers) {
    throw Error(ErrorCode::kConfig, "surprise.layer_index " + std::to_string(layer_index) + " out of range");
  }
  return layer_index;
}

Matrix traces_for(const Model& model, const DatasetArtifacts& data, int layer_index, int threads) {
  if (data.traces) {
    check_rows(data.traces, data.size(), "trace matrix");
    return *data.traces;
  }
  return activation_traces(model, data.inputs, resolve_trace_layer(model, layer_index), threads);
}

const Matrix& fault_features(const DatasetArtifacts& data) {
  if (data.features) {
    check_rows(data.features, data.size(), "feature matrix");
    return *data.features;
  }
  return data.inputs;
}

// ---------------------------------------------------------------------------
// AdequacyMetric

AdequacyMetric AdequacyMetric::prepare(MetricKind kind, const Model& model, const DatasetArtifacts& train,
                                       const MetricOptions& options, const std::vector<Mutant>* pool,
                                       const std::string& pool_digest, int threads) {
  AdequacyMetric m;
  m.kind_ = kind;
  m.model_ = std::make_shared<const Model>(model);
  m.config_ = {{"metric", metric_name(kind)}};
  std::string artifact_digest;

  if (is_mutation_metric(kind)) {
    if (pool == nullptr || pool->empty()) throw Error(ErrorCode::kEmptyPool, "mutation metric needs a nonempty pool");
    m.pool_ = std::make_shared<const std::vector<Mutant>>(*pool);
    m.config_["variant"] = ms_variant_name(variant_of(kind));
    m.config_["num_classes"] = model.num_classes;
    m.config_["num_mutants"] = pool->size();
    artifact_digest = pool_digest;
  } else if (kind == MetricKind::kDsc || kind == MetricKind::kLsc) {
    m.sc_.kind = kind == MetricKind::kDsc ? SaKind::kDSA : SaKind::kLSA;
    m.sc_.layer_index = resolve_trace_layer(model, options.sc_layer);
    m.sc_.n_buckets = options.sc_buckets;
    auto traces = std::make_shared<Matrix>(traces_for(model, train, m.sc_.layer_index, threads));
    const auto sa = surprise_adequacy(*traces, *traces, m.sc_.kind, true, threads);
    const auto [lo, hi] = std::minmax_element(sa.begin(), sa.end());
    m.sc_.lower = *lo;
    m.sc_.upper = *hi;
    if (!(m.sc_.lower < m.sc_.upper)) {
      throw Error(ErrorCode::kDegenerate, "training surprise values are constant; SC bounds undefined");
    }
    m.sc_.validate();
    m.train_traces_ = traces;
    m.config_["sa_kind"] = sa_kind_name(m.sc_.kind);
    m.config_["layer_index"] = m.sc_.layer_index;
    m.config_["n_buckets"] = m.sc_.n_buckets;
    m.config_["lower"] = m.sc_.lower;
    m.config_["upper"] = m.sc_.upper;
    artifact_digest = io::sha256_hex(io::matrix_to_csv(*traces));
  } else {
    if (!train.latents) throw Error(ErrorCode::kConfig, "paths.train_latents: idc needs training latent codes");
    check_rows(train.latents, train.size(), "latent matrix");
    m.latent_ = LatentConfig::fit(*train.latents, options.idc_bins);
    m.config_["dims"] = m.latent_.dims;
    m.config_["bins"] = m.latent_.bins;
    m.config_["min"] = m.latent_.min;
    m.config_["max"] = m.latent_.max;
  }
  m.finalize(artifact_digest);
  return m;
}

void AdequacyMetric::finalize(const std::string& artifact_digest) {
  digest_ = io::sha256_hex(config_.dump() + "\n" + io::sha256_hex(model_to_string(*model_)) + "\n" + artifact_digest);
}

SubsetScorer AdequacyMetric::scorer(const DatasetArtifacts& data, bool training, int threads) const {
  if (data.size() == 0) throw Error(ErrorCode::kInvalidArgument, "cannot score an empty dataset");
  if (is_mutation_metric(kind_)) {
    std::vector<int> labels = data.labels;
    if (labels.empty()) labels.assign(data.size(), -1);
    const auto outcomes = precompute_outcomes(*model_, *pool_, data.inputs, labels, threads);
    auto scorer = std::make_shared<const MutationScorer>(outcomes, model_->num_classes);
    const MsVariant variant = variant_of(kind_);
    return [scorer, variant](std::span<const std::size_t> idx) { return scorer->score(idx, variant); };
  }
  if (kind_ == MetricKind::kDsc || kind_ == MetricKind::kLsc) {
    const Matrix traces = traces_for(*model_, data, sc_.layer_index, threads);
    if (traces.cols() != train_traces_->cols()) {
      throw Error(ErrorCode::kDimensionMismatch, "trace width differs from the training traces");
    }
    const auto sa = surprise_adequacy(traces, *train_traces_, sc_.kind, training, threads);
    auto coverage = std::make_shared<const CellCoverage>(CellCoverage::for_surprise(sa, sc_));
    return [coverage](std::span<const std::size_t> idx) { return coverage->score(idx); };
  }
  if (!data.latents) throw Error(ErrorCode::kConfig, "idc needs latent codes for every scored dataset");
  check_rows(data.latents, data.size(), "latent matrix");
  auto coverage = std::make_shared<const CellCoverage>(CellCoverage::for_latents(*data.latents, latent_));
  return [coverage](std::span<const std::size_t> idx) { return coverage->score(idx); };
}

// ---------------------------------------------------------------------------
// Build

std::string points_digest(const std::vector<Point>& points) {
  std::string text;
  for (const auto& p : points) {
    text += io::format_double(p.x);
    text += ',';
    text += io::format_double(p.y);
    text += '\n';
  }
  return io::sha256_hex(text);
}

std::vector<Point> archive_points(const std::vector<ArchiveRecord>& archive, const std::string& metric) {
  std::vector<Point> points;
  points.reserve(archive.size());
  for (const auto& r : archive) {
    const auto it = r.scores.find(metric);
    if (it == r.scores.end()) throw Error(ErrorCode::kParse, "archive record lacks a score for " + metric);
    points.push_back({it->second, r.fdr});
  }
  return points;
}

TrainingFaults estimate_training_faults(const Model& model, const DatasetArtifacts& train,
                                        const ClusteringConfig& clustering, std::uint64_t seed, int threads) {
  if (!train.labeled() || train.labels.size() != train.size()) {
    throw Error(ErrorCode::kInvalidArgument, "fault estimation needs a labeled training set");
  }
  const auto predictions = predict_all(model, train.inputs, threads);
  std::vector<std::size_t> wrong;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (predictions[i] != train.labels[i]) wrong.push_back(i);
  }
  if (wrong.empty()) throw Error(ErrorCode::kClustering, "the model mispredicts no training input");
  const Matrix& features = fault_features(train);
  Matrix rows(static_cast<Eigen::Index>(wrong.size()), features.cols());
  for (std::size_t r = 0; r < wrong.size(); ++r) {
    rows.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(wrong[r]));
  }
  ClusteringConfig config = clustering;
  config.seed = derive_seed(seed, Stream::kClustering);
  TrainingFaults out;
  out.clusters = estimate_faults(rows, wrong, config, threads);
  out.map = training_misprediction_map(out.clusters, train.size());
  return out;
}

BuildResult build_prediction_model(const Model& model, const DatasetArtifacts& train, const AdequacyMetric& metric,
                                   const ClusteringConfig& clustering, const SamplerOptions& sampler,
                                   const RegressionOptions& regression, std::uint64_t seed, int threads) {
  const std::size_t n = train.size();
  BuildResult out;
  auto faults = estimate_training_faults(model, train, clustering, seed, threads);
  out.faults = std::move(faults.clusters);
  out.train_map = std::move(faults.map);
  const FdrCalculator fdr_fn(out.train_map, out.faults.size(), false);

  const std::string name = metric_name(metric.kind());
  const std::size_t min_size =
      sampler.mode == SubsetMode::kUniform ? static_cast<std::size_t>(model.num_classes) : 1;
  SamplerState state(sampler, n, min_size);
  out.archive = build_archive(train.labels, model.num_classes, {{name, metric.scorer(train, true, threads)}},
                              [&fdr_fn](std::span<const std::size_t> idx) { return fdr_fn(idx); }, state, seed,
                              threads);

  FdrPredictor& p = out.predictor;
  p.metric = metric.kind();
  p.as_config = metric.config();
  p.as_digest = metric.digest();
  p.num_clusters = out.faults.size();
  p.points = archive_points(out.archive, name);
  p.points_digest = points_digest(p.points);
  const auto [fmin, fmax] = std::minmax_element(p.points.begin(), p.points.end(),
                                                [](const Point& a, const Point& b) { return a.y < b.y; });
  if (fmin->y == fmax->y) {
    throw Error(ErrorCode::kDegenerate, "archive FDR has zero variance (constant " + io::format_double(fmin->y) + ")");
  }
  const auto [amin, amax] = std::minmax_element(p.points.begin(), p.points.end(),
                                                [](const Point& a, const Point& b) { return a.x < b.x; });
  p.min_as = amin->x;
  p.max_as = amax->x;

  p.cv = cross_validate(p.points, kAllFamilies, regression.k, derive_seed(seed, Stream::kCrossValidation),
                        regression.tree, threads);
  const Family family = select_best(p.cv);
  p.model = fit_regression(p.points, family, regression.tree);
  p.interval.level = regression.level;
  p.interval.bootstrap = regression.bootstrap;
  p.interval.seed = derive_seed(seed, Stream::kBootstrap);
  p.interval.tree = regression.tree;
  p.interval.threads = threads;
  return out;
}

json FdrPredictor::to_json(const std::string& archive_file) const {
  json pi = {{"method", interval_method_name(model.family == Family::kTree ? IntervalMethod::kBootstrapPercentile
                                                                          : IntervalMethod::kParametricT)},
             {"level", interval.level}};
  if (model.family == Family::kTree) {
    pi["bootstrap_seeds"] = {{"root", interval.seed}, {"count", interval.bootstrap}};
  } else {
    const auto stats = IntervalModel::build(model, points, interval).stats();
    json inv = json::array();
    for (Eigen::Index r = 0; r < stats.xtx_inverse.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < stats.xtx_inverse.cols(); ++c) row.push_back(stats.xtx_inverse(r, c));
      inv.push_back(row);
    }
    pi["residual_stats"] = {{"sigma2", stats.sigma2}, {"dof", stats.dof}, {"xtx_inverse", inv}};
  }
  json families = json::array();
  for (const auto& f : cv.families) {
    json entry = {{"family", family_name(f.family)}, {"failed", f.failed}};
    if (f.failed) {
      entry["failure"] = f.failure;
    } else {
      entry["mean_r2"] = number_or_null(f.mean_r2);
      entry["mean_mmre"] = number_or_null(f.mean_mmre);
      entry["mean_rmse"] = number_or_null(f.mean_rmse);
      entry["skipped_r2_folds"] = f.skipped_r2;
    }
    families.push_back(entry);
  }
  return {{"metric", metric_name(metric)},
          {"family", family_name(model.family)},
          {"params", fitted_model_to_json(model)},
          {"training_points_digest", points_digest},
          {"pi", pi},
          {"as_config", as_config},
          {"as_digest", as_digest},
          {"archive", archive_file},
          {"training_as_range", {min_as, max_as}},
          {"num_clusters", num_clusters},
          {"tree", {{"max_depth", interval.tree.max_depth}, {"min_leaf", interval.tree.min_leaf}}},
          {"cv", {{"k", cv.k}, {"families", families}}}};
}

FdrPredictor predictor_from_json(const json& doc, const std::vector<Point>& points) {
  FdrPredictor p;
  try {
    p.metric = parse_metric(doc.at("metric").get<std::string>());
    p.model = fitted_model_from_json(doc.at("params"));
    if (family_name(p.model.family) != doc.at("family").get<std::string>()) {
      throw Error(ErrorCode::kParse, "predictor family disagrees with its parameters");
    }
    p.points_digest = doc.at("training_points_digest").get<std::string>();
    p.as_config = doc.at("as_config");
    p.as_digest = doc.at("as_digest").get<std::string>();
    const auto& pi = doc.at("pi");
    p.interval.level = pi.at("level").get<double>();
    p.interval.tree.max_depth = doc.at("tree").at("max_depth").get<int>();
    p.interval.tree.min_leaf = doc.at("tree").at("min_leaf").get<int>();
    if (p.model.family == Family::kTree) {
      p.interval.seed = pi.at("bootstrap_seeds").at("root").get<std::uint64_t>();
      p.interval.bootstrap = pi.at("bootstrap_seeds").at("count").get<int>();
    }
    const auto& range = doc.at("training_as_range");
    p.min_as = range.at(0).get<double>();
    p.max_as = range.at(1).get<double>();
    p.num_clusters = doc.at("num_clusters").get<std::size_t>();
    p.cv.k = doc.at("cv").at("k").get<int>();
    for (const auto& f : doc.at("cv").at("families")) {
      FamilyCv cv;
      cv.family = parse_family(f.at("family").get<std::string>());
      cv.failed = f.at("failed").get<bool>();
      if (cv.failed) {
        cv.failure = f.value("failure", std::string());
      } else {
        cv.mean_r2 = number_from(f.at("mean_r2"));
        cv.mean_mmre = number_from(f.at("mean_mmre"));
        cv.mean_rmse = number_from(f.at("mean_rmse"));
        cv.skipped_r2 = f.at("skipped_r2_folds").get<int>();
      }
      p.cv.families.push_back(cv);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("predictor file: ") + e.what());
  }
  p.points = points;
  if (points_digest(points) != p.points_digest) {
    throw Error(ErrorCode::kDigestMismatch, "archive contents do not match the predictor's training points");
  }
  return p;
}

// ---------------------------------------------------------------------------
// Assess and evaluate

json Assessment::to_json() const {
  return {{"metric", metric_name(metric)},
          {"as", as_value},
          {"fdr_hat", fdr_hat},
          {"pi_low", pi.low},
          {"pi_high", pi.high},
          {"level", pi.level},
          {"method", interval_method_name(pi.method)},
          {"extrapolated", extrapolated}};
}

namespace {

void check_digest(const FdrPredictor& predictor, const AdequacyMetric& metric) {
  if (metric.kind() != predictor.metric) {
    throw Error(ErrorCode::kDigestMismatch, "predictor was built for " + metric_name(predictor.metric) + ", not " +
                                                metric_name(metric.kind()));
  }
  if (metric.digest() != predictor.as_digest) {
    throw Error(ErrorCode::kDigestMismatch, "adequacy configuration changed since build (digest " +
                                                metric.digest().substr(0, 12) + " vs " +
                                                predictor.as_digest.substr(0, 12) + ")");
  }
}

}  // namespace

Assessment assess_test_set(const FdrPredictor& predictor, const IntervalModel& intervals,
                           const AdequacyMetric& metric, const DatasetArtifacts& test, int threads) {
  if (test.size() == 0) throw Error(ErrorCode::kInvalidArgument, "cannot assess an empty test set");
  check_digest(predictor, metric);
  const auto score = metric.scorer(test.without_labels(), false, threads);
  const auto idx = all_indices(test.size());
  Assessment a;
  a.metric = predictor.metric;
  a.as_value = score(idx);
  if (!(a.as_value >= 0.0 && a.as_value <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "adequacy score " + io::format_double(a.as_value) + " outside [0, 1]");
  }
  a.pi = enclose_center(intervals.predict(a.as_value));
  a.fdr_hat = a.pi.center;
  a.extrapolated = a.as_value < predictor.min_as || a.as_value > predictor.max_as;
  return a;
}

EvaluationReport evaluate_predictor(const FdrPredictor& predictor, const IntervalModel& intervals,
                                    const AdequacyMetric& metric, const Model& model, const DatasetArtifacts& test,
                                    const FaultClusters& faults, int sn, const std::vector<std::size_t>& sizes,
                                    SubsetMode mode, std::uint64_t seed, int threads) {
  if (!test.labeled() || test.labels.size() != test.size()) {
    throw Error(ErrorCode::kInvalidArgument, "evaluation needs a labeled test set");
  }
  if (sizes.empty()) throw Error(ErrorCode::kInvalidArgument, "evaluation needs at least one subset size");
  check_digest(predictor, metric);

  const auto predictions = predict_all(model, test.inputs, threads);
  std::vector<bool> mispredicted(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) mispredicted[i] = predictions[i] != test.labels[i];
  const auto map = assign_mispredictions(fault_features(test), mispredicted, faults, threads);

  EvaluationReport report;
  report.detectable_clusters = detectable_clusters(map, faults.size());
  if (report.detectable_clusters == 0) {
    throw Error(ErrorCode::kDegenerate, "no fault cluster is detectable by the test set");
  }
  const FdrCalculator actual(map, faults.size(), true);
  const auto score = metric.scorer(test.without_labels(), false, threads);

  const std::uint64_t eval_seed = derive_seed(seed, Stream::kEvaluation);
  for (std::size_t size : sizes) {
    const auto subsets = sample_subsets(test.labels, model.num_classes, size, sn, mode, eval_seed);
    std::vector<EvaluationRow> rows(subsets.size());
    parallel_for(subsets.size(), threads, [&](std::size_t i) {
      EvaluationRow& row = rows[i];
      row.size = size;
      row.as_value = score(subsets[i].indices);
      const auto pi = enclose_center(intervals.predict(row.as_value));
      row.fdr_hat = pi.center;
      row.pi_low = pi.low;
      row.pi_high = pi.high;
      row.actual_fdr = actual(subsets[i].indices);
    });
    for (auto& row : rows) {
      row.subset_id = report.rows.size();
      report.rows.push_back(row);
    }
  }

  std::vector<double> predicted;
  std::vector<double> observed;
  for (const auto& r : report.rows) {
    predicted.push_back(r.fdr_hat);
    observed.push_back(r.actual_fdr);
  }
  report.metrics = score_metrics(observed, predicted);
  try {
    report.spearman = spearman(predicted, observed);
  } catch (const Error&) {
    report.spearman = std::numeric_limits<double>::quiet_NaN();
  }
  return report;
}

std::string EvaluationReport::rows_csv() const {
  std::ostringstream out;
  out << "subset_id,size,as,fdr_hat,pi_low,pi_high,actual_fdr\n";
  for (const auto& r : rows) {
    out << r.subset_id << ',' << r.size << ',' << io::format_double(r.as_value) << ','
        << io::format_double(r.fdr_hat) << ',' << io::format_double(r.pi_low) << ','
        << io::format_double(r.pi_high) << ',' << io::format_double(r.actual_fdr) << '\n';
  }
  return out.str();
}

json EvaluationReport::summary_json(MetricKind metric) const {
  return {{"metric", metric_name(metric)},
          {"subsets", rows.size()},
          {"detectable_clusters", detectable_clusters},
          {"through_origin_slope", metrics.through_origin_slope},
          {"r2", number_or_null(metrics.through_origin_r2)},
          {"r2_prediction", number_or_null(metrics.r2)},
          {"rmse", metrics.rmse},
          {"mmre", number_or_null(metrics.mmre)},
          {"spearman", number_or_null(spearman)}};
}

}  // namespace fdrcast
