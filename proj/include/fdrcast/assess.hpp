#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fdrcast/adequacy.hpp"
#include "fdrcast/faults.hpp"
#include "fdrcast/model.hpp"
#include "fdrcast/mutation.hpp"
#include "fdrcast/regression.hpp"
#include "fdrcast/sampling.hpp"

namespace fdrcast {

enum class MetricKind { kMsStandard, kMsDeepMutation, kMsKs, kDsc, kLsc, kIdc };
inline constexpr MetricKind kAllMetrics[] = {MetricKind::kMsStandard, MetricKind::kMsDeepMutation, MetricKind::kMsKs,
                                             MetricKind::kDsc,        MetricKind::kLsc,            MetricKind::kIdc};

std::string metric_name(MetricKind kind);
MetricKind parse_metric(const std::string& name);
bool is_mutation_metric(MetricKind kind);

// One dataset with whatever ingested matrices the chosen metric needs.
// Labels are -1 for unlabeled sets.
struct DatasetArtifacts {
  Matrix inputs;
  std::vector<int> labels;
  std::optional<Matrix> traces;
  std::optional<Matrix> latents;
  std::optional<Matrix> features;

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
  bool labeled() const;
  // Copy with every label replaced by -1.
  DatasetArtifacts without_labels() const;
};

struct MetricOptions {
  int sc_layer = -1;  // -1: deepest hidden layer
  int sc_buckets = 1000;
  int idc_bins = 10;
};

// A metric fitted to one subject and training set. Everything that fixes how
// scores are computed lives here and is covered by digest().
class AdequacyMetric {
 public:
  // Mutation metrics need `pool` (retained mutants) and its digest.
  static AdequacyMetric prepare(MetricKind kind, const Model& model, const DatasetArtifacts& train,
                                const MetricOptions& options, const std::vector<Mutant>* pool,
                                const std::string& pool_digest, int threads = 1);

  // `training` enables leave-one-out surprise against the training traces.
  SubsetScorer scorer(const DatasetArtifacts& data, bool training, int threads = 1) const;

  MetricKind kind() const { return kind_; }
  const nlohmann::json& config() const { return config_; }
  const std::string& digest() const { return digest_; }

 private:
  void finalize(const std::string& artifact_digest);

  MetricKind kind_ = MetricKind::kMsDeepMutation;
  std::shared_ptr<const Model> model_;
  std::shared_ptr<const std::vector<Mutant>> pool_;
  ScConfig sc_;
  std::shared_ptr<const Matrix> train_traces_;
  LatentConfig latent_;
  nlohmann::json config_;
  std::string digest_;
};

// Trace matrix for `data`: ingested if present, else computed from the model.
Matrix traces_for(const Model& model, const DatasetArtifacts& data, int layer_index, int threads = 1);
int resolve_trace_layer(const Model& model, int layer_index);

// Feature rows used for fault clustering: ingested features, else raw inputs.
const Matrix& fault_features(const DatasetArtifacts& data);

struct RegressionOptions {
  int k = 5;
  int bootstrap = 1000;
  double level = 0.95;
  TreeOptions tree;
};

struct FdrPredictor {
  MetricKind metric = MetricKind::kMsDeepMutation;
  nlohmann::json as_config;
  std::string as_digest;
  FittedModel model;
  IntervalOptions interval;
  std::vector<Point> points;
  std::string points_digest;
  CvReport cv;
  double min_as = 0.0;
  double max_as = 0.0;
  std::size_t num_clusters = 0;

  nlohmann::json to_json(const std::string& archive_file) const;
};

struct TrainingFaults {
  FaultClusters clusters;
  MispredictionMap map;
};

// Clusters the model's training mispredictions in feature space.
TrainingFaults estimate_training_faults(const Model& model, const DatasetArtifacts& train,
                                        const ClusteringConfig& clustering, std::uint64_t seed, int threads = 1);

struct BuildResult {
  FdrPredictor predictor;
  std::vector<ArchiveRecord> archive;
  FaultClusters faults;
  MispredictionMap train_map;
};

// Algorithm 1: fault estimation, archive construction, CV and model selection.
BuildResult build_prediction_model(const Model& model, const DatasetArtifacts& train, const AdequacyMetric& metric,
                                   const ClusteringConfig& clustering, const SamplerOptions& sampler,
                                   const RegressionOptions& regression, std::uint64_t seed, int threads = 1);

std::string points_digest(const std::vector<Point>& points);
std::vector<Point> archive_points(const std::vector<ArchiveRecord>& archive, const std::string& metric);

// Reads a predictor file; `points` must come from the referenced archive.
FdrPredictor predictor_from_json(const nlohmann::json& doc, const std::vector<Point>& points);

struct Assessment {
  MetricKind metric = MetricKind::kMsDeepMutation;
  double as_value = 0.0;
  double fdr_hat = 0.0;
  PredictionInterval pi;
  bool extrapolated = false;

  nlohmann::json to_json() const;
};

// Algorithm 2. `metric` must be rebuilt from the current artifacts; its digest
// has to match the one stored at build time. Test labels are never read.
Assessment assess_test_set(const FdrPredictor& predictor, const IntervalModel& intervals,
                           const AdequacyMetric& metric, const DatasetArtifacts& test, int threads = 1);

struct EvaluationRow {
  std::size_t subset_id = 0;
  std::size_t size = 0;
  double as_value = 0.0;
  double fdr_hat = 0.0;
  double pi_low = 0.0;
  double pi_high = 0.0;
  double actual_fdr = 0.0;
};

struct EvaluationReport {
  std::vector<EvaluationRow> rows;
  FitMetrics metrics;
  double spearman = 0.0;
  std::size_t detectable_clusters = 0;

  std::string rows_csv() const;
  nlohmann::json summary_json(MetricKind metric) const;
};

// Samples labeled test subsets, predicts their FDR label-blind and compares
// against the actual FDR from nearest-core assignment of test mispredictions.
EvaluationReport evaluate_predictor(const FdrPredictor& predictor, const IntervalModel& intervals,
                                    const AdequacyMetric& metric, const Model& model, const DatasetArtifacts& test,
                                    const FaultClusters& faults, int sn, const std::vector<std::size_t>& sizes,
                                    SubsetMode mode, std::uint64_t seed, int threads = 1);

}  // namespace fdrcast
