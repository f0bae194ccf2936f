#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fdrcast/adequacy.hpp"
#include "fdrcast/common.hpp"

namespace fdrcast {

struct ClusteringConfig {
  int pca_dims = 10;
  // Multipliers of the median pairwise distance in reduced space.
  std::vector<double> eps_grid{0.25, 0.5, 1.0, 2.0};
  std::vector<int> min_pts_grid{5, 10, 15};
  // Rows used to estimate the median pairwise distance.
  int median_sample = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

// Centering plus projection onto leading principal components.
struct LinearReducer {
  Vector mean;        // input width
  Matrix components;  // dims x input width, one component per row

  Eigen::Index input_width() const { return mean.size(); }
  Vector project(std::span<const double> feature) const;
  Matrix project_rows(const Matrix& features) const;
};

// Principal components are ordered by decreasing variance; each is signed so
// its largest-magnitude entry is positive.
LinearReducer fit_pca(const Matrix& features, int dims);

struct DensityLabels {
  std::vector<int> labels;  // -1 marks noise
  std::vector<bool> core;
  int num_clusters = 0;
};

// eps/min_pts density clustering. Neighbourhoods include the point itself;
// border points join the cluster of their nearest core point.
DensityLabels density_cluster(const Matrix& points, double eps, int min_pts);

// Mean silhouette over points whose label is not -1. Singleton clusters score 0.
double silhouette_score(const Matrix& points, const std::vector<int>& labels);

struct FaultCluster {
  int id = 0;
  std::vector<std::size_t> members;  // input indices
  std::vector<Vector> core_points;   // reduced-space coordinates
};

struct GridCellResult {
  double eps = 0.0;
  int min_pts = 0;
  int num_clusters = 0;
  std::size_t noise = 0;
  std::optional<double> silhouette;
};

struct FaultClusters {
  LinearReducer reducer;
  std::vector<FaultCluster> clusters;
  double silhouette = 0.0;
  double eps = 0.0;
  int min_pts = 0;
  double median_distance = 0.0;
  ClusteringConfig config;
  std::vector<GridCellResult> grid;

  std::size_t size() const { return clusters.size(); }
};

// `features` holds one row per mispredicted input; `input_ids` gives each
// row's index in the source dataset. Clusters are numbered by their smallest
// member id so the result does not depend on row order.
FaultClusters estimate_faults(const Matrix& features, const std::vector<std::size_t>& input_ids,
                              const ClusteringConfig& config, int threads = 1);

// Cluster owning the nearest core point; ties go to the lowest cluster id.
int assign_misprediction(std::span<const double> feature, const FaultClusters& clusters);

// Per-input cluster id; -1 for inputs that are correctly predicted or noise.
using MispredictionMap = std::vector<int>;

// Training-side map: cluster members get their cluster, everything else -1.
MispredictionMap training_misprediction_map(const FaultClusters& clusters, std::size_t dataset_size);

// Test-side map: every mispredicted input goes to its nearest core point.
MispredictionMap assign_mispredictions(const Matrix& features, const std::vector<bool>& mispredicted,
                                       const FaultClusters& clusters, int threads = 1);

std::size_t detectable_clusters(const MispredictionMap& map, std::size_t num_clusters);

double fdr(const SubsetRef& subset, const MispredictionMap& map, std::size_t num_clusters, bool detectable_only);

// Reusable FDR evaluator with the denominator fixed up front.
class FdrCalculator {
 public:
  FdrCalculator(MispredictionMap map, std::size_t num_clusters, bool detectable_only);

  double operator()(std::span<const std::size_t> indices) const;
  std::size_t hits(std::span<const std::size_t> indices) const;
  std::size_t denominator() const { return denominator_; }

 private:
  MispredictionMap map_;
  std::size_t num_clusters_;
  std::size_t denominator_;
};

nlohmann::json fault_clusters_to_json(const FaultClusters& clusters);
FaultClusters fault_clusters_from_json(const nlohmann::json& doc);
void save_fault_clusters(const std::filesystem::path& path, const FaultClusters& clusters);
FaultClusters load_fault_clusters(const std::filesystem::path& path);

std::string misprediction_map_to_csv(const MispredictionMap& map, const std::vector<bool>& mispredicted);

}  // namespace fdrcast
