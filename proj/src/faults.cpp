#include "fdrcast/faults.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fdrcast/io.hpp"

namespace fdrcast {

using nlohmann::json;

void ClusteringConfig::validate() const {
  if (pca_dims < 2) throw Error(ErrorCode::kConfig, "clustering.pca_dims must be >= 2");
  if (eps_grid.empty() || min_pts_grid.empty()) throw Error(ErrorCode::kConfig, "clustering grids must be nonempty");
  for (double e : eps_grid) {
    if (!(e > 0.0)) throw Error(ErrorCode::kConfig, "clustering.eps_grid entries must be positive");
  }
  for (int m : min_pts_grid) {
    if (m < 1) throw Error(ErrorCode::kConfig, "clustering.min_pts_grid entries must be >= 1");
  }
  if (median_sample < 2) throw Error(ErrorCode::kConfig, "clustering.median_sample must be >= 2");
}

Vector LinearReducer::project(std::span<const double> feature) const {
  if (static_cast<Eigen::Index>(feature.size()) != mean.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "feature width " + std::to_string(feature.size()) +
                                                   " != reducer input width " + std::to_string(mean.size()));
  }
  const Eigen::Map<const Vector> x(feature.data(), static_cast<Eigen::Index>(feature.size()));
  return components * (x - mean);
}

Matrix LinearReducer::project_rows(const Matrix& features) const {
  if (features.cols() != mean.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "feature width " + std::to_string(features.cols()) +
                                                   " != reducer input width " + std::to_string(mean.size()));
  }
  return (features.rowwise() - mean.transpose()) * components.transpose();
}

LinearReducer fit_pca(const Matrix& features, int dims) {
  if (features.rows() < 1) throw Error(ErrorCode::kInvalidArgument, "PCA needs at least one row");
  LinearReducer reducer;
  reducer.mean = features.colwise().mean().transpose();
  const Matrix centered = features.rowwise() - reducer.mean.transpose();
  const double denom = std::max<double>(1.0, static_cast<double>(features.rows() - 1));
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const auto width = features.cols();
  const auto k = std::min<Eigen::Index>(dims, width);
  reducer.components.resize(k, width);
  for (Eigen::Index i = 0; i < k; ++i) {
    Vector component = solver.eigenvectors().col(width - 1 - i);
    Eigen::Index peak = 0;
    for (Eigen::Index j = 1; j < width; ++j) {
      if (std::abs(component[j]) > std::abs(component[peak])) peak = j;
    }
    if (component[peak] < 0) component = -component;
    reducer.components.row(i) = component.transpose();
  }
  return reducer;
}

DensityLabels density_cluster(const Matrix& points, double eps, int min_pts) {
  const auto n = static_cast<std::size_t>(points.rows());
  const double eps_sq = eps * eps;
  std::vector<std::vector<std::size_t>> neighbours(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if ((points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).squaredNorm() <=
          eps_sq) {
        neighbours[i].push_back(j);
      }
    }
  }
  DensityLabels out;
  out.labels.assign(n, -1);
  out.core.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) out.core[i] = neighbours[i].size() >= static_cast<std::size_t>(min_pts);

  // Connected components over core points.
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!out.core[seed] || out.labels[seed] != -1) continue;
    const int id = out.num_clusters++;
    std::deque<std::size_t> frontier{seed};
    out.labels[seed] = id;
    while (!frontier.empty()) {
      const std::size_t p = frontier.front();
      frontier.pop_front();
      for (std::size_t q : neighbours[p]) {
        if (out.core[q] && out.labels[q] == -1) {
          out.labels[q] = id;
          frontier.push_back(q);
        }
      }
    }
  }
  // Border points: nearest core neighbour.
  for (std::size_t i = 0; i < n; ++i) {
    if (out.core[i]) continue;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t q : neighbours[i]) {
      if (!out.core[q]) continue;
      const double d =
          (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(q))).squaredNorm();
      if (d < best) {
        best = d;
        out.labels[i] = out.labels[q];
      }
    }
  }
  return out;
}

double silhouette_score(const Matrix& points, const std::vector<int>& labels) {
  const auto n = static_cast<std::size_t>(points.rows());
  int num_clusters = 0;
  for (int l : labels) num_clusters = std::max(num_clusters, l + 1);
  if (num_clusters < 2) throw Error(ErrorCode::kClustering, "silhouette needs at least two clusters");
  std::vector<std::size_t> sizes(static_cast<std::size_t>(num_clusters), 0);
  for (int l : labels) {
    if (l >= 0) ++sizes[static_cast<std::size_t>(l)];
  }
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<double> sums(static_cast<std::size_t>(num_clusters));
  for (std::size_t i = 0; i < n; ++i) {
    const int own = labels[i];
    if (own < 0) continue;
    ++counted;
    if (sizes[static_cast<std::size_t>(own)] <= 1) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (labels[j] < 0 || j == i) continue;
      sums[static_cast<std::size_t>(labels[j])] +=
          (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
    }
    const double a = sums[static_cast<std::size_t>(own)] / static_cast<double>(sizes[static_cast<std::size_t>(own)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < num_clusters; ++c) {
      if (c == own || sizes[static_cast<std::size_t>(c)] == 0) continue;
      b = std::min(b, sums[static_cast<std::size_t>(c)] / static_cast<double>(sizes[static_cast<std::size_t>(c)]));
    }
    const double scale = std::max(a, b);
    total += scale > 0.0 ? (b - a) / scale : 0.0;
  }
  if (counted == 0) throw Error(ErrorCode::kClustering, "silhouette of an all-noise labeling");
  return total / static_cast<double>(counted);
}

namespace {

double median_pairwise_distance(const Matrix& points, int sample_size, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(points.rows());
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  if (n > static_cast<std::size_t>(sample_size)) {
    std::mt19937_64 rng(seed);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(sample_size));
  }
  std::vector<double> dists;
  dists.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t a = 0; a < rows.size(); ++a) {
    for (std::size_t b = a + 1; b < rows.size(); ++b) {
      dists.push_back((points.row(static_cast<Eigen::Index>(rows[a])) -
                       points.row(static_cast<Eigen::Index>(rows[b]))).norm());
    }
  }
  if (dists.empty()) return 0.0;
  std::sort(dists.begin(), dists.end());
  const std::size_t mid = dists.size() / 2;
  return dists.size() % 2 ? dists[mid] : 0.5 * (dists[mid - 1] + dists[mid]);
}

}  // namespace

FaultClusters estimate_faults(const Matrix& features, const std::vector<std::size_t>& input_ids,
                              const ClusteringConfig& config, int threads) {
  config.validate();
  if (static_cast<std::size_t>(features.rows()) != input_ids.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "feature rows and input ids differ in length");
  }
  const int max_pts = *std::max_element(config.min_pts_grid.begin(), config.min_pts_grid.end());
  if (features.rows() < max_pts) {
    throw Error(ErrorCode::kClustering, "fault estimation needs at least " + std::to_string(max_pts) +
                                            " mispredicted inputs, got " + std::to_string(features.rows()));
  }

  FaultClusters result;
  result.config = config;
  result.reducer = fit_pca(features, config.pca_dims);
  const Matrix reduced = result.reducer.project_rows(features);
  result.median_distance =
      median_pairwise_distance(reduced, config.median_sample, derive_seed(config.seed, Stream::kClustering));

  struct Cell {
    double eps;
    int min_pts;
    DensityLabels labels;
    GridCellResult summary;
  };
  std::vector<Cell> cells;
  for (double factor : config.eps_grid) {
    for (int min_pts : config.min_pts_grid) {
      cells.push_back({factor * result.median_distance, min_pts, {}, {}});
    }
  }
  parallel_for(cells.size(), threads, [&](std::size_t c) {
    Cell& cell = cells[c];
    cell.labels = density_cluster(reduced, cell.eps, cell.min_pts);
    cell.summary.eps = cell.eps;
    cell.summary.min_pts = cell.min_pts;
    cell.summary.num_clusters = cell.labels.num_clusters;
    cell.summary.noise = static_cast<std::size_t>(std::count(cell.labels.labels.begin(), cell.labels.labels.end(), -1));
    if (cell.labels.num_clusters >= 2) cell.summary.silhouette = silhouette_score(reduced, cell.labels.labels);
  });

  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    result.grid.push_back(cells[c].summary);
    if (!cells[c].summary.silhouette) continue;
    if (!best || *cells[c].summary.silhouette > *cells[*best].summary.silhouette) best = c;
  }
  if (!best) {
    std::ostringstream msg;
    msg << "no clustering configuration produced two or more clusters:";
    for (const auto& g : result.grid) {
      msg << " [eps=" << g.eps << " min_pts=" << g.min_pts << " clusters=" << g.num_clusters
          << " noise=" << g.noise << "]";
    }
    throw Error(ErrorCode::kClustering, msg.str());
  }

  const Cell& chosen = cells[*best];
  result.eps = chosen.eps;
  result.min_pts = chosen.min_pts;
  result.silhouette = *chosen.summary.silhouette;

  // Renumber by smallest member input id.
  const int k = chosen.labels.num_clusters;
  std::vector<std::size_t> smallest(static_cast<std::size_t>(k), SIZE_MAX);
  for (std::size_t i = 0; i < input_ids.size(); ++i) {
    const int l = chosen.labels.labels[i];
    if (l >= 0) smallest[static_cast<std::size_t>(l)] = std::min(smallest[static_cast<std::size_t>(l)], input_ids[i]);
  }
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return smallest[static_cast<std::size_t>(a)] < smallest[static_cast<std::size_t>(b)];
  });
  std::vector<int> renumber(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) renumber[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i;

  result.clusters.resize(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) result.clusters[static_cast<std::size_t>(i)].id = i;
  std::vector<std::size_t> rows(input_ids.size());
  std::iota(rows.begin(), rows.end(), 0);
  std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) { return input_ids[a] < input_ids[b]; });
  for (std::size_t r : rows) {
    const int l = chosen.labels.labels[r];
    if (l < 0) continue;
    auto& cluster = result.clusters[static_cast<std::size_t>(renumber[static_cast<std::size_t>(l)])];
    cluster.members.push_back(input_ids[r]);
    if (chosen.labels.core[r]) cluster.core_points.push_back(reduced.row(static_cast<Eigen::Index>(r)).transpose());
  }
  return result;
}

int assign_misprediction(std::span<const double> feature, const FaultClusters& clusters) {
  if (clusters.clusters.empty()) throw Error(ErrorCode::kInvalidArgument, "no fault clusters to assign to");
  const Vector z = clusters.reducer.project(feature);
  int best_id = -1;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& cluster : clusters.clusters) {
    for (const auto& core : cluster.core_points) {
      const double d = (core - z).squaredNorm();
      if (d < best || (d == best && cluster.id < best_id)) {
        best = d;
        best_id = cluster.id;
      }
    }
  }
  return best_id;
}

MispredictionMap training_misprediction_map(const FaultClusters& clusters, std::size_t dataset_size) {
  MispredictionMap map(dataset_size, -1);
  for (const auto& cluster : clusters.clusters) {
    for (std::size_t member : cluster.members) {
      if (member >= dataset_size) {
        throw Error(ErrorCode::kDimensionMismatch, "cluster member " + std::to_string(member) + " outside dataset");
      }
      map[member] = cluster.id;
    }
  }
  return map;
}

MispredictionMap assign_mispredictions(const Matrix& features, const std::vector<bool>& mispredicted,
                                       const FaultClusters& clusters, int threads) {
  if (static_cast<std::size_t>(features.rows()) != mispredicted.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "feature rows differ from prediction count");
  }
  MispredictionMap map(mispredicted.size(), -1);
  parallel_for(map.size(), threads, [&](std::size_t i) {
    if (!mispredicted[i]) return;
    map[i] = assign_misprediction({features.data() + static_cast<Eigen::Index>(i) * features.cols(),
                                   static_cast<std::size_t>(features.cols())},
                                  clusters);
  });
  return map;
}

std::size_t detectable_clusters(const MispredictionMap& map, std::size_t num_clusters) {
  std::vector<char> seen(num_clusters, 0);
  std::size_t count = 0;
  for (int c : map) {
    if (c >= 0 && static_cast<std::size_t>(c) < num_clusters && !seen[static_cast<std::size_t>(c)]) {
      seen[static_cast<std::size_t>(c)] = 1;
      ++count;
    }
  }
  return count;
}

FdrCalculator::FdrCalculator(MispredictionMap map, std::size_t num_clusters, bool detectable_only)
    : map_(std::move(map)), num_clusters_(num_clusters) {
  for (int c : map_) {
    if (c >= static_cast<int>(num_clusters_)) {
      throw Error(ErrorCode::kInvalidArgument, "misprediction map names cluster " + std::to_string(c) +
                                                   " but only " + std::to_string(num_clusters_) + " exist");
    }
  }
  denominator_ = detectable_only ? detectable_clusters(map_, num_clusters_) : num_clusters_;
  if (denominator_ == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                detectable_only ? "no fault cluster is detectable by the input pool" : "no fault clusters");
  }
}

std::size_t FdrCalculator::hits(std::span<const std::size_t> indices) const {
  std::vector<char> seen(num_clusters_, 0);
  std::size_t count = 0;
  for (std::size_t i : indices) {
    if (i >= map_.size()) throw Error(ErrorCode::kInvalidArgument, "subset index outside misprediction map");
    const int c = map_[i];
    if (c >= 0 && !seen[static_cast<std::size_t>(c)]) {
      seen[static_cast<std::size_t>(c)] = 1;
      ++count;
    }
  }
  return count;
}

double FdrCalculator::operator()(std::span<const std::size_t> indices) const {
  return static_cast<double>(hits(indices)) / static_cast<double>(denominator_);
}

double fdr(const SubsetRef& subset, const MispredictionMap& map, std::size_t num_clusters, bool detectable_only) {
  subset.check_bounds(map.size());
  return FdrCalculator(map, num_clusters, detectable_only)(subset.indices);
}

namespace {

json vector_to_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector vector_from_json(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

json fault_clusters_to_json(const FaultClusters& fc) {
  json components = json::array();
  for (Eigen::Index r = 0; r < fc.reducer.components.rows(); ++r) {
    components.push_back(vector_to_json(fc.reducer.components.row(r).transpose()));
  }
  json clusters = json::array();
  for (const auto& c : fc.clusters) {
    json cores = json::array();
    for (const auto& p : c.core_points) cores.push_back(vector_to_json(p));
    clusters.push_back({{"id", c.id}, {"members", c.members}, {"core_points", std::move(cores)}});
  }
  json grid = json::array();
  for (const auto& g : fc.grid) {
    json cell = {{"eps", g.eps}, {"min_pts", g.min_pts}, {"clusters", g.num_clusters}, {"noise", g.noise}};
    cell["silhouette"] = g.silhouette ? json(*g.silhouette) : json(nullptr);
    grid.push_back(std::move(cell));
  }
  return {{"reducer", {{"mean", vector_to_json(fc.reducer.mean)}, {"components", std::move(components)}}},
          {"clusters", std::move(clusters)},
          {"silhouette", fc.silhouette},
          {"selected", {{"eps", fc.eps}, {"min_pts", fc.min_pts}, {"median_distance", fc.median_distance}}},
          {"grid", std::move(grid)},
          {"config",
           {{"pca_dims", fc.config.pca_dims},
            {"eps_grid", fc.config.eps_grid},
            {"min_pts_grid", fc.config.min_pts_grid},
            {"median_sample", fc.config.median_sample},
            {"seed", fc.config.seed}}}};
}

FaultClusters fault_clusters_from_json(const json& doc) {
  try {
    FaultClusters fc;
    fc.reducer.mean = vector_from_json(doc.at("reducer").at("mean"));
    const auto& comps = doc.at("reducer").at("components");
    fc.reducer.components.resize(static_cast<Eigen::Index>(comps.size()), fc.reducer.mean.size());
    for (std::size_t r = 0; r < comps.size(); ++r) {
      const Vector row = vector_from_json(comps[r]);
      if (row.size() != fc.reducer.mean.size()) throw Error(ErrorCode::kParse, "reducer component width mismatch");
      fc.reducer.components.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
    for (const auto& c : doc.at("clusters")) {
      FaultCluster cluster;
      cluster.id = c.at("id").get<int>();
      cluster.members = c.at("members").get<std::vector<std::size_t>>();
      for (const auto& p : c.at("core_points")) cluster.core_points.push_back(vector_from_json(p));
      if (cluster.core_points.empty()) throw Error(ErrorCode::kParse, "fault cluster without core points");
      fc.clusters.push_back(std::move(cluster));
    }
    fc.silhouette = doc.at("silhouette").get<double>();
    const auto& selected = doc.at("selected");
    fc.eps = selected.at("eps").get<double>();
    fc.min_pts = selected.at("min_pts").get<int>();
    fc.median_distance = selected.at("median_distance").get<double>();
    const auto& cfg = doc.at("config");
    fc.config.pca_dims = cfg.at("pca_dims").get<int>();
    fc.config.eps_grid = cfg.at("eps_grid").get<std::vector<double>>();
    fc.config.min_pts_grid = cfg.at("min_pts_grid").get<std::vector<int>>();
    fc.config.median_sample = cfg.at("median_sample").get<int>();
    fc.config.seed = cfg.at("seed").get<std::uint64_t>();
    for (const auto& g : doc.at("grid")) {
      GridCellResult cell;
      cell.eps = g.at("eps").get<double>();
      cell.min_pts = g.at("min_pts").get<int>();
      cell.num_clusters = g.at("clusters").get<int>();
      cell.noise = g.at("noise").get<std::size_t>();
      if (!g.at("silhouette").is_null()) cell.silhouette = g.at("silhouette").get<double>();
      fc.grid.push_back(cell);
    }
    return fc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("fault clusters json: ") + e.what());
  }
}

void save_fault_clusters(const std::filesystem::path& path, const FaultClusters& clusters) {
  io::write_file(path, fault_clusters_to_json(clusters).dump(1) + "\n");
}

FaultClusters load_fault_clusters(const std::filesystem::path& path) {
  try {
    return fault_clusters_from_json(json::parse(io::read_file(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

std::string misprediction_map_to_csv(const MispredictionMap& map, const std::vector<bool>& mispredicted) {
  std::string out = "input_index,cluster_id\n";
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (mispredicted[i]) out += std::to_string(i) + "," + std::to_string(map[i]) + "\n";
  }
  return out;
}

}  // namespace fdrcast
