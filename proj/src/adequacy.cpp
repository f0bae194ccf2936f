#include "fdrcast/adequacy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace fdrcast {

std::string subset_mode_name(SubsetMode mode) { return mode == SubsetMode::kUniform ? "uniform" : "random"; }

SubsetMode parse_subset_mode(const std::string& name) {
  if (name == "random") return SubsetMode::kRandom;
  if (name == "uniform") return SubsetMode::kUniform;
  throw Error(ErrorCode::kParse, "unknown subset mode '" + name + "'");
}

void SubsetRef::check_bounds(std::size_t dataset_size) const {
  for (std::size_t i : indices) {
    if (i >= dataset_size) {
      throw Error(ErrorCode::kInvalidArgument, "subset index " + std::to_string(i) + " outside dataset of size " +
                                                   std::to_string(dataset_size));
    }
  }
}

std::string ms_variant_name(MsVariant variant) {
  switch (variant) {
    case MsVariant::kStandard: return "standard";
    case MsVariant::kDeepMutation: return "deepmutation";
    case MsVariant::kKillingScore: return "ks_based";
  }
  return "?";
}

MutationScorer::MutationScorer(const OutcomeMatrix& outcomes, int num_classes)
    : num_mutants_(outcomes.num_mutants), num_classes_(num_classes) {
  if (outcomes.num_mutants == 0) throw Error(ErrorCode::kEmptyPool, "mutation score needs a nonempty mutant pool");
  if (num_classes <= 0) throw Error(ErrorCode::kInvalidArgument, "num_classes must be positive");
  kills_.resize(outcomes.num_inputs);
  reference_class_.resize(outcomes.num_inputs);
  disagreements_.resize(outcomes.num_inputs);
  for (std::size_t t = 0; t < outcomes.num_inputs; ++t) {
    const int reference = outcomes.original(t);
    if (reference < 0 || reference >= num_classes) {
      throw Error(ErrorCode::kInvalidArgument, "original prediction outside [0, num_classes)");
    }
    reference_class_[t] = reference;
    std::uint32_t differ = 0;
    for (std::size_t m = 0; m < outcomes.num_mutants; ++m) {
      if (outcomes.mutant(t, m) != reference) {
        ++differ;
        if (outcomes.correct[t]) kills_[t].push_back(static_cast<std::uint32_t>(m));
      }
    }
    disagreements_[t] = differ;
  }
}

double MutationScorer::killing_score(std::size_t input) const {
  return static_cast<double>(disagreements_.at(input)) / static_cast<double>(num_mutants_);
}

double MutationScorer::score(std::span<const std::size_t> indices, MsVariant variant) const {
  if (indices.empty()) throw Error(ErrorCode::kInvalidArgument, "mutation score of an empty subset");
  for (std::size_t t : indices) {
    if (t >= kills_.size()) throw Error(ErrorCode::kInvalidArgument, "subset index outside outcome matrix");
  }
  switch (variant) {
    case MsVariant::kStandard: {
      std::vector<char> killed(num_mutants_, 0);
      std::size_t count = 0;
      for (std::size_t t : indices) {
        for (auto m : kills_[t]) {
          if (!killed[m]) {
            killed[m] = 1;
            ++count;
          }
        }
      }
      return static_cast<double>(count) / static_cast<double>(num_mutants_);
    }
    case MsVariant::kDeepMutation: {
      const auto classes = static_cast<std::size_t>(num_classes_);
      std::vector<char> killed(num_mutants_ * classes, 0);
      std::size_t count = 0;
      for (std::size_t t : indices) {
        const auto cls = static_cast<std::size_t>(reference_class_[t]);
        for (auto m : kills_[t]) {
          char& cell = killed[m * classes + cls];
          if (!cell) {
            cell = 1;
            ++count;
          }
        }
      }
      return static_cast<double>(count) / static_cast<double>(num_mutants_ * classes);
    }
    case MsVariant::kKillingScore: {
      double total = 0.0;
      for (std::size_t t : indices) total += killing_score(t);
      return total / static_cast<double>(indices.size());
    }
  }
  return 0.0;
}

double mutation_score(const OutcomeMatrix& outcomes, const SubsetRef& subset, MsVariant variant, int num_classes) {
  subset.check_bounds(outcomes.num_inputs);
  return MutationScorer(outcomes, num_classes).score(subset.indices, variant);
}

std::string sa_kind_name(SaKind kind) { return kind == SaKind::kDSA ? "DSA" : "LSA"; }

SaKind parse_sa_kind(const std::string& name) {
  if (name == "DSA" || name == "dsa") return SaKind::kDSA;
  if (name == "LSA" || name == "lsa") return SaKind::kLSA;
  throw Error(ErrorCode::kParse, "unknown surprise adequacy kind '" + name + "'");
}

std::vector<Eigen::Index> GaussianKde::retained_dims(const Matrix& reference) {
  std::vector<Eigen::Index> dims;
  const double n = static_cast<double>(reference.rows());
  if (n < 2) return dims;
  for (Eigen::Index c = 0; c < reference.cols(); ++c) {
    const double mean = reference.col(c).mean();
    const double var = (reference.col(c).array() - mean).square().sum() / (n - 1.0);
    if (var >= kLsaVarianceFloor) dims.push_back(c);
  }
  return dims;
}

GaussianKde::GaussianKde(const Matrix& reference, std::vector<Eigen::Index> dims, std::size_t excluded_row)
    : reference_(&reference), dims_(std::move(dims)), excluded_row_(excluded_row) {
  if (dims_.empty()) throw Error(ErrorCode::kDegenerate, "LSA: no trace dimension has usable variance");
  const auto rows = static_cast<std::size_t>(reference.rows());
  const std::size_t n = rows - (excluded_row < rows ? 1 : 0);
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "LSA: needs at least two reference traces");
  const double d = static_cast<double>(dims_.size());
  const double scott = std::pow(static_cast<double>(n), -1.0 / (d + 4.0));
  bandwidths_.reserve(dims_.size());
  log_norm_ = -std::log(static_cast<double>(n));
  for (Eigen::Index c : dims_) {
    double sum = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      if (r != excluded_row_) sum += reference(static_cast<Eigen::Index>(r), c);
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      if (r == excluded_row_) continue;
      const double dev = reference(static_cast<Eigen::Index>(r), c) - mean;
      ss += dev * dev;
    }
    const double var = ss / static_cast<double>(n - 1);
    const double h = std::sqrt(var) * scott;
    if (!(h > 0.0)) {
      throw Error(ErrorCode::kDegenerate, "LSA: zero bandwidth on trace dimension " + std::to_string(c));
    }
    bandwidths_.push_back(h);
    log_norm_ -= std::log(h * std::sqrt(2.0 * std::numbers::pi));
  }
}

double GaussianKde::log_density(std::span<const double> point) const {
  const Matrix& ref = *reference_;
  const auto rows = static_cast<std::size_t>(ref.rows());
  std::vector<double> exponents;
  exponents.reserve(rows);
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < rows; ++r) {
    if (r == excluded_row_) continue;
    double e = 0.0;
    for (std::size_t k = 0; k < dims_.size(); ++k) {
      const double z = (point[static_cast<std::size_t>(dims_[k])] - ref(static_cast<Eigen::Index>(r), dims_[k])) /
                       bandwidths_[k];
      e -= 0.5 * z * z;
    }
    exponents.push_back(e);
    peak = std::max(peak, e);
  }
  double acc = 0.0;
  for (double e : exponents) acc += std::exp(e - peak);
  return peak + std::log(acc) + log_norm_;
}

std::vector<double> surprise_adequacy(const Matrix& traces, const Matrix& train_traces, SaKind kind,
                                      bool leave_one_out, int threads) {
  if (traces.cols() != train_traces.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "trace width " + std::to_string(traces.cols()) +
                                                   " != training trace width " + std::to_string(train_traces.cols()));
  }
  if (leave_one_out && traces.rows() != train_traces.rows()) {
    throw Error(ErrorCode::kInvalidArgument, "leave-one-out SA needs the training traces themselves");
  }
  const Eigen::Index usable = train_traces.rows() - (leave_one_out ? 1 : 0);
  if (usable < 1) throw Error(ErrorCode::kInvalidArgument, "surprise adequacy needs usable training traces");

  const auto n = static_cast<std::size_t>(traces.rows());
  std::vector<double> out(n);
  auto row_of = [&](std::size_t i) {
    return std::span<const double>(traces.data() + static_cast<Eigen::Index>(i) * traces.cols(),
                                   static_cast<std::size_t>(traces.cols()));
  };

  if (kind == SaKind::kDSA) {
    parallel_for(n, threads, [&](std::size_t i) {
      double best = std::numeric_limits<double>::infinity();
      const auto ri = static_cast<Eigen::Index>(i);
      for (Eigen::Index r = 0; r < train_traces.rows(); ++r) {
        if (leave_one_out && r == ri) continue;
        best = std::min(best, (train_traces.row(r) - traces.row(ri)).squaredNorm());
      }
      out[i] = std::sqrt(best);
    });
    return out;
  }

  const auto dims = GaussianKde::retained_dims(train_traces);
  if (dims.empty()) throw Error(ErrorCode::kDegenerate, "LSA: no trace dimension has variance >= 1e-5");
  if (leave_one_out) {
    parallel_for(n, threads, [&](std::size_t i) {
      GaussianKde kde(train_traces, dims, i);
      out[i] = -kde.log_density(row_of(i));
    });
  } else {
    const GaussianKde kde(train_traces, dims);
    parallel_for(n, threads, [&](std::size_t i) { out[i] = -kde.log_density(row_of(i)); });
  }
  return out;
}

void ScConfig::validate() const {
  if (n_buckets < 1) throw Error(ErrorCode::kConfig, "sc.n_buckets must be >= 1");
  if (!(lower < upper)) {
    throw Error(ErrorCode::kConfig, "sc bounds must satisfy lower < upper (training SA values are constant)");
  }
}

int sc_bucket(double sa, const ScConfig& config) {
  const double position = (sa - config.lower) / (config.upper - config.lower) * config.n_buckets;
  if (!(position >= 0.0)) return 0;
  const auto bucket = static_cast<long long>(std::floor(position));
  return static_cast<int>(std::min<long long>(bucket, config.n_buckets - 1));
}

double surprise_coverage(std::span<const double> sa_values, const ScConfig& config) {
  config.validate();
  if (sa_values.empty()) throw Error(ErrorCode::kInvalidArgument, "surprise coverage of an empty set");
  std::vector<char> hit(static_cast<std::size_t>(config.n_buckets), 0);
  std::size_t count = 0;
  for (double v : sa_values) {
    char& cell = hit[static_cast<std::size_t>(sc_bucket(v, config))];
    if (!cell) {
      cell = 1;
      ++count;
    }
  }
  return static_cast<double>(count) / config.n_buckets;
}

LatentConfig LatentConfig::fit(const Matrix& train_latents, int bins) {
  if (train_latents.rows() == 0) throw Error(ErrorCode::kInvalidArgument, "latent config needs training latents");
  LatentConfig config;
  config.dims = static_cast<int>(train_latents.cols());
  config.bins = bins;
  for (Eigen::Index c = 0; c < train_latents.cols(); ++c) {
    config.min.push_back(train_latents.col(c).minCoeff());
    config.max.push_back(train_latents.col(c).maxCoeff());
  }
  config.validate();
  return config;
}

void LatentConfig::validate() const {
  if (dims < 2) throw Error(ErrorCode::kConfig, "latent coverage needs at least two dimensions for pairwise cells");
  if (bins < 1) throw Error(ErrorCode::kConfig, "idc.bins must be >= 1");
  if (min.size() != static_cast<std::size_t>(dims) || max.size() != static_cast<std::size_t>(dims)) {
    throw Error(ErrorCode::kConfig, "latent bounds do not match the dimension count");
  }
}

std::size_t LatentConfig::total_cells() const {
  const auto d = static_cast<std::size_t>(dims);
  const auto b = static_cast<std::size_t>(bins);
  return d * (d - 1) / 2 * b * b;
}

int latent_bin(double value, int dim, const LatentConfig& config) {
  const double lo = config.min[static_cast<std::size_t>(dim)];
  const double hi = config.max[static_cast<std::size_t>(dim)];
  if (!(hi > lo)) return 0;
  const double position = (value - lo) / (hi - lo) * config.bins;
  if (!(position >= 0.0)) return 0;
  return static_cast<int>(std::min<long long>(static_cast<long long>(std::floor(position)), config.bins - 1));
}

CellCoverage::CellCoverage(std::vector<std::vector<std::uint32_t>> cells_per_input, std::size_t total_cells)
    : cells_(std::move(cells_per_input)), total_cells_(total_cells) {
  if (total_cells_ == 0) throw Error(ErrorCode::kInvalidArgument, "coverage domain is empty");
}

CellCoverage CellCoverage::for_surprise(std::span<const double> sa_values, const ScConfig& config) {
  config.validate();
  std::vector<std::vector<std::uint32_t>> cells(sa_values.size());
  for (std::size_t i = 0; i < sa_values.size(); ++i) {
    cells[i] = {static_cast<std::uint32_t>(sc_bucket(sa_values[i], config))};
  }
  return CellCoverage(std::move(cells), static_cast<std::size_t>(config.n_buckets));
}

CellCoverage CellCoverage::for_latents(const Matrix& latents, const LatentConfig& config) {
  config.validate();
  if (latents.cols() != config.dims) {
    throw Error(ErrorCode::kDimensionMismatch, "latent width " + std::to_string(latents.cols()) +
                                                   " != configured dims " + std::to_string(config.dims));
  }
  const auto b = static_cast<std::uint32_t>(config.bins);
  std::vector<std::vector<std::uint32_t>> cells(static_cast<std::size_t>(latents.rows()));
  std::vector<int> bins(static_cast<std::size_t>(config.dims));
  for (Eigen::Index r = 0; r < latents.rows(); ++r) {
    for (int d = 0; d < config.dims; ++d) bins[static_cast<std::size_t>(d)] = latent_bin(latents(r, d), d, config);
    auto& out = cells[static_cast<std::size_t>(r)];
    std::uint32_t pair = 0;
    for (int a = 0; a < config.dims; ++a) {
      for (int c = a + 1; c < config.dims; ++c, ++pair) {
        out.push_back(pair * b * b + static_cast<std::uint32_t>(bins[static_cast<std::size_t>(a)]) * b +
                      static_cast<std::uint32_t>(bins[static_cast<std::size_t>(c)]));
      }
    }
  }
  return CellCoverage(std::move(cells), config.total_cells());
}

double CellCoverage::score(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw Error(ErrorCode::kInvalidArgument, "coverage of an empty subset");
  std::vector<char> hit(total_cells_, 0);
  std::size_t count = 0;
  for (std::size_t i : indices) {
    if (i >= cells_.size()) throw Error(ErrorCode::kInvalidArgument, "subset index outside coverage table");
    for (auto cell : cells_[i]) {
      if (!hit[cell]) {
        hit[cell] = 1;
        ++count;
      }
    }
  }
  return static_cast<double>(count) / static_cast<double>(total_cells_);
}

double idc_coverage(const Matrix& latents, const LatentConfig& config) {
  if (latents.rows() == 0) throw Error(ErrorCode::kInvalidArgument, "latent coverage of an empty set");
  const auto cov = CellCoverage::for_latents(latents, config);
  std::vector<std::size_t> all(static_cast<std::size_t>(latents.rows()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return cov.score(all);
}

}  // namespace fdrcast
