#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fdrcast/common.hpp"
#include "fdrcast/mutation.hpp"

namespace fdrcast {

enum class SubsetMode { kRandom, kUniform };
std::string subset_mode_name(SubsetMode mode);
SubsetMode parse_subset_mode(const std::string& name);

// Indices into a dataset; duplicates are allowed (sampling with replacement).
struct SubsetRef {
  std::vector<std::size_t> indices;
  SubsetMode mode = SubsetMode::kRandom;

  void check_bounds(std::size_t dataset_size) const;
};

// ---------------------------------------------------------------------------
// Mutation score

enum class MsVariant { kStandard, kDeepMutation, kKillingScore };
std::string ms_variant_name(MsVariant variant);

// Caches, per input, which mutants it kills so subsets can be scored without
// touching the full outcome matrix.
class MutationScorer {
 public:
  MutationScorer(const OutcomeMatrix& outcomes, int num_classes);

  // standard:     killed mutants / |M|
  // deepmutation: killed (mutant, class) pairs / (|M| * |C|)
  // killing score: mean over the multiset of per-input disagreement fractions
  double score(std::span<const std::size_t> indices, MsVariant variant) const;

  // Fraction of mutants whose output differs from the original on `input`.
  double killing_score(std::size_t input) const;

  std::size_t num_inputs() const { return kills_.size(); }
  std::size_t num_mutants() const { return num_mutants_; }
  int num_classes() const { return num_classes_; }

 private:
  std::size_t num_mutants_ = 0;
  int num_classes_ = 0;
  std::vector<std::vector<std::uint32_t>> kills_;  // killed mutant ids (original correct only)
  std::vector<int> reference_class_;                // original prediction
  std::vector<std::uint32_t> disagreements_;
};

double mutation_score(const OutcomeMatrix& outcomes, const SubsetRef& subset, MsVariant variant, int num_classes);

// ---------------------------------------------------------------------------
// Surprise adequacy and coverage

enum class SaKind { kDSA, kLSA };
std::string sa_kind_name(SaKind kind);
SaKind parse_sa_kind(const std::string& name);

inline constexpr double kLsaVarianceFloor = 1e-5;

// Product Gaussian KDE with per-dimension Scott bandwidths. Dimensions whose
// variance over the reference traces is below kLsaVarianceFloor are dropped.
class GaussianKde {
 public:
  // `excluded_row` (if < rows) is left out of both bandwidth and density.
  GaussianKde(const Matrix& reference, std::vector<Eigen::Index> dims, std::size_t excluded_row = SIZE_MAX);

  static std::vector<Eigen::Index> retained_dims(const Matrix& reference);

  double log_density(std::span<const double> point) const;
  const std::vector<double>& bandwidths() const { return bandwidths_; }

 private:
  const Matrix* reference_;
  std::vector<Eigen::Index> dims_;
  std::size_t excluded_row_;
  std::vector<double> bandwidths_;
  double log_norm_ = 0.0;
};

// DSA: distance to the nearest training trace. LSA: negative log KDE density.
// With leave_one_out, `traces` must be the training traces themselves and row
// i is removed from the reference when scoring input i.
std::vector<double> surprise_adequacy(const Matrix& traces, const Matrix& train_traces, SaKind kind,
                                      bool leave_one_out, int threads = 1);

struct ScConfig {
  SaKind kind = SaKind::kDSA;
  int layer_index = -1;  // -1: deepest hidden layer
  int n_buckets = 1000;
  double lower = 0.0;
  double upper = 1.0;

  void validate() const;
};

// Zero-based bucket index; out-of-range values clamp to the end buckets.
int sc_bucket(double sa, const ScConfig& config);
double surprise_coverage(std::span<const double> sa_values, const ScConfig& config);

// ---------------------------------------------------------------------------
// Latent (IDC-style) pairwise coverage

struct LatentConfig {
  int dims = 0;
  int bins = 10;
  std::vector<double> min;
  std::vector<double> max;

  static LatentConfig fit(const Matrix& train_latents, int bins);
  void validate() const;
  std::size_t total_cells() const;
};

int latent_bin(double value, int dim, const LatentConfig& config);
double idc_coverage(const Matrix& latents, const LatentConfig& config);

// Coverage of a set of discrete cells. Each input covers a fixed list of cells;
// a subset's score is distinct covered cells / total. Serves both SC (one
// bucket per input) and IDC (one cell per dimension pair).
class CellCoverage {
 public:
  CellCoverage(std::vector<std::vector<std::uint32_t>> cells_per_input, std::size_t total_cells);

  static CellCoverage for_surprise(std::span<const double> sa_values, const ScConfig& config);
  static CellCoverage for_latents(const Matrix& latents, const LatentConfig& config);

  double score(std::span<const std::size_t> indices) const;
  std::size_t num_inputs() const { return cells_.size(); }

 private:
  std::vector<std::vector<std::uint32_t>> cells_;
  std::size_t total_cells_;
};

}  // namespace fdrcast
