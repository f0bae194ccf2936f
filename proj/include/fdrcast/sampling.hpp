#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fdrcast/adequacy.hpp"

namespace fdrcast {

struct ArchiveRecord {
  std::size_t sample_index = 0;  // position within its size round
  std::size_t size = 0;          // requested sampling size
  SubsetRef subset;
  std::map<std::string, double> scores;  // metric name -> adequacy score
  double fdr = 0.0;
};

struct SamplerOptions {
  double theta = 0.05;
  int sn = 300;
  int max_iterations = 20;
  double growth = 1.5;
  double shrink = 0.5;
  // Unset: max(25, ceil(0.001 * dataset size)).
  std::optional<std::size_t> initial_size;
  SubsetMode mode = SubsetMode::kRandom;

  void validate() const;
};

// Size bookkeeping for the adaptive sampling loop.
class SamplerState {
 public:
  // `min_size` bounds shrinking; uniform sampling passes the class count.
  SamplerState(SamplerOptions options, std::size_t dataset_size, std::size_t min_size = 1);

  const SamplerOptions& options() const { return options_; }
  std::size_t dataset_size() const { return dataset_size_; }
  std::size_t min_size() const { return min_size_; }
  const std::set<std::size_t>& visited() const { return visited_; }
  void mark_visited(std::size_t size) { visited_.insert(size); }
  std::size_t initial_size() const;

 private:
  SamplerOptions options_;
  std::size_t dataset_size_;
  std::size_t min_size_;
  std::set<std::size_t> visited_;
};

// `labels` are dataset class labels (only consulted in uniform mode).
// Deterministic per (seed, size, mode).
std::vector<SubsetRef> sample_subsets(const std::vector<int>& labels, int num_classes, std::size_t size, int sn,
                                      SubsetMode mode, std::uint64_t seed);

// Next size to sample, or nullopt when the loop should stop.
std::optional<std::size_t> update_sampling_size(const std::vector<ArchiveRecord>& archive, const SamplerState& state);

using SubsetScorer = std::function<double(std::span<const std::size_t>)>;

struct NamedScorer {
  std::string name;
  SubsetScorer score;
};

std::vector<ArchiveRecord> build_archive(const std::vector<int>& labels, int num_classes,
                                         const std::vector<NamedScorer>& scorers, const SubsetScorer& fdr_fn,
                                         SamplerState& state, std::uint64_t seed, int threads = 1);

std::string archive_to_jsonl(const std::vector<ArchiveRecord>& archive);
std::vector<ArchiveRecord> archive_from_jsonl(const std::string& text);

}  // namespace fdrcast
