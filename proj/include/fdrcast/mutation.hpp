#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fdrcast/model.hpp"

namespace fdrcast {

// Post-training mutation operators.
enum class Operator { kGF, kWS, kNEB, kNAI, kNS, kLR, kLA, kLD };

inline constexpr Operator kAllOperators[] = {Operator::kGF,  Operator::kWS, Operator::kNEB, Operator::kNAI,
                                             Operator::kNS,  Operator::kLR, Operator::kLA,  Operator::kLD};

std::string operator_name(Operator op);
Operator parse_operator(const std::string& name);
bool is_layer_operator(Operator op);

struct MutantSpec {
  Operator op = Operator::kGF;
  int layer = 0;
  // Target neurons within `layer`. NS uses exactly two; layer-level operators
  // use none.
  std::vector<int> neurons;
  // GF standard deviation. Unset means 0.5 x std of the target layer weights.
  std::optional<double> sigma;
  std::uint64_t seed = 0;
};

struct Mutant {
  int id = 0;
  Model model;
  MutantSpec spec;
};

// Returns a fresh model; `model` is never touched. Deterministic in (model, spec).
Model apply_operator(const Model& model, const MutantSpec& spec);

enum class MutantStatus { kRetained, kLowAccuracy, kHighErrorRate, kEquivalent };
std::string status_name(MutantStatus status);
MutantStatus parse_status(const std::string& name);

struct MutationConfig {
  double neuron_ratio = 0.01;
  int cap = 50;
  // Mutants below accuracy_ratio x accuracy(original) are dropped.
  double accuracy_ratio = 0.9;
  // Mutants mispredicting more than this fraction of the inputs the original
  // gets right are dropped.
  double error_rate = 0.2;
  double gf_sigma_scale = 0.5;
  std::vector<Operator> operators{std::begin(kAllOperators), std::end(kAllOperators)};

  void validate() const;
};

struct FilterReport {
  struct Entry {
    int id = 0;
    MutantStatus status = MutantStatus::kRetained;
    double accuracy = 0.0;
    double error_rate = 0.0;
  };
  std::vector<Entry> entries;
  double original_accuracy = 0.0;
  double accuracy_threshold = 0.0;
  double error_rate_threshold = 0.0;

  std::size_t retained() const;
};

struct MutantPool {
  std::vector<Mutant> generated;  // every generated mutant, by id
  FilterReport report;

  std::vector<Mutant> retained() const;
};

// Generates up to `config.cap` mutants round-robin across applicable operators
// without filtering.
std::vector<Mutant> generate_mutants(const Model& model, const MutationConfig& config, std::uint64_t seed);

FilterReport filter_mutants(const Model& model, const std::vector<Mutant>& mutants, const LabeledDataset& train,
                            const MutationConfig& config, int threads = 1);

// Throws kEmptyPool when nothing survives the filters.
MutantPool generate_and_filter_pool(const Model& model, const LabeledDataset& train, const MutationConfig& config,
                                    std::uint64_t seed, int threads = 1);

// Predicted labels of the original (column 0) and every mutant.
struct OutcomeMatrix {
  std::size_t num_inputs = 0;
  std::size_t num_mutants = 0;
  std::vector<int> predictions;  // num_inputs x (num_mutants + 1), row-major
  std::vector<int> true_labels;  // -1 when unlabeled
  // Original prediction == true label. For unlabeled sets every input counts
  // as correct so kills are decided against the original's output.
  std::vector<bool> correct;

  int original(std::size_t input) const { return predictions[input * (num_mutants + 1)]; }
  int mutant(std::size_t input, std::size_t m) const { return predictions[input * (num_mutants + 1) + m + 1]; }
  void validate() const;
};

OutcomeMatrix precompute_outcomes(const Model& model, const std::vector<Mutant>& pool, const Matrix& inputs,
                                  const std::vector<int>& labels, int threads = 1);

std::string outcomes_to_csv(const OutcomeMatrix& outcomes);
OutcomeMatrix outcomes_from_csv(const std::filesystem::path& path);

nlohmann::json spec_to_json(const MutantSpec& spec);
MutantSpec spec_from_json(const nlohmann::json& doc);

// Pool directory layout: mutant_<id>.json per retained mutant plus
// manifest.json describing every generated mutant and its filter status.
void save_pool(const std::filesystem::path& dir, const MutantPool& pool);
std::string pool_manifest(const MutantPool& pool);

struct LoadedPool {
  std::vector<Mutant> retained;
  std::string digest;  // covers the manifest and every retained mutant file
};

LoadedPool load_pool(const std::filesystem::path& dir);

}  // namespace fdrcast
