#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fdrcast/assess.hpp"

namespace fdrcast {

struct PathsConfig {
  std::filesystem::path model;
  std::filesystem::path train;
  std::filesystem::path test;
  std::filesystem::path train_traces;
  std::filesystem::path test_traces;
  std::filesystem::path train_latents;
  std::filesystem::path test_latents;
  std::filesystem::path train_features;
  std::filesystem::path test_features;
  std::filesystem::path output;
};

struct EvaluationOptions {
  int sn = 100;
  // Empty: every archive size not larger than the test set.
  std::vector<std::size_t> sizes;
};

struct RunConfig {
  PathsConfig paths;
  MetricKind metric = MetricKind::kMsDeepMutation;
  MutationConfig mutation;
  SamplerOptions sampler;
  ClusteringConfig clustering;
  MetricOptions adequacy;
  RegressionOptions regression;
  EvaluationOptions evaluation;
  std::optional<std::uint64_t> seed;
  int threads = 1;

  // Throws kConfig naming the offending field.
  void validate() const;
};

// Relative paths resolve against `base_dir`. Unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Entry point behind the `fdrcast` binary. `args` excludes the program name.
// Errors are reported as a one-line JSON object on `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fdrcast
