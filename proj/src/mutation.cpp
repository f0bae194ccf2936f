#include "fdrcast/mutation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "fdrcast/io.hpp"

namespace fdrcast {

using nlohmann::json;
namespace fs = std::filesystem;

std::string operator_name(Operator op) {
  switch (op) {
    case Operator::kGF: return "GF";
    case Operator::kWS: return "WS";
    case Operator::kNEB: return "NEB";
    case Operator::kNAI: return "NAI";
    case Operator::kNS: return "NS";
    case Operator::kLR: return "LR";
    case Operator::kLA: return "LA";
    case Operator::kLD: return "LD";
  }
  return "?";
}

Operator parse_operator(const std::string& name) {
  for (Operator op : kAllOperators) {
    if (operator_name(op) == name) return op;
  }
  throw Error(ErrorCode::kParse, "unknown mutation operator '" + name + "'");
}

bool is_layer_operator(Operator op) {
  return op == Operator::kLR || op == Operator::kLA || op == Operator::kLD;
}

std::string status_name(MutantStatus status) {
  switch (status) {
    case MutantStatus::kRetained: return "retained";
    case MutantStatus::kLowAccuracy: return "low_accuracy";
    case MutantStatus::kHighErrorRate: return "high_error_rate";
    case MutantStatus::kEquivalent: return "equivalent";
  }
  return "?";
}

MutantStatus parse_status(const std::string& name) {
  for (auto s : {MutantStatus::kRetained, MutantStatus::kLowAccuracy, MutantStatus::kHighErrorRate,
                 MutantStatus::kEquivalent}) {
    if (status_name(s) == name) return s;
  }
  throw Error(ErrorCode::kParse, "unknown mutant status '" + name + "'");
}

void MutationConfig::validate() const {
  if (!(neuron_ratio > 0.0 && neuron_ratio <= 1.0)) {
    throw Error(ErrorCode::kConfig, "mutation.neuron_ratio must be in (0, 1]");
  }
  if (cap < 1) throw Error(ErrorCode::kConfig, "mutation.cap must be >= 1");
  if (!(accuracy_ratio >= 0.0 && accuracy_ratio <= 1.0)) {
    throw Error(ErrorCode::kConfig, "mutation.accuracy_ratio must be in [0, 1]");
  }
  if (!(error_rate >= 0.0 && error_rate <= 1.0)) throw Error(ErrorCode::kConfig, "mutation.error_rate must be in [0, 1]");
  if (!(gf_sigma_scale >= 0.0)) throw Error(ErrorCode::kConfig, "mutation.gf_sigma_scale must be >= 0");
  if (operators.empty()) throw Error(ErrorCode::kConfig, "mutation.operators must not be empty");
}

std::size_t FilterReport::retained() const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const Entry& e) {
    return e.status == MutantStatus::kRetained;
  }));
}

std::vector<Mutant> MutantPool::retained() const {
  std::vector<Mutant> out;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    if (report.entries[i].status == MutantStatus::kRetained) out.push_back(generated[i]);
  }
  return out;
}

namespace {

double weight_stddev(const Matrix& w) {
  const double n = static_cast<double>(w.size());
  if (n < 2) return 0.0;
  const double mean = w.mean();
  return std::sqrt((w.array() - mean).square().sum() / (n - 1.0));
}

void check_neurons(const Layer& layer, const MutantSpec& spec) {
  if (spec.neurons.empty()) {
    throw Error(ErrorCode::kInvalidArgument, operator_name(spec.op) + ": empty target neuron set");
  }
  for (int n : spec.neurons) {
    if (n < 0 || n >= layer.out_dim()) {
      throw Error(ErrorCode::kInvalidArgument, operator_name(spec.op) + ": neuron " + std::to_string(n) +
                                                   " outside layer " + std::to_string(spec.layer));
    }
  }
}

}  // namespace

Model apply_operator(const Model& model, const MutantSpec& spec) {
  const int num_layers = static_cast<int>(model.layers.size());
  if (spec.layer < 0 || spec.layer >= num_layers) {
    throw Error(ErrorCode::kInvalidArgument, operator_name(spec.op) + ": layer " + std::to_string(spec.layer) +
                                                 " does not exist");
  }
  Model mutant = model;
  auto& layers = mutant.layers;
  const auto li = static_cast<std::size_t>(spec.layer);
  std::mt19937_64 rng(spec.seed);

  if (is_layer_operator(spec.op) && !model.layers[li].is_square()) {
    throw Error(ErrorCode::kStructural, operator_name(spec.op) + ": layer " + std::to_string(spec.layer) +
                                            " is not square, input and output shapes differ");
  }

  switch (spec.op) {
    case Operator::kGF: {
      check_neurons(layers[li], spec);
      const double sigma = spec.sigma.value_or(0.5 * weight_stddev(layers[li].weights));
      if (sigma < 0.0) throw Error(ErrorCode::kInvalidArgument, "GF: sigma must be >= 0");
      if (sigma == 0.0) break;
      std::normal_distribution<double> noise(0.0, sigma);
      for (int n : spec.neurons) {
        for (Eigen::Index c = 0; c < layers[li].weights.cols(); ++c) layers[li].weights(n, c) += noise(rng);
      }
      break;
    }
    case Operator::kWS: {
      check_neurons(layers[li], spec);
      for (int n : spec.neurons) {
        std::vector<double> row(layers[li].weights.row(n).begin(), layers[li].weights.row(n).end());
        std::shuffle(row.begin(), row.end(), rng);
        for (Eigen::Index c = 0; c < layers[li].weights.cols(); ++c) {
          layers[li].weights(n, c) = row[static_cast<std::size_t>(c)];
        }
      }
      break;
    }
    case Operator::kNEB: {
      check_neurons(layers[li], spec);
      if (spec.layer + 1 >= num_layers) {
        throw Error(ErrorCode::kStructural, "NEB: layer " + std::to_string(spec.layer) + " has no outgoing weights");
      }
      for (int n : spec.neurons) layers[li + 1].weights.col(n).setZero();
      break;
    }
    case Operator::kNAI: {
      check_neurons(layers[li], spec);
      for (int n : spec.neurons) {
        layers[li].weights.row(n) *= -1.0;
        layers[li].bias[n] *= -1.0;
      }
      break;
    }
    case Operator::kNS: {
      check_neurons(layers[li], spec);
      if (spec.neurons.size() != 2 || spec.neurons[0] == spec.neurons[1]) {
        throw Error(ErrorCode::kInvalidArgument, "NS: needs two distinct neurons");
      }
      const int a = spec.neurons[0];
      const int b = spec.neurons[1];
      layers[li].weights.row(a).swap(layers[li].weights.row(b));
      std::swap(layers[li].bias[a], layers[li].bias[b]);
      break;
    }
    case Operator::kLR: {
      if (num_layers < 2) throw Error(ErrorCode::kStructural, "LR: cannot remove the only layer");
      layers.erase(layers.begin() + spec.layer);
      break;
    }
    case Operator::kLA: {
      Layer added;
      const auto width = layers[li].out_dim();
      added.weights = Matrix::Identity(width, width);
      added.bias = Vector::Zero(width);
      added.activation = Activation::kIdentity;
      layers.insert(layers.begin() + spec.layer + 1, std::move(added));
      break;
    }
    case Operator::kLD: {
      Layer copy = layers[li];
      layers.insert(layers.begin() + spec.layer + 1, std::move(copy));
      break;
    }
  }
  mutant.validate();
  return mutant;
}

namespace {

std::vector<int> candidate_layers(const Model& model, Operator op) {
  const int num_layers = static_cast<int>(model.layers.size());
  const int last_hidden = num_layers > 1 ? num_layers - 1 : num_layers;
  std::vector<int> out;
  for (int i = 0; i < num_layers; ++i) {
    const Layer& layer = model.layers[static_cast<std::size_t>(i)];
    const bool hidden = i < last_hidden;
    switch (op) {
      case Operator::kGF:
      case Operator::kWS:
      case Operator::kNAI:
        if (hidden) out.push_back(i);
        break;
      case Operator::kNEB:
        if (i + 1 < num_layers) out.push_back(i);
        break;
      case Operator::kNS:
        if (hidden && layer.out_dim() >= 2) out.push_back(i);
        break;
      case Operator::kLR:
        if (num_layers >= 2 && layer.is_square()) out.push_back(i);
        break;
      case Operator::kLA:
      case Operator::kLD:
        if (i + 1 < num_layers && layer.is_square()) out.push_back(i);
        break;
    }
  }
  return out;
}

std::vector<int> pick_distinct(int population, int count, std::mt19937_64& rng) {
  std::vector<int> all(static_cast<std::size_t>(population));
  std::iota(all.begin(), all.end(), 0);
  count = std::min(count, population);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, population - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
  }
  all.resize(static_cast<std::size_t>(count));
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

std::vector<Mutant> generate_mutants(const Model& model, const MutationConfig& config, std::uint64_t seed) {
  config.validate();
  model.validate();
  std::vector<std::pair<Operator, std::vector<int>>> applicable;
  for (Operator op : config.operators) {
    auto layers = candidate_layers(model, op);
    if (!layers.empty()) applicable.emplace_back(op, std::move(layers));
  }
  if (applicable.empty()) throw Error(ErrorCode::kEmptyPool, "no mutation operator applies to this model");

  const auto per_mutant = std::max<long>(
      1, std::lround(config.neuron_ratio * static_cast<double>(model.total_neurons())));

  std::vector<Mutant> mutants;
  mutants.reserve(static_cast<std::size_t>(config.cap));
  for (int id = 0; id < config.cap; ++id) {
    const auto& [op, layers] = applicable[static_cast<std::size_t>(id) % applicable.size()];
    MutantSpec spec;
    spec.op = op;
    spec.seed = derive_seed(seed, Stream::kMutation, static_cast<std::uint64_t>(id));
    std::mt19937_64 rng(derive_seed(spec.seed, 0xA11CEull, 0));
    spec.layer = layers[std::uniform_int_distribution<std::size_t>(0, layers.size() - 1)(rng)];
    const Layer& target = model.layers[static_cast<std::size_t>(spec.layer)];
    const int width = static_cast<int>(target.out_dim());
    if (op == Operator::kNS) {
      spec.neurons = pick_distinct(width, 2, rng);
    } else if (!is_layer_operator(op)) {
      spec.neurons = pick_distinct(width, static_cast<int>(per_mutant), rng);
    }
    if (op == Operator::kGF) spec.sigma = config.gf_sigma_scale * weight_stddev(target.weights);
    mutants.push_back({id, apply_operator(model, spec), spec});
  }
  return mutants;
}

FilterReport filter_mutants(const Model& model, const std::vector<Mutant>& mutants, const LabeledDataset& train,
                            const MutationConfig& config, int threads) {
  if (train.size() == 0) throw Error(ErrorCode::kInvalidArgument, "mutant filtering needs a nonempty training set");
  train.validate(model.num_classes);
  const auto original = predict_all(model, train.features, threads);
  std::size_t original_hits = 0;
  for (std::size_t i = 0; i < train.size(); ++i) original_hits += original[i] == train.labels[i];

  FilterReport report;
  const double n = static_cast<double>(train.size());
  report.original_accuracy = static_cast<double>(original_hits) / n;
  report.accuracy_threshold = config.accuracy_ratio * report.original_accuracy;
  report.error_rate_threshold = config.error_rate;
  report.entries.resize(mutants.size());

  // Comparisons are on counts with a small slack so exact boundary values are
  // retained ("less than" / "more than" are strict).
  constexpr double kSlack = 1e-9;
  parallel_for(mutants.size(), threads, [&](std::size_t m) {
    const auto& mutant = mutants[m];
    std::size_t hits = 0;
    std::size_t errors = 0;
    bool killed = false;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const int label = predict_label(mutant.model, train.row(i));
      hits += label == train.labels[i];
      if (original[i] == train.labels[i] && label != original[i]) {
        ++errors;
        killed = true;
      }
    }
    FilterReport::Entry entry;
    entry.id = mutant.id;
    entry.accuracy = static_cast<double>(hits) / n;
    entry.error_rate = original_hits ? static_cast<double>(errors) / static_cast<double>(original_hits) : 0.0;
    if (static_cast<double>(hits) < config.accuracy_ratio * static_cast<double>(original_hits) - kSlack) {
      entry.status = MutantStatus::kLowAccuracy;
    } else if (static_cast<double>(errors) > config.error_rate * static_cast<double>(original_hits) + kSlack) {
      entry.status = MutantStatus::kHighErrorRate;
    } else if (!killed) {
      entry.status = MutantStatus::kEquivalent;
    } else {
      entry.status = MutantStatus::kRetained;
    }
    report.entries[m] = entry;
  });
  return report;
}

MutantPool generate_and_filter_pool(const Model& model, const LabeledDataset& train, const MutationConfig& config,
                                    std::uint64_t seed, int threads) {
  MutantPool pool;
  pool.generated = generate_mutants(model, config, seed);
  pool.report = filter_mutants(model, pool.generated, train, config, threads);
  if (pool.report.retained() == 0) {
    std::size_t counts[4] = {0, 0, 0, 0};
    for (const auto& e : pool.report.entries) ++counts[static_cast<int>(e.status)];
    throw Error(ErrorCode::kEmptyPool,
                "empty pool: all " + std::to_string(pool.generated.size()) + " mutants filtered (low_accuracy=" +
                    std::to_string(counts[1]) + ", high_error_rate=" + std::to_string(counts[2]) +
                    ", equivalent=" + std::to_string(counts[3]) + ")");
  }
  return pool;
}

void OutcomeMatrix::validate() const {
  if (predictions.size() != num_inputs * (num_mutants + 1) || true_labels.size() != num_inputs ||
      correct.size() != num_inputs) {
    throw Error(ErrorCode::kDimensionMismatch, "outcome matrix storage does not match its shape");
  }
  for (std::size_t i = 0; i < num_inputs; ++i) {
    const bool expected = true_labels[i] < 0 || original(i) == true_labels[i];
    if (correct[i] != expected) {
      throw Error(ErrorCode::kInvalidArgument, "outcome row " + std::to_string(i) + ": correct flag inconsistent");
    }
  }
}

OutcomeMatrix precompute_outcomes(const Model& model, const std::vector<Mutant>& pool, const Matrix& inputs,
                                  const std::vector<int>& labels, int threads) {
  if (pool.empty()) throw Error(ErrorCode::kEmptyPool, "outcome precomputation needs a nonempty pool");
  if (inputs.cols() != model.input_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "inputs have width " + std::to_string(inputs.cols()) +
                                                   ", model expects " + std::to_string(model.input_dim));
  }
  if (static_cast<std::size_t>(inputs.rows()) != labels.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "label count differs from input count");
  }
  OutcomeMatrix out;
  out.num_inputs = labels.size();
  out.num_mutants = pool.size();
  out.predictions.assign(out.num_inputs * (out.num_mutants + 1), 0);
  out.true_labels = labels;
  const std::size_t stride = out.num_mutants + 1;
  parallel_for(stride, threads, [&](std::size_t column) {
    const Model& m = column == 0 ? model : pool[column - 1].model;
    for (std::size_t i = 0; i < out.num_inputs; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      out.predictions[i * stride + column] =
          predict_label(m, {inputs.data() + r * inputs.cols(), static_cast<std::size_t>(inputs.cols())});
    }
  });
  out.correct.resize(out.num_inputs);
  for (std::size_t i = 0; i < out.num_inputs; ++i) {
    out.correct[i] = labels[i] < 0 || out.original(i) == labels[i];
  }
  return out;
}

std::string outcomes_to_csv(const OutcomeMatrix& outcomes) {
  std::string out = "input_index,true_label,original_label";
  for (std::size_t m = 0; m < outcomes.num_mutants; ++m) out += ",m_" + std::to_string(m);
  out.push_back('\n');
  for (std::size_t i = 0; i < outcomes.num_inputs; ++i) {
    out += std::to_string(i) + "," + std::to_string(outcomes.true_labels[i]) + "," +
           std::to_string(outcomes.original(i));
    for (std::size_t m = 0; m < outcomes.num_mutants; ++m) out += "," + std::to_string(outcomes.mutant(i, m));
    out.push_back('\n');
  }
  return out;
}

OutcomeMatrix outcomes_from_csv(const fs::path& path) {
  const auto table = io::parse_csv(io::read_file(path), path.string());
  if (table.header.size() < 4 || table.header[0] != "input_index" || table.header[1] != "true_label" ||
      table.header[2] != "original_label") {
    throw Error(ErrorCode::kParse, path.string() + ": unexpected outcome header");
  }
  OutcomeMatrix out;
  out.num_inputs = table.rows.size();
  out.num_mutants = table.header.size() - 3;
  const std::size_t stride = out.num_mutants + 1;
  out.predictions.resize(out.num_inputs * stride);
  out.true_labels.resize(out.num_inputs);
  out.correct.resize(out.num_inputs);
  for (std::size_t i = 0; i < out.num_inputs; ++i) {
    const auto ctx = path.string() + " row " + std::to_string(i + 1);
    out.true_labels[i] = static_cast<int>(io::parse_long(table.rows[i][1], ctx));
    for (std::size_t c = 0; c < stride; ++c) {
      out.predictions[i * stride + c] = static_cast<int>(io::parse_long(table.rows[i][c + 2], ctx));
    }
    out.correct[i] = out.true_labels[i] < 0 || out.original(i) == out.true_labels[i];
  }
  out.validate();
  return out;
}

json spec_to_json(const MutantSpec& spec) {
  json doc = {{"operator", operator_name(spec.op)},
              {"layer", spec.layer},
              {"neurons", spec.neurons},
              {"seed", spec.seed}};
  if (spec.sigma) doc["sigma"] = *spec.sigma;
  return doc;
}

MutantSpec spec_from_json(const json& doc) {
  MutantSpec spec;
  spec.op = parse_operator(doc.at("operator").get<std::string>());
  spec.layer = doc.at("layer").get<int>();
  spec.neurons = doc.at("neurons").get<std::vector<int>>();
  spec.seed = doc.at("seed").get<std::uint64_t>();
  if (doc.contains("sigma")) spec.sigma = doc.at("sigma").get<double>();
  return spec;
}

namespace {

std::string mutant_file_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "mutant_%03d.json", id);
  return buf;
}

}  // namespace

std::string pool_manifest(const MutantPool& pool) {
  json mutants = json::array();
  for (std::size_t i = 0; i < pool.generated.size(); ++i) {
    const auto& mutant = pool.generated[i];
    const auto& entry = pool.report.entries[i];
    json item = spec_to_json(mutant.spec);
    item["id"] = mutant.id;
    item["status"] = status_name(entry.status);
    item["accuracy"] = entry.accuracy;
    item["error_rate"] = entry.error_rate;
    item["file"] = mutant_file_name(mutant.id);
    mutants.push_back(std::move(item));
  }
  json doc = {{"original_accuracy", pool.report.original_accuracy},
              {"accuracy_threshold", pool.report.accuracy_threshold},
              {"error_rate_threshold", pool.report.error_rate_threshold},
              {"generated", pool.generated.size()},
              {"retained", pool.report.retained()},
              {"mutants", std::move(mutants)}};
  return doc.dump(1) + "\n";
}

void save_pool(const fs::path& dir, const MutantPool& pool) {
  fs::create_directories(dir);
  for (const auto& mutant : pool.generated) save_model(dir / mutant_file_name(mutant.id), mutant.model);
  io::write_file(dir / "manifest.json", pool_manifest(pool));
}

LoadedPool load_pool(const fs::path& dir) {
  const auto manifest_text = io::read_file(dir / "manifest.json");
  json manifest;
  try {
    manifest = json::parse(manifest_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, (dir / "manifest.json").string() + ": " + e.what());
  }
  LoadedPool out;
  std::string digest_input = manifest_text;
  for (const auto& item : manifest.at("mutants")) {
    const auto file = dir / item.at("file").get<std::string>();
    if (!fs::exists(file)) {
      throw Error(ErrorCode::kDigestMismatch, "mutant file missing: " + file.string());
    }
    const auto text = io::read_file(file);
    digest_input += io::sha256_hex(text);
    if (parse_status(item.at("status").get<std::string>()) != MutantStatus::kRetained) continue;
    Mutant mutant;
    mutant.id = item.at("id").get<int>();
    mutant.spec = spec_from_json(item);
    try {
      mutant.model = model_from_json(json::parse(text));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, file.string() + ": " + e.what());
    }
    out.retained.push_back(std::move(mutant));
  }
  out.digest = io::sha256_hex(digest_input);
  return out;
}

}  // namespace fdrcast
