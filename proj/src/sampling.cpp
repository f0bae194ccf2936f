#include "fdrcast/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fdrcast {

using nlohmann::json;

void SamplerOptions::validate() const {
  if (!(theta > 0.0 && theta < 0.5)) throw Error(ErrorCode::kConfig, "sampler.theta must be in (0, 0.5)");
  if (sn < 2) throw Error(ErrorCode::kConfig, "sampler.sn must be >= 2");
  if (max_iterations < 1) throw Error(ErrorCode::kConfig, "sampler.max_iterations must be >= 1");
  if (!(growth > 1.0)) throw Error(ErrorCode::kConfig, "sampler.growth must be > 1");
  if (!(shrink > 0.0 && shrink < 1.0)) throw Error(ErrorCode::kConfig, "sampler.shrink must be in (0, 1)");
  if (initial_size && *initial_size == 0) throw Error(ErrorCode::kConfig, "sampler.initial_size must be >= 1");
}

SamplerState::SamplerState(SamplerOptions options, std::size_t dataset_size, std::size_t min_size)
    : options_(std::move(options)), dataset_size_(dataset_size), min_size_(std::max<std::size_t>(min_size, 1)) {
  options_.validate();
  if (dataset_size_ == 0) throw Error(ErrorCode::kInvalidArgument, "sampling needs a nonempty dataset");
  if (min_size_ > dataset_size_) throw Error(ErrorCode::kInvalidArgument, "minimum sampling size exceeds dataset");
}

std::size_t SamplerState::initial_size() const {
  std::size_t size = options_.initial_size.value_or(
      std::max<std::size_t>(25, static_cast<std::size_t>(std::ceil(0.001 * static_cast<double>(dataset_size_)))));
  return std::clamp<std::size_t>(size, min_size_, dataset_size_);
}

std::vector<SubsetRef> sample_subsets(const std::vector<int>& labels, int num_classes, std::size_t size, int sn,
                                      SubsetMode mode, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "cannot sample from an empty dataset");
  if (sn < 1) throw Error(ErrorCode::kInvalidArgument, "sn must be >= 1");
  std::mt19937_64 rng(derive_seed(seed, size, static_cast<std::uint64_t>(mode)));
  std::vector<SubsetRef> out(static_cast<std::size_t>(sn));

  if (mode == SubsetMode::kRandom) {
    if (size < 1 || size > n) {
      throw Error(ErrorCode::kInvalidArgument, "random subset size " + std::to_string(size) + " outside [1, " +
                                                   std::to_string(n) + "]");
    }
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (auto& subset : out) {
      subset.mode = mode;
      subset.indices.resize(size);
      for (auto& idx : subset.indices) idx = pick(rng);
    }
    return out;
  }

  if (num_classes <= 0) throw Error(ErrorCode::kInvalidArgument, "uniform sampling needs num_classes > 0");
  const std::size_t per_class = size / static_cast<std::size_t>(num_classes);
  if (per_class == 0) {
    throw Error(ErrorCode::kInvalidArgument, "uniform subset size " + std::to_string(size) + " is smaller than " +
                                                 std::to_string(num_classes) + " classes");
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || label >= num_classes) throw Error(ErrorCode::kInvalidArgument, "uniform sampling needs labels");
    by_class[static_cast<std::size_t>(label)].push_back(i);
  }
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].empty()) {
      throw Error(ErrorCode::kInvalidArgument, "uniform sampling: class " + std::to_string(c) + " has no inputs");
    }
  }
  for (auto& subset : out) {
    subset.mode = mode;
    subset.indices.reserve(per_class * by_class.size());
    for (const auto& members : by_class) {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      for (std::size_t k = 0; k < per_class; ++k) subset.indices.push_back(members[pick(rng)]);
    }
  }
  return out;
}

std::optional<std::size_t> update_sampling_size(const std::vector<ArchiveRecord>& archive, const SamplerState& state) {
  if (archive.empty()) return state.initial_size();
  const auto& opts = state.options();
  if (state.visited().size() >= static_cast<std::size_t>(opts.max_iterations)) return std::nullopt;

  double min_fdr = archive.front().fdr;
  double max_fdr = archive.front().fdr;
  std::size_t min_size = archive.front().size;
  std::size_t max_size = archive.front().size;
  for (const auto& r : archive) {
    min_fdr = std::min(min_fdr, r.fdr);
    max_fdr = std::max(max_fdr, r.fdr);
    min_size = std::min(min_size, r.size);
    max_size = std::max(max_size, r.size);
  }
  for (std::size_t s : state.visited()) {
    min_size = std::min(min_size, s);
    max_size = std::max(max_size, s);
  }

  const std::size_t floor_size = state.min_size();
  if (1.0 - max_fdr >= opts.theta && max_size < state.dataset_size()) {
    const auto grown = static_cast<std::size_t>(std::ceil(static_cast<double>(max_size) * opts.growth));
    return std::min(state.dataset_size(), std::max(max_size + 1, grown));
  }
  if (min_fdr >= opts.theta && min_size > floor_size) {
    const auto shrunk = static_cast<std::size_t>(std::floor(static_cast<double>(min_size) * opts.shrink));
    return std::max(floor_size, std::min(min_size - 1, shrunk));
  }
  return std::nullopt;
}

std::vector<ArchiveRecord> build_archive(const std::vector<int>& labels, int num_classes,
                                         const std::vector<NamedScorer>& scorers, const SubsetScorer& fdr_fn,
                                         SamplerState& state, std::uint64_t seed, int threads) {
  if (scorers.empty()) throw Error(ErrorCode::kInvalidArgument, "build_archive needs at least one scorer");
  if (labels.size() != state.dataset_size()) {
    throw Error(ErrorCode::kDimensionMismatch, "sampler state and label vector disagree on dataset size");
  }
  const auto& opts = state.options();
  std::vector<ArchiveRecord> archive;
  while (auto size = update_sampling_size(archive, state)) {
    if (state.visited().count(*size)) break;
    state.mark_visited(*size);
    const auto subsets =
        sample_subsets(labels, num_classes, *size, opts.sn, opts.mode, derive_seed(seed, Stream::kSampling));
    std::vector<ArchiveRecord> round(subsets.size());
    parallel_for(subsets.size(), threads, [&](std::size_t i) {
      ArchiveRecord& rec = round[i];
      rec.sample_index = i;
      rec.size = *size;
      rec.subset = subsets[i];
      for (const auto& scorer : scorers) {
        try {
          rec.scores[scorer.name] = scorer.score(rec.subset.indices);
        } catch (const Error& e) {
          throw Error(e.code(), "scoring subset " + std::to_string(i) + " of size " + std::to_string(*size) +
                                    " with " + scorer.name + ": " + e.what());
        }
      }
      rec.fdr = fdr_fn(rec.subset.indices);
    });
    archive.insert(archive.end(), std::make_move_iterator(round.begin()), std::make_move_iterator(round.end()));
  }
  return archive;
}

std::string archive_to_jsonl(const std::vector<ArchiveRecord>& archive) {
  std::string out;
  for (const auto& r : archive) {
    json line = {{"size", r.size},
                 {"sample_index", r.sample_index},
                 {"mode", subset_mode_name(r.subset.mode)},
                 {"indices", r.subset.indices},
                 {"scores", r.scores},
                 {"fdr", r.fdr}};
    out += line.dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<ArchiveRecord> archive_from_jsonl(const std::string& text) {
  std::vector<ArchiveRecord> archive;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto doc = json::parse(line);
      ArchiveRecord r;
      r.size = doc.at("size").get<std::size_t>();
      r.sample_index = doc.value("sample_index", std::size_t{0});
      r.subset.mode = parse_subset_mode(doc.at("mode").get<std::string>());
      r.subset.indices = doc.at("indices").get<std::vector<std::size_t>>();
      r.scores = doc.at("scores").get<std::map<std::string, double>>();
      r.fdr = doc.at("fdr").get<double>();
      archive.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, "archive line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return archive;
}

}  // namespace fdrcast
