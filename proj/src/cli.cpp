#include "fdrcast/cli.hpp"

#include <algorithm>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fdrcast/io.hpp"

namespace fdrcast {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Error config_error(const std::string& field, const std::string& what) {
  return Error(ErrorCode::kConfig, field + ": " + what);
}

// Reads one JSON object, remembering which keys were consumed so that
// unknown keys can be rejected by name.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw config_error(path_.empty() ? "config" : path_, "must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& target) {
    seen_.insert(key);
    if (!doc_.contains(key)) return;
    try {
      target = doc_.at(key).get<T>();
    } catch (const json::exception&) {
      throw config_error(name(key), "has the wrong type");
    }
  }

  void path(const std::string& key, fs::path& target, const fs::path& base) {
    std::string value;
    get(key, value);
    if (value.empty()) return;
    const fs::path p(value);
    target = p.is_absolute() ? p : base / p;
  }

  std::optional<Section> sub(const std::string& key) {
    seen_.insert(key);
    if (!doc_.contains(key)) return std::nullopt;
    return Section(doc_.at(key), name(key));
  }

  void finish() const {
    for (const auto& item : doc_.items()) {
      if (!seen_.count(item.key())) throw config_error(name(item.key()), "unknown key");
    }
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
  if (!seed) throw config_error("seed", "a root seed is required (config or --seed)");
  if (threads < 1) throw config_error("threads", "must be >= 1");
  if (paths.model.empty()) throw config_error("paths.model", "is required");
  if (paths.train.empty()) throw config_error("paths.train", "is required");
  if (paths.output.empty()) throw config_error("paths.output", "is required");
  const std::pair<const char*, const fs::path*> files[] = {
      {"paths.model", &paths.model},
      {"paths.train", &paths.train},
      {"paths.test", &paths.test},
      {"paths.train_traces", &paths.train_traces},
      {"paths.test_traces", &paths.test_traces},
      {"paths.train_latents", &paths.train_latents},
      {"paths.test_latents", &paths.test_latents},
      {"paths.train_features", &paths.train_features},
      {"paths.test_features", &paths.test_features}};
  for (const auto& [name, p] : files) {
    if (!p->empty() && !fs::exists(*p)) throw config_error(name, "file not found: " + p->string());
  }
  if (metric == MetricKind::kIdc && paths.train_latents.empty()) {
    throw config_error("paths.train_latents", "required for metric idc");
  }
  try {
    mutation.validate();
  } catch (const Error& e) {
    throw config_error("mutation", e.what());
  }
  try {
    sampler.validate();
  } catch (const Error& e) {
    throw config_error("sampler", e.what());
  }
  try {
    clustering.validate();
  } catch (const Error& e) {
    throw config_error("clustering", e.what());
  }
  if (adequacy.sc_buckets < 1) throw config_error("surprise.n_buckets", "must be >= 1");
  if (adequacy.idc_bins < 1) throw config_error("latent.bins", "must be >= 1");
  if (regression.k < 2) throw config_error("regression.k", "must be >= 2");
  if (regression.bootstrap < 2) throw config_error("regression.bootstrap", "must be >= 2");
  if (!(regression.level > 0.0 && regression.level < 1.0)) throw config_error("regression.level", "must be in (0, 1)");
  if (regression.tree.max_depth < 0) throw config_error("regression.max_depth", "must be >= 0");
  if (regression.tree.min_leaf < 1) throw config_error("regression.min_leaf", "must be >= 1");
  if (evaluation.sn < 1) throw config_error("evaluation.sn", "must be >= 1");
}

RunConfig run_config_from_json(const json& doc, const fs::path& base_dir) {
  RunConfig cfg;
  Section root(doc, "");
  if (doc.contains("seed")) {
    std::uint64_t seed = 0;
    root.get("seed", seed);
    cfg.seed = seed;
  }
  root.get("threads", cfg.threads);
  std::string metric = metric_name(cfg.metric);
  root.get("metric", metric);
  cfg.metric = parse_metric(metric);

  if (auto s = root.sub("paths")) {
    s->path("model", cfg.paths.model, base_dir);
    s->path("train", cfg.paths.train, base_dir);
    s->path("test", cfg.paths.test, base_dir);
    s->path("train_traces", cfg.paths.train_traces, base_dir);
    s->path("test_traces", cfg.paths.test_traces, base_dir);
    s->path("train_latents", cfg.paths.train_latents, base_dir);
    s->path("test_latents", cfg.paths.test_latents, base_dir);
    s->path("train_features", cfg.paths.train_features, base_dir);
    s->path("test_features", cfg.paths.test_features, base_dir);
    s->path("output", cfg.paths.output, base_dir);
    s->finish();
  }
  if (auto s = root.sub("mutation")) {
    s->get("neuron_ratio", cfg.mutation.neuron_ratio);
    s->get("cap", cfg.mutation.cap);
    s->get("accuracy_ratio", cfg.mutation.accuracy_ratio);
    s->get("error_rate", cfg.mutation.error_rate);
    s->get("gf_sigma_scale", cfg.mutation.gf_sigma_scale);
    std::vector<std::string> ops;
    s->get("operators", ops);
    if (!ops.empty()) {
      cfg.mutation.operators.clear();
      for (const auto& op : ops) {
        try {
          cfg.mutation.operators.push_back(parse_operator(op));
        } catch (const Error&) {
          throw config_error("mutation.operators", "unknown operator '" + op + "'");
        }
      }
    }
    s->finish();
  }
  if (auto s = root.sub("sampler")) {
    s->get("theta", cfg.sampler.theta);
    s->get("sn", cfg.sampler.sn);
    s->get("max_iterations", cfg.sampler.max_iterations);
    s->get("growth", cfg.sampler.growth);
    s->get("shrink", cfg.sampler.shrink);
    std::size_t initial = 0;
    s->get("initial_size", initial);
    if (initial > 0) cfg.sampler.initial_size = initial;
    std::string mode = subset_mode_name(cfg.sampler.mode);
    s->get("mode", mode);
    try {
      cfg.sampler.mode = parse_subset_mode(mode);
    } catch (const Error&) {
      throw config_error("sampler.mode", "unknown mode '" + mode + "'");
    }
    s->finish();
  }
  if (auto s = root.sub("clustering")) {
    s->get("pca_dims", cfg.clustering.pca_dims);
    s->get("eps_grid", cfg.clustering.eps_grid);
    s->get("min_pts_grid", cfg.clustering.min_pts_grid);
    s->get("median_sample", cfg.clustering.median_sample);
    s->finish();
  }
  if (auto s = root.sub("surprise")) {
    s->get("layer_index", cfg.adequacy.sc_layer);
    s->get("n_buckets", cfg.adequacy.sc_buckets);
    s->finish();
  }
  if (auto s = root.sub("latent")) {
    s->get("bins", cfg.adequacy.idc_bins);
    s->finish();
  }
  if (auto s = root.sub("regression")) {
    s->get("k", cfg.regression.k);
    s->get("bootstrap", cfg.regression.bootstrap);
    s->get("level", cfg.regression.level);
    s->get("max_depth", cfg.regression.tree.max_depth);
    s->get("min_leaf", cfg.regression.tree.min_leaf);
    s->finish();
  }
  if (auto s = root.sub("evaluation")) {
    s->get("sn", cfg.evaluation.sn);
    s->get("sizes", cfg.evaluation.sizes);
    s->finish();
  }
  root.finish();
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  const std::string text = io::read_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, "config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(doc, fs::absolute(path).parent_path());
}

namespace {

struct Workspace {
  RunConfig cfg;
  Model model;

  fs::path out(const std::string& name) const { return cfg.paths.output / name; }
  fs::path pool_dir() const { return out("pool"); }
  std::string tag() const { return metric_name(cfg.metric); }
};

std::optional<Matrix> optional_matrix(const fs::path& path) {
  if (path.empty()) return std::nullopt;
  return io::read_matrix_csv(path).values;
}

DatasetArtifacts load_train(const Workspace& ws) {
  const auto data = load_dataset(ws.cfg.paths.train, true);
  data.validate(ws.model.num_classes);
  DatasetArtifacts a;
  a.inputs = data.features;
  a.labels = data.labels;
  a.traces = optional_matrix(ws.cfg.paths.train_traces);
  a.latents = optional_matrix(ws.cfg.paths.train_latents);
  a.features = optional_matrix(ws.cfg.paths.train_features);
  return a;
}

DatasetArtifacts load_test(const Workspace& ws, bool labeled) {
  if (ws.cfg.paths.test.empty()) throw config_error("paths.test", "is required for this command");
  const auto data = load_dataset(ws.cfg.paths.test, labeled);
  if (labeled) data.validate(ws.model.num_classes);
  DatasetArtifacts a;
  a.inputs = data.features;
  a.labels = data.labels;
  a.traces = optional_matrix(ws.cfg.paths.test_traces);
  a.latents = optional_matrix(ws.cfg.paths.test_latents);
  a.features = optional_matrix(ws.cfg.paths.test_features);
  return a;
}

LabeledDataset as_labeled(const DatasetArtifacts& a) {
  LabeledDataset d;
  d.features = a.inputs;
  d.labels = a.labels;
  return d;
}

void write_json(const fs::path& path, const json& doc) { io::write_file(path, doc.dump(2) + "\n"); }

MutantPool make_pool(const Workspace& ws, const DatasetArtifacts& train) {
  auto pool = generate_and_filter_pool(ws.model, as_labeled(train), ws.cfg.mutation, *ws.cfg.seed, ws.cfg.threads);
  fs::remove_all(ws.pool_dir());
  save_pool(ws.pool_dir(), pool);
  return pool;
}

AdequacyMetric prepare_metric(const Workspace& ws, const DatasetArtifacts& train, const LoadedPool* pool) {
  return AdequacyMetric::prepare(ws.cfg.metric, ws.model, train, ws.cfg.adequacy,
                                 pool != nullptr ? &pool->retained : nullptr, pool != nullptr ? pool->digest : "",
                                 ws.cfg.threads);
}

int cmd_mutate(const Workspace& ws, std::ostream& out) {
  const auto pool = make_pool(ws, load_train(ws));
  out << json{{"generated", pool.generated.size()},
              {"retained", pool.report.retained()},
              {"original_accuracy", pool.report.original_accuracy},
              {"pool", ws.pool_dir().string()}}
             .dump()
      << "\n";
  return 0;
}

int cmd_outcomes(const Workspace& ws, std::ostream& out) {
  const auto pool = load_pool(ws.pool_dir());
  const auto train = load_train(ws);
  const auto outcomes = precompute_outcomes(ws.model, pool.retained, train.inputs, train.labels, ws.cfg.threads);
  io::write_file(ws.out("outcomes_train.csv"), outcomes_to_csv(outcomes));
  json summary = {{"train", ws.out("outcomes_train.csv").string()}, {"mutants", pool.retained.size()}};
  if (!ws.cfg.paths.test.empty()) {
    const auto test = load_test(ws, false);
    const auto t = precompute_outcomes(ws.model, pool.retained, test.inputs, test.labels, ws.cfg.threads);
    io::write_file(ws.out("outcomes_test.csv"), outcomes_to_csv(t));
    summary["test"] = ws.out("outcomes_test.csv").string();
  }
  out << summary.dump() << "\n";
  return 0;
}

void write_faults(const Workspace& ws, const FaultClusters& clusters, const MispredictionMap& map) {
  save_fault_clusters(ws.out("faults.json"), clusters);
  std::vector<bool> wrong(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) wrong[i] = map[i] >= 0;
  io::write_file(ws.out("misprediction_map_train.csv"), misprediction_map_to_csv(map, wrong));
}

int cmd_faults(const Workspace& ws, std::ostream& out) {
  const auto faults =
      estimate_training_faults(ws.model, load_train(ws), ws.cfg.clustering, *ws.cfg.seed, ws.cfg.threads);
  write_faults(ws, faults.clusters, faults.map);
  out << json{{"clusters", faults.clusters.size()},
              {"silhouette", faults.clusters.silhouette},
              {"eps", faults.clusters.eps},
              {"min_pts", faults.clusters.min_pts}}
             .dump()
      << "\n";
  return 0;
}

int cmd_build(const Workspace& ws, std::ostream& out) {
  const auto train = load_train(ws);
  std::optional<LoadedPool> pool;
  if (is_mutation_metric(ws.cfg.metric)) {
    make_pool(ws, train);
    pool = load_pool(ws.pool_dir());
  }
  const auto metric = prepare_metric(ws, train, pool ? &*pool : nullptr);
  const auto result = build_prediction_model(ws.model, train, metric, ws.cfg.clustering, ws.cfg.sampler,
                                             ws.cfg.regression, *ws.cfg.seed, ws.cfg.threads);
  write_faults(ws, result.faults, result.train_map);
  const std::string archive_file = "archive_" + ws.tag() + ".jsonl";
  io::write_file(ws.out(archive_file), archive_to_jsonl(result.archive));
  io::write_file(ws.out("cv_" + ws.tag() + ".csv"), cv_report_to_csv(result.predictor.cv));
  write_json(ws.out("predictor_" + ws.tag() + ".json"), result.predictor.to_json(archive_file));

  double fdr_min = 1.0;
  double fdr_max = 0.0;
  for (const auto& p : result.predictor.points) {
    fdr_min = std::min(fdr_min, p.y);
    fdr_max = std::max(fdr_max, p.y);
  }
  const auto& chosen = result.predictor.cv.at(result.predictor.model.family);
  out << json{{"metric", ws.tag()},
              {"family", family_name(result.predictor.model.family)},
              {"cv_mean_r2", chosen.mean_r2},
              {"archive_records", result.archive.size()},
              {"clusters", result.faults.size()},
              {"fdr_min", fdr_min},
              {"fdr_max", fdr_max}}
             .dump()
      << "\n";
  return 0;
}

struct LoadedPredictor {
  FdrPredictor predictor;
  std::vector<ArchiveRecord> archive;
};

LoadedPredictor load_predictor(const Workspace& ws) {
  const auto path = ws.out("predictor_" + ws.tag() + ".json");
  json doc;
  try {
    doc = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  LoadedPredictor lp;
  const auto archive_name = doc.at("archive").get<std::string>();
  if (fs::path(archive_name).has_parent_path()) throw Error(ErrorCode::kParse, "archive reference must be a file name");
  lp.archive = archive_from_jsonl(io::read_file(ws.out(archive_name)));
  lp.predictor = predictor_from_json(doc, archive_points(lp.archive, ws.tag()));
  lp.predictor.interval.threads = ws.cfg.threads;
  return lp;
}

AdequacyMetric rebuild_metric(const Workspace& ws, const DatasetArtifacts& train) {
  std::optional<LoadedPool> pool;
  if (is_mutation_metric(ws.cfg.metric)) pool = load_pool(ws.pool_dir());
  return prepare_metric(ws, train, pool ? &*pool : nullptr);
}

int cmd_assess(const Workspace& ws, std::ostream& out) {
  const auto lp = load_predictor(ws);
  const auto metric = rebuild_metric(ws, load_train(ws));
  const auto intervals = IntervalModel::build(lp.predictor.model, lp.predictor.points, lp.predictor.interval);
  const auto assessment = assess_test_set(lp.predictor, intervals, metric, load_test(ws, false), ws.cfg.threads);
  const json doc = assessment.to_json();
  write_json(ws.out("assessment_" + ws.tag() + ".json"), doc);
  out << doc.dump() << "\n";
  return 0;
}

int cmd_evaluate(const Workspace& ws, std::ostream& out) {
  const auto lp = load_predictor(ws);
  const auto metric = rebuild_metric(ws, load_train(ws));
  const auto faults = load_fault_clusters(ws.out("faults.json"));
  const auto test = load_test(ws, true);
  std::vector<std::size_t> sizes = ws.cfg.evaluation.sizes;
  if (sizes.empty()) {
    std::set<std::size_t> seen;
    for (const auto& r : lp.archive) {
      if (r.size <= test.size()) seen.insert(r.size);
    }
    sizes.assign(seen.begin(), seen.end());
  }
  const auto intervals = IntervalModel::build(lp.predictor.model, lp.predictor.points, lp.predictor.interval);
  const auto report = evaluate_predictor(lp.predictor, intervals, metric, ws.model, test, faults,
                                         ws.cfg.evaluation.sn, sizes, ws.cfg.sampler.mode, *ws.cfg.seed,
                                         ws.cfg.threads);
  io::write_file(ws.out("evaluation_" + ws.tag() + ".csv"), report.rows_csv());
  const json summary = report.summary_json(ws.cfg.metric);
  write_json(ws.out("evaluation_" + ws.tag() + "_summary.json"), summary);
  out << summary.dump() << "\n";
  return 0;
}

std::string fmt(const json& v) {
  if (v.is_null()) return "n/a";
  if (v.is_number_float()) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(4);
    s << v.get<double>();
    return s.str();
  }
  return v.dump();
}

int cmd_report(const Workspace& ws, std::ostream& out) {
  const auto lp = load_predictor(ws);
  const json predictor = json::parse(io::read_file(ws.out("predictor_" + ws.tag() + ".json")));
  std::ostringstream scatter;
  scatter << "source,size,as,fdr\n";
  for (const auto& r : lp.archive) {
    scatter << "archive," << r.size << ',' << io::format_double(r.scores.at(ws.tag())) << ','
            << io::format_double(r.fdr) << '\n';
  }
  std::ostringstream text;
  text << "metric: " << ws.tag() << "\n";
  text << "fault clusters: " << lp.predictor.num_clusters << "\n";
  text << "archive records: " << lp.archive.size() << "\n";
  text << "training AS range: [" << fmt(lp.predictor.min_as) << ", " << fmt(lp.predictor.max_as) << "]\n";
  text << "selected family: " << family_name(lp.predictor.model.family) << "\n";
  text << "cross-validation (" << lp.predictor.cv.k << " folds):\n";
  for (const auto& f : predictor.at("cv").at("families")) {
    text << "  " << f.at("family").get<std::string>() << ": ";
    if (f.at("failed").get<bool>()) {
      text << "failed (" << f.value("failure", std::string()) << ")\n";
    } else {
      text << "R2 " << fmt(f.at("mean_r2")) << ", MMRE " << fmt(f.at("mean_mmre")) << ", RMSE "
           << fmt(f.at("mean_rmse")) << "\n";
    }
  }
  const auto summary_path = ws.out("evaluation_" + ws.tag() + "_summary.json");
  if (fs::exists(summary_path)) {
    const json s = json::parse(io::read_file(summary_path));
    text << "evaluation on " << s.at("subsets") << " test subsets:\n";
    text << "  through-origin slope " << fmt(s.at("through_origin_slope")) << ", R2 " << fmt(s.at("r2"))
         << ", RMSE " << fmt(s.at("rmse")) << ", Spearman " << fmt(s.at("spearman")) << "\n";
    const auto rows = io::parse_csv(io::read_file(ws.out("evaluation_" + ws.tag() + ".csv")), "evaluation");
    for (const auto& row : rows.rows) {
      scatter << "evaluation," << row.at(1) << ',' << row.at(2) << ',' << row.at(6) << '\n';
    }
  }
  io::write_file(ws.out("scatter_" + ws.tag() + ".csv"), scatter.str());
  io::write_file(ws.out("report_" + ws.tag() + ".txt"), text.str());
  out << text.str();
  return 0;
}

void emit_error(std::ostream& err, const std::string& code, const std::string& message) {
  err << json{{"error", code}, {"message", message}}.dump() << "\n";
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Test adequacy assessment for dense classifiers"};
  app.fallthrough();
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> metric;
  app.add_option("--config", config_path, "Run configuration (JSON)")->required();
  app.add_option("--seed", seed, "Root seed");
  app.add_option("--threads", threads, "Worker threads");
  app.add_option("--metric", metric, "Adequacy metric");
  const std::pair<const char*, const char*> commands[] = {
      {"mutate", "Generate and filter the mutant pool"},
      {"outcomes", "Precompute mutant outcome matrices"},
      {"faults", "Cluster training mispredictions into faults"},
      {"build", "Build the FDR prediction model"},
      {"assess", "Predict the FDR of the test set"},
      {"evaluate", "Compare predicted and actual FDR on test subsets"},
      {"report", "Summarize artifacts and export scatter data"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    emit_error(err, "usage", e.what());
    return 2;
  }

  try {
    Workspace ws;
    ws.cfg = load_run_config(config_path);
    if (seed) ws.cfg.seed = *seed;
    if (threads) ws.cfg.threads = *threads;
    if (metric) ws.cfg.metric = parse_metric(*metric);
    ws.cfg.validate();
    ws.model = load_model(ws.cfg.paths.model);

    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "mutate") return cmd_mutate(ws, out);
    if (name == "outcomes") return cmd_outcomes(ws, out);
    if (name == "faults") return cmd_faults(ws, out);
    if (name == "build") return cmd_build(ws, out);
    if (name == "assess") return cmd_assess(ws, out);
    if (name == "evaluate") return cmd_evaluate(ws, out);
    return cmd_report(ws, out);
  } catch (const Error& e) {
    emit_error(err, std::string(error_code_name(e.code())), e.what());
  } catch (const json::exception& e) {
    emit_error(err, std::string(error_code_name(ErrorCode::kParse)), e.what());
  } catch (const std::exception& e) {
    emit_error(err, "internal", e.what());
  }
  return 1;
}

}  // namespace fdrcast
