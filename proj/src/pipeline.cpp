#include "alure/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include "alure/binary_io.hpp"
#include "alure/checkpoint.hpp"
#include "alure/json_config.hpp"
#include "alure/log.hpp"
#include "alure/training.hpp"

namespace alure {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string> kExperimentKeys = {"synth",     "model",           "train_steps",       "graph",
                                               "retrieval", "heldout_fraction", "measure_knn_recall"};

std::string dump_canonical(const json& j) { return j.dump(2) + "\n"; }

void ensure_parent(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

json read_json_file(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

IngestOptions ingest_options(const ModelConfig& model) {
  IngestOptions o;
  o.num_sources = static_cast<std::uint32_t>(model.K);
  o.vocab_sizes = model.vocab_sizes;
  return o;
}

std::vector<UserHistory> load_histories(const RunConfig& rc) {
  const auto path = (fs::path(rc.paths.data_dir) / "histories.jsonl").string();
  auto r = ingest_histories(path, ingest_options(rc.experiment.model));
  if (r.unsorted_warnings) spdlog::warn("{}: {} sequences were out of order", path, r.unsorted_warnings);
  return std::move(r.histories);
}

std::string train_report_path(const RunConfig& rc) { return rc.paths.checkpoint + ".train.json"; }
std::string histogram_path(const RunConfig& rc) { return rc.paths.candidates + ".histogram.txt"; }

}  // namespace

// ---------------------------------------------------------------------------

RunConfig RunConfig::defaults() {
  RunConfig rc;
  rc.experiment = ExperimentConfig::desk_scale();
  rc.experiment.graph = GraphConfig{};  // k1 400, k1' 50, k2 15
  rc.experiment.synth.n_users = 20000;
  rc.apply_seed();
  return rc;
}

void RunConfig::apply_desk_scale() {
  experiment.synth.n_users = 10000;
  experiment.graph.k1 = 40;
  experiment.graph.k1_prime = 5;
  experiment.graph.k2 = 15;
}

void RunConfig::apply_seed() {
  experiment.synth.seed = seed;
  experiment.model.seed = seed;
  experiment.graph.seed = seed;
  fit_model_to_synth(experiment.model, experiment.synth);
}

void RunConfig::validate() const {
  experiment.validate();
  refresh.validate();
  if (experiment_seeds.empty()) throw ConfigError("experiment_seeds: must not be empty");
  for (const auto* p : {&paths.data_dir, &paths.checkpoint, &paths.snapshot_dir, &paths.graph, &paths.candidates,
                        &paths.report_dir}) {
    if (p->empty()) throw ConfigError("paths: entries must not be empty");
  }
}

json RunConfig::to_json() const {
  json j = experiment.to_json();
  j["seed"] = seed;
  j["threads"] = threads;
  j["experiment_seeds"] = experiment_seeds;
  j["refresh"] = {{"interval", refresh.interval}, {"max_staleness", refresh.max_staleness}};
  j["paths"] = {{"data_dir", paths.data_dir},         {"checkpoint", paths.checkpoint},
                {"snapshot_dir", paths.snapshot_dir}, {"graph", paths.graph},
                {"candidates", paths.candidates},     {"report_dir", paths.report_dir}};
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  using namespace config_json;
  std::set<std::string> allowed = kExperimentKeys;
  allowed.insert({"seed", "threads", "experiment_seeds", "refresh", "paths"});
  check_keys(j, allowed, "config");

  RunConfig rc = defaults();
  read_key(j, "seed", rc.seed, "config");
  read_key(j, "threads", rc.threads, "config");
  read_key(j, "experiment_seeds", rc.experiment_seeds, "config");
  json exp = json::object();
  for (const auto& k : kExperimentKeys) {
    if (j.contains(k)) exp[k] = j.at(k);
  }
  rc.experiment = ExperimentConfig::from_json(exp, rc.experiment);
  if (j.contains("refresh")) {
    const auto& r = j.at("refresh");
    check_keys(r, {"interval", "max_staleness"}, "refresh");
    read_key(r, "interval", rc.refresh.interval, "refresh");
    read_key(r, "max_staleness", rc.refresh.max_staleness, "refresh");
  }
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    check_keys(p, {"data_dir", "checkpoint", "snapshot_dir", "graph", "candidates", "report_dir"}, "paths");
    read_key(p, "data_dir", rc.paths.data_dir, "paths");
    read_key(p, "checkpoint", rc.paths.checkpoint, "paths");
    read_key(p, "snapshot_dir", rc.paths.snapshot_dir, "paths");
    read_key(p, "graph", rc.paths.graph, "paths");
    read_key(p, "candidates", rc.paths.candidates, "paths");
    read_key(p, "report_dir", rc.paths.report_dir, "paths");
  }
  rc.apply_seed();
  return rc;
}

RunConfig RunConfig::load(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError("cannot read config file " + path + ": " + e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------

void write_split(const SplitData& split, const fs::path& dir, std::uint64_t seed, const SynthConfig& synth) {
  fs::create_directories(dir);
  write_histories((dir / "histories.jsonl").string(), split.histories);
  write_engagements((dir / "engagements.jsonl").string(), split.train);
  write_engagements((dir / "heldout.jsonl").string(), split.heldout);
  write_catalog((dir / "catalog.jsonl").string(), split.catalog);
  write_ground_truth((dir / "labels.jsonl").string(), split.truth);
  write_account_labels((dir / "account_labels.jsonl").string(), split.account_clusters);
  const json meta{{"now", split.now}, {"seed", seed}, {"synth", synth.to_json()}};
  write_file_atomic((dir / "meta.json").string(), dump_canonical(meta));
}

SplitData read_split(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("data directory not found: " + dir.string());
  SplitData s;
  const json meta = read_json_file((dir / "meta.json").string());
  s.now = meta.at("now").get<Timestamp>();
  IngestOptions opts;
  s.histories = ingest_histories((dir / "histories.jsonl").string(), opts).histories;
  s.train = read_engagements((dir / "engagements.jsonl").string());
  s.heldout = read_engagements((dir / "heldout.jsonl").string());
  s.catalog = read_catalog((dir / "catalog.jsonl").string());
  s.truth = read_ground_truth((dir / "labels.jsonl").string());
  s.account_clusters = read_account_labels((dir / "account_labels.jsonl").string());
  return s;
}

StageSummary synth_stage(const RunConfig& rc) {
  const SynthData data = synth_generate(rc.experiment.synth);
  const SplitData split = temporal_split(data, rc.experiment.heldout_fraction);
  write_split(split, rc.paths.data_dir, rc.seed, rc.experiment.synth);
  std::size_t held = 0;
  for (const auto& [u, l] : split.heldout) held += l.size();
  return {"synth",
          {rc.paths.data_dir},
          {{"users", split.histories.size()}, {"heldout_engagements", held}, {"now", split.now}}};
}

StageSummary train_stage(const RunConfig& rc) {
  const auto histories = load_histories(rc);
  const EngagementLog train_log = read_engagements((fs::path(rc.paths.data_dir) / "engagements.jsonl").string());
  const auto& model = rc.experiment.model;
  const auto examples = make_training_examples(histories, train_log, model.K);
  ModelParams params = init_params(model);
  const TrainingReport tr = train(params, model, examples, rc.experiment.train_steps);
  ensure_parent(rc.paths.checkpoint);
  save_checkpoint(params, model, rc.paths.checkpoint);
  const json report{{"initial_loss", tr.initial_loss},
                    {"final_loss", tr.final_loss},
                    {"steps", tr.step_losses.size()},
                    {"examples", examples.size()},
                    {"step_losses", tr.step_losses}};
  write_file_atomic(train_report_path(rc), dump_canonical(report));
  return {"train",
          {rc.paths.checkpoint, train_report_path(rc)},
          {{"initial_loss", tr.initial_loss}, {"final_loss", tr.final_loss}, {"examples", examples.size()}}};
}

StageSummary embed_stage(const RunConfig& rc) {
  const Checkpoint ckpt = load_checkpoint(rc.paths.checkpoint);
  const Embedder embedder = extract_feature_arch(ckpt);
  const auto histories = load_histories(rc);
  const json meta = read_json_file((fs::path(rc.paths.data_dir) / "meta.json").string());
  SnapshotBuild built = build_snapshot(embedder, histories, meta.at("now").get<Timestamp>());

  SnapshotStore store(rc.paths.snapshot_dir);
  const auto latest = store.latest();
  bool unchanged = false;
  if (latest) {
    EmbeddingSnapshot probe = built.snapshot;
    probe.snapshot_version = latest->snapshot_version;
    unchanged = serialize_snapshot(probe) == serialize_snapshot(*latest);
  }
  std::uint64_t version = 0;
  if (unchanged) {
    version = latest->snapshot_version;
    spdlog::info("snapshot {} already holds these embeddings; not republishing", version);
  } else {
    version = store.publish(std::move(built.snapshot))->snapshot_version;
  }
  return {"embed",
          {store.path_for(version).string()},
          {{"snapshot_version", version},
           {"model_version", ckpt.model_version},
           {"skipped_users", built.skipped},
           {"republished", !unchanged}}};
}

StageSummary build_graph_stage(const RunConfig& rc) {
  const EmbeddingSnapshot snap = SnapshotStore::load_current(rc.paths.snapshot_dir);
  const SimilarityGraph g = build_graph(snap, rc.experiment.graph);
  ensure_parent(rc.paths.graph);
  write_graph(rc.paths.graph, g);
  return {"build-graph",
          {rc.paths.graph},
          {{"users", g.edges.size()},
           {"regions_built", g.regions_built},
           {"regions_skipped", g.regions_skipped},
           {"excluded_users", g.excluded_users}}};
}

StageSummary retrieve_stage(const RunConfig& rc) {
  const SimilarityGraph g = read_graph(rc.paths.graph);
  const fs::path dir(rc.paths.data_dir);
  const EngagementLog train_log = read_engagements((dir / "engagements.jsonl").string());
  const AdsCatalog catalog = read_catalog((dir / "catalog.jsonl").string());
  const json meta = read_json_file((dir / "meta.json").string());
  const RetrievalResult rr =
      retrieve_all(g, train_log, catalog, rc.experiment.retrieval, meta.at("now").get<Timestamp>());
  ensure_parent(rc.paths.candidates);
  write_candidates(rc.paths.candidates, rr.sets);
  write_file_atomic(histogram_path(rc), histogram_text(rr.histogram));
  std::size_t max_count = 0;
  for (const auto& [u, s] : rr.sets) max_count = std::max(max_count, s.candidates.size());
  return {"retrieve",
          {rc.paths.candidates, histogram_path(rc)},
          {{"users", rr.sets.size()}, {"max_candidates", max_count}}};
}

namespace {

void write_report_files(const fs::path& dir, const std::string& stem, const json& report, const std::string& text,
                        const CountHistogram& hist, const json& timings) {
  fs::create_directories(dir);
  write_file_atomic((dir / (stem + ".json")).string(), dump_canonical(report));
  write_file_atomic((dir / (stem + ".txt")).string(), text);
  write_file_atomic((dir / (stem + "_histogram.txt")).string(), histogram_text(hist));
  // Wall-clock data lives apart so the report itself stays byte-stable.
  write_file_atomic((dir / (stem + "_timings.json")).string(), dump_canonical(timings));
}

}  // namespace

StageSummary eval_stage(const RunConfig& rc) {
  ExperimentReport report;
  report.config_hash = rc.experiment.hash();
  report.dataset_seed = rc.seed;

  auto timed = [&](const std::string& name, auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    report.stage_seconds[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  SplitData split;
  SimilarityGraph graph, exact;
  std::map<UserId, CandidateSet> cands;
  timed("load", [&] {
    split = read_split(rc.paths.data_dir);
    graph = read_graph(rc.paths.graph);
    cands = read_candidates(rc.paths.candidates);
  });
  if (rc.experiment.measure_knn_recall) {
    timed("exact_knn", [&] {
      const EmbeddingSnapshot snap = SnapshotStore::load_current(rc.paths.snapshot_dir);
      exact = exact_knn_graph(snap, rc.experiment.graph);
    });
  }
  if (fs::exists(train_report_path(rc))) {
    const json tr = read_json_file(train_report_path(rc));
    report.metrics["train_loss_initial"] = {tr.at("initial_loss").get<double>(), -1.0,
                                            "contrastive_loss (probe batches, init)"};
    report.metrics["train_loss_final"] = {tr.at("final_loss").get<double>(), -1.0,
                                          "contrastive_loss (probe batches, trained)"};
  }
  timed("metrics", [&] {
    EvalInputs in;
    in.split = &split;
    in.graph = &graph;
    in.candidates = &cands;
    in.exact_graph = rc.experiment.measure_knn_recall ? &exact : nullptr;
    in.cap = rc.experiment.retrieval.cap;
    in.histogram_bucket_width = rc.experiment.retrieval.histogram_bucket_width;
    in.seed = rc.seed;
    compute_metrics(in, report);
  });

  write_report_files(rc.paths.report_dir, "report", report_json(report), report_text(report), report.histogram,
                     timings_json(report));
  const fs::path dir(rc.paths.report_dir);
  json info = json::object();
  for (const auto& [k, m] : report.metrics) info[k] = m.value;
  return {"eval", {(dir / "report.json").string(), (dir / "report.txt").string()}, info};
}

StageSummary experiment_stage(const RunConfig& rc) {
  const MultiSeedReport m = run_experiments(rc.experiment, rc.experiment_seeds);
  write_report_files(rc.paths.report_dir, "experiment", report_json(m), report_text(m),
                     m.runs.front().histogram, timings_json(m));
  const fs::path dir(rc.paths.report_dir);
  json info = json::object();
  for (const auto& [k, s] : m.summary) info[k] = {{"mean", s.mean}, {"stddev", s.stddev}};
  return {"experiment", {(dir / "experiment.json").string(), (dir / "experiment.txt").string()}, info};
}

void serve_refresh(const RunConfig& rc, Clock& clock, const std::atomic<bool>& stop, std::size_t max_ticks,
                   const std::function<void(const SchedulerEvent&)>& sink) {
  const Checkpoint ckpt = load_checkpoint(rc.paths.checkpoint);
  const Embedder embedder = extract_feature_arch(ckpt);
  SnapshotStore store(rc.paths.snapshot_dir);
  RefreshScheduler scheduler(
      store, embedder, [&] { return load_histories(rc); }, rc.refresh, clock, sink);
  scheduler.run(stop, max_ticks);
}

std::string version_string() {
  std::ostringstream s;
  s << "alure " << ALURE_VERSION << " (checkpoint format " << kCheckpointFormatVersion << ", snapshot format "
    << kSnapshotFormatVersion << ")";
  return s.str();
}

}  // namespace alure
