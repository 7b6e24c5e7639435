#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "alure/embedding_pipeline.hpp"
#include "alure/eval_harness.hpp"

namespace alure {

struct PathsConfig {
  std::string data_dir = "alure_data";
  std::string checkpoint = "alure_data/model.ckpt";
  std::string snapshot_dir = "alure_data/snapshots";
  std::string graph = "alure_data/graph.jsonl";
  std::string candidates = "alure_data/candidates.jsonl";
  std::string report_dir = "alure_data/report";

  bool operator==(const PathsConfig&) const = default;
};

/// Everything one CLI invocation needs. The top-level seed overrides the seeds
/// of the sub-configs, so randomness has a single source.
struct RunConfig {
  std::uint64_t seed = 7;
  unsigned threads = 0;  // 0 = available cores
  ExperimentConfig experiment;
  RefreshPolicy refresh;
  PathsConfig paths;
  std::vector<std::uint64_t> experiment_seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

  /// Full-size defaults: k1=400, k1'=50, k2=15, cap 1500, 20k users.
  static RunConfig defaults();
  /// Shrinks to k1=40, k1'=5, k2=15, 10k users and the compact model.
  void apply_desk_scale();
  /// Pushes `seed` into every sub-config and fits the model to the synth layout.
  void apply_seed();

  void validate() const;
  nlohmann::json to_json() const;
  /// Starts from defaults(); unknown keys throw ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  /// Missing or unreadable files throw ConfigError naming the path.
  static RunConfig load(const std::string& path);
};

// Data directory layout written by synth_stage:
//   histories.jsonl      events before each user's cut
//   engagements.jsonl    training engagements
//   heldout.jsonl        held-out engagements
//   catalog.jsonl, labels.jsonl, account_labels.jsonl
//   meta.json            {"now": i64, "seed": u64, "synth": {...}}
void write_split(const SplitData& split, const std::filesystem::path& dir, std::uint64_t seed, const SynthConfig& synth);
SplitData read_split(const std::filesystem::path& dir);

struct StageSummary {
  std::string stage;
  std::vector<std::string> outputs;
  nlohmann::json info;
};

StageSummary synth_stage(const RunConfig& rc);
StageSummary train_stage(const RunConfig& rc);
/// Publishes a new snapshot unless the current one already holds exactly the
/// embeddings this run would produce.
StageSummary embed_stage(const RunConfig& rc);
StageSummary build_graph_stage(const RunConfig& rc);
StageSummary retrieve_stage(const RunConfig& rc);
/// Metrics over the artifacts of the previous stages.
StageSummary eval_stage(const RunConfig& rc);
/// In-memory multi-seed replication over rc.experiment_seeds.
StageSummary experiment_stage(const RunConfig& rc);

/// Periodic refresh over the data directory's histories until `stop` is set
/// or `max_ticks` ticks ran. Scheduler events go to `sink`.
void serve_refresh(const RunConfig& rc, Clock& clock, const std::atomic<bool>& stop, std::size_t max_ticks,
                   const std::function<void(const SchedulerEvent&)>& sink);

std::string version_string();

}  // namespace alure
