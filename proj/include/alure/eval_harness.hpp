#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "alure/embedding_pipeline.hpp"
#include "alure/encoder.hpp"
#include "alure/event_model.hpp"
#include "alure/retrieval.hpp"
#include "alure/similarity_graph.hpp"

namespace alure {

/// Cross-entropy of `predictions` divided by the cross-entropy of the constant
/// base-rate predictor. Predictions must lie in (0, 1), labels in {0, 1} and
/// not all equal.
double normalized_entropy(std::span<const double> predictions, std::span<const int> labels);

/// (test - control) / control * 100. Throws Error when control is zero.
double relative_metric_change(double metric_test, double metric_control);

/// Two decimals and a percent sign, e.g. "0.28%".
std::string format_percent(double percent);

/// Fraction of edges whose endpoints share a label. An empty graph gives 0
/// (with a warning); an unlabeled node throws Error.
double neighbor_purity(const SimilarityGraph& graph, const GroundTruth& truth);

/// |retrieved ∩ heldout| / |heldout| over distinct ad ids. Throws Error when
/// `heldout` is empty.
double retrieval_recall(const CandidateSet& candidates, std::span<const ItemId> heldout);

/// Inputs of the offline metrics after a temporal split.
struct SplitData {
  std::vector<UserHistory> histories;  // events before each user's cut
  EngagementLog train;                 // engagements before the cut
  EngagementLog heldout;               // engagements at or after the cut
  AdsCatalog catalog;
  GroundTruth truth;
  GroundTruth account_clusters;
  Timestamp now = 0;  // latest training timestamp; reference time downstream
};

/// Per user, the cut is the timestamp of the first of the last
/// ceil(fraction * n) events (all sources merged); everything at or after the
/// cut is held out.
SplitData temporal_split(const SynthData& data, double fraction);

/// Held-out ads whose account belongs to the user's own cluster, per user.
std::map<UserId, std::vector<ItemId>> own_cluster_heldout(const SplitData& split);
/// All distinct held-out ads per user.
std::map<UserId, std::vector<ItemId>> all_heldout(const SplitData& split);

/// For each user in `reference`, the same number of distinct ads drawn
/// uniformly from the catalog minus the user's training engagements.
std::map<UserId, CandidateSet> random_ads_baseline(const std::map<UserId, CandidateSet>& reference,
                                                   const AdsCatalog& catalog, const EngagementLog& train,
                                                   std::uint64_t seed);

struct RecallSummary {
  double mean = 0.0;
  double ci95 = 0.0;  // normal-approximation half width over users
  std::size_t users = 0;
};

/// Mean per-user recall over users with a non-empty held-out list; users with
/// no candidate set count as zero.
RecallSummary mean_recall(const std::map<UserId, CandidateSet>& candidates,
                          const std::map<UserId, std::vector<ItemId>>& heldout);

/// Held-out prediction task: (user, ad) pairs with held-out ads as positives
/// and `negatives_per_positive` random catalog ads as negatives. The single
/// feature is "ad is in the user's candidate set"; a two-bin calibrated
/// predictor is fitted on even user ids and scored on odd ones.
struct NeResult {
  double ne = 0.0;
  double base_rate = 0.0;
  std::size_t pairs = 0;
};
NeResult heldout_prediction_ne(const std::map<UserId, CandidateSet>& candidates,
                               const std::map<UserId, std::vector<ItemId>>& heldout, const AdsCatalog& catalog,
                               std::uint64_t seed, int negatives_per_positive = 4);

struct ExperimentConfig {
  SynthConfig synth;
  ModelConfig model;
  int train_steps = 2000;
  GraphConfig graph;
  RetrievalConfig retrieval;
  double heldout_fraction = 0.1;
  bool measure_knn_recall = true;

  /// Desk-scale defaults: 10k users, 5 clusters, k1=40, k1'=5, k2=15.
  static ExperimentConfig desk_scale();

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep the values of `base` (desk_scale() when omitted).
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig from_json(const nlohmann::json& j, const ExperimentConfig& base);
  std::uint64_t hash() const;
};

/// Sets vocabulary sizes and the account table from the synthetic layout.
void fit_model_to_synth(ModelConfig& model, const SynthConfig& synth);

struct Metric {
  double value = 0.0;
  double ci95 = -1.0;  // negative when not applicable
  std::string op;      // computing operation
};

struct ExperimentReport {
  std::uint64_t config_hash = 0;
  std::uint64_t dataset_seed = 0;
  std::map<std::string, Metric> metrics;
  CountHistogram histogram;
  std::size_t max_candidates = 0;
  std::map<std::string, double> stage_seconds;  // kept out of the canonical report
};

/// The metric block shared by the pipeline `eval` step and run_experiment.
struct EvalInputs {
  const SplitData* split = nullptr;
  const SimilarityGraph* graph = nullptr;
  const std::map<UserId, CandidateSet>* candidates = nullptr;
  const SimilarityGraph* exact_graph = nullptr;  // optional
  std::size_t cap = 1500;
  int histogram_bucket_width = 50;
  std::uint64_t seed = 0;
};
void compute_metrics(const EvalInputs& in, ExperimentReport& report);

/// synth -> split -> train -> snapshot -> build_graph -> retrieve_all -> metrics,
/// entirely in memory. Seeds of every stage derive from `seed`.
ExperimentReport run_experiment(const ExperimentConfig& config, std::uint64_t seed);

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (0 for a single run)
  double min = 0.0;
  double max = 0.0;
};

struct MultiSeedReport {
  std::uint64_t config_hash = 0;
  std::vector<ExperimentReport> runs;
  std::map<std::string, MetricSummary> summary;
};

MultiSeedReport run_experiments(const ExperimentConfig& config, std::span<const std::uint64_t> seeds);
MultiSeedReport summarize(std::uint64_t config_hash, std::vector<ExperimentReport> runs);

/// Canonical report JSON (sorted keys, no timings).
nlohmann::json report_json(const ExperimentReport& report);
nlohmann::json report_json(const MultiSeedReport& report);
/// Per-stage wall-clock seconds, written separately from the canonical report.
nlohmann::json timings_json(const ExperimentReport& report);
nlohmann::json timings_json(const MultiSeedReport& report);

std::string report_text(const ExperimentReport& report);
std::string report_text(const MultiSeedReport& report);
/// States what the offline numbers do and do not stand for.
std::string report_footer();

}  // namespace alure
