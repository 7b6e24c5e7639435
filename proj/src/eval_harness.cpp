#include "alure/eval_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "alure/binary_io.hpp"
#include "alure/checkpoint.hpp"
#include "alure/json_config.hpp"
#include "alure/log.hpp"
#include "alure/parallel.hpp"
#include "alure/training.hpp"

namespace alure {

using nlohmann::json;

double normalized_entropy(std::span<const double> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw Error("normalized_entropy: " + std::to_string(predictions.size()) + " predictions vs " +
                std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) throw Error("normalized_entropy: no examples");
  double ce = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = predictions[i];
    if (!(p > 0.0 && p < 1.0)) throw Error("normalized_entropy: prediction " + std::to_string(i) + " not in (0, 1)");
    if (labels[i] != 0 && labels[i] != 1) throw Error("normalized_entropy: label " + std::to_string(i) + " not 0/1");
    if (labels[i]) {
      ++positives;
      ce -= std::log(p);
    } else {
      ce -= std::log1p(-p);
    }
  }
  if (positives == 0 || positives == labels.size()) {
    throw Error("normalized_entropy: labels are all identical, base-rate entropy is zero");
  }
  const double n = static_cast<double>(labels.size());
  const double q = static_cast<double>(positives) / n;
  const double base = -(q * std::log(q) + (1.0 - q) * std::log1p(-q));
  return (ce / n) / base;
}

double relative_metric_change(double metric_test, double metric_control) {
  if (metric_control == 0.0) throw Error("relative_metric_change: control metric is zero");
  return (metric_test - metric_control) / metric_control * 100.0;
}

std::string format_percent(double percent) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f%%", percent);
  return buf;
}

double neighbor_purity(const SimilarityGraph& graph, const GroundTruth& truth) {
  auto label = [&](UserId u) {
    const auto it = truth.find(u);
    if (it == truth.end()) throw Error("neighbor_purity: user " + std::to_string(u) + " has no label");
    return it->second;
  };
  std::size_t same = 0, total = 0;
  for (const auto& [u, nbs] : graph.edges) {
    const auto lu = label(u);
    for (const auto& nb : nbs) {
      same += label(nb.user) == lu;
      ++total;
    }
  }
  if (total == 0) {
    spdlog::warn("neighbor_purity: graph has no edges, reporting 0");
    return 0.0;
  }
  return static_cast<double>(same) / static_cast<double>(total);
}

double retrieval_recall(const CandidateSet& candidates, std::span<const ItemId> heldout) {
  std::unordered_set<ItemId> wanted(heldout.begin(), heldout.end());
  if (wanted.empty()) throw Error("retrieval_recall: empty held-out set for user " + std::to_string(candidates.user_id));
  std::size_t hit = 0;
  for (const auto& c : candidates.candidates) hit += wanted.erase(c.ad_id);
  return static_cast<double>(hit) / static_cast<double>(hit + wanted.size());
}

SplitData temporal_split(const SynthData& data, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("heldout_fraction: must be in (0, 1)");
  SplitData out;
  out.catalog = data.catalog;
  out.truth = data.ground_truth;
  out.account_clusters = data.account_clusters;
  out.histories.reserve(data.histories.size());
  Timestamp now = 0;
  bool any = false;

  for (const auto& h : data.histories) {
    std::vector<Timestamp> ts;
    for (const auto& seq : h.sequences) {
      for (const auto& e : seq.events) ts.push_back(e.timestamp);
    }
    std::sort(ts.begin(), ts.end());
    const std::size_t n = ts.size();
    // The epsilon keeps 0.1 * 30 (= 3.0000000000000004) at 3.
    auto hold = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    hold = std::min(hold, n == 0 ? 0 : n - 1);
    // A cut equal to the earliest event would leave nothing to embed.
    Timestamp cut = std::numeric_limits<Timestamp>::max();
    if (hold > 0 && ts[n - hold] > ts.front()) cut = ts[n - hold];

    UserHistory kept = h;
    for (auto& seq : kept.sequences) {
      std::erase_if(seq.events, [&](const Event& e) { return e.timestamp >= cut; });
      if (!seq.events.empty()) {
        now = any ? std::max(now, seq.events.back().timestamp) : seq.events.back().timestamp;
        any = true;
      }
    }
    out.histories.push_back(std::move(kept));

    if (const auto it = data.engagements.find(h.user_id); it != data.engagements.end()) {
      for (const auto& e : it->second) (e.timestamp < cut ? out.train : out.heldout)[h.user_id].push_back(e);
    }
  }
  out.now = now;
  return out;
}

namespace {

std::vector<ItemId> distinct_sorted(std::vector<ItemId> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::vector<ItemId> all_ads(const AdsCatalog& catalog) {
  std::vector<ItemId> ads;
  for (const auto& [acct, list] : catalog) ads.insert(ads.end(), list.begin(), list.end());
  return distinct_sorted(std::move(ads));
}

}  // namespace

std::map<UserId, std::vector<ItemId>> own_cluster_heldout(const SplitData& split) {
  std::map<UserId, std::vector<ItemId>> out;
  for (const auto& [uid, list] : split.heldout) {
    const auto label = split.truth.find(uid);
    if (label == split.truth.end()) continue;
    std::vector<ItemId> ads;
    for (const auto& e : list) {
      const auto acct = split.account_clusters.find(e.account_id);
      if (acct != split.account_clusters.end() && acct->second == label->second) ads.push_back(e.ad_id);
    }
    if (!ads.empty()) out[uid] = distinct_sorted(std::move(ads));
  }
  return out;
}

std::map<UserId, std::vector<ItemId>> all_heldout(const SplitData& split) {
  std::map<UserId, std::vector<ItemId>> out;
  for (const auto& [uid, list] : split.heldout) {
    std::vector<ItemId> ads;
    for (const auto& e : list) ads.push_back(e.ad_id);
    if (!ads.empty()) out[uid] = distinct_sorted(std::move(ads));
  }
  return out;
}

std::map<UserId, CandidateSet> random_ads_baseline(const std::map<UserId, CandidateSet>& reference,
                                                   const AdsCatalog& catalog, const EngagementLog& train,
                                                   std::uint64_t seed) {
  const std::vector<ItemId> ads = all_ads(catalog);
  std::vector<UserId> users;
  for (const auto& [uid, _] : reference) users.push_back(uid);
  std::vector<CandidateSet> sets(users.size());

  parallel_for(users.size(), [&](std::size_t i) {
    const UserId uid = users[i];
    std::unordered_set<ItemId> engaged;
    if (const auto it = train.find(uid); it != train.end()) {
      for (const auto& e : it->second) engaged.insert(e.ad_id);
    }
    std::vector<ItemId> pool;
    pool.reserve(ads.size());
    for (ItemId ad : ads) {
      if (!engaged.count(ad)) pool.push_back(ad);
    }
    const std::size_t take = std::min(reference.at(uid).candidates.size(), pool.size());
    Rng rng(mix_seed(seed, uid));
    for (std::size_t j = 0; j < take; ++j) std::swap(pool[j], pool[j + rng.below(pool.size() - j)]);
    pool.resize(take);
    std::sort(pool.begin(), pool.end());
    sets[i].user_id = uid;
    for (ItemId ad : pool) sets[i].candidates.push_back({ad, 0, CandidateReason::direct, 0.0});
  });

  std::map<UserId, CandidateSet> out;
  for (std::size_t i = 0; i < users.size(); ++i) out.emplace(users[i], std::move(sets[i]));
  return out;
}

RecallSummary mean_recall(const std::map<UserId, CandidateSet>& candidates,
                          const std::map<UserId, std::vector<ItemId>>& heldout) {
  std::vector<double> r;
  r.reserve(heldout.size());
  for (const auto& [uid, ads] : heldout) {
    if (ads.empty()) continue;
    const auto it = candidates.find(uid);
    r.push_back(it == candidates.end() ? 0.0 : retrieval_recall(it->second, ads));
  }
  RecallSummary s;
  s.users = r.size();
  if (r.empty()) return s;
  double sum = 0.0;
  for (double x : r) sum += x;
  s.mean = sum / static_cast<double>(r.size());
  if (r.size() > 1) {
    double ss = 0.0;
    for (double x : r) ss += (x - s.mean) * (x - s.mean);
    s.ci95 = 1.96 * std::sqrt(ss / static_cast<double>(r.size() - 1) / static_cast<double>(r.size()));
  }
  return s;
}

NeResult heldout_prediction_ne(const std::map<UserId, CandidateSet>& candidates,
                               const std::map<UserId, std::vector<ItemId>>& heldout, const AdsCatalog& catalog,
                               std::uint64_t seed, int negatives_per_positive) {
  if (negatives_per_positive < 1) throw Error("heldout_prediction_ne: negatives_per_positive must be >= 1");
  const std::vector<ItemId> ads = all_ads(catalog);
  // counts[fit/eval][feature][label]
  std::size_t counts[2][2][2] = {};
  std::vector<int> eval_feature, eval_label;

  for (const auto& [uid, pos] : heldout) {
    if (pos.empty()) continue;
    std::unordered_set<ItemId> retrieved;
    if (const auto it = candidates.find(uid); it != candidates.end()) {
      for (const auto& c : it->second.candidates) retrieved.insert(c.ad_id);
    }
    const std::unordered_set<ItemId> positive(pos.begin(), pos.end());
    if (positive.size() >= ads.size()) continue;
    const int part = static_cast<int>(uid % 2);
    auto add = [&](ItemId ad, int label) {
      const int f = retrieved.count(ad) ? 1 : 0;
      ++counts[part][f][label];
      if (part == 1) {
        eval_feature.push_back(f);
        eval_label.push_back(label);
      }
    };
    for (ItemId ad : pos) add(ad, 1);
    Rng rng(mix_seed(seed, uid));
    const std::size_t want = pos.size() * static_cast<std::size_t>(negatives_per_positive);
    for (std::size_t drawn = 0; drawn < want;) {
      const ItemId ad = ads[rng.below(ads.size())];
      if (positive.count(ad)) continue;
      add(ad, 0);
      ++drawn;
    }
  }

  double p_bin[2];
  for (int f = 0; f < 2; ++f) {
    const double pos = static_cast<double>(counts[0][f][1]);
    const double n = pos + static_cast<double>(counts[0][f][0]);
    p_bin[f] = (pos + 1.0) / (n + 2.0);  // Laplace smoothing keeps it inside (0, 1)
  }
  std::vector<double> pred(eval_feature.size());
  std::size_t positives = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred[i] = p_bin[eval_feature[i]];
    positives += eval_label[i];
  }
  NeResult r;
  r.pairs = pred.size();
  r.base_rate = pred.empty() ? 0.0 : static_cast<double>(positives) / static_cast<double>(pred.size());
  r.ne = normalized_entropy(pred, eval_label);
  return r;
}

// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::desk_scale() {
  ExperimentConfig c;
  c.synth.n_users = 10000;
  c.synth.n_clusters = 5;
  c.synth.n_accounts = 500;
  c.synth.seed = 7;

  c.model.K = 2;
  c.model.n_layers = 1;
  c.model.d_model = 16;
  c.model.n_heads = 2;
  c.model.ffn_mult = 2;
  c.model.cfee.d_model = 16;
  c.model.cfee.n_heads = 2;
  c.model.cfee.relpos_window = 16;
  c.model.cfee.n_time_buckets = 16;
  c.model.tap_layers = {1};
  c.model.M = 2;
  c.model.batch_size = 32;
  c.model.learning_rate = 0.05;
  c.train_steps = 2000;

  c.graph.k1 = 40;
  c.graph.k1_prime = 5;
  c.graph.k2 = 15;
  fit_model_to_synth(c.model, c.synth);
  return c;
}

void fit_model_to_synth(ModelConfig& model, const SynthConfig& synth) {
  model.K = 2;
  model.vocab_sizes = {ads_vocab_size(synth), content_vocab_size(synth)};
  model.n_accounts = ads_vocab_size(synth);
}

void ExperimentConfig::validate() const {
  synth.validate();
  model.validate();
  graph.validate();
  retrieval.validate();
  if (train_steps < 0) throw ConfigError("experiment.train_steps: must be >= 0");
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
    throw ConfigError("experiment.heldout_fraction: must be in (0, 1)");
  }
}

json ExperimentConfig::to_json() const {
  return json{{"synth", synth.to_json()},
              {"model", model.to_json()},
              {"train_steps", train_steps},
              {"graph", graph.to_json()},
              {"retrieval", retrieval.to_json()},
              {"heldout_fraction", heldout_fraction},
              {"measure_knn_recall", measure_knn_recall}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) { return from_json(j, desk_scale()); }

ExperimentConfig ExperimentConfig::from_json(const json& j, const ExperimentConfig& base) {
  using namespace config_json;
  const std::string where = "experiment";
  check_keys(j, {"synth", "model", "train_steps", "graph", "retrieval", "heldout_fraction", "measure_knn_recall"},
             where);
  ExperimentConfig c = base;
  if (j.contains("synth")) c.synth = SynthConfig::from_json(j.at("synth"));
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("graph")) c.graph = GraphConfig::from_json(j.at("graph"));
  if (j.contains("retrieval")) c.retrieval = RetrievalConfig::from_json(j.at("retrieval"));
  read_key(j, "train_steps", c.train_steps, where);
  read_key(j, "heldout_fraction", c.heldout_fraction, where);
  read_key(j, "measure_knn_recall", c.measure_knn_recall, where);
  fit_model_to_synth(c.model, c.synth);
  return c;
}

std::uint64_t ExperimentConfig::hash() const {
  const std::string s = to_json().dump();
  return fnv1a(s);
}

// ---------------------------------------------------------------------------

void compute_metrics(const EvalInputs& in, ExperimentReport& report) {
  if (!in.split || !in.graph || !in.candidates) throw Error("compute_metrics: missing inputs");
  const SplitData& split = *in.split;
  const auto& cands = *in.candidates;
  auto put = [&](const std::string& name, double v, const std::string& op, double ci = -1.0) {
    report.metrics[name] = Metric{v, ci, op};
  };

  put("neighbor_purity", neighbor_purity(*in.graph, split.truth), "neighbor_purity");
  put("graph_users", static_cast<double>(in.graph->edges.size()), "build_graph");
  if (in.exact_graph) put("knn_recall", graph_recall(*in.graph, *in.exact_graph), "graph_recall vs exact_knn_graph");

  const auto baseline = random_ads_baseline(cands, split.catalog, split.train, mix_seed(in.seed, 0xBA5E));
  const auto own = own_cluster_heldout(split);
  const auto every = all_heldout(split);
  if (own.empty()) throw Error("compute_metrics: no user has an own-cluster held-out engagement");

  const RecallSummary a = mean_recall(cands, own);
  const RecallSummary b = mean_recall(baseline, own);
  put("recall_own_cluster_alure", a.mean, "retrieval_recall (graph candidates)", a.ci95);
  put("recall_own_cluster_random", b.mean, "retrieval_recall (random-ads baseline)", b.ci95);
  put("heldout_users", static_cast<double>(a.users), "temporal_split");
  if (b.mean > 0.0) {
    put("recall_lift_percent", relative_metric_change(a.mean, b.mean), "relative_metric_change(alure, random)");
    put("recall_ratio", a.mean / b.mean, "recall_own_cluster_alure / recall_own_cluster_random");
  }
  const RecallSummary ea = mean_recall(cands, every);
  const RecallSummary eb = mean_recall(baseline, every);
  put("recall_all_alure", ea.mean, "retrieval_recall (graph candidates)", ea.ci95);
  put("recall_all_random", eb.mean, "retrieval_recall (random-ads baseline)", eb.ci95);

  const std::uint64_t ne_seed = mix_seed(in.seed, 0x4E45);
  const NeResult na = heldout_prediction_ne(cands, every, split.catalog, ne_seed);
  const NeResult nb = heldout_prediction_ne(baseline, every, split.catalog, ne_seed);
  put("ne_alure", na.ne, "normalized_entropy (graph-candidate feature)");
  put("ne_random", nb.ne, "normalized_entropy (random-ads feature)");
  put("ne_change_percent", relative_metric_change(na.ne, nb.ne), "relative_metric_change(ne_alure, ne_random)");
  put("ne_eval_pairs", static_cast<double>(na.pairs), "heldout_prediction_ne");

  std::size_t max_count = 0, over = 0, total = 0;
  for (const auto& [uid, set] : cands) {
    max_count = std::max(max_count, set.candidates.size());
    over += set.candidates.size() > in.cap;
    total += set.candidates.size();
  }
  put("max_candidates", static_cast<double>(max_count), "retrieve_all");
  put("mean_candidates", cands.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(cands.size()),
      "retrieve_all");
  put("users_over_cap", static_cast<double>(over), "retrieve_all");
  report.max_candidates = max_count;
  report.histogram = count_histogram(cands, in.cap, in.histogram_bucket_width);
}

namespace {

class StageTimer {
 public:
  explicit StageTimer(std::map<std::string, double>& sink) : sink_(sink) {}
  template <typename Fn>
  auto operator()(const std::string& stage, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    struct Record {
      std::map<std::string, double>& sink;
      std::string stage;
      std::chrono::steady_clock::time_point t0;
      ~Record() {
        sink[stage] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
    } rec{sink_, stage, t0};
    spdlog::info("stage {}", stage);
    return fn();
  }

 private:
  std::map<std::string, double>& sink_;
};

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config, std::uint64_t seed) {
  ExperimentConfig cfg = config;
  cfg.synth.seed = seed;
  cfg.model.seed = seed;
  cfg.graph.seed = seed;
  fit_model_to_synth(cfg.model, cfg.synth);
  cfg.validate();

  ExperimentReport report;
  report.config_hash = config.hash();
  report.dataset_seed = seed;
  StageTimer stage(report.stage_seconds);

  const SynthData data = stage("synth", [&] { return synth_generate(cfg.synth); });
  const SplitData split = stage("split", [&] { return temporal_split(data, cfg.heldout_fraction); });

  ModelParams params = init_params(cfg.model);
  const TrainingReport tr = stage("train", [&] {
    const auto examples = make_training_examples(split.histories, split.train, cfg.model.K);
    return train(params, cfg.model, examples, cfg.train_steps);
  });
  report.metrics["train_loss_initial"] = {tr.initial_loss, -1.0, "contrastive_loss (probe batches, init)"};
  report.metrics["train_loss_final"] = {tr.final_loss, -1.0, "contrastive_loss (probe batches, trained)"};

  const SnapshotBuild built = stage("embed", [&] {
    const std::uint64_t version = crc32_of(serialize_checkpoint(params, cfg.model));
    const Embedder embedder(cfg.model, params.feature, version);
    auto b = build_snapshot(embedder, split.histories, split.now);
    b.snapshot.snapshot_version = 1;
    return b;
  });
  report.metrics["embed_skipped_users"] = {static_cast<double>(built.skipped), -1.0, "build_snapshot"};

  const SimilarityGraph graph = stage("build_graph", [&] { return build_graph(built.snapshot, cfg.graph); });
  SimilarityGraph exact;
  if (cfg.measure_knn_recall) exact = stage("exact_knn", [&] { return exact_knn_graph(built.snapshot, cfg.graph); });

  const RetrievalResult rr = stage("retrieve", [&] {
    return retrieve_all(graph, split.train, split.catalog, cfg.retrieval, split.now);
  });

  stage("metrics", [&] {
    EvalInputs in;
    in.split = &split;
    in.graph = &graph;
    in.candidates = &rr.sets;
    in.exact_graph = cfg.measure_knn_recall ? &exact : nullptr;
    in.cap = cfg.retrieval.cap;
    in.histogram_bucket_width = cfg.retrieval.histogram_bucket_width;
    in.seed = seed;
    compute_metrics(in, report);
  });
  return report;
}

MultiSeedReport summarize(std::uint64_t config_hash, std::vector<ExperimentReport> runs) {
  MultiSeedReport m;
  m.config_hash = config_hash;
  m.runs = std::move(runs);
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : m.runs) {
    for (const auto& [name, metric] : r.metrics) values[name].push_back(metric.value);
  }
  for (const auto& [name, v] : values) {
    MetricSummary s;
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - s.mean) * (x - s.mean);
      s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    m.summary[name] = s;
  }
  return m;
}

MultiSeedReport run_experiments(const ExperimentConfig& config, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw Error("run_experiments: no seeds");
  std::vector<ExperimentReport> runs;
  for (auto s : seeds) {
    spdlog::info("experiment seed {}", s);
    runs.push_back(run_experiment(config, s));
  }
  return summarize(config.hash(), std::move(runs));
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

json report_json(const ExperimentReport& r) {
  json metrics = json::object();
  for (const auto& [name, m] : r.metrics) {
    json o{{"value", m.value}, {"op", m.op}};
    if (m.ci95 >= 0.0) o["ci95"] = m.ci95;
    metrics[name] = std::move(o);
  }
  return json{{"config_hash", hex64(r.config_hash)},
              {"dataset_seed", r.dataset_seed},
              {"metrics", std::move(metrics)},
              {"histogram", {{"bucket_width", r.histogram.bucket_width}, {"counts", r.histogram.counts}}},
              {"max_candidates", r.max_candidates},
              {"note", report_footer()}};
}

json report_json(const MultiSeedReport& r) {
  json runs = json::array();
  std::vector<std::uint64_t> seeds;
  for (const auto& run : r.runs) {
    runs.push_back(report_json(run));
    seeds.push_back(run.dataset_seed);
  }
  json summary = json::object();
  for (const auto& [name, s] : r.summary) {
    summary[name] = {{"mean", s.mean}, {"stddev", s.stddev}, {"min", s.min}, {"max", s.max}};
  }
  return json{{"config_hash", hex64(r.config_hash)},
              {"seeds", seeds},
              {"runs", std::move(runs)},
              {"summary", std::move(summary)},
              {"note", report_footer()}};
}

json timings_json(const ExperimentReport& r) {
  double total = 0.0;
  for (const auto& [k, v] : r.stage_seconds) total += v;
  return json{{"dataset_seed", r.dataset_seed}, {"stages", r.stage_seconds}, {"total", total}};
}

json timings_json(const MultiSeedReport& r) {
  json runs = json::array();
  double total = 0.0;
  for (const auto& run : r.runs) {
    runs.push_back(timings_json(run));
    total += runs.back()["total"].get<double>();
  }
  return json{{"runs", std::move(runs)}, {"total", total}};
}

namespace {

std::string fmt_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string report_text(const ExperimentReport& r) {
  std::ostringstream s;
  s << "experiment seed " << r.dataset_seed << ", config " << hex64(r.config_hash) << "\n\n";
  for (const auto& [name, m] : r.metrics) {
    s << "  " << name << " = " << fmt_value(m.value);
    if (m.ci95 >= 0.0) s << " ± " << fmt_value(m.ci95) << " (95% CI)";
    s << "    [" << m.op << "]\n";
  }
  if (const auto it = r.metrics.find("recall_lift_percent"); it != r.metrics.end()) {
    s << "\n  recall lift over random ads: " << format_percent(it->second.value) << '\n';
  }
  s << "\ncandidate count histogram (bucket_low count):\n" << histogram_text(r.histogram);
  s << '\n' << report_footer() << '\n';
  return s.str();
}

std::string report_text(const MultiSeedReport& r) {
  std::ostringstream s;
  s << "experiment over " << r.runs.size() << " seeds, config " << hex64(r.config_hash) << "\n\n";
  s << "  metric = mean ± stddev (min .. max)\n";
  for (const auto& [name, m] : r.summary) {
    s << "  " << name << " = " << fmt_value(m.mean) << " ± " << fmt_value(m.stddev) << " (" << fmt_value(m.min)
      << " .. " << fmt_value(m.max) << ")\n";
  }
  if (!r.runs.empty()) {
    s << "\ncandidate count histogram, seed " << r.runs.front().dataset_seed << " (bucket_low count):\n"
      << histogram_text(r.runs.front().histogram);
  }
  s << '\n' << report_footer() << '\n';
  return s.str();
}

std::string report_footer() {
  return "Offline synthetic replication only. Production NE gains and online A/B lifts are not reproduced; "
         "recall of held-out engagements stands in for the online value metric and the random-ads baseline "
         "is the control arm.";
}

}  // namespace alure
