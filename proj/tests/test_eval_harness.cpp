#include <algorithm>
#include <set>

#include "alure/eval_harness.hpp"
#include "doctest.h"
#include "oracles/ne_reference.hpp"

using namespace alure;

namespace {

CandidateSet cands(UserId u, std::vector<ItemId> ads) {
  CandidateSet s;
  s.user_id = u;
  for (ItemId a : ads) s.candidates.push_back({a, 0, CandidateReason::direct, 1.0});
  return s;
}

ExperimentConfig small_experiment() {
  ExperimentConfig c = ExperimentConfig::desk_scale();
  c.synth.n_users = 400;
  c.synth.n_accounts = 60;
  c.train_steps = 30;
  c.graph.k1 = 8;
  c.graph.k1_prime = 2;
  c.graph.k2 = 5;
  fit_model_to_synth(c.model, c.synth);
  return c;
}

}  // namespace

TEST_CASE("normalized entropy of the base-rate predictor is one") {
  const std::vector<int> y{1, 0, 0, 1, 0, 0, 0, 1, 0, 0};
  const std::vector<double> p(y.size(), 0.3);
  CHECK(normalized_entropy(p, y) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("clipped perfect predictions give NE near zero") {
  const std::vector<int> y{1, 0, 1, 1, 0, 0, 1, 0};
  std::vector<double> p;
  for (int l : y) p.push_back(l ? 1.0 - 1e-9 : 1e-9);
  const double ne = normalized_entropy(p, y);
  CHECK(ne > 0.0);
  CHECK(ne < 1e-8);
}

TEST_CASE("20-example fixture matches the spreadsheet computation") {
  const std::vector<double> p{0.12, 0.85, 0.40, 0.03, 0.66, 0.91, 0.27, 0.50, 0.08, 0.73,
                              0.19, 0.58, 0.95, 0.33, 0.44, 0.02, 0.81, 0.61, 0.15, 0.37};
  const std::vector<int> y{0, 1, 0, 0, 1, 1, 0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 1, 1, 0, 0};
  const double ne = normalized_entropy(p, y);
  CHECK(std::abs(ne - oracle::ne_spreadsheet(p, y)) < 1e-12);
  CHECK(ne < 1.0);  // informative predictor
}

TEST_CASE("NE is invariant under permuting the pairs") {
  Rng rng(5);
  std::vector<double> p;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    p.push_back(0.01 + 0.98 * rng.uniform());
    y.push_back(rng.uniform() < p.back() ? 1 : 0);
  }
  const double ne = normalized_entropy(p, y);
  std::vector<std::size_t> order(p.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int t = 0; t < 5; ++t) {
    rng.shuffle(order);
    std::vector<double> p2;
    std::vector<int> y2;
    for (auto i : order) {
      p2.push_back(p[i]);
      y2.push_back(y[i]);
    }
    CHECK(normalized_entropy(p2, y2) == doctest::Approx(ne).epsilon(1e-12));
  }
}

TEST_CASE("NE preconditions") {
  const std::vector<double> p{0.2, 0.4};
  CHECK_THROWS_AS(normalized_entropy(p, std::vector<int>{1, 1}), Error);
  CHECK_THROWS_AS(normalized_entropy(p, std::vector<int>{0, 0}), Error);
  CHECK_THROWS_AS(normalized_entropy(p, std::vector<int>{1}), Error);
  CHECK_THROWS_AS(normalized_entropy(std::vector<double>{0.0, 0.5}, std::vector<int>{1, 0}), Error);
  CHECK_THROWS_AS(normalized_entropy(std::vector<double>{1.0, 0.5}, std::vector<int>{1, 0}), Error);
  CHECK_THROWS_AS(normalized_entropy(std::vector<double>{}, std::vector<int>{}), Error);
}

TEST_CASE("relative metric change") {
  CHECK(relative_metric_change(42.0, 42.0) == 0.0);
  CHECK(format_percent(relative_metric_change(100.28, 100.0)) == "0.28%");
  CHECK(format_percent(relative_metric_change(99.95, 100.0)) == "-0.05%");
  CHECK(relative_metric_change(100.28, 100.0) == doctest::Approx(0.28).epsilon(1e-12));
  CHECK_THROWS_AS(relative_metric_change(1.0, 0.0), Error);
  // Swapping test and control: change(a, b) = -change(b, a) * (a / b).
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const double a = 0.1 + rng.uniform() * 10.0, b = 0.1 + rng.uniform() * 10.0;
    CHECK(relative_metric_change(a, b) == doctest::Approx(-relative_metric_change(b, a) * (a / b)).epsilon(1e-12));
  }
}

TEST_CASE("neighbor purity") {
  GroundTruth truth{{1, 0}, {2, 0}, {3, 1}, {4, 1}};
  SimilarityGraph g;
  g.edges[1] = {{2, 0.9}};
  g.edges[2] = {{1, 0.9}};
  g.edges[3] = {{4, 0.5}};
  g.edges[4] = {{3, 0.5}};
  CHECK(neighbor_purity(g, truth) == 1.0);
  g.edges[4].push_back({1, 0.1});
  CHECK(neighbor_purity(g, truth) == doctest::Approx(0.8));

  SimilarityGraph empty;
  CHECK(neighbor_purity(empty, truth) == 0.0);
  empty.edges[1] = {};
  CHECK(neighbor_purity(empty, truth) == 0.0);

  g.edges[5] = {{1, 0.3}};
  CHECK_THROWS_AS(neighbor_purity(g, truth), Error);
  g.edges.erase(5);
  g.edges[1].push_back({9, 0.3});
  CHECK_THROWS_AS(neighbor_purity(g, truth), Error);
}

TEST_CASE("random graph over balanced clusters has purity near 1/C") {
  const int C = 5, n = 500, k = 10;
  double sum = 0.0;
  const int seeds = 10;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(100 + s);
    GroundTruth truth;
    for (int u = 0; u < n; ++u) truth[u] = static_cast<std::uint32_t>(u % C);
    SimilarityGraph g;
    for (int u = 0; u < n; ++u) {
      auto& list = g.edges[u];
      while (list.size() < static_cast<std::size_t>(k)) {
        const UserId v = rng.below(n);
        if (v != static_cast<UserId>(u)) list.push_back({v, 0.0});
      }
    }
    sum += neighbor_purity(g, truth);
  }
  // Self-loops excluded: expectation (n/C - 1) / (n - 1).
  const double expected = (static_cast<double>(n) / C - 1.0) / (n - 1.0);
  CHECK(sum / seeds == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("retrieval recall") {
  const std::vector<ItemId> held{1, 2, 3, 4};
  CHECK(retrieval_recall(cands(1, {4, 3, 2, 1, 9}), held) == 1.0);
  CHECK(retrieval_recall(cands(1, {5, 6, 7}), held) == 0.0);
  CHECK(retrieval_recall(cands(1, {2, 7}), held) == 0.25);
  // Duplicate held-out ads count once.
  CHECK(retrieval_recall(cands(1, {2}), std::vector<ItemId>{2, 2, 3}) == 0.5);
  CHECK_THROWS_AS(retrieval_recall(cands(1, {1}), std::vector<ItemId>{}), Error);
}

TEST_CASE("temporal split holds out the latest tenth of each user's events") {
  SynthData d;
  UserHistory h;
  h.user_id = 1;
  h.region = "r";
  h.sequences.resize(2);
  h.sequences[1].source_id = 1;
  // 20 events: ads at t = 10..100 step 10, content at t = 15..105 step 10.
  for (int i = 0; i < 10; ++i) {
    Event ads;
    ads.item_id = 100 + i;
    ads.account_id = 7;
    ads.kind = EventKind::click;
    ads.token_codes = {7};
    ads.timestamp = 10 + 10 * i;
    h.sequences[0].events.push_back(ads);
    d.engagements[1].push_back({ads.item_id, 7, EventKind::click, ads.timestamp});
    Event c;
    c.item_id = 500 + i;
    c.kind = EventKind::content_view;
    c.token_codes = {1};
    c.timestamp = 15 + 10 * i;
    h.sequences[1].events.push_back(c);
  }
  d.histories.push_back(h);
  d.ground_truth[1] = 0;
  d.catalog[7] = {100, 101};

  const SplitData s = temporal_split(d, 0.1);
  // ceil(0.1 * 20) = 2 events held out: t = 100 and t = 105.
  REQUIRE(s.heldout.count(1));
  REQUIRE(s.heldout.at(1).size() == 1);
  CHECK(s.heldout.at(1)[0].timestamp == 100);
  CHECK(s.train.at(1).size() == 9);
  CHECK(s.histories[0].sequences[0].events.size() == 9);
  CHECK(s.histories[0].sequences[1].events.size() == 9);
  CHECK(s.now == 95);

  // 30 events: 0.1 * 30 is not exactly 3 in binary, yet exactly 3 are held out.
  for (int i = 10; i < 20; ++i) {
    Event c;
    c.item_id = 500 + i;
    c.kind = EventKind::content_view;
    c.token_codes = {1};
    c.timestamp = 1000 + i;
    d.histories[0].sequences[1].events.push_back(c);
  }
  const SplitData s30 = temporal_split(d, 0.1);
  std::size_t kept = 0;
  for (const auto& seq : s30.histories[0].sequences) kept += seq.events.size();
  CHECK(kept == 27);

  CHECK_THROWS_AS(temporal_split(d, 0.0), ConfigError);
  CHECK_THROWS_AS(temporal_split(d, 1.0), ConfigError);
}

TEST_CASE("temporal split on synthetic data never leaks the future") {
  SynthConfig sc;
  sc.n_users = 200;
  const SynthData d = synth_generate(sc);
  const SplitData s = temporal_split(d, 0.1);
  CHECK(s.histories.size() == d.histories.size());
  for (const auto& h : s.histories) {
    Timestamp last = 0;
    for (const auto& seq : h.sequences)
      for (const auto& e : seq.events) last = std::max(last, e.timestamp);
    CHECK(last <= s.now);
    if (const auto it = s.heldout.find(h.user_id); it != s.heldout.end()) {
      for (const auto& e : it->second) CHECK(e.timestamp > last);
      for (const auto& e : s.train.at(h.user_id)) CHECK(e.timestamp <= last);
    }
    const auto total = d.engagements.at(h.user_id).size();
    const auto kept = s.train.count(h.user_id) ? s.train.at(h.user_id).size() : 0;
    const auto held = s.heldout.count(h.user_id) ? s.heldout.at(h.user_id).size() : 0;
    CHECK(kept + held == total);
  }
  // Own-cluster held-out ads really are own-cluster.
  for (const auto& [uid, ads] : own_cluster_heldout(s)) {
    const auto owner = ad_owner_index(s.catalog);
    for (ItemId a : ads) CHECK(s.account_clusters.at(owner.at(a)) == s.truth.at(uid));
  }
}

TEST_CASE("random-ads baseline matches counts, excludes engaged ads and is seeded") {
  AdsCatalog catalog;
  for (AccountId a = 1; a <= 10; ++a)
    for (int j = 0; j < 10; ++j) catalog[a].push_back(a * 100 + j);
  EngagementLog train;
  train[1] = {{100, 1, EventKind::click, 0}, {101, 1, EventKind::click, 0}};
  std::map<UserId, CandidateSet> ref{{1, cands(1, {1, 2, 3, 4, 5, 6, 7})}, {2, cands(2, {})}};

  const auto a = random_ads_baseline(ref, catalog, train, 3);
  const auto b = random_ads_baseline(ref, catalog, train, 3);
  const auto c = random_ads_baseline(ref, catalog, train, 4);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a.at(1).candidates.size() == 7);
  CHECK(a.at(2).candidates.empty());
  std::set<ItemId> seen;
  for (const auto& x : a.at(1).candidates) {
    CHECK(x.ad_id != 100);
    CHECK(x.ad_id != 101);
    CHECK(seen.insert(x.ad_id).second);
  }
}

TEST_CASE("held-out prediction NE rewards candidates that contain the held-out ads") {
  AdsCatalog catalog;
  for (AccountId a = 1; a <= 20; ++a)
    for (int j = 0; j < 10; ++j) catalog[a].push_back(a * 100 + j);
  std::map<UserId, std::vector<ItemId>> held;
  std::map<UserId, CandidateSet> perfect, none;
  Rng rng(9);
  for (UserId u = 1; u <= 200; ++u) {
    std::vector<ItemId> ads;
    for (int j = 0; j < 3; ++j) ads.push_back((1 + rng.below(20)) * 100 + rng.below(10));
    std::sort(ads.begin(), ads.end());
    ads.erase(std::unique(ads.begin(), ads.end()), ads.end());
    held[u] = ads;
    perfect[u] = cands(u, ads);
    none[u] = cands(u, {});
  }
  const NeResult p = heldout_prediction_ne(perfect, held, catalog, 1);
  const NeResult n = heldout_prediction_ne(none, held, catalog, 1);
  CHECK(p.pairs == n.pairs);
  CHECK(p.base_rate == doctest::Approx(0.2).epsilon(0.01));
  CHECK(p.ne < 0.05);
  CHECK(n.ne == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("experiment config round-trips and rejects unknown keys") {
  const ExperimentConfig c = small_experiment();
  const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  auto j = c.to_json();
  j["bogus"] = 1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = c.to_json();
  j["graph"]["k3"] = 2;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = c.to_json();
  j["heldout_fraction"] = 1.5;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j).validate(), ConfigError);
}

TEST_CASE("summaries report mean and sample standard deviation") {
  std::vector<ExperimentReport> runs(3);
  const double vals[] = {1.0, 2.0, 4.0};
  for (int i = 0; i < 3; ++i) runs[i].metrics["m"] = {vals[i], -1.0, "op"};
  const MultiSeedReport m = summarize(0, runs);
  CHECK(m.summary.at("m").mean == doctest::Approx(7.0 / 3.0));
  CHECK(m.summary.at("m").stddev == doctest::Approx(std::sqrt(((1 - 7.0 / 3) * (1 - 7.0 / 3) + (2 - 7.0 / 3) * (2 - 7.0 / 3) +
                                                                (4 - 7.0 / 3) * (4 - 7.0 / 3)) /
                                                               2.0)));
  CHECK(m.summary.at("m").min == 1.0);
  CHECK(m.summary.at("m").max == 4.0);
}

TEST_CASE("small end-to-end experiment is complete and deterministic") {
  const ExperimentConfig cfg = small_experiment();
  const ExperimentReport a = run_experiment(cfg, 3);
  const ExperimentReport b = run_experiment(cfg, 3);
  CHECK(report_json(a).dump() == report_json(b).dump());
  CHECK(report_text(a) == report_text(b));

  for (const char* name : {"neighbor_purity", "recall_own_cluster_alure", "recall_own_cluster_random",
                           "recall_lift_percent", "ne_alure", "ne_random", "train_loss_initial", "train_loss_final",
                           "knn_recall", "max_candidates"}) {
    INFO(name);
    REQUIRE(a.metrics.count(name));
    CHECK(!a.metrics.at(name).op.empty());
  }
  CHECK(a.max_candidates <= cfg.retrieval.cap);
  CHECK(a.histogram.total() == static_cast<std::size_t>(a.metrics.at("graph_users").value));
  CHECK(a.histogram.counts.size() == cfg.retrieval.cap / 50 + 1);
  CHECK(a.metrics.at("train_loss_final").value < a.metrics.at("train_loss_initial").value);
  CHECK(report_text(a).find(report_footer()) != std::string::npos);
  CHECK(report_json(a).at("note") == report_footer());
  CHECK(!timings_json(a).at("stages").empty());
  CHECK(report_json(a).dump().find("stages") == std::string::npos);

  const std::uint64_t seeds[] = {3, 4};
  const MultiSeedReport m = run_experiments(cfg, seeds);
  CHECK(report_json(m.runs[0]).dump() == report_json(a).dump());
  CHECK(m.summary.at("neighbor_purity").stddev >= 0.0);
  CHECK(report_text(m).find("±") != std::string::npos);
}
