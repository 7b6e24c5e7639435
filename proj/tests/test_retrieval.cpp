#include <sstream>

#include "alure/retrieval.hpp"
#include "doctest.h"
#include "oracles/brute_force_retrieval.hpp"

using namespace alure;

namespace {

constexpr Timestamp kNow = 1'700'000'000;

std::set<ItemId> ads_of(const CandidateSet& s, CandidateReason r) {
  std::set<ItemId> out;
  for (const auto& c : s.candidates)
    if (c.reason == r) out.insert(c.ad_id);
  return out;
}

}  // namespace

TEST_CASE("clicked ads flow to users that have the clicker as a neighbour") {
  // u1 clicked ad1 and ad2; u2 and u3 point at u1.
  SimilarityGraph g;
  g.edges[1] = {};
  g.edges[2] = {{1, 0.9}};
  g.edges[3] = {{1, 0.7}};
  EngagementLog log;
  log[1] = {{101, 11, EventKind::click, kNow - 10}, {102, 12, EventKind::click, kNow - 20}};
  AdsCatalog catalog{{11, {101}}, {12, {102}}};
  const RetrievalConfig cfg;
  for (UserId u : {2, 3}) {
    const auto set = retrieve_for_user(u, g, log, catalog, cfg, kNow);
    CHECK(ads_of(set, CandidateReason::direct) == std::set<ItemId>{101, 102});
    for (const auto& c : set.candidates) CHECK(c.source_user == 1);
  }
  CHECK(retrieve_for_user(1, g, log, catalog, cfg, kNow).candidates.empty());
  CHECK(retrieve_for_user(99, g, log, catalog, cfg, kNow).candidates.empty());
}

TEST_CASE("a conversion expands to the other ads of the same account") {
  const ItemId tshirt = 1, shoe = 2, pants = 3;
  SimilarityGraph g;
  g.edges[1] = {};
  g.edges[2] = {{1, 0.8}};
  g.edges[3] = {{1, 0.6}};
  EngagementLog log;
  log[1] = {{tshirt, 500, EventKind::conversion, kNow - 100}};
  AdsCatalog catalog{{500, {tshirt, shoe, pants}}};
  const RetrievalConfig cfg;
  for (UserId u : {2, 3}) {
    const auto set = retrieve_for_user(u, g, log, catalog, cfg, kNow);
    CHECK(ads_of(set, CandidateReason::account_expansion) == std::set<ItemId>{shoe, pants});
    CHECK(ads_of(set, CandidateReason::direct) == std::set<ItemId>{tshirt});
  }
  // Clicks do not expand under the default kinds.
  log[1][0].kind = EventKind::click;
  CHECK(ads_of(retrieve_for_user(2, g, log, catalog, cfg, kNow), CandidateReason::account_expansion).empty());
}

TEST_CASE("score formula") {
  CHECK(candidate_score(0.5, kNow, kNow, 100) == 0.5);
  CHECK(candidate_score(0.5, kNow - 100, kNow, 100) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(candidate_score(-0.3, kNow, kNow, 100) == 0.0);
  CHECK(candidate_score(0.8, kNow + 50, kNow, 100) == 0.8);
  // Monotone in similarity.
  CHECK(candidate_score(0.7, kNow - 37, kNow, 100) > candidate_score(0.6, kNow - 37, kNow, 100));
}

TEST_CASE("hand fixture matches brute-force enumeration") {
  // Five users with overlapping engagements and accounts.
  SimilarityGraph g;
  g.edges[1] = {{2, 0.9}, {3, 0.5}, {4, 0.5}};
  g.edges[2] = {{1, 0.9}, {5, -0.2}};
  g.edges[3] = {{4, 0.95}, {1, 0.4}};
  g.edges[4] = {{3, 0.95}};
  g.edges[5] = {{2, 0.3}, {3, 0.3}, {4, 0.3}};
  EngagementLog log;
  log[1] = {{10, 100, EventKind::click, kNow - 3600}};
  log[2] = {{11, 100, EventKind::conversion, kNow - 86400}, {20, 200, EventKind::click, kNow - 7200}};
  log[3] = {{10, 100, EventKind::click, kNow - 600}, {21, 200, EventKind::conversion, kNow - 60}};
  log[4] = {{30, 300, EventKind::conversion, kNow - 5 * 86400}, {11, 100, EventKind::click, kNow - 1000}};
  log[5] = {{12, 100, EventKind::impression, kNow - 10}};
  AdsCatalog catalog{{100, {10, 11, 12, 13}}, {200, {20, 21, 22}}, {300, {30, 31}}};
  for (std::size_t cap : {std::size_t{1500}, std::size_t{3}, std::size_t{1}}) {
    for (bool direct : {true, false}) {
      for (bool expand : {true, false}) {
        RetrievalConfig cfg;
        cfg.cap = cap;
        cfg.enable_direct = direct;
        cfg.enable_account_expansion = expand;
        cfg.expansion_event_kinds = {EventKind::conversion, EventKind::click};
        for (UserId u = 1; u <= 5; ++u) {
          CAPTURE(u);
          CHECK(retrieve_for_user(u, g, log, catalog, cfg, kNow) == oracle::brute_force_retrieve(u, g, log, catalog, cfg, kNow));
        }
      }
    }
  }
}

TEST_CASE("randomized fixtures match brute force and obey the laws") {
  Rng rng(55);
  for (int trial = 0; trial < 30; ++trial) {
    SimilarityGraph g;
    EngagementLog log;
    AdsCatalog catalog;
    std::map<ItemId, AccountId> owner;
    for (AccountId a = 1; a <= 6; ++a)
      for (int k = 0; k < 1 + static_cast<int>(rng.below(5)); ++k) {
        const ItemId ad = a * 100 + static_cast<ItemId>(k);
        catalog[a].push_back(ad);
        owner[ad] = a;
      }
    std::vector<ItemId> all_ads;
    for (const auto& [ad, a] : owner) all_ads.push_back(ad);
    for (UserId u = 1; u <= 12; ++u) {
      auto& list = g.edges[u];
      for (UserId v = 1; v <= 12; ++v)
        if (v != u && rng.uniform() < 0.3) list.push_back({v, 2.0 * rng.uniform() - 1.0});
      for (int e = 0; e < static_cast<int>(rng.below(5)); ++e) {
        const ItemId ad = all_ads[rng.below(all_ads.size())];
        const EventKind kind = rng.uniform() < 0.5 ? EventKind::click : EventKind::conversion;
        log[u].push_back({ad, owner[ad], kind, kNow - static_cast<Timestamp>(rng.below(30 * 86400))});
      }
    }
    RetrievalConfig cfg;
    cfg.cap = 1 + rng.below(15);
    const auto all = retrieve_all(g, log, catalog, cfg, kNow);
    CHECK(all.histogram.total() == g.edges.size());
    for (const auto& [u, set] : all.sets) {
      CHECK(set == oracle::brute_force_retrieve(u, g, log, catalog, cfg, kNow));
      CHECK(set.candidates.size() <= cfg.cap);
      std::set<ItemId> ids;
      for (const auto& c : set.candidates) {
        CHECK(c.score >= 0.0);
        CHECK(ids.insert(c.ad_id).second);
        bool from_out_neighbor = false;
        for (const auto& nb : g.edges.at(u)) from_out_neighbor |= nb.user == c.source_user;
        CHECK(from_out_neighbor);
        if (log.count(u))
          for (const auto& e : log.at(u)) CHECK(e.ad_id != c.ad_id);
      }
    }
  }
}

TEST_CASE("histogram buckets and text form") {
  std::map<UserId, CandidateSet> sets;
  auto make = [](UserId u, std::size_t n) {
    CandidateSet s;
    s.user_id = u;
    s.candidates.resize(n);
    return s;
  };
  sets[1] = make(1, 0);
  sets[2] = make(2, 49);
  sets[3] = make(3, 50);
  sets[4] = make(4, 1500);
  const auto h = count_histogram(sets, 1500, 50);
  CHECK(h.counts.size() == 31);
  CHECK(h.counts[0] == 2);
  CHECK(h.counts[1] == 1);
  CHECK(h.counts[30] == 1);
  CHECK(h.total() == 4);
  const std::string text = histogram_text(h);
  CHECK(text.rfind("0 2\n50 1\n100 0\n", 0) == 0);
}

TEST_CASE("candidate file round trip") {
  SimilarityGraph g;
  g.edges[2] = {{1, 0.8}};
  EngagementLog log;
  log[1] = {{7, 70, EventKind::conversion, kNow - 1234}};
  AdsCatalog catalog{{70, {7, 8, 9}}};
  const auto r = retrieve_all(g, log, catalog, RetrievalConfig{}, kNow);
  std::stringstream buf;
  write_candidates(buf, r.sets);
  CHECK(read_candidates(buf) == r.sets);
}

TEST_CASE("retrieval config JSON") {
  RetrievalConfig c;
  c.expansion_event_kinds = {EventKind::click, EventKind::conversion};
  c.cap = 10;
  CHECK(RetrievalConfig::from_json(c.to_json()) == c);
  auto j = c.to_json();
  j["expansion_event_kinds"] = {"bogus"};
  CHECK_THROWS_AS(RetrievalConfig::from_json(j), ConfigError);
  c.cap = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("retrieval.cap"), ConfigError);
}
