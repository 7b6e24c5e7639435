#pragma once

// Enumerates every (neighbor, engagement, path) triple, then dedups, filters,
// sorts and caps in separate passes.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "alure/retrieval.hpp"

namespace oracle {

inline alure::CandidateSet brute_force_retrieve(alure::UserId user, const alure::SimilarityGraph& g,
                                                const alure::EngagementLog& log, const alure::AdsCatalog& catalog,
                                                const alure::RetrievalConfig& cfg, alure::Timestamp now) {
  using namespace alure;
  std::vector<Candidate> paths;
  if (g.edges.count(user)) {
    for (const auto& nb : g.edges.at(user)) {
      if (!log.count(nb.user)) continue;
      for (const auto& e : log.at(nb.user)) {
        if (e.kind != EventKind::click && e.kind != EventKind::conversion) continue;
        const double age = std::max<double>(0.0, static_cast<double>(now - e.timestamp));
        const double s = std::max(0.0, nb.similarity) * std::pow(2.0, -age / static_cast<double>(cfg.recency_half_life));
        if (cfg.enable_direct) paths.push_back({e.ad_id, nb.user, CandidateReason::direct, s});
        if (cfg.enable_account_expansion && cfg.expansion_event_kinds.count(e.kind) && catalog.count(e.account_id)) {
          for (auto ad : catalog.at(e.account_id))
            if (ad != e.ad_id) paths.push_back({ad, nb.user, CandidateReason::account_expansion, s * cfg.expansion_discount});
        }
      }
    }
  }
  std::set<ItemId> own;
  if (log.count(user))
    for (const auto& e : log.at(user)) own.insert(e.ad_id);
  // Rank paths for each ad: score desc, direct first, lower source first.
  auto key = [](const Candidate& c) {
    return std::make_tuple(-c.score, c.reason == CandidateReason::direct ? 0 : 1, c.source_user);
  };
  std::map<ItemId, Candidate> best;
  for (const auto& p : paths) {
    if (own.count(p.ad_id)) continue;
    if (!best.count(p.ad_id) || key(p) < key(best.at(p.ad_id))) best[p.ad_id] = p;
  }
  CandidateSet out;
  out.user_id = user;
  for (const auto& [ad, c] : best) out.candidates.push_back(c);
  std::stable_sort(out.candidates.begin(), out.candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  if (out.candidates.size() > cfg.cap) out.candidates.resize(cfg.cap);
  return out;
}

}  // namespace oracle
