#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "alure/event_model.hpp"
#include "alure/similarity_graph.hpp"

namespace alure {

enum class CandidateReason { direct, account_expansion };
std::string_view to_string(CandidateReason r);

struct RetrievalConfig {
  std::size_t cap = 1500;
  std::int64_t recency_half_life = 7 * 86400;  // seconds
  bool enable_direct = true;
  bool enable_account_expansion = true;
  std::set<EventKind> expansion_event_kinds = {EventKind::conversion};
  double expansion_discount = 0.5;
  int histogram_bucket_width = 50;

  void validate() const;
  nlohmann::json to_json() const;
  static RetrievalConfig from_json(const nlohmann::json& j);
  bool operator==(const RetrievalConfig&) const = default;
};

struct Candidate {
  ItemId ad_id = 0;
  UserId source_user = 0;
  CandidateReason reason = CandidateReason::direct;
  double score = 0.0;
  bool operator==(const Candidate&) const = default;
};

struct CandidateSet {
  UserId user_id = 0;
  std::vector<Candidate> candidates;  // score descending, ties by ad id
  bool operator==(const CandidateSet&) const = default;
};

/// Score of one engagement seen through a neighbour of similarity s:
/// max(s, 0) * 2^(-max(0, now - t) / half_life).
double candidate_score(double similarity, Timestamp event_time, Timestamp now, std::int64_t half_life);

/// Candidates for `user` from its out-neighbours' engagements. Duplicate ads
/// keep their best score (ties prefer direct, then the lower source user); ads
/// the user already engaged are dropped; the list is capped.
CandidateSet retrieve_for_user(UserId user, const SimilarityGraph& graph, const EngagementLog& engagements,
                               const AdsCatalog& catalog, const RetrievalConfig& config, Timestamp now);

struct CountHistogram {
  int bucket_width = 50;
  std::vector<std::size_t> counts;  // bucket b covers [b * width, (b + 1) * width)
  std::size_t total() const;
  bool operator==(const CountHistogram&) const = default;
};

struct RetrievalResult {
  std::map<UserId, CandidateSet> sets;
  CountHistogram histogram;
};

/// Runs retrieve_for_user for every graph node.
RetrievalResult retrieve_all(const SimilarityGraph& graph, const EngagementLog& engagements,
                             const AdsCatalog& catalog, const RetrievalConfig& config, Timestamp now);

CountHistogram count_histogram(const std::map<UserId, CandidateSet>& sets, std::size_t cap, int bucket_width);

// {"user": u64, "candidates": [{"ad", "src", "reason": "direct"|"expansion", "score"}]}
void write_candidates(std::ostream& out, const std::map<UserId, CandidateSet>& sets);
void write_candidates(const std::string& path, const std::map<UserId, CandidateSet>& sets);
std::map<UserId, CandidateSet> read_candidates(std::istream& in);
std::map<UserId, CandidateSet> read_candidates(const std::string& path);

/// Two columns per line: bucket_low count.
std::string histogram_text(const CountHistogram& h);

}  // namespace alure
