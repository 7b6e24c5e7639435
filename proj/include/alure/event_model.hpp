#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "alure/common.hpp"

namespace alure {

enum class EventKind : std::uint8_t { impression, click, conversion, content_view, comment };

std::string_view to_string(EventKind kind);
EventKind parse_event_kind(std::string_view name);

/// Click and conversion are the engagement-grade kinds consumed by retrieval.
inline bool is_engagement(EventKind k) {
  return k == EventKind::click || k == EventKind::conversion;
}

/// account_id 0 means "no advertiser" (content views, comments).
inline constexpr AccountId kNoAccount = 0;

struct Event {
  ItemId item_id = 0;
  AccountId account_id = kNoAccount;
  EventKind kind = EventKind::impression;
  std::vector<std::uint32_t> token_codes;
  Timestamp timestamp = 0;

  bool operator==(const Event&) const = default;
};

struct EventSequence {
  UserId user_id = 0;
  std::uint32_t source_id = 0;
  std::vector<Event> events;  // non-decreasing timestamps

  bool operator==(const EventSequence&) const = default;
};

struct UserHistory {
  UserId user_id = 0;
  std::string region;
  std::vector<EventSequence> sequences;  // exactly K, sequences[k].source_id == k

  bool operator==(const UserHistory&) const = default;

  bool all_empty() const;
};

struct Engagement {
  ItemId ad_id = 0;
  AccountId account_id = kNoAccount;
  EventKind kind = EventKind::click;
  Timestamp timestamp = 0;

  bool operator==(const Engagement&) const = default;
};

/// user -> engagements sorted by timestamp.
using EngagementLog = std::map<UserId, std::vector<Engagement>>;
/// account -> ads; every ad appears under exactly one account.
using AdsCatalog = std::map<AccountId, std::vector<ItemId>>;
using GroundTruth = std::map<UserId, std::uint32_t>;

struct IngestOptions {
  std::uint32_t num_sources = 2;
  /// When non-empty, token codes are checked against vocab_sizes[source_id].
  std::vector<std::uint32_t> vocab_sizes;
};

struct IngestResult {
  std::vector<UserHistory> histories;
  /// Number of sequences that arrived out of order and were sorted.
  std::size_t unsorted_warnings = 0;
};

IngestResult ingest_histories(const std::string& path, const IngestOptions& opts);
IngestResult parse_histories(std::istream& in, const IngestOptions& opts);
void write_histories(std::ostream& out, const std::vector<UserHistory>& histories);
void write_histories(const std::string& path, const std::vector<UserHistory>& histories);

// Line formats:
//   engagements: {"user_id": u64, "engagements": [{"ad_id", "account_id", "kind", "ts"}]}
//   catalog:     {"account_id": u64, "ads": [u64, ...]}
//   labels:      {"user_id": u64, "cluster": u32}
void write_engagements(const std::string& path, const EngagementLog& log);
EngagementLog read_engagements(const std::string& path);
void write_catalog(const std::string& path, const AdsCatalog& catalog);
AdsCatalog read_catalog(const std::string& path);
void write_ground_truth(const std::string& path, const GroundTruth& truth);
GroundTruth read_ground_truth(const std::string& path);
//   account labels: {"account_id": u64, "cluster": u32}
void write_account_labels(const std::string& path, const GroundTruth& labels);
GroundTruth read_account_labels(const std::string& path);

/// Inverse of the catalog: ad -> owning account.
std::map<ItemId, AccountId> ad_owner_index(const AdsCatalog& catalog);

struct SynthConfig {
  std::uint64_t seed = 1;
  std::uint32_t n_users = 100;
  std::uint32_t n_clusters = 5;
  std::uint32_t n_accounts = 50;
  std::uint32_t horizon_days = 28;
  /// Probability that an ads event comes from an own-cluster account.
  double mix_ratio = 0.9;
  std::uint32_t n_regions = 1;
  std::uint32_t min_ads_events = 12;
  std::uint32_t max_ads_events = 30;
  std::uint32_t min_content_events = 6;
  std::uint32_t max_content_events = 16;
  std::uint32_t content_vocab = 64;
  Timestamp t0 = 1'700'006'400;  // a UTC midnight

  /// Throws ConfigError naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  /// Rejects unknown keys; missing keys keep their defaults.
  static SynthConfig from_json(const nlohmann::json& j);
  bool operator==(const SynthConfig&) const = default;
};

struct SynthData {
  std::vector<UserHistory> histories;
  EngagementLog engagements;
  AdsCatalog catalog;
  GroundTruth ground_truth;
  GroundTruth account_clusters;  // account -> the cluster that favours it
};

/// Vocabulary of the ads source: token = account_id, so n_accounts + 1.
std::uint32_t ads_vocab_size(const SynthConfig& cfg);
std::uint32_t content_vocab_size(const SynthConfig& cfg);

/// Two sources: 0 = ads events (tokens are account ids), 1 = content events
/// (tokens are topic codes). Deterministic given cfg.seed.
SynthData synth_generate(const SynthConfig& cfg);

/// Diurnal and weekday/weekend event intensity used by the generator, relative
/// to its maximum (in (0, 1]).
double synth_relative_intensity(Timestamp t, double phase, double weekend_multiplier);

}  // namespace alure
