#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "alure/checkpoint.hpp"
#include "alure/encoder.hpp"
#include "alure/event_model.hpp"

namespace alure {

/// The embedding-generating subgraph of a trained model. Holds no
/// training-only state (the account table is dropped).
class Embedder {
 public:
  Embedder(ModelConfig config, FeatureParams params, std::uint64_t model_version);

  const ModelConfig& config() const { return config_; }
  const FeatureParams& params() const { return params_; }
  std::uint64_t model_version() const { return model_version_; }
  std::size_t parameter_count() const { return params_.parameter_count(); }

  UserEmbedding embed(const UserHistory& history) const;

  /// "ALUREFEAT" artifact; see checkpoint.hpp for the layout.
  std::string serialize() const;
  static Embedder deserialize(std::string_view bytes, std::uint64_t model_version);

 private:
  ModelConfig config_;
  FeatureParams params_;
  std::uint64_t model_version_;
};

Embedder extract_feature_arch(const Checkpoint& checkpoint);

struct EmbeddingSnapshot {
  std::uint64_t snapshot_version = 0;
  std::uint64_t model_version = 0;
  Timestamp created_at = 0;
  int M = 0;
  int d_model = 0;
  std::map<UserId, UserEmbedding> records;
  std::map<std::string, std::vector<UserId>> region_index;  // ids ascending
};

// Snapshot file (little-endian):
//   "ALURESNAP", u32 format version, u64 snapshot_version, u64 model_version,
//   i64 created_at, u32 M, u32 d_model,
//   u32 region count, per region: u64-length name + u64 count + u64 ids,
//   u64 record count, per record: u64 user_id + M*d_model f64 (row-major),
//   u32 CRC32 of everything before it.
inline constexpr std::uint32_t kSnapshotFormatVersion = 1;
std::string serialize_snapshot(const EmbeddingSnapshot& snapshot);
EmbeddingSnapshot deserialize_snapshot(std::string_view bytes);

/// Directory of immutable snapshot files plus a "current" pointer file that is
/// replaced atomically on publish. Keeps the newest `retain` snapshots.
class SnapshotStore {
 public:
  explicit SnapshotStore(std::filesystem::path dir, std::size_t retain = 3);

  /// Assigns version = last published + 1, writes the file, swaps the pointer
  /// and the in-memory latest. Returns the published snapshot.
  std::shared_ptr<const EmbeddingSnapshot> publish(EmbeddingSnapshot snapshot);

  /// Latest published snapshot (null if none). Readers keep what they got even
  /// while newer versions publish.
  std::shared_ptr<const EmbeddingSnapshot> latest() const;
  std::uint64_t latest_version() const;

  /// Versions currently on disk, ascending.
  std::vector<std::uint64_t> versions_on_disk() const;
  std::filesystem::path path_for(std::uint64_t version) const;
  const std::filesystem::path& dir() const { return dir_; }

  /// Loads whatever "current" names under dir.
  static EmbeddingSnapshot load_current(const std::filesystem::path& dir);

 private:
  std::filesystem::path dir_;
  std::size_t retain_;
  mutable std::mutex mu_;
  std::mutex write_mu_;
  std::shared_ptr<const EmbeddingSnapshot> latest_;
  std::uint64_t last_version_ = 0;
};

struct SnapshotBuild {
  EmbeddingSnapshot snapshot;  // version 0, not yet published
  std::size_t skipped = 0;
  std::vector<std::pair<UserId, std::string>> failures;  // first few reasons
};

/// Evaluates every history into an unpublished snapshot. Users whose forward
/// pass throws are skipped and counted; zero successes throws Error.
SnapshotBuild build_snapshot(const Embedder& embedder, std::span<const UserHistory> histories, Timestamp now);

struct RefreshOutcome {
  std::shared_ptr<const EmbeddingSnapshot> snapshot;
  std::size_t skipped = 0;
  std::vector<std::pair<UserId, std::string>> failures;  // first few reasons
};

/// build_snapshot followed by an atomic publish.
RefreshOutcome refresh(SnapshotStore& store, const Embedder& embedder,
                       std::span<const UserHistory> histories, Timestamp now);

struct RefreshPolicy {
  std::int64_t interval = 86400;       // seconds
  std::int64_t max_staleness = 172800;  // seconds

  void validate() const;
  bool operator==(const RefreshPolicy&) const = default;
};

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
  /// Blocks until now() >= t or stop is set. Returns false if stopped.
  virtual bool sleep_until(Timestamp t, const std::atomic<bool>& stop) = 0;
};

class SystemClock final : public Clock {
 public:
  Timestamp now() const override;
  bool sleep_until(Timestamp t, const std::atomic<bool>& stop) override;
};

/// Manually driven clock; sleep_until jumps straight to the target.
class SimulatedClock final : public Clock {
 public:
  explicit SimulatedClock(Timestamp start) : now_(start) {}
  Timestamp now() const override { return now_.load(); }
  bool sleep_until(Timestamp t, const std::atomic<bool>& stop) override;
  void advance(std::int64_t seconds) { now_ += seconds; }
  void set(Timestamp t) { now_ = t; }

 private:
  std::atomic<Timestamp> now_;
};

struct SchedulerEvent {
  enum class Kind { refresh_succeeded, refresh_failed, staleness_alarm };
  Kind kind;
  Timestamp at = 0;
  std::uint64_t snapshot_version = 0;  // for refresh_succeeded
  std::int64_t staleness = 0;          // seconds, for staleness_alarm
  std::string message;
};

std::string_view to_string(SchedulerEvent::Kind kind);

/// Periodic refresh driver. The first refresh is due one interval after
/// construction; each tick that finds a refresh due attempts exactly one.
class RefreshScheduler {
 public:
  using HistorySource = std::function<std::vector<UserHistory>()>;
  using EventSink = std::function<void(const SchedulerEvent&)>;

  RefreshScheduler(SnapshotStore& store, const Embedder& embedder, HistorySource source,
                   RefreshPolicy policy, Clock& clock, EventSink sink = {});

  /// One scheduling step at clock.now(): refresh if due, then staleness check.
  void tick();
  /// Sleeps to each due time and ticks until stop is set or max_ticks ran
  /// (0 = unlimited).
  void run(const std::atomic<bool>& stop, std::size_t max_ticks = 0);

  std::size_t attempts() const { return attempts_; }
  std::size_t failures() const { return failures_; }
  Timestamp next_due() const { return next_due_; }

 private:
  void emit(const SchedulerEvent& e);

  SnapshotStore& store_;
  const Embedder& embedder_;
  HistorySource source_;
  RefreshPolicy policy_;
  Clock& clock_;
  EventSink sink_;
  Timestamp next_due_;
  Timestamp last_success_;
  std::size_t attempts_ = 0;
  std::size_t failures_ = 0;
};

}  // namespace alure
