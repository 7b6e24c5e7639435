#include "alure/embedding_pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>
#include <thread>

#include "alure/binary_io.hpp"
#include "alure/log.hpp"
#include "alure/parallel.hpp"

namespace alure {

namespace fs = std::filesystem;

Embedder::Embedder(ModelConfig config, FeatureParams params, std::uint64_t model_version)
    : config_(std::move(config)), params_(std::move(params)), model_version_(model_version) {
  config_.validate();
}

UserEmbedding Embedder::embed(const UserHistory& history) const {
  return forward_user(params_, config_, history, model_version_);
}

std::string Embedder::serialize() const { return serialize_feature_params(params_, config_); }

Embedder Embedder::deserialize(std::string_view bytes, std::uint64_t model_version) {
  auto [cfg, params] = deserialize_feature_params(bytes);
  return Embedder(std::move(cfg), std::move(params), model_version);
}

Embedder extract_feature_arch(const Checkpoint& checkpoint) {
  return Embedder(checkpoint.config, checkpoint.params.feature, checkpoint.model_version);
}

std::string serialize_snapshot(const EmbeddingSnapshot& s) {
  ByteWriter w;
  w.raw("ALURESNAP");
  w.u32(kSnapshotFormatVersion);
  w.u64(s.snapshot_version);
  w.u64(s.model_version);
  w.i64(s.created_at);
  w.u32(static_cast<std::uint32_t>(s.M));
  w.u32(static_cast<std::uint32_t>(s.d_model));
  w.u32(static_cast<std::uint32_t>(s.region_index.size()));
  for (const auto& [region, ids] : s.region_index) {
    w.str(region);
    w.u64(ids.size());
    for (auto id : ids) w.u64(id);
  }
  w.u64(s.records.size());
  for (const auto& [uid, rec] : s.records) {
    if (rec.vectors.rows() != s.M || rec.vectors.cols() != s.d_model) {
      throw Error("snapshot record for user " + std::to_string(uid) + " has the wrong shape");
    }
    w.u64(uid);
    w.f64s(std::span<const double>(rec.vectors.data(), rec.vectors.size()));
  }
  w.finish_with_crc();
  return w.bytes();
}

EmbeddingSnapshot deserialize_snapshot(std::string_view bytes) {
  ByteReader r(verify_crc(bytes));
  r.expect_magic("ALURESNAP");
  const auto version = r.u32();
  if (version != kSnapshotFormatVersion) {
    throw FormatError("snapshot format version " + std::to_string(version) + " is not supported");
  }
  EmbeddingSnapshot s;
  s.snapshot_version = r.u64();
  s.model_version = r.u64();
  s.created_at = r.i64();
  s.M = static_cast<int>(r.u32());
  s.d_model = static_cast<int>(r.u32());
  const auto n_regions = r.u32();
  for (std::uint32_t i = 0; i < n_regions; ++i) {
    std::string region = r.str();
    auto& ids = s.region_index[region];
    const auto n = r.u64();
    if (n > r.remaining() / 8) throw FormatError("snapshot region index overruns the file");
    ids.resize(n);
    for (auto& id : ids) id = r.u64();
  }
  const auto n_records = r.u64();
  const std::size_t rec_bytes = 8 + 8 * static_cast<std::size_t>(s.M) * static_cast<std::size_t>(s.d_model);
  if (n_records > r.remaining() / rec_bytes) throw FormatError("snapshot records overrun the file");
  for (std::uint64_t i = 0; i < n_records; ++i) {
    UserEmbedding e;
    e.user_id = r.u64();
    e.vectors.resize(s.M, s.d_model);
    r.f64s(std::span<double>(e.vectors.data(), e.vectors.size()));
    e.model_version = s.model_version;
    e.snapshot_version = s.snapshot_version;
    s.records.emplace(e.user_id, std::move(e));
  }
  if (!r.at_end()) throw FormatError("trailing bytes in snapshot");
  return s;
}

namespace {

constexpr const char* kPointerName = "current";

std::string snapshot_file_name(std::uint64_t version) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "snapshot-%012llu.snap", static_cast<unsigned long long>(version));
  return buf;
}

bool parse_snapshot_file_name(const std::string& name, std::uint64_t& version) {
  unsigned long long v = 0;
  char tail[8] = {};
  if (std::sscanf(name.c_str(), "snapshot-%llu.%7s", &v, tail) == 2 && std::string(tail) == "snap") {
    version = v;
    return true;
  }
  return false;
}

}  // namespace

SnapshotStore::SnapshotStore(fs::path dir, std::size_t retain) : dir_(std::move(dir)), retain_(retain) {
  if (retain_ == 0) throw ConfigError("snapshot_store.retain: must be >= 1");
  fs::create_directories(dir_);
  for (auto v : versions_on_disk()) last_version_ = std::max(last_version_, v);
  if (fs::exists(dir_ / kPointerName)) {
    auto snap = load_current(dir_);
    last_version_ = std::max(last_version_, snap.snapshot_version);
    latest_ = std::make_shared<const EmbeddingSnapshot>(std::move(snap));
  }
}

std::vector<std::uint64_t> SnapshotStore::versions_on_disk() const {
  std::vector<std::uint64_t> out;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    std::uint64_t v = 0;
    if (entry.is_regular_file() && parse_snapshot_file_name(entry.path().filename().string(), v)) {
      out.push_back(v);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

fs::path SnapshotStore::path_for(std::uint64_t version) const { return dir_ / snapshot_file_name(version); }

EmbeddingSnapshot SnapshotStore::load_current(const fs::path& dir) {
  const fs::path pointer = dir / kPointerName;
  if (!fs::exists(pointer)) throw Error("snapshot store " + dir.string() + " has no current snapshot");
  std::string name = read_file(pointer.string());
  while (!name.empty() && (name.back() == '\n' || name.back() == '\r')) name.pop_back();
  return deserialize_snapshot(read_file((dir / name).string()));
}

std::shared_ptr<const EmbeddingSnapshot> SnapshotStore::publish(EmbeddingSnapshot snapshot) {
  std::lock_guard write_lock(write_mu_);
  snapshot.snapshot_version = last_version_ + 1;
  for (auto& [uid, rec] : snapshot.records) rec.snapshot_version = snapshot.snapshot_version;
  const std::string name = snapshot_file_name(snapshot.snapshot_version);
  write_file_atomic((dir_ / name).string(), serialize_snapshot(snapshot));
  write_file_atomic((dir_ / kPointerName).string(), name + "\n");

  auto shared = std::make_shared<const EmbeddingSnapshot>(std::move(snapshot));
  {
    std::lock_guard lock(mu_);
    latest_ = shared;
    last_version_ = shared->snapshot_version;
  }
  auto versions = versions_on_disk();
  while (versions.size() > retain_) {
    std::error_code ec;
    fs::remove(path_for(versions.front()), ec);
    if (ec) spdlog::warn("could not remove old snapshot {}: {}", versions.front(), ec.message());
    versions.erase(versions.begin());
  }
  return shared;
}

std::shared_ptr<const EmbeddingSnapshot> SnapshotStore::latest() const {
  std::lock_guard lock(mu_);
  return latest_;
}

std::uint64_t SnapshotStore::latest_version() const {
  std::lock_guard lock(mu_);
  return last_version_;
}

SnapshotBuild build_snapshot(const Embedder& embedder, std::span<const UserHistory> histories, Timestamp now) {
  if (histories.empty()) throw Error("refresh: no histories to evaluate");
  std::vector<std::optional<UserEmbedding>> results(histories.size());
  std::vector<std::string> errors(histories.size());
  parallel_for(histories.size(), [&](std::size_t i) {
    try {
      results[i] = embedder.embed(histories[i]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  SnapshotBuild out;
  auto& snap = out.snapshot;
  snap.model_version = embedder.model_version();
  snap.created_at = now;
  snap.M = embedder.config().M;
  snap.d_model = embedder.config().d_model;
  for (std::size_t i = 0; i < histories.size(); ++i) {
    const UserId uid = histories[i].user_id;
    if (!results[i] || snap.records.count(uid)) {
      ++out.skipped;
      if (out.failures.size() < 10) {
        out.failures.emplace_back(uid, results[i] ? "duplicate user id" : errors[i]);
      }
      continue;
    }
    snap.region_index[histories[i].region].push_back(uid);
    snap.records.emplace(uid, std::move(*results[i]));
  }
  if (snap.records.empty()) {
    throw Error("refresh: every user failed (" + std::to_string(out.skipped) + " skipped)");
  }
  for (auto& [region, ids] : snap.region_index) std::sort(ids.begin(), ids.end());
  if (out.skipped) spdlog::warn("refresh skipped {} users", out.skipped);
  return out;
}

RefreshOutcome refresh(SnapshotStore& store, const Embedder& embedder,
                       std::span<const UserHistory> histories, Timestamp now) {
  SnapshotBuild built = build_snapshot(embedder, histories, now);
  RefreshOutcome out;
  out.skipped = built.skipped;
  out.failures = std::move(built.failures);
  out.snapshot = store.publish(std::move(built.snapshot));
  return out;
}

void RefreshPolicy::validate() const {
  if (interval <= 0) throw ConfigError("refresh.interval: must be > 0");
  if (max_staleness < interval) throw ConfigError("refresh.max_staleness: must be >= interval");
}

Timestamp SystemClock::now() const {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

bool SystemClock::sleep_until(Timestamp t, const std::atomic<bool>& stop) {
  while (!stop.load()) {
    if (now() >= t) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
  }
  return false;
}

bool SimulatedClock::sleep_until(Timestamp t, const std::atomic<bool>& stop) {
  if (stop.load()) return false;
  if (now_.load() < t) now_ = t;
  return true;
}

std::string_view to_string(SchedulerEvent::Kind kind) {
  switch (kind) {
    case SchedulerEvent::Kind::refresh_succeeded: return "refresh_succeeded";
    case SchedulerEvent::Kind::refresh_failed: return "refresh_failed";
    case SchedulerEvent::Kind::staleness_alarm: return "staleness_alarm";
  }
  return "unknown";
}

RefreshScheduler::RefreshScheduler(SnapshotStore& store, const Embedder& embedder, HistorySource source,
                                   RefreshPolicy policy, Clock& clock, EventSink sink)
    : store_(store),
      embedder_(embedder),
      source_(std::move(source)),
      policy_(policy),
      clock_(clock),
      sink_(std::move(sink)) {
  policy_.validate();
  const Timestamp start = clock_.now();
  next_due_ = start + policy_.interval;
  const auto latest = store_.latest();
  last_success_ = latest ? latest->created_at : start;
}

void RefreshScheduler::emit(const SchedulerEvent& e) {
  if (sink_) sink_(e);
}

void RefreshScheduler::tick() {
  const Timestamp now = clock_.now();
  if (now >= next_due_) {
    ++attempts_;
    // Missed slots are not replayed: the next refresh is one interval after
    // the latest slot that has passed.
    while (next_due_ <= now) next_due_ += policy_.interval;
    try {
      const auto histories = source_();
      const auto outcome = refresh(store_, embedder_, histories, now);
      last_success_ = now;
      spdlog::info("published snapshot {} ({} users, {} skipped)", outcome.snapshot->snapshot_version,
                   outcome.snapshot->records.size(), outcome.skipped);
      emit({SchedulerEvent::Kind::refresh_succeeded, now, outcome.snapshot->snapshot_version, 0, ""});
    } catch (const std::exception& e) {
      ++failures_;
      spdlog::error("refresh failed: {}", e.what());
      emit({SchedulerEvent::Kind::refresh_failed, now, 0, 0, e.what()});
    }
  }
  const std::int64_t staleness = now - last_success_;
  if (staleness > policy_.max_staleness) {
    spdlog::warn("embeddings are stale: {} s since last successful refresh", staleness);
    emit({SchedulerEvent::Kind::staleness_alarm, now, 0, staleness, "max staleness exceeded"});
  }
}

void RefreshScheduler::run(const std::atomic<bool>& stop, std::size_t max_ticks) {
  for (std::size_t n = 0; max_ticks == 0 || n < max_ticks; ++n) {
    if (!clock_.sleep_until(next_due_, stop)) return;
    tick();
  }
}

}  // namespace alure
