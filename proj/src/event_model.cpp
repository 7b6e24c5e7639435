#include "alure/event_model.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "alure/json_config.hpp"
#include "alure/log.hpp"

namespace alure {

using ojson = nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 5> kKindNames = {
    "impression", "click", "conversion", "content_view", "comment"};

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path);
  return out;
}

/// Calls fn(json, line_number) for each non-blank line; wraps any failure in a
/// ParseError naming the line.
template <typename Fn>
void for_each_json_line(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(ojson::parse(line), lineno);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

Event parse_event(const ojson& j, std::size_t lineno) {
  Event ev;
  ev.item_id = j.at("item_id").get<std::uint64_t>();
  ev.account_id = j.at("account_id").get<std::uint64_t>();
  ev.kind = parse_event_kind(j.at("kind").get<std::string>());
  ev.token_codes = j.at("tokens").get<std::vector<std::uint32_t>>();
  ev.timestamp = j.at("ts").get<std::int64_t>();
  if (ev.timestamp <= 0) {
    throw ParseError("line " + std::to_string(lineno) +
                     ": timestamp must be positive, got " + std::to_string(ev.timestamp));
  }
  return ev;
}

bool by_time(const Event& a, const Event& b) { return a.timestamp < b.timestamp; }

// Weighted sampling over a fixed cumulative table.
class Categorical {
 public:
  explicit Categorical(const std::vector<double>& weights) : cum_(weights.size()) {
    std::partial_sum(weights.begin(), weights.end(), cum_.begin());
  }
  std::size_t sample(Rng& rng) const {
    const double u = rng.uniform() * cum_.back();
    auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
    return std::min<std::size_t>(it - cum_.begin(), cum_.size() - 1);
  }
  bool empty() const { return cum_.empty(); }

 private:
  std::vector<double> cum_;
};

std::vector<double> zipf_weights(std::size_t n, double s) {
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / std::pow(static_cast<double>(r + 1), s);
  return w;
}

}  // namespace

std::string_view to_string(EventKind kind) { return kKindNames.at(static_cast<std::size_t>(kind)); }

EventKind parse_event_kind(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == name) return static_cast<EventKind>(i);
  }
  throw ParseError("unknown event kind: " + std::string(name));
}

bool UserHistory::all_empty() const {
  return std::all_of(sequences.begin(), sequences.end(),
                     [](const EventSequence& s) { return s.events.empty(); });
}

IngestResult parse_histories(std::istream& in, const IngestOptions& opts) {
  IngestResult result;
  for_each_json_line(in, [&](const ojson& j, std::size_t lineno) {
    auto fail = [lineno](const std::string& msg) {
      throw ParseError("line " + std::to_string(lineno) + ": " + msg);
    };
    UserHistory h;
    h.user_id = j.at("user_id").get<std::uint64_t>();
    h.region = j.at("region").get<std::string>();
    h.sequences.resize(opts.num_sources);
    std::vector<bool> seen(opts.num_sources, false);
    for (std::uint32_t k = 0; k < opts.num_sources; ++k) {
      h.sequences[k].user_id = h.user_id;
      h.sequences[k].source_id = k;
    }
    for (const auto& sj : j.at("sequences")) {
      const auto source = sj.at("source_id").get<std::uint32_t>();
      if (source >= opts.num_sources) {
        fail("source_id " + std::to_string(source) + " >= K=" + std::to_string(opts.num_sources));
      }
      if (seen[source]) fail("duplicate source_id " + std::to_string(source));
      seen[source] = true;
      auto& seq = h.sequences[source];
      for (const auto& ej : sj.at("events")) {
        Event ev = parse_event(ej, lineno);
        if (!opts.vocab_sizes.empty()) {
          for (auto code : ev.token_codes) {
            if (code >= opts.vocab_sizes.at(source)) {
              fail("token code " + std::to_string(code) + " out of vocabulary for source " +
                   std::to_string(source));
            }
          }
        }
        seq.events.push_back(std::move(ev));
      }
      if (!std::is_sorted(seq.events.begin(), seq.events.end(), by_time)) {
        std::stable_sort(seq.events.begin(), seq.events.end(), by_time);
        ++result.unsorted_warnings;
        spdlog::warn("line {}: user {} source {} events out of order; sorted", lineno, h.user_id,
                     source);
      }
    }
    result.histories.push_back(std::move(h));
  });
  return result;
}

IngestResult ingest_histories(const std::string& path, const IngestOptions& opts) {
  auto in = open_in(path);
  return parse_histories(in, opts);
}

void write_histories(std::ostream& out, const std::vector<UserHistory>& histories) {
  for (const auto& h : histories) {
    ojson j;
    j["user_id"] = h.user_id;
    j["region"] = h.region;
    j["sequences"] = ojson::array();
    for (const auto& seq : h.sequences) {
      ojson sj;
      sj["source_id"] = seq.source_id;
      sj["events"] = ojson::array();
      for (const auto& ev : seq.events) {
        ojson ej;
        ej["item_id"] = ev.item_id;
        ej["account_id"] = ev.account_id;
        ej["kind"] = to_string(ev.kind);
        ej["tokens"] = ev.token_codes;
        ej["ts"] = ev.timestamp;
        sj["events"].push_back(std::move(ej));
      }
      j["sequences"].push_back(std::move(sj));
    }
    out << j.dump() << '\n';
  }
}

void write_histories(const std::string& path, const std::vector<UserHistory>& histories) {
  auto out = open_out(path);
  write_histories(out, histories);
}

void write_engagements(const std::string& path, const EngagementLog& log) {
  auto out = open_out(path);
  for (const auto& [user, list] : log) {
    ojson j;
    j["user_id"] = user;
    j["engagements"] = ojson::array();
    for (const auto& e : list) {
      j["engagements"].push_back({{"ad_id", e.ad_id},
                                  {"account_id", e.account_id},
                                  {"kind", to_string(e.kind)},
                                  {"ts", e.timestamp}});
    }
    out << j.dump() << '\n';
  }
}

EngagementLog read_engagements(const std::string& path) {
  auto in = open_in(path);
  EngagementLog log;
  for_each_json_line(in, [&](const ojson& j, std::size_t lineno) {
    auto& list = log[j.at("user_id").get<std::uint64_t>()];
    for (const auto& ej : j.at("engagements")) {
      Engagement e;
      e.ad_id = ej.at("ad_id").get<std::uint64_t>();
      e.account_id = ej.at("account_id").get<std::uint64_t>();
      e.kind = parse_event_kind(ej.at("kind").get<std::string>());
      e.timestamp = ej.at("ts").get<std::int64_t>();
      if (!is_engagement(e.kind)) {
        throw ParseError("line " + std::to_string(lineno) + ": engagement kind must be click or conversion");
      }
      list.push_back(e);
    }
    std::stable_sort(list.begin(), list.end(),
                     [](const Engagement& a, const Engagement& b) { return a.timestamp < b.timestamp; });
  });
  return log;
}

void write_catalog(const std::string& path, const AdsCatalog& catalog) {
  auto out = open_out(path);
  for (const auto& [account, ads] : catalog) {
    ojson j;
    j["account_id"] = account;
    j["ads"] = ads;
    out << j.dump() << '\n';
  }
}

AdsCatalog read_catalog(const std::string& path) {
  auto in = open_in(path);
  AdsCatalog catalog;
  std::map<ItemId, AccountId> owner;
  for_each_json_line(in, [&](const ojson& j, std::size_t lineno) {
    const auto account = j.at("account_id").get<std::uint64_t>();
    auto ads = j.at("ads").get<std::vector<std::uint64_t>>();
    for (auto ad : ads) {
      if (!owner.emplace(ad, account).second) {
        throw ParseError("line " + std::to_string(lineno) + ": ad " + std::to_string(ad) +
                         " listed under more than one account");
      }
    }
    auto& slot = catalog[account];
    slot.insert(slot.end(), ads.begin(), ads.end());
  });
  return catalog;
}

void write_ground_truth(const std::string& path, const GroundTruth& truth) {
  auto out = open_out(path);
  for (const auto& [user, label] : truth) {
    ojson j;
    j["user_id"] = user;
    j["cluster"] = label;
    out << j.dump() << '\n';
  }
}

GroundTruth read_ground_truth(const std::string& path) {
  auto in = open_in(path);
  GroundTruth truth;
  for_each_json_line(in, [&](const ojson& j, std::size_t) {
    truth[j.at("user_id").get<std::uint64_t>()] = j.at("cluster").get<std::uint32_t>();
  });
  return truth;
}

void write_account_labels(const std::string& path, const GroundTruth& labels) {
  auto out = open_out(path);
  for (const auto& [account, label] : labels) {
    ojson j;
    j["account_id"] = account;
    j["cluster"] = label;
    out << j.dump() << '\n';
  }
}

GroundTruth read_account_labels(const std::string& path) {
  auto in = open_in(path);
  GroundTruth labels;
  for_each_json_line(in, [&](const ojson& j, std::size_t) {
    labels[j.at("account_id").get<std::uint64_t>()] = j.at("cluster").get<std::uint32_t>();
  });
  return labels;
}

std::map<ItemId, AccountId> ad_owner_index(const AdsCatalog& catalog) {
  std::map<ItemId, AccountId> owner;
  for (const auto& [account, ads] : catalog) {
    for (auto ad : ads) owner[ad] = account;
  }
  return owner;
}

std::uint32_t ads_vocab_size(const SynthConfig& cfg) { return cfg.n_accounts + 1; }

std::uint32_t content_vocab_size(const SynthConfig& cfg) {
  return std::max(cfg.content_vocab, 4 * cfg.n_clusters);
}

double synth_relative_intensity(Timestamp t, double phase, double weekend_multiplier) {
  constexpr double kAmplitude = 0.8;
  const double hour = static_cast<double>(((t % 86400) + 86400) % 86400) / 3600.0;
  const double diurnal = 1.0 + kAmplitude * std::sin(2.0 * M_PI * hour / 24.0 + phase);
  const std::int64_t day = t >= 0 ? t / 86400 : (t - 86399) / 86400;
  const int dow = static_cast<int>(((day + 4) % 7 + 7) % 7);  // 0 = Sunday
  const bool weekend = dow == 0 || dow == 6;
  const double rate = diurnal * (weekend ? weekend_multiplier : 1.0);
  return rate / ((1.0 + kAmplitude) * std::max(weekend_multiplier, 1.0));
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& f, const std::string& why) { throw ConfigError("synth." + f + ": " + why); };
  if (n_users < 1) fail("n_users", "must be >= 1");
  if (n_clusters < 1) fail("n_clusters", "must be >= 1");
  if (n_clusters > n_users) fail("n_clusters", "exceeds n_users");
  if (n_accounts < 1) fail("n_accounts", "must be >= 1");
  if (horizon_days < 1) fail("horizon_days", "must be >= 1");
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) fail("mix_ratio", "must be in [0, 1]");
  if (n_regions < 1) fail("n_regions", "must be >= 1");
  if (min_ads_events > max_ads_events) fail("min_ads_events", "exceeds max_ads_events");
  if (min_content_events > max_content_events) fail("min_content_events", "exceeds max_content_events");
  if (content_vocab < 1) fail("content_vocab", "must be >= 1");
}

nlohmann::json SynthConfig::to_json() const {
  return nlohmann::json{{"seed", seed},
                        {"n_users", n_users},
                        {"n_clusters", n_clusters},
                        {"n_accounts", n_accounts},
                        {"horizon_days", horizon_days},
                        {"mix_ratio", mix_ratio},
                        {"n_regions", n_regions},
                        {"min_ads_events", min_ads_events},
                        {"max_ads_events", max_ads_events},
                        {"min_content_events", min_content_events},
                        {"max_content_events", max_content_events},
                        {"content_vocab", content_vocab},
                        {"t0", t0}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  using namespace config_json;
  const std::string where = "synth";
  check_keys(j,
             {"seed", "n_users", "n_clusters", "n_accounts", "horizon_days", "mix_ratio", "n_regions",
              "min_ads_events", "max_ads_events", "min_content_events", "max_content_events", "content_vocab", "t0"},
             where);
  SynthConfig c;
  read_key(j, "seed", c.seed, where);
  read_key(j, "n_users", c.n_users, where);
  read_key(j, "n_clusters", c.n_clusters, where);
  read_key(j, "n_accounts", c.n_accounts, where);
  read_key(j, "horizon_days", c.horizon_days, where);
  read_key(j, "mix_ratio", c.mix_ratio, where);
  read_key(j, "n_regions", c.n_regions, where);
  read_key(j, "min_ads_events", c.min_ads_events, where);
  read_key(j, "max_ads_events", c.max_ads_events, where);
  read_key(j, "min_content_events", c.min_content_events, where);
  read_key(j, "max_content_events", c.max_content_events, where);
  read_key(j, "content_vocab", c.content_vocab, where);
  read_key(j, "t0", c.t0, where);
  return c;
}

SynthData synth_generate(const SynthConfig& cfg) {
  cfg.validate();

  SynthData data;
  Rng rng(mix_seed(cfg.seed, 0xA11CE));
  const std::uint32_t C = cfg.n_clusters;

  // Accounts are partitioned round-robin across clusters; each owns 4-12 ads.
  std::vector<std::vector<AccountId>> cluster_accounts(C);
  std::vector<std::vector<ItemId>> account_ads(cfg.n_accounts + 1);
  ItemId next_ad = 1'000'001;
  for (AccountId a = 1; a <= cfg.n_accounts; ++a) {
    cluster_accounts[(a - 1) % C].push_back(a);
    const auto n_ads = 4 + rng.below(9);
    for (std::uint64_t j = 0; j < n_ads; ++j) account_ads[a].push_back(next_ad++);
    data.catalog[a] = account_ads[a];
    data.account_clusters[a] = static_cast<std::uint32_t>((a - 1) % C);
  }
  // Popularity inside a cluster is Zipfian over a shuffled account order.
  std::vector<Categorical> cluster_pick;
  for (auto& accounts : cluster_accounts) {
    rng.shuffle(accounts);
    cluster_pick.emplace_back(zipf_weights(accounts.size(), 1.0));
  }
  std::vector<Categorical> ad_pick;
  for (const auto& ads : account_ads) ad_pick.emplace_back(zipf_weights(ads.size(), 1.2));

  std::vector<std::uint32_t> labels(cfg.n_users);
  for (std::uint32_t i = 0; i < cfg.n_users; ++i) labels[i] = i % C;
  rng.shuffle(labels);

  const std::uint32_t vocab = content_vocab_size(cfg);
  const std::uint32_t block = vocab / C;
  const Timestamp horizon = static_cast<Timestamp>(cfg.horizon_days) * 86400;

  for (std::uint32_t i = 0; i < cfg.n_users; ++i) {
    Rng urng(mix_seed(cfg.seed, 1000 + i));
    const UserId uid = 1 + i;
    const std::uint32_t cluster = labels[i];
    const double phase = 2.0 * M_PI * urng.uniform();
    const double weekend = urng.below(2) == 0 ? 0.5 : 2.0;

    auto draw_time = [&] {
      for (;;) {
        const Timestamp t = cfg.t0 + static_cast<Timestamp>(urng.below(static_cast<std::uint64_t>(horizon)));
        if (urng.uniform() < synth_relative_intensity(t, phase, weekend)) return t;
      }
    };
    auto draw_account = [&]() -> AccountId {
      const bool own = urng.uniform() < cfg.mix_ratio;
      if ((own || C == 1) && !cluster_accounts[cluster].empty()) {
        return cluster_accounts[cluster][cluster_pick[cluster].sample(urng)];
      }
      // Uniform over accounts of other clusters (or all, if this one is empty).
      const std::uint64_t others = cfg.n_accounts - cluster_accounts[cluster].size();
      if (others == 0) return 1 + urng.below(cfg.n_accounts);
      for (;;) {
        const AccountId a = 1 + urng.below(cfg.n_accounts);
        if ((a - 1) % C != cluster || cluster_accounts[cluster].empty()) return a;
      }
    };

    UserHistory h;
    h.user_id = uid;
    h.region = "region-" + std::to_string(i % cfg.n_regions);
    h.sequences.resize(2);
    for (std::uint32_t k = 0; k < 2; ++k) {
      h.sequences[k].user_id = uid;
      h.sequences[k].source_id = k;
    }

    const auto n_ads_events =
        cfg.min_ads_events + urng.below(cfg.max_ads_events - cfg.min_ads_events + 1);
    for (std::uint64_t e = 0; e < n_ads_events; ++e) {
      Event ev;
      ev.account_id = draw_account();
      ev.item_id = account_ads[ev.account_id][ad_pick[ev.account_id].sample(urng)];
      const double u = urng.uniform();
      ev.kind = u < 0.45 ? EventKind::impression : (u < 0.85 ? EventKind::click : EventKind::conversion);
      ev.token_codes = {static_cast<std::uint32_t>(ev.account_id)};
      ev.timestamp = draw_time();
      h.sequences[0].events.push_back(std::move(ev));
    }

    const auto n_content =
        cfg.min_content_events + urng.below(cfg.max_content_events - cfg.min_content_events + 1);
    for (std::uint64_t e = 0; e < n_content; ++e) {
      Event ev;
      ev.account_id = kNoAccount;
      ev.item_id = 5'000'000 + urng.below(100'000);
      ev.kind = urng.uniform() < 0.8 ? EventKind::content_view : EventKind::comment;
      const auto n_codes = 1 + urng.below(2);
      for (std::uint64_t c = 0; c < n_codes; ++c) {
        const bool own = urng.uniform() < cfg.mix_ratio;
        const auto code = own ? cluster * block + urng.below(block) : urng.below(vocab);
        ev.token_codes.push_back(static_cast<std::uint32_t>(code));
      }
      ev.timestamp = draw_time();
      h.sequences[1].events.push_back(std::move(ev));
    }

    for (auto& seq : h.sequences) std::stable_sort(seq.events.begin(), seq.events.end(), by_time);

    auto& log = data.engagements[uid];
    for (const auto& ev : h.sequences[0].events) {
      if (is_engagement(ev.kind)) log.push_back({ev.item_id, ev.account_id, ev.kind, ev.timestamp});
    }
    data.ground_truth[uid] = cluster;
    data.histories.push_back(std::move(h));
  }
  return data;
}

}  // namespace alure
