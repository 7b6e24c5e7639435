#include "alure/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "alure/binary_io.hpp"
#include "alure/json_config.hpp"
#include "alure/parallel.hpp"

namespace alure {

using nlohmann::json;

std::string_view to_string(CandidateReason r) {
  return r == CandidateReason::direct ? "direct" : "expansion";
}

namespace {

CandidateReason parse_reason(const std::string& s) {
  if (s == "direct") return CandidateReason::direct;
  if (s == "expansion") return CandidateReason::account_expansion;
  throw ParseError("unknown candidate reason '" + s + "'");
}

// Whether `a` should replace the kept candidate `b` for the same ad.
bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.reason != b.reason) return a.reason == CandidateReason::direct;
  return a.source_user < b.source_user;
}

}  // namespace

void RetrievalConfig::validate() const {
  auto fail = [](const std::string& f, const std::string& why) { throw ConfigError("retrieval." + f + ": " + why); };
  if (cap < 1) fail("cap", "must be >= 1");
  if (recency_half_life <= 0) fail("recency_half_life", "must be > 0");
  if (!(expansion_discount >= 0.0)) fail("expansion_discount", "must be >= 0");
  if (histogram_bucket_width < 1) fail("histogram_bucket_width", "must be >= 1");
}

json RetrievalConfig::to_json() const {
  std::vector<std::string> kinds;
  for (auto k : expansion_event_kinds) kinds.emplace_back(alure::to_string(k));
  return json{{"cap", cap},
              {"recency_half_life", recency_half_life},
              {"enable_direct", enable_direct},
              {"enable_account_expansion", enable_account_expansion},
              {"expansion_event_kinds", kinds},
              {"expansion_discount", expansion_discount},
              {"histogram_bucket_width", histogram_bucket_width}};
}

RetrievalConfig RetrievalConfig::from_json(const json& j) {
  using namespace config_json;
  const std::string where = "retrieval";
  check_keys(j,
             {"cap", "recency_half_life", "enable_direct", "enable_account_expansion", "expansion_event_kinds",
              "expansion_discount", "histogram_bucket_width"},
             where);
  RetrievalConfig c;
  read_key(j, "cap", c.cap, where);
  read_key(j, "recency_half_life", c.recency_half_life, where);
  read_key(j, "enable_direct", c.enable_direct, where);
  read_key(j, "enable_account_expansion", c.enable_account_expansion, where);
  std::vector<std::string> kinds;
  read_key(j, "expansion_event_kinds", kinds, where);
  if (j.contains("expansion_event_kinds")) {
    c.expansion_event_kinds.clear();
    for (const auto& k : kinds) {
      try {
        c.expansion_event_kinds.insert(parse_event_kind(k));
      } catch (const Error& e) {
        throw ConfigError(where + ".expansion_event_kinds: " + e.what());
      }
    }
  }
  read_key(j, "expansion_discount", c.expansion_discount, where);
  read_key(j, "histogram_bucket_width", c.histogram_bucket_width, where);
  return c;
}

double candidate_score(double similarity, Timestamp event_time, Timestamp now, std::int64_t half_life) {
  const double age = static_cast<double>(std::max<Timestamp>(0, now - event_time));
  return std::max(similarity, 0.0) * std::exp2(-age / static_cast<double>(half_life));
}

CandidateSet retrieve_for_user(UserId user, const SimilarityGraph& graph, const EngagementLog& engagements,
                               const AdsCatalog& catalog, const RetrievalConfig& config, Timestamp now) {
  CandidateSet out;
  out.user_id = user;
  const auto node = graph.edges.find(user);
  if (node == graph.edges.end()) return out;

  std::unordered_set<ItemId> seen;
  if (const auto own = engagements.find(user); own != engagements.end()) {
    for (const auto& e : own->second) seen.insert(e.ad_id);
  }
  std::unordered_map<ItemId, Candidate> best;
  auto offer = [&](const Candidate& c) {
    if (seen.count(c.ad_id)) return;
    auto [it, inserted] = best.try_emplace(c.ad_id, c);
    if (!inserted && better(c, it->second)) it->second = c;
  };

  for (const auto& nb : node->second) {
    const auto ev = engagements.find(nb.user);
    if (ev == engagements.end()) continue;
    for (const auto& e : ev->second) {
      if (!is_engagement(e.kind)) continue;
      const double s = candidate_score(nb.similarity, e.timestamp, now, config.recency_half_life);
      if (config.enable_direct) offer({e.ad_id, nb.user, CandidateReason::direct, s});
      if (config.enable_account_expansion && config.expansion_event_kinds.count(e.kind)) {
        const auto acct = catalog.find(e.account_id);
        if (acct == catalog.end()) continue;
        for (ItemId ad : acct->second) {
          if (ad != e.ad_id) offer({ad, nb.user, CandidateReason::account_expansion, s * config.expansion_discount});
        }
      }
    }
  }

  out.candidates.reserve(best.size());
  for (auto& [ad, c] : best) out.candidates.push_back(c);
  std::sort(out.candidates.begin(), out.candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.ad_id < b.ad_id;
  });
  if (out.candidates.size() > config.cap) out.candidates.resize(config.cap);
  return out;
}

std::size_t CountHistogram::total() const {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

CountHistogram count_histogram(const std::map<UserId, CandidateSet>& sets, std::size_t cap, int bucket_width) {
  CountHistogram h;
  h.bucket_width = bucket_width;
  const auto width = static_cast<std::size_t>(bucket_width);
  h.counts.assign(cap / width + 1, 0);
  for (const auto& [uid, set] : sets) {
    const std::size_t b = std::min(set.candidates.size(), cap) / width;
    ++h.counts[b];
  }
  return h;
}

RetrievalResult retrieve_all(const SimilarityGraph& graph, const EngagementLog& engagements,
                             const AdsCatalog& catalog, const RetrievalConfig& config, Timestamp now) {
  config.validate();
  std::vector<UserId> users;
  users.reserve(graph.edges.size());
  for (const auto& [uid, _] : graph.edges) users.push_back(uid);
  std::vector<CandidateSet> sets(users.size());
  parallel_for(users.size(), [&](std::size_t i) {
    sets[i] = retrieve_for_user(users[i], graph, engagements, catalog, config, now);
  });
  RetrievalResult r;
  for (std::size_t i = 0; i < users.size(); ++i) r.sets.emplace(users[i], std::move(sets[i]));
  r.histogram = count_histogram(r.sets, config.cap, config.histogram_bucket_width);
  return r;
}

void write_candidates(std::ostream& out, const std::map<UserId, CandidateSet>& sets) {
  for (const auto& [uid, set] : sets) {
    nlohmann::ordered_json line;
    line["user"] = uid;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : set.candidates) {
      nlohmann::ordered_json o;
      o["ad"] = c.ad_id;
      o["src"] = c.source_user;
      o["reason"] = std::string(to_string(c.reason));
      o["score"] = c.score;
      arr.push_back(std::move(o));
    }
    line["candidates"] = std::move(arr);
    out << line.dump() << '\n';
  }
}

void write_candidates(const std::string& path, const std::map<UserId, CandidateSet>& sets) {
  std::ostringstream s;
  write_candidates(s, sets);
  write_file_atomic(path, s.str());
}

std::map<UserId, CandidateSet> read_candidates(std::istream& in) {
  std::map<UserId, CandidateSet> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      CandidateSet set;
      set.user_id = j.at("user").get<UserId>();
      for (const auto& c : j.at("candidates")) {
        set.candidates.push_back({c.at("ad").get<ItemId>(), c.at("src").get<UserId>(),
                                  parse_reason(c.at("reason").get<std::string>()), c.at("score").get<double>()});
      }
      out[set.user_id] = std::move(set);
    } catch (const json::exception& e) {
      throw ParseError("candidates line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::map<UserId, CandidateSet> read_candidates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open candidates file " + path);
  return read_candidates(in);
}

std::string histogram_text(const CountHistogram& h) {
  std::ostringstream s;
  for (std::size_t b = 0; b < h.counts.size(); ++b) s << b * static_cast<std::size_t>(h.bucket_width) << ' ' << h.counts[b] << '\n';
  return s.str();
}

}  // namespace alure
