#include "alure/similarity_graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "alure/binary_io.hpp"
#include "alure/json_config.hpp"
#include "alure/log.hpp"
#include "alure/parallel.hpp"

namespace alure {

using nlohmann::json;

namespace {

std::span<const double> row_span(const Mat& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

// Strict "a ranks before b": higher similarity, then lower id.
bool ranks_before(const Neighbor& a, const Neighbor& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.user < b.user;
}

// Bounded top-k kept sorted best first; avoids materializing every candidate.
class TopK {
 public:
  explicit TopK(int k) : k_(static_cast<std::size_t>(std::max(k, 0))) { items_.reserve(k_ + 1); }

  void offer(const Neighbor& n) {
    if (k_ == 0) return;
    if (items_.size() == k_ && !ranks_before(n, items_.back())) return;
    items_.insert(std::upper_bound(items_.begin(), items_.end(), n, ranks_before), n);
    if (items_.size() > k_) items_.pop_back();
  }
  std::vector<Neighbor> take() { return std::move(items_); }

 private:
  std::size_t k_;
  std::vector<Neighbor> items_;
};

double clamped_similarity(std::span<const double> a, std::span<const double> b) {
  return std::clamp(dot(a, b), -1.0, 1.0);
}

void assign_all(const Mat& x, const Mat& centroids, std::vector<int>& assignment, std::vector<double>& best_dot) {
  parallel_for(static_cast<std::size_t>(x.rows()), [&](std::size_t i) {
    int best = 0;
    double bd = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double s = dot(row_span(x, static_cast<Eigen::Index>(i)), row_span(centroids, c));
      if (s > bd) {
        bd = s;
        best = static_cast<int>(c);
      }
    }
    assignment[i] = best;
    best_dot[i] = bd;
  });
}

}  // namespace

std::string_view to_string(SimilarityReduction r) {
  return r == SimilarityReduction::mean_pool ? "mean_pool" : "first_vector";
}

SimilarityReduction parse_similarity_reduction(std::string_view name) {
  if (name == "mean_pool") return SimilarityReduction::mean_pool;
  if (name == "first_vector") return SimilarityReduction::first_vector;
  throw ConfigError("graph.reduction: unknown value '" + std::string(name) + "'");
}

void GraphConfig::validate() const {
  auto fail = [](const std::string& f, const std::string& why) { throw ConfigError("graph." + f + ": " + why); };
  if (k1 < 1) fail("k1", "must be >= 1");
  if (k1_prime < 1 || k1_prime > k1) fail("k1_prime", "must lie in [1, k1]");
  if (k2 < 1) fail("k2", "must be >= 1");
  if (kmeans_max_iters < 1) fail("kmeans_max_iters", "must be >= 1");
  if (!(kmeans_tol >= 0.0)) fail("kmeans_tol", "must be >= 0");
}

json GraphConfig::to_json() const {
  return json{{"k1", k1},
              {"k1_prime", k1_prime},
              {"k2", k2},
              {"kmeans_max_iters", kmeans_max_iters},
              {"kmeans_tol", kmeans_tol},
              {"seed", seed},
              {"reduction", std::string(alure::to_string(reduction))}};
}

GraphConfig GraphConfig::from_json(const json& j) {
  using namespace config_json;
  const std::string where = "graph";
  check_keys(j, {"k1", "k1_prime", "k2", "kmeans_max_iters", "kmeans_tol", "seed", "reduction"}, where);
  GraphConfig c;
  read_key(j, "k1", c.k1, where);
  read_key(j, "k1_prime", c.k1_prime, where);
  read_key(j, "k2", c.k2, where);
  read_key(j, "kmeans_max_iters", c.kmeans_max_iters, where);
  read_key(j, "kmeans_tol", c.kmeans_tol, where);
  read_key(j, "seed", c.seed, where);
  std::string red(alure::to_string(c.reduction));
  read_key(j, "reduction", red, where);
  c.reduction = parse_similarity_reduction(red);
  return c;
}

std::uint64_t GraphConfig::hash() const { return fnv1a(to_json().dump()); }

UnitVectors normalize_embeddings(const EmbeddingSnapshot& snapshot, SimilarityReduction reduction,
                                 const std::vector<UserId>* ids) {
  std::vector<UserId> order;
  if (ids) {
    order = *ids;
    std::sort(order.begin(), order.end());
  } else {
    for (const auto& [uid, _] : snapshot.records) order.push_back(uid);
  }
  UnitVectors out;
  std::vector<Vec> rows;
  for (UserId uid : order) {
    const auto it = snapshot.records.find(uid);
    if (it == snapshot.records.end()) throw Error("normalize_embeddings: user " + std::to_string(uid) + " not in snapshot");
    const Mat& v = it->second.vectors;
    if (!v.allFinite()) throw Error("normalize_embeddings: user " + std::to_string(uid) + " has non-finite values");
    Vec r = reduction == SimilarityReduction::mean_pool ? Vec(v.colwise().mean()) : Vec(v.row(0));
    const double n = r.norm();
    if (n == 0.0) {
      ++out.excluded;
      continue;
    }
    rows.push_back(r / n);
    out.ids.push_back(uid);
  }
  const Eigen::Index d = snapshot.d_model;
  out.vectors.resize(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) out.vectors.row(static_cast<Eigen::Index>(i)) = rows[i];
  return out;
}

ClusterModel spherical_kmeans(const Mat& x, int k1, std::uint64_t seed, int max_iters, double tol) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (k1 < 1) throw Error("spherical_kmeans: k1 must be >= 1");
  if (n < static_cast<std::size_t>(k1)) {
    throw Error("spherical_kmeans: " + std::to_string(n) + " points cannot form " + std::to_string(k1) + " clusters");
  }
  const auto k = static_cast<std::size_t>(k1);
  ClusterModel m;
  m.centroids.resize(k1, x.cols());

  // k-means++: squared cosine distance to the nearest chosen centroid.
  Rng rng(seed);
  std::vector<std::size_t> chosen;
  std::vector<char> taken(n, 0);
  chosen.push_back(static_cast<std::size_t>(rng.below(n)));
  taken[chosen[0]] = 1;
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  while (chosen.size() < k) {
    const auto last = static_cast<Eigen::Index>(chosen.back());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dd = std::max(0.0, cosine_distance(row_span(x, static_cast<Eigen::Index>(i)), row_span(x, last)));
      dist[i] = std::min(dist[i], dd * dd);
      if (!taken[i]) total += dist[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i] || dist[i] == 0.0) continue;
        acc += dist[i];
        pick = i;
        if (acc > target) break;
      }
    }
    if (pick == n) {  // only duplicates of chosen points remain
      pick = static_cast<std::size_t>(std::find(taken.begin(), taken.end(), 0) - taken.begin());
    }
    taken[pick] = 1;
    chosen.push_back(pick);
  }
  for (std::size_t c = 0; c < k; ++c) m.centroids.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(chosen[c]));

  std::vector<int> assign(n, -1), prev(n, -1);
  std::vector<double> best(n);
  for (int it = 0; it < max_iters; ++it) {
    assign_all(x, m.centroids, assign, best);
    double objective = 0.0;
    std::size_t changes = 0;
    for (std::size_t i = 0; i < n; ++i) {
      objective += 1.0 - best[i];
      changes += assign[i] != prev[i];
    }
    m.objective_history.push_back(objective);
    m.iterations = it + 1;
    const std::size_t h = m.objective_history.size();
    if (changes == 0) break;
    if (h >= 2 && m.objective_history[h - 2] - objective < tol) break;
    if (it + 1 == max_iters) break;
    prev = assign;

    Mat sums = Mat::Zero(k1, x.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(assign[i]) += x.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(assign[i])];
    }
    std::vector<char> reseeded(n, 0);
    for (std::size_t c = 0; c < k; ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      if (counts[c] == 0) {
        // Reseed at the point farthest from its own centroid.
        std::size_t far = 0;
        double worst = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (reseeded[i]) continue;
          const double dd = 1.0 - best[i];
          if (dd > worst) {
            worst = dd;
            far = i;
          }
        }
        reseeded[far] = 1;
        m.centroids.row(ci) = x.row(static_cast<Eigen::Index>(far));
        continue;
      }
      const double norm = sums.row(ci).norm();
      if (norm > 0.0) m.centroids.row(ci) = sums.row(ci) / norm;
    }
  }
  m.assignment = assign;
  m.members.assign(k, {});
  for (std::size_t i = 0; i < n; ++i) m.members[static_cast<std::size_t>(assign[i])].push_back(i);
  return m;
}

std::vector<int> nearest_clusters(const ClusterModel& model, std::span<const double> query, int k1_prime) {
  const auto k = static_cast<int>(model.centroids.rows());
  if (k1_prime < 1 || k1_prime > k) throw Error("nearest_clusters: k1_prime must lie in [1, k1]");
  std::vector<double> sims(k);
  for (int c = 0; c < k; ++c) sims[c] = dot(query, row_span(model.centroids, c));
  std::vector<int> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k1_prime, idx.end(), [&](int a, int b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return a < b;
  });
  idx.resize(k1_prime);
  return idx;
}

std::vector<Neighbor> knn_within(const ClusterModel& model, const UnitVectors& vectors, std::size_t query_row,
                                 std::span<const int> cluster_ids, int k2) {
  TopK top(k2);
  const auto q = row_span(vectors.vectors, static_cast<Eigen::Index>(query_row));
  for (int c : cluster_ids) {
    for (std::size_t r : model.members.at(static_cast<std::size_t>(c))) {
      if (r == query_row) continue;
      top.offer({vectors.ids[r], clamped_similarity(q, row_span(vectors.vectors, static_cast<Eigen::Index>(r)))});
    }
  }
  return top.take();
}

namespace {

template <typename PerRegion>
SimilarityGraph build_per_region(const EmbeddingSnapshot& snapshot, const GraphConfig& config, PerRegion&& fn) {
  config.validate();
  SimilarityGraph g;
  g.snapshot_version = snapshot.snapshot_version;
  g.config_hash = config.hash();
  for (const auto& [region, ids] : snapshot.region_index) {
    const UnitVectors uv = normalize_embeddings(snapshot, config.reduction, &ids);
    g.excluded_users += uv.excluded;
    if (uv.ids.size() < 2) {
      ++g.regions_skipped;
      spdlog::warn("region '{}' has {} embeddable users; skipped", region, uv.ids.size());
      continue;
    }
    std::vector<std::vector<Neighbor>> lists(uv.ids.size());
    fn(region, uv, lists);
    for (std::size_t i = 0; i < uv.ids.size(); ++i) g.edges[uv.ids[i]] = std::move(lists[i]);
    ++g.regions_built;
  }
  return g;
}

}  // namespace

SimilarityGraph build_graph(const EmbeddingSnapshot& snapshot, const GraphConfig& config) {
  return build_per_region(snapshot, config, [&](const std::string& region, const UnitVectors& uv, auto& lists) {
    const int k1 = std::min<int>(config.k1, static_cast<int>(uv.ids.size()));
    const int k1p = std::min(config.k1_prime, k1);
    ClusterModel model = spherical_kmeans(uv.vectors, k1, mix_seed(config.seed, fnv1a(region)),
                                          config.kmeans_max_iters, config.kmeans_tol);
    model.region = region;
    parallel_for(uv.ids.size(), [&](std::size_t i) {
      const auto clusters = nearest_clusters(model, row_span(uv.vectors, static_cast<Eigen::Index>(i)), k1p);
      lists[i] = knn_within(model, uv, i, clusters, config.k2);
    });
  });
}

SimilarityGraph exact_knn_graph(const EmbeddingSnapshot& snapshot, const GraphConfig& config) {
  return build_per_region(snapshot, config, [&](const std::string&, const UnitVectors& uv, auto& lists) {
    parallel_for(uv.ids.size(), [&](std::size_t i) {
      TopK top(config.k2);
      const auto q = row_span(uv.vectors, static_cast<Eigen::Index>(i));
      for (std::size_t r = 0; r < uv.ids.size(); ++r) {
        if (r != i) top.offer({uv.ids[r], clamped_similarity(q, row_span(uv.vectors, static_cast<Eigen::Index>(r)))});
      }
      lists[i] = top.take();
    });
  });
}

double graph_recall(const SimilarityGraph& approx, const SimilarityGraph& reference) {
  double sum = 0.0;
  std::size_t users = 0;
  for (const auto& [uid, ref] : reference.edges) {
    if (ref.empty()) continue;
    ++users;
    const auto it = approx.edges.find(uid);
    if (it == approx.edges.end()) continue;
    std::size_t hit = 0;
    for (const auto& r : ref) {
      for (const auto& a : it->second) hit += a.user == r.user;
    }
    sum += static_cast<double>(hit) / static_cast<double>(ref.size());
  }
  return users ? sum / static_cast<double>(users) : 0.0;
}

void write_graph(std::ostream& out, const SimilarityGraph& graph) {
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(graph.config_hash));
  nlohmann::ordered_json header;
  header["snapshot_version"] = graph.snapshot_version;
  header["config_hash"] = hash;
  header["users"] = graph.edges.size();
  out << header.dump() << '\n';
  for (const auto& [uid, list] : graph.edges) {
    nlohmann::ordered_json line;
    line["user"] = uid;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& n : list) arr.push_back({n.user, n.similarity});
    line["neighbors"] = std::move(arr);
    out << line.dump() << '\n';
  }
}

void write_graph(const std::string& path, const SimilarityGraph& graph) {
  std::ostringstream s;
  write_graph(s, graph);
  write_file_atomic(path, s.str());
}

SimilarityGraph read_graph(std::istream& in) {
  SimilarityGraph g;
  std::string line;
  std::size_t lineno = 0;
  auto parse = [&](const std::string& text) {
    try {
      return json::parse(text);
    } catch (const json::exception& e) {
      throw ParseError("graph line " + std::to_string(lineno) + ": " + e.what());
    }
  };
  if (!std::getline(in, line)) throw ParseError("graph file is empty");
  ++lineno;
  try {
    const json h = parse(line);
    g.snapshot_version = h.at("snapshot_version").get<std::uint64_t>();
    g.config_hash = std::stoull(h.at("config_hash").get<std::string>(), nullptr, 16);
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json j = parse(line);
      auto& list = g.edges[j.at("user").get<UserId>()];
      for (const auto& n : j.at("neighbors")) list.push_back({n.at(0).get<UserId>(), n.at(1).get<double>()});
    }
  } catch (const json::exception& e) {
    throw ParseError("graph line " + std::to_string(lineno) + ": " + e.what());
  }
  return g;
}

SimilarityGraph read_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open graph file " + path);
  return read_graph(in);
}

}  // namespace alure
