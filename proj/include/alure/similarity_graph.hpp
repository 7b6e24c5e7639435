#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "alure/common.hpp"
#include "alure/embedding_pipeline.hpp"

namespace alure {

/// How a user's M vectors become the single vector used for similarity.
enum class SimilarityReduction { mean_pool, first_vector };
std::string_view to_string(SimilarityReduction r);
SimilarityReduction parse_similarity_reduction(std::string_view name);

struct GraphConfig {
  int k1 = 400;
  int k1_prime = 50;
  int k2 = 15;
  int kmeans_max_iters = 100;
  double kmeans_tol = 1e-6;
  std::uint64_t seed = 7;
  SimilarityReduction reduction = SimilarityReduction::mean_pool;

  void validate() const;
  nlohmann::json to_json() const;
  static GraphConfig from_json(const nlohmann::json& j);
  /// FNV-1a of the canonical JSON form.
  std::uint64_t hash() const;
  bool operator==(const GraphConfig&) const = default;
};

/// Unit vectors for a set of users; rows align with ids (ascending).
struct UnitVectors {
  std::vector<UserId> ids;
  Mat vectors;
  std::size_t excluded = 0;  // zero-norm users dropped
};

/// Reduces and L2-normalizes the records of `ids` (all records when null).
UnitVectors normalize_embeddings(const EmbeddingSnapshot& snapshot,
                                 SimilarityReduction reduction = SimilarityReduction::mean_pool,
                                 const std::vector<UserId>* ids = nullptr);

inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
  return 1.0 - dot(a, b);
}

struct ClusterModel {
  std::string region;
  Mat centroids;                                // k1 x d, unit rows
  std::vector<int> assignment;                  // per input row
  std::vector<std::vector<std::size_t>> members;  // per cluster, ascending row index
  std::vector<double> objective_history;        // sum of cosine distances per Lloyd pass
  int iterations = 0;
};

/// Spherical k-means with k-means++ seeding on cosine distance. Rows of
/// `vectors` must be unit length. Throws Error if rows < k1.
ClusterModel spherical_kmeans(const Mat& vectors, int k1, std::uint64_t seed, int max_iters, double tol);

/// The k1_prime centroids with the largest dot product, best first; ties go
/// to the lower index.
std::vector<int> nearest_clusters(const ClusterModel& model, std::span<const double> query, int k1_prime);

struct Neighbor {
  UserId user = 0;
  double similarity = 0.0;
  bool operator==(const Neighbor&) const = default;
};

/// Exact top-k2 by cosine similarity among members of `cluster_ids`, minus the
/// query row. Similarity clamped to [-1, 1]; ties go to the lower user id.
std::vector<Neighbor> knn_within(const ClusterModel& model, const UnitVectors& vectors, std::size_t query_row,
                                 std::span<const int> cluster_ids, int k2);

struct SimilarityGraph {
  std::uint64_t snapshot_version = 0;
  std::uint64_t config_hash = 0;
  std::map<UserId, std::vector<Neighbor>> edges;
  std::size_t regions_built = 0;
  std::size_t regions_skipped = 0;  // fewer than 2 embeddable users
  std::size_t excluded_users = 0;   // zero-norm embeddings

  bool operator==(const SimilarityGraph& o) const {
    return snapshot_version == o.snapshot_version && config_hash == o.config_hash && edges == o.edges;
  }
};

/// Per region: normalize, cluster, and link every user to its k2 nearest
/// neighbours within the k1_prime closest clusters. k1 is capped at the
/// region's user count.
SimilarityGraph build_graph(const EmbeddingSnapshot& snapshot, const GraphConfig& config);

/// Exact k-NN graph over each region (no clustering); the reference for recall.
SimilarityGraph exact_knn_graph(const EmbeddingSnapshot& snapshot, const GraphConfig& config);

/// Mean over users with a non-empty reference list of |approx ∩ reference| / |reference|.
double graph_recall(const SimilarityGraph& approx, const SimilarityGraph& reference);

// JSONL: first line {"snapshot_version", "config_hash", "users"}; then one
// {"user": u64, "neighbors": [[u64, f64], ...]} per user in ascending id order.
void write_graph(std::ostream& out, const SimilarityGraph& graph);
void write_graph(const std::string& path, const SimilarityGraph& graph);
SimilarityGraph read_graph(std::istream& in);
SimilarityGraph read_graph(const std::string& path);

}  // namespace alure
