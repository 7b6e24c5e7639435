#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "alure/cfee.hpp"
#include "alure/common.hpp"
#include "alure/event_model.hpp"
#include "alure/layers.hpp"

namespace alure {

enum class CompressionVariant { skip_dot, interaction };

std::string_view to_string(CompressionVariant v);
CompressionVariant parse_compression_variant(std::string_view name);

struct ModelConfig {
  int K = 2;
  int n_layers = 2;
  int d_model = 32;
  int n_heads = 2;
  int ffn_mult = 4;
  CfeeConfig cfee;
  std::vector<int> tap_layers = {1, 2};  // 1-based layer indices
  int M = 4;
  CompressionVariant compression_variant = CompressionVariant::skip_dot;
  std::vector<std::uint32_t> vocab_sizes = {64, 64};
  std::uint32_t n_accounts = 64;
  double learning_rate = 0.05;
  int batch_size = 32;
  double temperature = 0.07;
  std::uint64_t seed = 7;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Number of tapped matrices fed to compression: K * |tap_layers|.
  int tapped_count() const { return K * static_cast<int>(tap_layers.size()); }

  nlohmann::json to_json() const;
  /// Rejects unknown keys; missing keys keep their defaults.
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

/// Toy configuration: d_model 32, two layers, two sources.
ModelConfig default_toy_config();

struct LayerParams {
  Mat wq, wk, wv, wo;           // d x d
  Mat ln1_gain, ln1_bias;       // 1 x d
  Mat ln2_gain, ln2_bias;       // 1 x d
  Mat ffn_w1, ffn_b1;           // d x (ffn_mult d), 1 x (ffn_mult d)
  Mat ffn_w2, ffn_b2;           // (ffn_mult d) x d, 1 x d
};

struct SourceParams {
  Mat token_embedding;  // vocab x d
  CfeeParams cfee;
  std::vector<LayerParams> layers;
  Mat cross_wq, cross_wk, cross_wv, cross_wo;  // d x d
  Mat empty_placeholder;                       // 1 x d, used when the source has no events
};

struct CompressionParams {
  // skip_dot
  Mat linear_w, linear_b;  // (T d) x (M d), 1 x (M d)
  Mat dot_w, dot_b;        // P x (M d), 1 x (M d); P = T (T + 1) / 2
  // interaction
  Mat queries;             // M x d
  Mat wq, wk, wv, wo;      // d x d
};

/// Everything reachable from forward_user: the embedding-generating subgraph.
struct FeatureParams {
  std::vector<SourceParams> sources;
  Mat cross_queries;  // M x d, shared learned pooling queries
  CompressionParams compression;

  /// Visits (name, tensor) pairs in the fixed serialization order. Tensors
  /// that are empty for the configured variant are skipped.
  template <typename Fn>
  void visit(Fn&& fn);
  template <typename Fn>
  void visit(Fn&& fn) const;

  std::size_t parameter_count() const;
};

/// Training-time parameters: the feature arch plus the account embedding
/// table used only by the contrastive objective.
struct ModelParams {
  FeatureParams feature;
  Mat account_embedding;  // n_accounts x d

  template <typename Fn>
  void visit(Fn&& fn);
  template <typename Fn>
  void visit(Fn&& fn) const;

  std::size_t parameter_count() const;
};

/// Allocates parameters for cfg and fills them from the seeded generator.
ModelParams init_params(const ModelConfig& cfg);
/// Same shapes as init_params(cfg), all zero.
ModelParams zero_params(const ModelConfig& cfg);

/// One source's flattened input: each token carries its event's timestamp.
struct SourceSequence {
  std::vector<std::uint32_t> tokens;
  std::vector<Timestamp> timestamps;

  bool empty() const { return tokens.empty(); }
};

struct EncoderInput {
  std::vector<SourceSequence> sources;  // exactly K
};

/// Flattens each source's events into (token, timestamp) pairs, keeping only
/// events strictly before `cutoff`.
EncoderInput prepare_input(const UserHistory& history, int K,
                           Timestamp cutoff = std::numeric_limits<Timestamp>::max());

/// Per-layer forward state retained for backpropagation.
struct EncoderLayerCache {
  Mat x_in;
  nn::LayerNormCache ln1;
  nn::AttentionCache attn;
  Mat y1;
  nn::LayerNormCache ln2;
  Mat ffn_in;
  Mat ffn_pre;
  Mat ffn_act;
};

struct SequenceCache {
  std::vector<std::uint32_t> tokens;
  std::vector<Timestamp> timestamps;
  std::vector<double> decay_features;
  Eigen::MatrixXi relpos_slots;
  Eigen::MatrixXi time_slots;
  std::vector<EncoderLayerCache> layers;
};

/// Hidden states of every layer (index 0 = layer 1) for one source sequence.
std::vector<Mat> encode_sequence_all_layers(const SourceParams& params, const ModelConfig& cfg,
                                            std::span<const std::uint32_t> tokens,
                                            std::span<const Timestamp> timestamps,
                                            SequenceCache* cache = nullptr);

/// Hidden states at each tap layer, in tap_layers order. Throws Error on an
/// empty sequence or an out-of-vocabulary token.
std::vector<Mat> encode_sequence(const SourceParams& params, const ModelConfig& cfg,
                                 int source_id, std::span<const std::uint32_t> tokens,
                                 std::span<const Timestamp> timestamps);

/// Queries attend over hidden states; every query uses the sequence's latest
/// timestamp as its own time for the time-delta bias.
Mat cross_attend(const SourceParams& params, const ModelConfig& cfg, const Mat& hidden,
                 const Mat& queries, std::span<const Timestamp> timestamps,
                 nn::AttentionCache* cache = nullptr);

struct CompressionCache {
  Mat pooled;     // T x d (skip_dot)
  Mat pair_dots;  // 1 x P (skip_dot)
  Mat stacked;    // (T M) x d (interaction)
  nn::AttentionCache attn;
};

/// Fuses the tapped matrices (each M x d) into the M output vectors.
Mat compress(const CompressionParams& params, const ModelConfig& cfg, std::span<const Mat> tapped,
             CompressionCache* cache = nullptr);

/// Full forward state of one user, for backpropagation.
struct UserForwardCache {
  std::vector<SequenceCache> sequences;                  // per source
  std::vector<std::vector<nn::AttentionCache>> pooling;  // per source, per tap
  std::vector<Mat> tapped;
  CompressionCache compression;
};

/// Embedding matrix (M x d) for prepared input. `source_order` optionally
/// permutes the order in which sources are evaluated; the result does not
/// depend on it.
Mat forward_input(const FeatureParams& params, const ModelConfig& cfg, const EncoderInput& input,
                  UserForwardCache* cache = nullptr, std::span<const int> source_order = {});

struct UserEmbedding {
  UserId user_id = 0;
  Mat vectors;  // M x d
  std::uint64_t model_version = 0;
  std::uint64_t snapshot_version = 0;

  bool operator==(const UserEmbedding& o) const {
    return user_id == o.user_id && model_version == o.model_version &&
           snapshot_version == o.snapshot_version && vectors.rows() == o.vectors.rows() &&
           vectors.cols() == o.vectors.cols() && vectors == o.vectors;
  }
};

/// Throws Error if every source is empty.
UserEmbedding forward_user(const FeatureParams& params, const ModelConfig& cfg,
                           const UserHistory& history, std::uint64_t model_version = 0);

/// Evaluates many users; each result is bitwise identical to a solo call.
std::vector<UserEmbedding> forward_batch(const FeatureParams& params, const ModelConfig& cfg,
                                         std::span<const UserHistory> histories,
                                         std::uint64_t model_version = 0);

/// Backpropagates d(embedding) for one user into feature-parameter gradients.
void backward_user(const FeatureParams& params, const ModelConfig& cfg, const UserForwardCache& cache,
                   const Mat& d_embedding, FeatureParams& grads);

}  // namespace alure

#include "alure/encoder_visit.inl"
