#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "alure/common.hpp"

namespace alure {

/// Complex feature enrichment encoder settings. Every constant that shapes the
/// timestamp encoders lives here.
struct CfeeConfig {
  int d_model = 32;
  int n_heads = 2;
  double decay_tau = 3600.0;               // seconds
  int n_time_buckets = 32;                 // B
  std::int64_t bucket_base_delta = 60;     // seconds
  int relpos_window = 64;                  // w
  std::vector<std::int64_t> cyclic_periods = {86400, 604800};

  /// Throws ConfigError naming the offending field.
  void validate() const;

  bool operator==(const CfeeConfig&) const = default;
};

/// Learned parameters of one source's encoder bundle.
struct CfeeParams {
  Vec decay_weight;  // d_model; decay encoding = feature * weight + bias
  Vec decay_bias;    // d_model
  Mat relpos_table;  // n_heads x (2w + 1)
  Mat time_bias_table;  // n_heads x (2B + 1)

  static CfeeParams zeros(const CfeeConfig& cfg);
};

/// Sinusoidal position code: out[2i] = sin(pos / 10000^(2i/d)),
/// out[2i+1] = cos(pos / 10000^(2i/d)).
Vec absolute_position_encoding(std::int64_t position, int d_model);

/// ln(1 + (t_ref - t_event) / tau). Throws Error if t_event > t_ref.
double temporal_decay_feature(Timestamp t_ref, Timestamp t_event, double tau);
Vec temporal_decay_encoding(const CfeeParams& params, double feature);

/// Rotation angle 2*pi*(t mod p)/p, with t mod p taken in exact integers.
double cyclic_angle(Timestamp t, std::int64_t period);

/// Rotates consecutive pairs of x in place. The feature dimension is split into
/// |periods| equal partitions; every pair in partition p turns by the angle of
/// period p. direction = -1 applies the inverse rotation.
void cyclic_rotate_inplace(std::span<double> x, Timestamp t, std::span<const std::int64_t> periods,
                           int direction = 1);
Vec cyclic_rotate(const Vec& x, Timestamp t, std::span<const std::int64_t> periods);
/// Row i of m is rotated by timestamps[i].
void cyclic_rotate_rows(Mat& m, std::span<const Timestamp> timestamps,
                        std::span<const std::int64_t> periods, int direction = 1);

/// Index into a relpos table row: clip(i - j, -w, w) + w.
int relative_position_slot(std::int64_t i, std::int64_t j, int window);
double relative_position_bias(std::int64_t i, std::int64_t j, int head, const CfeeParams& params,
                              int window);

/// Signed log bucket of t_i - t_j: sign * min(B - 1, floor(log2(1 + |dt| / delta))).
/// Computed in integer arithmetic.
int time_delta_bucket(Timestamp t_i, Timestamp t_j, int n_buckets, std::int64_t base_delta);
/// L x L matrix with M[i][j] = time_bias_table[head][bucket(t_i - t_j) + B].
Mat pairwise_time_bias(std::span<const Timestamp> timestamps, int head, const CfeeParams& params,
                       const CfeeConfig& cfg);

}  // namespace alure
