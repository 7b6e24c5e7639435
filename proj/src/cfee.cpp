#include "alure/cfee.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace alure {

void CfeeConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("cfee." + field + ": " + why);
  };
  if (d_model <= 0 || d_model % 2 != 0) fail("d_model", "must be positive and even");
  if (cyclic_periods.empty()) fail("cyclic_periods", "must not be empty");
  for (auto p : cyclic_periods) {
    if (p <= 0) fail("cyclic_periods", "periods must be positive");
  }
  if (d_model % (2 * static_cast<int>(cyclic_periods.size())) != 0) {
    fail("d_model", "must be divisible by 2 * |cyclic_periods|");
  }
  if (n_heads <= 0) fail("n_heads", "must be positive");
  if (n_time_buckets < 1) fail("n_time_buckets", "must be >= 1");
  if (bucket_base_delta < 1) fail("bucket_base_delta", "must be >= 1");
  if (relpos_window < 1) fail("relpos_window", "must be >= 1");
  if (!(decay_tau > 0.0)) fail("decay_tau", "must be > 0");
}

CfeeParams CfeeParams::zeros(const CfeeConfig& cfg) {
  CfeeParams p;
  p.decay_weight = Vec::Zero(cfg.d_model);
  p.decay_bias = Vec::Zero(cfg.d_model);
  p.relpos_table = Mat::Zero(cfg.n_heads, 2 * cfg.relpos_window + 1);
  p.time_bias_table = Mat::Zero(cfg.n_heads, 2 * cfg.n_time_buckets + 1);
  return p;
}

Vec absolute_position_encoding(std::int64_t position, int d_model) {
  if (d_model % 2 != 0) throw ConfigError("absolute_position_encoding: d_model must be even");
  Vec out(d_model);
  const double pos = static_cast<double>(position);
  for (int i = 0; i < d_model / 2; ++i) {
    const double freq = std::pow(10000.0, 2.0 * i / d_model);
    out[2 * i] = std::sin(pos / freq);
    out[2 * i + 1] = std::cos(pos / freq);
  }
  return out;
}

double temporal_decay_feature(Timestamp t_ref, Timestamp t_event, double tau) {
  if (t_event > t_ref) {
    throw Error("temporal_decay_feature: event at " + std::to_string(t_event) +
                " is after the reference time " + std::to_string(t_ref));
  }
  return std::log1p(static_cast<double>(t_ref - t_event) / tau);
}

Vec temporal_decay_encoding(const CfeeParams& params, double feature) {
  return feature * params.decay_weight + params.decay_bias;
}

double cyclic_angle(Timestamp t, std::int64_t period) {
  const std::int64_t r = ((t % period) + period) % period;
  return 2.0 * M_PI * static_cast<double>(r) / static_cast<double>(period);
}

void cyclic_rotate_inplace(std::span<double> x, Timestamp t, std::span<const std::int64_t> periods,
                           int direction) {
  const std::size_t part = x.size() / periods.size();
  for (std::size_t p = 0; p < periods.size(); ++p) {
    const double theta = direction * cyclic_angle(t, periods[p]);
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    for (std::size_t k = p * part; k < (p + 1) * part; k += 2) {
      const double a = x[k];
      const double b = x[k + 1];
      x[k] = a * c - b * s;
      x[k + 1] = a * s + b * c;
    }
  }
}

Vec cyclic_rotate(const Vec& x, Timestamp t, std::span<const std::int64_t> periods) {
  if (periods.empty() || x.size() % (2 * static_cast<Eigen::Index>(periods.size())) != 0) {
    throw ConfigError("cyclic_rotate: width must be divisible by 2 * |periods|");
  }
  Vec out = x;
  cyclic_rotate_inplace(std::span<double>(out.data(), out.size()), t, periods);
  return out;
}

void cyclic_rotate_rows(Mat& m, std::span<const Timestamp> timestamps,
                        std::span<const std::int64_t> periods, int direction) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    cyclic_rotate_inplace(std::span<double>(m.row(i).data(), m.cols()), timestamps[i], periods,
                          direction);
  }
}

int relative_position_slot(std::int64_t i, std::int64_t j, int window) {
  const std::int64_t off = std::clamp<std::int64_t>(i - j, -window, window);
  return static_cast<int>(off + window);
}

double relative_position_bias(std::int64_t i, std::int64_t j, int head, const CfeeParams& params,
                              int window) {
  return params.relpos_table(head, relative_position_slot(i, j, window));
}

int time_delta_bucket(Timestamp t_i, Timestamp t_j, int n_buckets, std::int64_t base_delta) {
  const std::int64_t delta = t_i - t_j;
  if (delta == 0) return 0;
  const std::uint64_t mag = delta < 0 ? static_cast<std::uint64_t>(-(delta + 1)) + 1
                                      : static_cast<std::uint64_t>(delta);
  // Largest k with (2^k - 1) * base_delta <= |delta|, i.e. floor(log2(1 + |delta|/base)).
  int k = 0;
  const auto base = static_cast<std::uint64_t>(base_delta);
  while (k < n_buckets - 1 && k < 62) {
    const std::uint64_t span = (std::uint64_t{1} << (k + 1)) - 1;
    if (span > std::numeric_limits<std::uint64_t>::max() / base || span * base > mag) break;
    ++k;
  }
  return delta < 0 ? -k : k;
}

Mat pairwise_time_bias(std::span<const Timestamp> timestamps, int head, const CfeeParams& params,
                       const CfeeConfig& cfg) {
  const auto L = static_cast<Eigen::Index>(timestamps.size());
  Mat m(L, L);
  for (Eigen::Index i = 0; i < L; ++i) {
    for (Eigen::Index j = 0; j < L; ++j) {
      const int b = time_delta_bucket(timestamps[i], timestamps[j], cfg.n_time_buckets,
                                      cfg.bucket_base_delta);
      m(i, j) = params.time_bias_table(head, b + cfg.n_time_buckets);
    }
  }
  return m;
}

}  // namespace alure
