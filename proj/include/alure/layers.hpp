#pragma once

// Differentiable building blocks with hand-written backward passes. Every
// forward function optionally fills a cache; the matching backward consumes it
// and accumulates parameter gradients into caller-provided buffers.

#include <span>
#include <vector>

#include "alure/common.hpp"

namespace alure::nn {

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Mat xhat;
  std::vector<double> inv_std;
};

/// Row-wise layer normalization with gain/bias (both 1 x d).
Mat layer_norm_forward(const Mat& x, const Mat& gain, const Mat& bias, LayerNormCache* cache);
Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache, const Mat& gain, Mat& dgain,
                        Mat& dbias);

/// tanh-approximated GELU.
Mat gelu_forward(const Mat& x);
Mat gelu_backward(const Mat& dy, const Mat& x);

/// Additive pre-softmax bias read from a learned table: logit(h, i, j) +=
/// table(h, slots(i, j)). Tables are n_heads x n_slots.
struct BiasLookup {
  const Mat* table = nullptr;
  Mat* table_grad = nullptr;  // may be null during inference
  Eigen::MatrixXi slots;      // n_query x n_key
};

struct AttentionWeights {
  const Mat& wq;
  const Mat& wk;
  const Mat& wv;
  const Mat& wo;
};

struct AttentionGrads {
  Mat& wq;
  Mat& wk;
  Mat& wv;
  Mat& wo;
};

/// Optional rotary step applied to projected queries and keys.
struct Rotation {
  std::span<const Timestamp> query_times;
  std::span<const Timestamp> key_times;
  std::span<const std::int64_t> periods;
};

struct AttentionCache {
  Mat xq, xkv;     // inputs
  Mat q, k, v;     // projections (q, k after rotation)
  std::vector<Mat> probs;  // per head, n_query x n_key
  Mat heads_out;   // concatenated head outputs, before wo
};

/// Multi-head attention of query rows xq over key/value rows xkv. Projections
/// have no bias. logits = q_h k_h^T / sqrt(d_head) + sum of bias lookups.
Mat attention_forward(const Mat& xq, const Mat& xkv, const AttentionWeights& w, int n_heads,
                      const Rotation* rotation, std::span<const BiasLookup> biases,
                      AttentionCache* cache);

/// Returns gradients w.r.t. xq and xkv; parameter and table gradients are
/// accumulated.
void attention_backward(const Mat& dy, const AttentionCache& cache, const AttentionWeights& w,
                        AttentionGrads& grads, int n_heads, const Rotation* rotation,
                        std::span<const BiasLookup> biases, Mat& dxq, Mat& dxkv);

/// Numerically stable row softmax.
Mat softmax_rows(const Mat& logits);

/// y = x / ||x||; backward: dx = (dy - y (y . dy)) / ||x||.
Vec l2_normalize(const Vec& x, double* norm_out = nullptr);
Vec l2_normalize_backward(const Vec& dy, const Vec& y, double norm);

}  // namespace alure::nn
