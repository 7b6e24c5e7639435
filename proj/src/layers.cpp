#include "alure/layers.hpp"

#include <cmath>

#include "alure/cfee.hpp"

namespace alure::nn {

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Mat layer_norm_forward(const Mat& x, const Mat& gain, const Mat& bias, LayerNormCache* cache) {
  const auto n = x.rows();
  const auto d = x.cols();
  Mat xhat(n, d);
  std::vector<double> inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (x.row(i).array() - mean) * inv_std[i];
  }
  Mat y(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    y.row(i) = xhat.row(i).cwiseProduct(gain) + bias;
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache, const Mat& gain, Mat& dgain,
                        Mat& dbias) {
  const auto n = dy.rows();
  Mat dx(n, dy.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    dgain += dy.row(i).cwiseProduct(cache.xhat.row(i));
    dbias += dy.row(i);
    const Vec dxhat = dy.row(i).cwiseProduct(gain);
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(cache.xhat.row(i)).mean();
    dx.row(i) = cache.inv_std[i] *
                (dxhat.array() - m1 - cache.xhat.row(i).array() * m2).matrix();
  }
  return dx;
}

Mat gelu_forward(const Mat& x) {
  return x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  });
}

Mat gelu_backward(const Mat& dy, const Mat& x) {
  Mat dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    const double deriv =
        0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    dx.data()[i] = dy.data()[i] * deriv;
  }
  return dx;
}

Mat softmax_rows(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Mat attention_forward(const Mat& xq, const Mat& xkv, const AttentionWeights& w, int n_heads,
                      const Rotation* rotation, std::span<const BiasLookup> biases,
                      AttentionCache* cache) {
  const auto d = w.wq.cols();
  const auto dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat q = xq * w.wq;
  Mat k = xkv * w.wk;
  Mat v = xkv * w.wv;
  if (rotation) {
    cyclic_rotate_rows(q, rotation->query_times, rotation->periods);
    cyclic_rotate_rows(k, rotation->key_times, rotation->periods);
  }
  Mat heads_out(xq.rows(), d);
  if (cache) cache->probs.clear();
  for (int h = 0; h < n_heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    Mat logits = (qh * kh.transpose()) * scale;
    for (const auto& b : biases) {
      for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        for (Eigen::Index j = 0; j < logits.cols(); ++j) {
          logits(i, j) += (*b.table)(h, b.slots(i, j));
        }
      }
    }
    Mat p = softmax_rows(logits);
    heads_out.middleCols(h * dh, dh).noalias() = p * v.middleCols(h * dh, dh);
    if (cache) cache->probs.push_back(std::move(p));
  }
  Mat y = heads_out * w.wo;
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->heads_out = std::move(heads_out);
  }
  return y;
}

void attention_backward(const Mat& dy, const AttentionCache& cache, const AttentionWeights& w,
                        AttentionGrads& grads, int n_heads, const Rotation* rotation,
                        std::span<const BiasLookup> biases, Mat& dxq, Mat& dxkv) {
  const auto d = w.wq.cols();
  const auto dh = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  grads.wo.noalias() += cache.heads_out.transpose() * dy;
  const Mat dheads = dy * w.wo.transpose();
  Mat dq(cache.q.rows(), d);
  Mat dk(cache.k.rows(), d);
  Mat dv(cache.v.rows(), d);
  for (int h = 0; h < n_heads; ++h) {
    const Mat& p = cache.probs[h];
    const auto doh = dheads.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = p.transpose() * doh;
    const Mat dp = doh * cache.v.middleCols(h * dh, dh).transpose();
    Mat ds = p.cwiseProduct(dp);
    for (Eigen::Index i = 0; i < ds.rows(); ++i) {
      const double row_dot = ds.row(i).sum();
      ds.row(i) -= p.row(i) * row_dot;
    }
    for (const auto& b : biases) {
      if (!b.table_grad) continue;
      for (Eigen::Index i = 0; i < ds.rows(); ++i) {
        for (Eigen::Index j = 0; j < ds.cols(); ++j) {
          (*b.table_grad)(h, b.slots(i, j)) += ds(i, j);
        }
      }
    }
    dq.middleCols(h * dh, dh).noalias() = (ds * cache.k.middleCols(h * dh, dh)) * scale;
    dk.middleCols(h * dh, dh).noalias() = (ds.transpose() * cache.q.middleCols(h * dh, dh)) * scale;
  }
  if (rotation) {
    cyclic_rotate_rows(dq, rotation->query_times, rotation->periods, -1);
    cyclic_rotate_rows(dk, rotation->key_times, rotation->periods, -1);
  }
  grads.wq.noalias() += cache.xq.transpose() * dq;
  grads.wk.noalias() += cache.xkv.transpose() * dk;
  grads.wv.noalias() += cache.xkv.transpose() * dv;
  dxq = dq * w.wq.transpose();
  dxkv = dk * w.wk.transpose();
  dxkv.noalias() += dv * w.wv.transpose();
}

Vec l2_normalize(const Vec& x, double* norm_out) {
  const double n = x.norm();
  if (norm_out) *norm_out = n;
  return x / n;
}

Vec l2_normalize_backward(const Vec& dy, const Vec& y, double norm) {
  return (dy - y * y.dot(dy)) / norm;
}

}  // namespace alure::nn
