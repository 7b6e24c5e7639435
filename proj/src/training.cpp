#include "alure/training.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "alure/log.hpp"
#include "alure/parallel.hpp"

namespace alure {

namespace {

template <typename P>
std::vector<std::span<double>> flat_views(P& p) {
  std::vector<std::span<double>> out;
  p.visit([&out](const std::string&, auto& t) { out.emplace_back(t.data(), t.size()); });
  return out;
}

template <typename P>
std::vector<std::span<const double>> flat_views_const(const P& p) {
  std::vector<std::span<const double>> out;
  p.visit([&out](const std::string&, const auto& t) { out.emplace_back(t.data(), t.size()); });
  return out;
}

FeatureParams zeros_like(const FeatureParams& p) {
  FeatureParams z = p;
  z.visit([](const std::string&, auto& t) { t.setZero(); });
  return z;
}

void accumulate(FeatureParams& dst, const FeatureParams& src) {
  auto d = flat_views(dst);
  auto s = flat_views_const(src);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d[i].size(); ++j) d[i][j] += s[i][j];
  }
}

}  // namespace

std::optional<TrainingExample> make_training_example(const UserHistory& history,
                                                     std::span<const Engagement> engagements, int K) {
  if (engagements.empty()) return std::nullopt;
  const Engagement& last = engagements.back();
  TrainingExample ex;
  ex.user_id = history.user_id;
  ex.positive_account = last.account_id;
  ex.input = prepare_input(history, K, last.timestamp);
  const bool empty = std::all_of(ex.input.sources.begin(), ex.input.sources.end(),
                                 [](const SourceSequence& s) { return s.empty(); });
  if (empty) return std::nullopt;
  return ex;
}

std::vector<TrainingExample> make_training_examples(std::span<const UserHistory> histories,
                                                    const EngagementLog& engagements, int K) {
  std::vector<TrainingExample> out;
  for (const auto& h : histories) {
    auto it = engagements.find(h.user_id);
    if (it == engagements.end()) continue;
    if (auto ex = make_training_example(h, it->second, K)) out.push_back(std::move(*ex));
  }
  return out;
}

double contrastive_loss(const ModelParams& params, const ModelConfig& cfg, const RaggedBatch& batch,
                        ModelParams* grads) {
  const auto N = static_cast<Eigen::Index>(batch.examples.size());
  if (N < 2) throw Error("contrastive_loss: batch needs at least 2 users for in-batch negatives");
  const int d = cfg.d_model;
  const double T = cfg.temperature;

  std::vector<UserForwardCache> caches(grads ? N : 0);
  std::vector<Mat> raw(N);
  parallel_for(static_cast<std::size_t>(N), [&](std::size_t b) {
    raw[b] = forward_input(params.feature, cfg, batch.examples[b].input, grads ? &caches[b] : nullptr);
  });

  Mat E(N, d), A(N, d);
  std::vector<double> e_norm(N), a_norm(N);
  std::vector<std::size_t> slots(N);
  for (Eigen::Index b = 0; b < N; ++b) {
    E.row(b) = nn::l2_normalize(raw[b].row(0), &e_norm[b]);
    slots[b] = account_slot(batch.examples[b].positive_account, cfg.n_accounts);
    A.row(b) = nn::l2_normalize(params.account_embedding.row(slots[b]), &a_norm[b]);
  }
  const Mat Z = (E * A.transpose()) / T;
  double loss = 0.0;
  Mat P(N, N);
  for (Eigen::Index b = 0; b < N; ++b) {
    const double mx = Z.row(b).maxCoeff();
    const double lse = mx + std::log((Z.row(b).array() - mx).exp().sum());
    loss += lse - Z(b, b);
    P.row(b) = (Z.row(b).array() - lse).exp();
  }
  loss /= static_cast<double>(N);
  if (!grads) return loss;

  Mat dZ = P;
  dZ.diagonal().array() -= 1.0;
  dZ /= static_cast<double>(N);
  const Mat dE = (dZ * A) / T;
  const Mat dA = (dZ.transpose() * E) / T;

  std::vector<FeatureParams> per_user(N);
  parallel_for(static_cast<std::size_t>(N), [&](std::size_t b) {
    per_user[b] = zeros_like(params.feature);
    Mat d_emb = Mat::Zero(cfg.M, d);
    d_emb.row(0) = nn::l2_normalize_backward(dE.row(b), E.row(b), e_norm[b]);
    backward_user(params.feature, cfg, caches[b], d_emb, per_user[b]);
  });
  for (Eigen::Index b = 0; b < N; ++b) accumulate(grads->feature, per_user[b]);
  for (Eigen::Index v = 0; v < N; ++v) {
    grads->account_embedding.row(slots[v]) += nn::l2_normalize_backward(dA.row(v), A.row(v), a_norm[v]);
  }
  return loss;
}

double train_step(ModelParams& params, const ModelConfig& cfg, const RaggedBatch& batch) {
  ModelParams grads = params;
  grads.visit([](const std::string&, auto& t) { t.setZero(); });
  const double loss = contrastive_loss(params, cfg, batch, &grads);
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "train_step: non-finite loss (" << loss << "); learning rate " << cfg.learning_rate
        << " may be too high or activations overflowed";
    throw Error(msg.str());
  }
  auto p = flat_views(params);
  auto g = flat_views_const(grads);
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p[i].size(); ++j) p[i][j] -= cfg.learning_rate * g[i][j];
  }
  return loss;
}

TrainingReport train(ModelParams& params, const ModelConfig& cfg,
                     std::span<const TrainingExample> examples, int steps, int probe_batches) {
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  if (examples.size() < 2) throw Error("train: need at least 2 training examples");
  const std::size_t per_epoch = std::max<std::size_t>(1, examples.size() / bs);
  const std::size_t batch_len = std::min(bs, examples.size());

  std::vector<std::size_t> order(examples.size());
  std::uint64_t epoch = 0;
  auto reshuffle = [&] {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(cfg.seed, 0xE90C + epoch));
    rng.shuffle(order);
  };
  auto make_batch = [&](std::size_t index_in_epoch) {
    RaggedBatch batch;
    for (std::size_t i = 0; i < batch_len; ++i) {
      batch.examples.push_back(examples[order[index_in_epoch * batch_len + i]]);
    }
    return batch;
  };

  reshuffle();
  std::vector<RaggedBatch> probes;
  for (int i = 0; i < probe_batches && static_cast<std::size_t>(i) < per_epoch; ++i) {
    probes.push_back(make_batch(i));
  }
  auto probe_loss = [&] {
    double s = 0.0;
    for (const auto& b : probes) s += contrastive_loss(params, cfg, b);
    return probes.empty() ? 0.0 : s / static_cast<double>(probes.size());
  };

  TrainingReport report;
  report.initial_loss = probe_loss();
  std::size_t cursor = 0;
  for (int s = 0; s < steps; ++s) {
    if (cursor == per_epoch) {
      ++epoch;
      reshuffle();
      cursor = 0;
    }
    report.step_losses.push_back(train_step(params, cfg, make_batch(cursor++)));
    if ((s + 1) % 50 == 0) spdlog::info("train step {} loss {:.4f}", s + 1, report.step_losses.back());
  }
  report.final_loss = probe_loss();
  return report;
}

}  // namespace alure
