#pragma once

#include <optional>
#include <span>
#include <vector>

#include "alure/encoder.hpp"
#include "alure/event_model.hpp"

namespace alure {

/// One user's contribution to a contrastive batch: ragged per-source input and
/// the account of the engagement to predict.
struct TrainingExample {
  UserId user_id = 0;
  EncoderInput input;
  AccountId positive_account = kNoAccount;
};

/// A batch of heterogeneous-length examples; nothing is padded.
struct RaggedBatch {
  std::vector<TrainingExample> examples;
};

/// Row of the account embedding table used for an account id.
inline std::size_t account_slot(AccountId account, std::uint32_t n_accounts) {
  return static_cast<std::size_t>(account % n_accounts);
}

/// Positive = account of the chronologically last engagement; the input keeps
/// only events strictly before it. nullopt if the user has no engagement or no
/// remaining input.
std::optional<TrainingExample> make_training_example(const UserHistory& history,
                                                     std::span<const Engagement> engagements, int K);

std::vector<TrainingExample> make_training_examples(std::span<const UserHistory> histories,
                                                    const EngagementLog& engagements, int K);

/// In-batch InfoNCE: for each user, the first embedding vector (normalized)
/// scores every positive account embedding in the batch (normalized) at
/// temperature T; loss is the mean negative log-likelihood of its own positive.
/// When grads is non-null, analytic gradients are accumulated into it.
double contrastive_loss(const ModelParams& params, const ModelConfig& cfg, const RaggedBatch& batch,
                        ModelParams* grads = nullptr);

/// One plain SGD step. Throws Error with a diagnostic on a non-finite loss
/// (parameters are left untouched in that case). Returns the pre-update loss.
double train_step(ModelParams& params, const ModelConfig& cfg, const RaggedBatch& batch);

struct TrainingReport {
  double initial_loss = 0.0;  // mean loss over the probe batches before training
  double final_loss = 0.0;    // same probe batches after training
  std::vector<double> step_losses;
};

/// Runs `steps` SGD steps over shuffled epochs of the examples (seeded by
/// cfg.seed). The first few batches serve as the probe set for the
/// initial/final loss comparison.
TrainingReport train(ModelParams& params, const ModelConfig& cfg,
                     std::span<const TrainingExample> examples, int steps, int probe_batches = 4);

}  // namespace alure
