#pragma once

#include <optional>
#include <string>
#include <vector>

#include "latact/tensor.hpp"
#include "latact/transformer.hpp"

namespace latact {

struct LossWeights {
  double alpha = 0.5;

  void validate() const;
};

/// Squared distance between the predicted and teacher act vectors, summed
/// over dimensions. The teacher side is stop-gradiented: only the
/// prediction path trains from this term.
template <class S>
Tensor<S> policy_loss(const Tensor<S>& z_hat, const Tensor<S>& z);

/// Mean token-level negative log-likelihood over the gold response with
/// teacher forcing; padding targets are excluded.
template <class S>
Tensor<S> response_loss(const Tensor<S>& logits, const std::vector<int>& targets);

/// alpha * policy + (1 - alpha) * response.
template <class S>
Tensor<S> combined_loss(const Tensor<S>& l_policy, const Tensor<S>& l_response,
                        const LossWeights& w);

/// One training example: a dialogue turn with everything the forward pass
/// needs. `act_ids` holds the canonical act string tokens for labeled turns
/// and the delexicalized response tokens for unlabeled ones.
struct TrainExample {
  std::vector<int> context_ids;
  DbBucket db = DbBucket::Zero;
  std::vector<int> response_ids;  // without bos/eos
  std::vector<int> act_ids;
  bool labeled = false;
  std::string domain;
};

struct StepResult {
  double loss = 0.0;
  double l_policy = 0.0;
  double l_response = 0.0;
  double grad_norm = 0.0;
};

struct TrainOptions {
  LossWeights weights;
  double clip_norm = 1.0;
  bool baseline_concat = false;
};

/// Builds the joint loss over the batch (mean of per-example terms), runs
/// backward, clips, and applies one optimizer step over the trainable
/// parameters. Throws on a non-finite loss.
template <class S>
StepResult train_step(Model<S>& model, const std::vector<TrainExample>& batch,
                      OptimizerState<S>& opt, const TrainOptions& options, Prng& dropout_rng);

/// The same forward losses without any parameter update; dropout off.
/// Used for validation and gradient checking.
template <class S>
Tensor<S> batch_training_loss(Model<S>& model, const std::vector<TrainExample>& batch,
                              const LossWeights& w, bool baseline_concat = false,
                              Prng* dropout_rng = nullptr);

/// Mean response NLL over examples, graph-free.
template <class S>
double mean_response_nll(Model<S>& model, const std::vector<TrainExample>& batch,
                         bool baseline_concat = false);

/// Decoder target for baseline mode: act tokens, the separator, then the
/// response (plain response when the turn is unlabeled).
std::vector<int> baseline_target(const TrainExample& ex);

}  // namespace latact
