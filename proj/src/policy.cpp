#include "latact/policy.hpp"

#include <cmath>
#include <stdexcept>

namespace latact {

void LossWeights::validate() const {
  if (alpha < 0.0 || alpha > 1.0) {
    throw std::runtime_error("loss weights: alpha " + std::to_string(alpha) + " outside [0,1]");
  }
}

template <class S>
Tensor<S> policy_loss(const Tensor<S>& z_hat, const Tensor<S>& z) {
  if (z_hat.shape() != z.shape()) {
    throw std::runtime_error("policy loss: shapes differ, " + shape_str(z_hat.shape()) + " vs " +
                             shape_str(z.shape()));
  }
  return squared_l2(sub(z_hat, stop_gradient(z)));
}

template <class S>
Tensor<S> response_loss(const Tensor<S>& logits, const std::vector<int>& targets) {
  return cross_entropy_with_logits(logits, targets, Vocabulary::kPad);
}

template <class S>
Tensor<S> combined_loss(const Tensor<S>& l_policy, const Tensor<S>& l_response,
                        const LossWeights& w) {
  w.validate();
  return add(scale(l_policy, static_cast<S>(w.alpha)),
             scale(l_response, static_cast<S>(1.0 - w.alpha)));
}

std::vector<int> baseline_target(const TrainExample& ex) {
  std::vector<int> target;
  if (ex.labeled) {
    target = ex.act_ids;
    target.push_back(Vocabulary::kSor);
  }
  target.insert(target.end(), ex.response_ids.begin(), ex.response_ids.end());
  return target;
}

namespace {

template <class S>
struct ExampleLosses {
  Tensor<S> policy;
  Tensor<S> response;
};

template <class S>
ExampleLosses<S> example_losses(Model<S>& model, const TrainExample& ex, bool baseline,
                                Prng* drop) {
  ExampleLosses<S> out;
  if (baseline) {
    std::vector<int> ctx = ex.context_ids;
    ctx.insert(ctx.begin(), db_vocab_id(ex.db));
    Tensor<S> h_enc = model.encode(TokenSequence::real(ctx), drop);
    std::vector<int> target = baseline_target(ex);
    int keep = model.cfg.max_response;
    if (static_cast<int>(target.size()) > keep) target.resize(static_cast<std::size_t>(keep));
    std::vector<int> input = {Vocabulary::kBos};
    input.insert(input.end(), target.begin(), target.end());
    std::vector<int> shifted = target;
    shifted.push_back(Vocabulary::kEos);
    Tensor<S> logits = model.decode(input, h_enc, nullptr, drop);
    out.policy = Tensor<S>::scalar_value(S(0));
    out.response = response_loss(logits, shifted);
    return out;
  }
  Tensor<S> h_enc = model.encode(TokenSequence::real(ex.context_ids), drop);
  Tensor<S> z = model.encode_act_tokens(ex.act_ids);
  PolicyResult<S> pol = model.policy_forward(ex.db, h_enc, &z, drop);
  out.policy = policy_loss(pol.z_hat, z);
  Tensor<S> memory = concat(h_enc, pol.h_policy, 0);
  std::vector<int> target = ex.response_ids;
  int keep = model.cfg.max_response;
  if (static_cast<int>(target.size()) > keep) target.resize(static_cast<std::size_t>(keep));
  std::vector<int> input = {Vocabulary::kBos};
  input.insert(input.end(), target.begin(), target.end());
  std::vector<int> shifted = target;
  shifted.push_back(Vocabulary::kEos);
  Tensor<S> logits = model.decode(input, memory, nullptr, drop);
  out.response = response_loss(logits, shifted);
  return out;
}

}  // namespace

template <class S>
Tensor<S> batch_training_loss(Model<S>& model, const std::vector<TrainExample>& batch,
                              const LossWeights& w, bool baseline_concat, Prng* dropout_rng) {
  if (batch.empty()) throw std::runtime_error("training: empty batch");
  Tensor<S> lp, lr;
  for (const auto& ex : batch) {
    ExampleLosses<S> l = example_losses(model, ex, baseline_concat, dropout_rng);
    lp = lp.defined() ? add(lp, l.policy) : l.policy;
    lr = lr.defined() ? add(lr, l.response) : l.response;
  }
  S inv = static_cast<S>(1.0 / static_cast<double>(batch.size()));
  return combined_loss(scale(lp, inv), scale(lr, inv), w);
}

template <class S>
StepResult train_step(Model<S>& model, const std::vector<TrainExample>& batch,
                      OptimizerState<S>& opt, const TrainOptions& options, Prng& dropout_rng) {
  if (batch.empty()) throw std::runtime_error("train_step: empty batch");
  options.weights.validate();

  Tensor<S> lp, lr;
  for (const auto& ex : batch) {
    ExampleLosses<S> l = example_losses(model, ex, options.baseline_concat,
                                        model.cfg.dropout > 0.0 ? &dropout_rng : nullptr);
    lp = lp.defined() ? add(lp, l.policy) : l.policy;
    lr = lr.defined() ? add(lr, l.response) : l.response;
  }
  S inv = static_cast<S>(1.0 / static_cast<double>(batch.size()));
  Tensor<S> lp_mean = scale(lp, inv);
  Tensor<S> lr_mean = scale(lr, inv);
  Tensor<S> total = combined_loss(lp_mean, lr_mean, options.weights);

  StepResult r;
  r.loss = static_cast<double>(total.item());
  r.l_policy = static_cast<double>(lp_mean.item());
  r.l_response = static_cast<double>(lr_mean.item());
  if (!std::isfinite(r.loss)) {
    throw std::runtime_error("train_step: non-finite loss " + std::to_string(r.loss) +
                             " (policy " + std::to_string(r.l_policy) + ", response " +
                             std::to_string(r.l_response) + ")");
  }

  auto params = model.parameters(/*trainable_only=*/true);
  for (auto& p : params) p.tensor.zero_grad();
  backward(total);
  r.grad_norm = options.clip_norm > 0.0 ? clip_grad_norm(params, options.clip_norm) : 0.0;
  adam_step(params, opt);
  return r;
}

template <class S>
double mean_response_nll(Model<S>& model, const std::vector<TrainExample>& batch,
                         bool baseline_concat) {
  if (batch.empty()) throw std::runtime_error("mean_response_nll: empty batch");
  NoGradGuard ng;
  double total = 0.0;
  for (const auto& ex : batch) {
    ExampleLosses<S> l = example_losses(model, ex, baseline_concat, nullptr);
    total += static_cast<double>(l.response.item());
  }
  return total / static_cast<double>(batch.size());
}

#define LATACT_INSTANTIATE(S)                                                             \
  template Tensor<S> policy_loss(const Tensor<S>&, const Tensor<S>&);                     \
  template Tensor<S> response_loss(const Tensor<S>&, const std::vector<int>&);            \
  template Tensor<S> combined_loss(const Tensor<S>&, const Tensor<S>&, const LossWeights&); \
  template Tensor<S> batch_training_loss(Model<S>&, const std::vector<TrainExample>&,     \
                                         const LossWeights&, bool, Prng*);                \
  template StepResult train_step(Model<S>&, const std::vector<TrainExample>&,             \
                                 OptimizerState<S>&, const TrainOptions&, Prng&);         \
  template double mean_response_nll(Model<S>&, const std::vector<TrainExample>&, bool);

LATACT_INSTANTIATE(float)
LATACT_INSTANTIATE(double)

#undef LATACT_INSTANTIATE

}  // namespace latact
