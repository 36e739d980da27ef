#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "latact/policy.hpp"

using namespace latact;

namespace {

ModelConfig tiny_config(int vocab = 40) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.d_act = 8;
  c.n_heads = 2;
  c.n_encoder_layers = 1;
  c.n_decoder_layers = 1;
  c.n_policy_layers = 1;
  c.d_ff = 24;
  c.max_context = 24;
  c.max_response = 10;
  c.dropout = 0.0;
  c.act_heads = 2;
  c.max_act_tokens = 12;
  return c;
}

template <class S>
Model<S> tiny_model(std::uint64_t seed = 3, bool freeze = true) {
  Prng rng(seed);
  return Model<S>::init(tiny_config(), rng, freeze);
}

std::vector<TrainExample> tiny_batch(int n = 2) {
  std::vector<TrainExample> batch;
  for (int i = 0; i < n; ++i) {
    TrainExample ex;
    ex.context_ids = {4, 5, static_cast<int>(6 + i), 7};
    ex.db = i % 2 == 0 ? DbBucket::Two : DbBucket::Many;
    ex.response_ids = {8, static_cast<int>(9 + i), 10};
    ex.act_ids = {11, static_cast<int>(12 + i)};
    ex.labeled = true;
    ex.domain = "restaurant";
    batch.push_back(std::move(ex));
  }
  return batch;
}

template <class S>
std::vector<char> snapshot(Model<S>& m, const std::string& prefix) {
  std::vector<char> bytes;
  for (auto& p : m.parameters()) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    const char* d = reinterpret_cast<const char*>(p.tensor.data());
    bytes.insert(bytes.end(), d, d + p.tensor.numel() * sizeof(S));
  }
  return bytes;
}

}  // namespace

TEST_CASE("policy loss is the squared distance with a stopped teacher") {
  auto z = Tensor<double>::from_values({1, 2}, {0.0, 0.0}, true);
  auto zh = Tensor<double>::from_values({1, 2}, {1.0, 0.0}, true);
  auto loss = policy_loss(zh, z);
  CHECK(loss.item() == doctest::Approx(1.0));

  auto equal = policy_loss(z, z);
  CHECK(equal.item() == 0.0);

  backward(loss);
  CHECK(z.grad_vec()[0] == 0.0);  // teacher side is severed
  CHECK(z.grad_vec()[1] == 0.0);
  CHECK(zh.grad_vec()[0] == doctest::Approx(2.0));
}

TEST_CASE("policy loss gradient never reaches the act encoder") {
  auto m = tiny_model<double>(5, /*freeze=*/false);
  auto h = m.encode(TokenSequence::real({4, 5, 6}));
  auto z = m.encode_act_tokens({7, 8});
  auto pol = m.policy_forward(DbBucket::One, h, &z);
  auto lp = policy_loss(pol.z_hat, z);
  for (auto& p : m.parameters()) p.tensor.zero_grad();
  backward(lp);
  for (auto& p : m.parameters()) {
    if (p.name.rfind("act.", 0) != 0) continue;
    for (double g : p.tensor.grad_vec()) CHECK(g == 0.0);
  }
}

TEST_CASE("the act encoder still learns through the response path when unfrozen") {
  auto m = tiny_model<double>(5, /*freeze=*/false);
  auto h = m.encode(TokenSequence::real({4, 5, 6}));
  auto z = m.encode_act_tokens({7, 8});
  auto pol = m.policy_forward(DbBucket::One, h, &z);
  auto mem = concat(h, pol.h_policy, 0);
  auto logits = m.decode({1, 9}, mem);
  auto lr = response_loss(logits, {9, 2});
  for (auto& p : m.parameters()) p.tensor.zero_grad();
  backward(lr);
  double total = 0.0;
  for (auto& p : m.parameters()) {
    if (p.name.rfind("act.", 0) != 0) continue;
    for (double g : p.tensor.grad_vec()) total += std::abs(g);
  }
  CHECK(total > 0.0);
}

TEST_CASE("response loss reproduces hand-computed values") {
  // token id 0 is the padding id and is excluded, so gold ids start at 1

  // probability one on every gold token -> zero loss
  auto confident = Tensor<double>::from_values({2, 3}, {0, 100, 0, 0, 0, 100});
  CHECK(response_loss(confident, {1, 2}).item() == doctest::Approx(0.0).epsilon(1e-9));

  // uniform logits -> log V per token
  auto uniform = Tensor<double>::zeros({2, 5});
  CHECK(response_loss(uniform, {3, 1}).item() == doctest::Approx(std::log(5.0)));

  // independent scalar recomputation on a three-token case
  auto logits = Tensor<double>::from_values({3, 3}, {1.0, -1.0, 0.2, 0.5, 0.25, -0.7, -2.0, 0.0, 0.4});
  std::vector<int> targets = {2, 1, 1};
  double expected = 0.0;
  for (int i = 0; i < 3; ++i) {
    double z = 0.0;
    for (int j = 0; j < 3; ++j) z += std::exp(logits.at(i, j));
    expected -= (logits.at(i, targets[static_cast<std::size_t>(i)]) - std::log(z)) / 3.0;
  }
  CHECK(response_loss(logits, targets).item() == doctest::Approx(expected).epsilon(1e-12));

  // padding is excluded from the mean
  auto padded = Tensor<double>::from_values({2, 3}, {0, 1, 0, 9, 9, 9});
  std::vector<int> with_pad = {1, Vocabulary::kPad};
  auto only_first = response_loss(padded, with_pad);
  auto alone = response_loss(Tensor<double>::from_values({1, 3}, {0, 1, 0}), {1});
  CHECK(only_first.item() == doctest::Approx(alone.item()));
}

TEST_CASE("combined loss interpolates and hits both endpoints") {
  auto lp = Tensor<float>::scalar_value(0.2f);
  auto lr = Tensor<float>::scalar_value(1.0f);
  LossWeights w;
  w.alpha = 0.0;
  CHECK(combined_loss(lp, lr, w).item() == doctest::Approx(1.0));
  w.alpha = 1.0;
  CHECK(combined_loss(lp, lr, w).item() == doctest::Approx(0.2));
  w.alpha = 0.5;
  CHECK(combined_loss(lp, lr, w).item() == doctest::Approx(0.6));
  w.alpha = 1.5;
  CHECK_THROWS_AS(w.validate(), std::runtime_error);
}

TEST_CASE("alpha one starves the decoder of gradient exactly") {
  auto m = tiny_model<double>(9, /*freeze=*/true);
  auto batch = tiny_batch();
  LossWeights w;
  w.alpha = 1.0;
  auto loss = batch_training_loss(m, batch, w);
  for (auto& p : m.parameters(true)) p.tensor.zero_grad();
  backward(loss);
  for (auto& p : m.parameters(true)) {
    bool decoder_param = p.name.rfind("dec.", 0) == 0 || p.name == "lm_head" ||
                         p.name == "lm_bias" || p.name == "dec_pos";
    if (!decoder_param) continue;
    for (double g : p.tensor.grad_vec()) CHECK(g == 0.0);
  }
}

TEST_CASE("full training loss passes gradcheck on a two-example batch") {
  for (std::uint64_t seed : {1ull, 2ull}) {
    // frozen act encoder: the teacher z is constant, so every trainable
    // parameter is cleanly differentiable through the joint loss
    auto m = tiny_model<double>(seed, /*freeze=*/true);
    auto batch = tiny_batch();
    LossWeights w;
    w.alpha = 0.5;
    std::vector<Tensor<double>> points;
    for (auto& p : m.parameters(true)) points.push_back(p.tensor);
    CHECK(gradcheck([&] { return batch_training_loss(m, batch, w); }, points) < 1e-4);

    // unfrozen: act-encoder parameters flow only through the response term
    // (the policy term stops their gradient, so finite differences would
    // disagree there by construction)
    auto u = tiny_model<double>(seed, /*freeze=*/false);
    LossWeights response_only;
    response_only.alpha = 0.0;
    std::vector<Tensor<double>> act_points;
    for (auto& p : u.parameters()) {
      if (p.name.rfind("act.", 0) == 0) act_points.push_back(p.tensor);
    }
    CHECK(!act_points.empty());
    CHECK(gradcheck([&] { return batch_training_loss(u, batch, response_only); }, act_points) <
          1e-4);
  }
}

TEST_CASE("train_step reduces the loss on a tiny fixed batch") {
  auto m = tiny_model<float>(21);
  auto batch = tiny_batch(4);
  OptimizerState<float> opt;
  opt.lr = 3e-3;
  TrainOptions options;
  Prng drop(0);
  StepResult first = train_step(m, batch, opt, options, drop);
  StepResult last{};
  for (int i = 0; i < 49; ++i) last = train_step(m, batch, opt, options, drop);
  CHECK(last.loss < first.loss);
  CHECK(std::isfinite(last.l_policy));
  CHECK(std::isfinite(last.l_response));
}

TEST_CASE("training determinism: same seed, bitwise-identical parameters") {
  auto run = [] {
    auto m = tiny_model<float>(33);
    auto batch = tiny_batch(3);
    OptimizerState<float> opt;
    TrainOptions options;
    Prng drop(123);
    for (int i = 0; i < 10; ++i) train_step(m, batch, opt, options, drop);
    return snapshot(m, "");
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);
}

TEST_CASE("a frozen act encoder is bitwise unchanged by training") {
  auto m = tiny_model<float>(11, /*freeze=*/true);
  auto before = snapshot(m, "act.");
  auto batch = tiny_batch(3);
  OptimizerState<float> opt;
  TrainOptions options;
  Prng drop(7);
  for (int i = 0; i < 25; ++i) train_step(m, batch, opt, options, drop);
  CHECK(snapshot(m, "act.") == before);
  // while the rest of the model moved
  auto fresh = tiny_model<float>(11, true);
  CHECK(snapshot(m, "enc.") != snapshot(fresh, "enc."));
}

TEST_CASE("train_step aborts on a non-finite loss") {
  auto m = tiny_model<float>(2);
  for (auto& p : m.parameters()) {
    for (std::size_t i = 0; i < p.tensor.numel(); ++i) {
      p.tensor.data()[i] = std::numeric_limits<float>::quiet_NaN();
    }
  }
  auto batch = tiny_batch();
  OptimizerState<float> opt;
  TrainOptions options;
  Prng drop(0);
  CHECK_THROWS_AS(train_step(m, batch, opt, options, drop), std::runtime_error);
}

TEST_CASE("baseline mode trains without the policy branch") {
  auto m = tiny_model<float>(17);
  auto batch = tiny_batch(2);
  OptimizerState<float> opt;
  TrainOptions options;
  options.baseline_concat = true;
  Prng drop(5);
  auto before = snapshot(m, "pol.");
  StepResult first = train_step(m, batch, opt, options, drop);
  StepResult last{};
  for (int i = 0; i < 30; ++i) last = train_step(m, batch, opt, options, drop);
  CHECK(last.loss < first.loss);
  CHECK(first.l_policy == 0.0);
  CHECK(snapshot(m, "pol.") == before);  // the policy branch idles

  auto labeled = tiny_batch(1)[0];
  auto target = baseline_target(labeled);
  CHECK(target.size() == labeled.act_ids.size() + 1 + labeled.response_ids.size());
  CHECK(target[labeled.act_ids.size()] == Vocabulary::kSor);
  TrainExample unlabeled = labeled;
  unlabeled.labeled = false;
  CHECK(baseline_target(unlabeled) == unlabeled.response_ids);
}
