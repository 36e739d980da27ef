#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latact/tensor.hpp"
#include "latact/vocab.hpp"

namespace latact {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int d_act = 32;
  int n_heads = 4;
  int n_encoder_layers = 2;
  int n_decoder_layers = 2;
  int n_policy_layers = 2;
  int d_ff = 128;
  int max_context = 96;
  int max_response = 24;
  double dropout = 0.1;
  int act_heads = 2;
  int max_act_tokens = 48;

  void validate() const;
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  static ModelConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& kv);
};

/// Token ids plus a same-length padding mask (1 = real token).
struct TokenSequence {
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;

  static TokenSequence real(std::vector<int> ids);
  static TokenSequence padded(std::vector<int> ids, int n_real);
  int length() const { return static_cast<int>(ids.size()); }
  int n_real() const;
};

/// Database-result buckets fed to the policy branch as a single input token.
enum class DbBucket { Zero = 0, One = 1, Two = 2, Three = 3, Many = 4, NoDb = 5 };

/// Monotone bucketing: 0..3 map to themselves, anything larger to Many.
DbBucket db_bucket_token(int match_count);
int db_bucket_index(DbBucket b);
/// Vocabulary token id for the bucket (baseline mode puts it in the context).
int db_vocab_id(DbBucket b);

template <class S>
struct LayerNormParams {
  Tensor<S> gain, bias;
};

template <class S>
struct AttentionParams {
  Tensor<S> wq, wk, wv, wo;
};

template <class S>
struct FeedForward {
  Tensor<S> w1, b1, w2, b2;
};

template <class S>
struct EncoderLayer {
  LayerNormParams<S> ln1;
  AttentionParams<S> attn;
  LayerNormParams<S> ln2;
  FeedForward<S> ff;
};

template <class S>
struct DecoderLayer {
  LayerNormParams<S> ln1;
  AttentionParams<S> self_attn;
  LayerNormParams<S> ln2;
  AttentionParams<S> cross_attn;
  LayerNormParams<S> ln3;
  FeedForward<S> ff;
};

template <class S>
struct PolicyResult {
  Tensor<S> z_hat;     // [1, d_act], unit norm
  Tensor<S> h_policy;  // [1 or 2, d_model]
};

/// The full parameter set: encoder-decoder backbone, the act-prediction
/// (policy) branch with its own parameters, and a small act-text encoder.
/// Forward passes never mutate parameters, so a frozen model may serve
/// concurrent readers; training mutates in place and is single-threaded.
template <class S>
struct Model {
  ModelConfig cfg;

  Tensor<S> tok_emb;  // [V, d_model], shared by encoder and decoder inputs
  Tensor<S> enc_pos;
  Tensor<S> dec_pos;
  std::vector<EncoderLayer<S>> encoder;
  LayerNormParams<S> enc_final;
  std::vector<DecoderLayer<S>> decoder;
  LayerNormParams<S> dec_final;
  Tensor<S> lm_head;  // [d_model, V]
  Tensor<S> lm_bias;  // [1, V]

  Tensor<S> db_emb;      // [6, d_model]
  Tensor<S> policy_pos;  // [2, d_model]
  Tensor<S> w_in;        // [d_act, d_model]
  std::vector<DecoderLayer<S>> policy;
  LayerNormParams<S> policy_final;
  Tensor<S> w_out;  // [d_model, d_act]

  bool act_encoder_frozen = true;
  Tensor<S> act_tok_emb;  // [V, d_act]
  Tensor<S> act_pos;      // [max_act_tokens, d_act]
  EncoderLayer<S> act_layer;
  LayerNormParams<S> act_final;

  static Model init(const ModelConfig& cfg, Prng& rng, bool freeze_act_encoder = true);

  /// Hidden states over the context, one row per kept token. Inputs longer
  /// than max_context are truncated from the front (oldest turns first).
  /// Padded positions receive and contribute no attention.
  Tensor<S> encode(const TokenSequence& context, Prng* drop = nullptr) const;

  /// Next-token logits over the response prefix. Self-attention is causal;
  /// cross-attention covers the memory columns marked valid (all of them
  /// when mem_valid is null).
  Tensor<S> decode(const std::vector<int>& prefix, const Tensor<S>& memory,
                   const std::vector<std::uint8_t>* mem_valid = nullptr,
                   Prng* drop = nullptr) const;

  /// Predicts the latent act vector from the db bucket and encoder states;
  /// optionally processes a teacher-forced z as a second position. The
  /// unidirectional mask makes z_hat independent of z.
  PolicyResult<S> policy_forward(DbBucket db, const Tensor<S>& h_encoder,
                                 const Tensor<S>* z = nullptr, Prng* drop = nullptr,
                                 const std::vector<std::uint8_t>* enc_valid = nullptr) const;

  /// Unit-norm act embedding of a token sequence (canonical act string or a
  /// delexicalized response). Throws on an empty sequence.
  Tensor<S> encode_act_tokens(const std::vector<int>& ids) const;

  /// Tokenization for the act encoder: bracketed tokens are reduced to
  /// their bare words ("[inform]" and "inform", "[phone]" and "phone"
  /// share an embedding), so act strings and delexicalized responses meet
  /// in one space.
  static std::vector<int> act_encoder_tokenize(const Vocabulary& vocab, const std::string& text);

  /// Stable, deterministic parameter enumeration. When trainable_only is
  /// set, frozen act-encoder parameters are excluded.
  std::vector<NamedTensor<S>> parameters(bool trainable_only = false);

  /// Total number of scalar parameters.
  std::size_t parameter_count();
};

/// Greedy decoding: argmax token by token (ties -> lowest id) until the end
/// token or max_len tokens. Returns the response ids without bos/eos.
template <class S>
std::vector<int> greedy_decode(const Model<S>& model, const Tensor<S>& memory,
                               const std::vector<std::uint8_t>* mem_valid, int max_len);

using ModelF = Model<float>;
using ModelD = Model<double>;

}  // namespace latact
