#include "latact/transformer.hpp"

#include "latact/acts.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace latact {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw std::runtime_error(std::string("config: ") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(d_act, "d_act");
  positive(n_heads, "n_heads");
  positive(n_encoder_layers, "n_encoder_layers");
  positive(n_decoder_layers, "n_decoder_layers");
  positive(n_policy_layers, "n_policy_layers");
  positive(d_ff, "d_ff");
  positive(max_context, "max_context");
  positive(max_response, "max_response");
  positive(act_heads, "act_heads");
  positive(max_act_tokens, "max_act_tokens");
  if (d_model % n_heads != 0) {
    throw std::runtime_error("config: d_model " + std::to_string(d_model) +
                             " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (d_act % act_heads != 0) {
    throw std::runtime_error("config: d_act not divisible by act_heads");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw std::runtime_error("config: dropout must be in [0,1)");
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_pairs() const {
  return {
      {"vocab_size", std::to_string(vocab_size)},
      {"d_model", std::to_string(d_model)},
      {"d_act", std::to_string(d_act)},
      {"n_heads", std::to_string(n_heads)},
      {"n_encoder_layers", std::to_string(n_encoder_layers)},
      {"n_decoder_layers", std::to_string(n_decoder_layers)},
      {"n_policy_layers", std::to_string(n_policy_layers)},
      {"d_ff", std::to_string(d_ff)},
      {"max_context", std::to_string(max_context)},
      {"max_response", std::to_string(max_response)},
      {"dropout", std::to_string(dropout)},
      {"act_heads", std::to_string(act_heads)},
      {"max_act_tokens", std::to_string(max_act_tokens)},
  };
}

ModelConfig ModelConfig::from_pairs(const std::vector<std::pair<std::string, std::string>>& kv) {
  ModelConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "vocab_size") c.vocab_size = std::stoi(v);
    else if (k == "d_model") c.d_model = std::stoi(v);
    else if (k == "d_act") c.d_act = std::stoi(v);
    else if (k == "n_heads") c.n_heads = std::stoi(v);
    else if (k == "n_encoder_layers") c.n_encoder_layers = std::stoi(v);
    else if (k == "n_decoder_layers") c.n_decoder_layers = std::stoi(v);
    else if (k == "n_policy_layers") c.n_policy_layers = std::stoi(v);
    else if (k == "d_ff") c.d_ff = std::stoi(v);
    else if (k == "max_context") c.max_context = std::stoi(v);
    else if (k == "max_response") c.max_response = std::stoi(v);
    else if (k == "dropout") c.dropout = std::stod(v);
    else if (k == "act_heads") c.act_heads = std::stoi(v);
    else if (k == "max_act_tokens") c.max_act_tokens = std::stoi(v);
    else throw std::runtime_error("config: unknown model key " + k);
  }
  c.validate();
  return c;
}

TokenSequence TokenSequence::real(std::vector<int> ids) {
  TokenSequence t;
  t.mask.assign(ids.size(), 1);
  t.ids = std::move(ids);
  return t;
}

TokenSequence TokenSequence::padded(std::vector<int> ids, int n_real) {
  if (n_real < 0 || n_real > static_cast<int>(ids.size())) {
    throw std::runtime_error("token sequence: n_real out of range");
  }
  TokenSequence t;
  t.mask.assign(ids.size(), 0);
  for (int i = 0; i < n_real; ++i) t.mask[static_cast<std::size_t>(i)] = 1;
  t.ids = std::move(ids);
  return t;
}

int TokenSequence::n_real() const {
  int n = 0;
  for (auto m : mask) n += m != 0;
  return n;
}

DbBucket db_bucket_token(int match_count) {
  if (match_count < 0) throw std::runtime_error("db bucket: negative match count");
  if (match_count <= 3) return static_cast<DbBucket>(match_count);
  return DbBucket::Many;
}

int db_bucket_index(DbBucket b) { return static_cast<int>(b); }

int db_vocab_id(DbBucket b) { return Vocabulary::kDb0 + static_cast<int>(b); }

// ---------------------------------------------------------------------------

namespace {

template <class S>
LayerNormParams<S> init_ln(int n, bool rg) {
  LayerNormParams<S> p;
  p.gain = Tensor<S>::from_values({1, n}, std::vector<S>(static_cast<std::size_t>(n), S(1)), rg);
  p.bias = Tensor<S>::zeros({1, n}, rg);
  return p;
}

template <class S>
AttentionParams<S> init_attn(int d, Prng& rng, bool rg) {
  double std = 0.02;
  AttentionParams<S> p;
  p.wq = Tensor<S>::randn({d, d}, rng, std, rg);
  p.wk = Tensor<S>::randn({d, d}, rng, std, rg);
  p.wv = Tensor<S>::randn({d, d}, rng, std, rg);
  p.wo = Tensor<S>::randn({d, d}, rng, std, rg);
  return p;
}

template <class S>
FeedForward<S> init_ff(int d, int d_ff, Prng& rng, bool rg) {
  double std = 0.02;
  FeedForward<S> p;
  p.w1 = Tensor<S>::randn({d, d_ff}, rng, std, rg);
  p.b1 = Tensor<S>::zeros({1, d_ff}, rg);
  p.w2 = Tensor<S>::randn({d_ff, d}, rng, std, rg);
  p.b2 = Tensor<S>::zeros({1, d}, rg);
  return p;
}

template <class S>
EncoderLayer<S> init_enc_layer(int d, int d_ff, Prng& rng, bool rg) {
  EncoderLayer<S> l;
  l.ln1 = init_ln<S>(d, rg);
  l.attn = init_attn<S>(d, rng, rg);
  l.ln2 = init_ln<S>(d, rg);
  l.ff = init_ff<S>(d, d_ff, rng, rg);
  return l;
}

template <class S>
DecoderLayer<S> init_dec_layer(int d, int d_ff, Prng& rng, bool rg) {
  DecoderLayer<S> l;
  l.ln1 = init_ln<S>(d, rg);
  l.self_attn = init_attn<S>(d, rng, rg);
  l.ln2 = init_ln<S>(d, rg);
  l.cross_attn = init_attn<S>(d, rng, rg);
  l.ln3 = init_ln<S>(d, rg);
  l.ff = init_ff<S>(d, d_ff, rng, rg);
  return l;
}

std::vector<int> iota_ids(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

AttentionMask mask_from_valid(int tq, const std::vector<std::uint8_t>& key_valid) {
  AttentionMask m;
  m.rows = tq;
  m.cols = static_cast<int>(key_valid.size());
  m.allow.assign(static_cast<std::size_t>(m.rows) * m.cols, 0);
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) {
      m.allow[static_cast<std::size_t>(i) * m.cols + j] = key_valid[static_cast<std::size_t>(j)];
    }
  }
  return m;
}

AttentionMask self_mask_from_token_mask(const std::vector<std::uint8_t>& tok_mask) {
  int n = static_cast<int>(tok_mask.size());
  AttentionMask m;
  m.rows = n;
  m.cols = n;
  m.allow.assign(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    if (!tok_mask[static_cast<std::size_t>(i)]) continue;
    for (int j = 0; j < n; ++j) {
      m.allow[static_cast<std::size_t>(i) * n + j] = tok_mask[static_cast<std::size_t>(j)];
    }
  }
  return m;
}

template <class S>
Tensor<S> maybe_dropout(const Tensor<S>& x, double rate, Prng* rng) {
  if (rng == nullptr || rate <= 0.0) return x;
  return dropout(x, rate, *rng);
}

template <class S>
Tensor<S> feed_forward(const Tensor<S>& x, const FeedForward<S>& ff) {
  Tensor<S> h = add_bias(matmul(x, ff.w1), ff.b1);
  h = gelu(h);
  return add_bias(matmul(h, ff.w2), ff.b2);
}

template <class S>
Tensor<S> self_attention_block(const Tensor<S>& x, const AttentionParams<S>& p, int heads,
                               const AttentionMask& mask) {
  Tensor<S> q = matmul(x, p.wq);
  Tensor<S> k = matmul(x, p.wk);
  Tensor<S> v = matmul(x, p.wv);
  return matmul(multi_head_attention(q, k, v, heads, mask), p.wo);
}

template <class S>
Tensor<S> cross_attention_block(const Tensor<S>& x, const Tensor<S>& memory,
                                const AttentionParams<S>& p, int heads,
                                const AttentionMask& mask) {
  Tensor<S> q = matmul(x, p.wq);
  Tensor<S> k = matmul(memory, p.wk);
  Tensor<S> v = matmul(memory, p.wv);
  return matmul(multi_head_attention(q, k, v, heads, mask), p.wo);
}

template <class S>
Tensor<S> decoder_stack(const Tensor<S>& input, const Tensor<S>& memory,
                        const std::vector<DecoderLayer<S>>& layers,
                        const LayerNormParams<S>& final_ln, int heads,
                        const AttentionMask& self_mask, const AttentionMask& cross,
                        double drop_rate, Prng* drop) {
  Tensor<S> x = input;
  for (const auto& l : layers) {
    Tensor<S> a = self_attention_block(layer_norm(x, l.ln1.gain, l.ln1.bias), l.self_attn, heads,
                                       self_mask);
    x = add(x, maybe_dropout(a, drop_rate, drop));
    Tensor<S> c = cross_attention_block(layer_norm(x, l.ln2.gain, l.ln2.bias), memory,
                                        l.cross_attn, heads, cross);
    x = add(x, maybe_dropout(c, drop_rate, drop));
    Tensor<S> f = feed_forward(layer_norm(x, l.ln3.gain, l.ln3.bias), l.ff);
    x = add(x, maybe_dropout(f, drop_rate, drop));
  }
  return layer_norm(x, final_ln.gain, final_ln.bias);
}

}  // namespace

template <class S>
Model<S> Model<S>::init(const ModelConfig& cfg, Prng& rng, bool freeze_act_encoder) {
  cfg.validate();
  Model<S> m;
  m.cfg = cfg;
  double std = 0.02;
  int d = cfg.d_model;

  m.tok_emb = Tensor<S>::randn({cfg.vocab_size, d}, rng, std, true);
  m.enc_pos = Tensor<S>::randn({cfg.max_context, d}, rng, std, true);
  m.dec_pos = Tensor<S>::randn({cfg.max_response + 1, d}, rng, std, true);
  for (int i = 0; i < cfg.n_encoder_layers; ++i) {
    m.encoder.push_back(init_enc_layer<S>(d, cfg.d_ff, rng, true));
  }
  m.enc_final = init_ln<S>(d, true);
  for (int i = 0; i < cfg.n_decoder_layers; ++i) {
    m.decoder.push_back(init_dec_layer<S>(d, cfg.d_ff, rng, true));
  }
  m.dec_final = init_ln<S>(d, true);
  m.lm_head = Tensor<S>::randn({d, cfg.vocab_size}, rng, std, true);
  m.lm_bias = Tensor<S>::zeros({1, cfg.vocab_size}, true);

  m.db_emb = Tensor<S>::randn({6, d}, rng, std, true);
  m.policy_pos = Tensor<S>::randn({2, d}, rng, std, true);
  m.w_in = Tensor<S>::randn({cfg.d_act, d}, rng, std, true);
  for (int i = 0; i < cfg.n_policy_layers; ++i) {
    m.policy.push_back(init_dec_layer<S>(d, cfg.d_ff, rng, true));
  }
  m.policy_final = init_ln<S>(d, true);
  m.w_out = Tensor<S>::randn({d, cfg.d_act}, rng, std, true);

  bool rg = !freeze_act_encoder;
  m.act_encoder_frozen = freeze_act_encoder;
  m.act_tok_emb = Tensor<S>::randn({cfg.vocab_size, cfg.d_act}, rng, std, rg);
  m.act_pos = Tensor<S>::randn({cfg.max_act_tokens, cfg.d_act}, rng, std, rg);
  m.act_layer = init_enc_layer<S>(cfg.d_act, cfg.d_act * 2, rng, rg);
  m.act_final = init_ln<S>(cfg.d_act, rg);
  return m;
}

template <class S>
Tensor<S> Model<S>::encode(const TokenSequence& context, Prng* drop) const {
  if (context.ids.empty()) throw std::runtime_error("encoder: empty context");
  for (int id : context.ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw std::runtime_error("encoder: token id " + std::to_string(id) + " out of vocabulary");
    }
  }
  TokenSequence ctx = context;
  if (ctx.length() > cfg.max_context) {
    // keep the most recent tokens
    int cut = ctx.length() - cfg.max_context;
    ctx.ids.erase(ctx.ids.begin(), ctx.ids.begin() + cut);
    ctx.mask.erase(ctx.mask.begin(), ctx.mask.begin() + cut);
  }
  int t = ctx.length();
  Tensor<S> x = add(embedding_lookup(tok_emb, ctx.ids), embedding_lookup(enc_pos, iota_ids(t)));
  x = maybe_dropout(x, cfg.dropout, drop);
  AttentionMask mask = self_mask_from_token_mask(ctx.mask);
  for (const auto& l : encoder) {
    Tensor<S> a = self_attention_block(layer_norm(x, l.ln1.gain, l.ln1.bias), l.attn, cfg.n_heads,
                                       mask);
    x = add(x, maybe_dropout(a, cfg.dropout, drop));
    Tensor<S> f = feed_forward(layer_norm(x, l.ln2.gain, l.ln2.bias), l.ff);
    x = add(x, maybe_dropout(f, cfg.dropout, drop));
  }
  return layer_norm(x, enc_final.gain, enc_final.bias);
}

template <class S>
Tensor<S> Model<S>::decode(const std::vector<int>& prefix, const Tensor<S>& memory,
                           const std::vector<std::uint8_t>* mem_valid, Prng* drop) const {
  if (!memory.defined() || memory.rows() == 0) {
    throw std::runtime_error("decoder: empty memory");
  }
  if (prefix.empty()) throw std::runtime_error("decoder: empty prefix");
  int t = static_cast<int>(prefix.size());
  if (t > cfg.max_response + 1) {
    throw std::runtime_error("decoder: prefix length " + std::to_string(t) +
                             " exceeds max_response + 1");
  }
  Tensor<S> x = add(embedding_lookup(tok_emb, prefix), embedding_lookup(dec_pos, iota_ids(t)));
  x = maybe_dropout(x, cfg.dropout, drop);
  AttentionMask cross = mem_valid
                            ? mask_from_valid(t, *mem_valid)
                            : AttentionMask::full(t, memory.rows());
  Tensor<S> h = decoder_stack(x, memory, decoder, dec_final, cfg.n_heads,
                              AttentionMask::causal(t), cross, cfg.dropout, drop);
  return add_bias(matmul(h, lm_head), lm_bias);
}

template <class S>
PolicyResult<S> Model<S>::policy_forward(DbBucket db, const Tensor<S>& h_encoder,
                                         const Tensor<S>* z, Prng* drop,
                                         const std::vector<std::uint8_t>* enc_valid) const {
  if (!h_encoder.defined() || h_encoder.rows() == 0) {
    throw std::runtime_error("policy: empty encoder states");
  }
  if (z != nullptr && (z->rows() != 1 || z->cols() != cfg.d_act)) {
    throw std::runtime_error("policy: teacher z has shape " + shape_str(z->shape()) +
                             ", expected [1," + std::to_string(cfg.d_act) + "]");
  }
  Tensor<S> x0 = embedding_lookup(db_emb, std::vector<int>{db_bucket_index(db)});
  int n_rows = z == nullptr ? 1 : 2;
  Tensor<S> x;
  if (z == nullptr) {
    x = add(x0, embedding_lookup(policy_pos, std::vector<int>{0}));
  } else {
    Tensor<S> x1 = matmul(*z, w_in);
    x = add(concat(x0, x1, 0), embedding_lookup(policy_pos, iota_ids(2)));
  }
  x = maybe_dropout(x, cfg.dropout, drop);
  AttentionMask cross = enc_valid ? mask_from_valid(n_rows, *enc_valid)
                                  : AttentionMask::full(n_rows, h_encoder.rows());
  Tensor<S> h = decoder_stack(x, h_encoder, policy, policy_final, cfg.n_heads,
                              AttentionMask::policy(n_rows), cross, cfg.dropout, drop);
  PolicyResult<S> out;
  out.h_policy = h;
  out.z_hat = l2_normalize_rows(matmul(slice_rows(h, 0, 1), w_out));
  return out;
}

template <class S>
std::vector<int> Model<S>::act_encoder_tokenize(const Vocabulary& vocab,
                                                const std::string& text) {
  static const std::set<std::string> kStopwords = {
      "the", "a", "an", "is", "are", "am", "i", "you", "it", "in",
      "of",  "for", "to", "and", ".", ",", "!"};
  std::vector<std::string> raw = split_words(text);
  std::vector<std::string> words;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    std::string word = raw[i];
    bool bracketed = word.size() > 2 && word.front() == '[' && word.back() == ']';
    if (bracketed) {
      word = word.substr(1, word.size() - 2);
      // domain markers (a bracketed token right before a bracketed act
      // type) stay out: the embedding is domain-agnostic
      if (!is_act_type_name(word) && i + 1 < raw.size() && raw[i + 1].size() > 2 &&
          raw[i + 1].front() == '[' && is_act_type_name(raw[i + 1].substr(1, raw[i + 1].size() - 2))) {
        continue;
      }
    }
    // slot-name canonicalization: the surface bigram equals the slot token
    if (word == "range" && !words.empty() && words.back() == "price") {
      words.back() = "pricerange";
      continue;
    }
    words.push_back(word);
  }
  std::vector<int> ids, all_ids;
  for (const auto& w : words) {
    all_ids.push_back(vocab.id(w));
    if (!kStopwords.count(w)) ids.push_back(vocab.id(w));
  }
  // an all-stopword string still needs an embedding
  return ids.empty() ? all_ids : ids;
}

template <class S>
Tensor<S> Model<S>::encode_act_tokens(const std::vector<int>& ids) const {
  if (ids.empty()) throw std::runtime_error("act encoder: empty token sequence");
  std::vector<int> kept = ids;
  if (static_cast<int>(kept.size()) > cfg.max_act_tokens) {
    kept.resize(static_cast<std::size_t>(cfg.max_act_tokens));
  }
  int t = static_cast<int>(kept.size());
  Tensor<S> x = add(embedding_lookup(act_tok_emb, kept), embedding_lookup(act_pos, iota_ids(t)));
  AttentionMask mask = AttentionMask::full(t, t);
  Tensor<S> a = self_attention_block(layer_norm(x, act_layer.ln1.gain, act_layer.ln1.bias),
                                     act_layer.attn, cfg.act_heads, mask);
  x = add(x, a);
  Tensor<S> f = feed_forward(layer_norm(x, act_layer.ln2.gain, act_layer.ln2.bias), act_layer.ff);
  x = add(x, f);
  x = layer_norm(x, act_final.gain, act_final.bias);
  return l2_normalize_rows(mean_rows(x));
}

template <class S>
std::vector<NamedTensor<S>> Model<S>::parameters(bool trainable_only) {
  std::vector<NamedTensor<S>> out;
  auto put = [&out](const std::string& name, Tensor<S>& t) { out.push_back({name, t}); };
  auto put_ln = [&put](const std::string& p, LayerNormParams<S>& ln) {
    put(p + ".g", ln.gain);
    put(p + ".b", ln.bias);
  };
  auto put_attn = [&put](const std::string& p, AttentionParams<S>& a) {
    put(p + ".wq", a.wq);
    put(p + ".wk", a.wk);
    put(p + ".wv", a.wv);
    put(p + ".wo", a.wo);
  };
  auto put_ff = [&put](const std::string& p, FeedForward<S>& f) {
    put(p + ".w1", f.w1);
    put(p + ".b1", f.b1);
    put(p + ".w2", f.w2);
    put(p + ".b2", f.b2);
  };

  put("tok_emb", tok_emb);
  put("enc_pos", enc_pos);
  put("dec_pos", dec_pos);
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    std::string p = "enc." + std::to_string(i);
    put_ln(p + ".ln1", encoder[i].ln1);
    put_attn(p + ".attn", encoder[i].attn);
    put_ln(p + ".ln2", encoder[i].ln2);
    put_ff(p + ".ff", encoder[i].ff);
  }
  put_ln("enc.final", enc_final);
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    std::string p = "dec." + std::to_string(i);
    put_ln(p + ".ln1", decoder[i].ln1);
    put_attn(p + ".self", decoder[i].self_attn);
    put_ln(p + ".ln2", decoder[i].ln2);
    put_attn(p + ".cross", decoder[i].cross_attn);
    put_ln(p + ".ln3", decoder[i].ln3);
    put_ff(p + ".ff", decoder[i].ff);
  }
  put_ln("dec.final", dec_final);
  put("lm_head", lm_head);
  put("lm_bias", lm_bias);

  put("pol.db_emb", db_emb);
  put("pol.pos", policy_pos);
  put("pol.w_in", w_in);
  for (std::size_t i = 0; i < policy.size(); ++i) {
    std::string p = "pol." + std::to_string(i);
    put_ln(p + ".ln1", policy[i].ln1);
    put_attn(p + ".self", policy[i].self_attn);
    put_ln(p + ".ln2", policy[i].ln2);
    put_attn(p + ".cross", policy[i].cross_attn);
    put_ln(p + ".ln3", policy[i].ln3);
    put_ff(p + ".ff", policy[i].ff);
  }
  put_ln("pol.final", policy_final);
  put("pol.w_out", w_out);

  if (!(trainable_only && act_encoder_frozen)) {
    put("act.tok_emb", act_tok_emb);
    put("act.pos", act_pos);
    put_ln("act.ln1", act_layer.ln1);
    put_attn("act.attn", act_layer.attn);
    put_ln("act.ln2", act_layer.ln2);
    put_ff("act.ff", act_layer.ff);
    put_ln("act.final", act_final);
  }
  return out;
}

template <class S>
std::size_t Model<S>::parameter_count() {
  std::size_t n = 0;
  for (auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <class S>
std::vector<int> greedy_decode(const Model<S>& model, const Tensor<S>& memory,
                               const std::vector<std::uint8_t>* mem_valid, int max_len) {
  NoGradGuard ng;
  std::vector<int> prefix = {Vocabulary::kBos};
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    Tensor<S> logits = model.decode(prefix, memory, mem_valid, nullptr);
    int last = logits.rows() - 1;
    int best = 0;
    S best_v = logits.at(last, 0);
    for (int j = 1; j < logits.cols(); ++j) {
      S v = logits.at(last, j);
      if (v > best_v) {
        best_v = v;
        best = j;
      }
    }
    if (best == Vocabulary::kEos) break;
    out.push_back(best);
    prefix.push_back(best);
    if (static_cast<int>(prefix.size()) > model.cfg.max_response) break;
  }
  return out;
}

template struct Model<float>;
template struct Model<double>;
template std::vector<int> greedy_decode(const Model<float>&, const Tensor<float>&,
                                        const std::vector<std::uint8_t>*, int);
template std::vector<int> greedy_decode(const Model<double>&, const Tensor<double>&,
                                        const std::vector<std::uint8_t>*, int);

}  // namespace latact
