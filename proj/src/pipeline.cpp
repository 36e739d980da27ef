#include "latact/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

namespace latact {

// ---------------------------------------------------------------------------
// Training configuration

void TrainConfig::validate() const {
  model.validate();
  if (alpha < 0.0 || alpha > 1.0) throw std::runtime_error("config: alpha outside [0,1]");
  if (lr <= 0.0) throw std::runtime_error("config: lr must be positive");
  if (batch_size < 1) throw std::runtime_error("config: batch_size must be >= 1");
  if (steps < 1) throw std::runtime_error("config: steps must be >= 1");
  if (val_every < 1) throw std::runtime_error("config: val_every must be >= 1");
  if (regime != "mixed" && regime != "labeled" && regime != "unlabeled") {
    throw std::runtime_error("config: regime must be mixed, labeled or unlabeled");
  }
}

TrainConfig TrainConfig::from_pairs(const std::vector<std::pair<std::string, std::string>>& kv) {
  TrainConfig c;
  std::vector<std::pair<std::string, std::string>> model_kv;
  auto parse_bool = [](const std::string& k, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw std::runtime_error("config: " + k + " must be a boolean, got '" + v + "'");
  };
  for (const auto& [k, v] : kv) {
    if (k == "alpha") c.alpha = std::stod(v);
    else if (k == "lr") c.lr = std::stod(v);
    else if (k == "batch_size") c.batch_size = std::stoi(v);
    else if (k == "steps") c.steps = std::stoi(v);
    else if (k == "freeze_act_encoder") c.freeze_act_encoder = parse_bool(k, v);
    else if (k == "baseline_concat") c.baseline_concat = parse_bool(k, v);
    else if (k == "seed") c.seed = std::stoull(v);
    else if (k == "regime") c.regime = v;
    else if (k == "val_every") c.val_every = std::stoi(v);
    else if (k == "clip_norm") c.clip_norm = std::stod(v);
    else model_kv.push_back({k, v});  // model keys validated there; unknown keys rejected there
  }
  if (!model_kv.empty()) {
    ModelConfig base;  // keep defaults for unset model keys
    std::vector<std::pair<std::string, std::string>> merged = base.to_pairs();
    for (const auto& [k, v] : model_kv) {
      bool known = false;
      for (auto& [mk, mv] : merged) {
        if (mk == k) {
          mv = v;
          known = true;
          break;
        }
      }
      if (!known && k != "vocab_size") {
        throw std::runtime_error("config: unknown key '" + k + "'");
      }
    }
    // vocab_size is derived from the corpus later; keep a placeholder
    for (auto& [mk, mv] : merged) {
      if (mk == "vocab_size") mv = "1";
    }
    c.model = ModelConfig::from_pairs(merged);
    c.model.vocab_size = 0;
  }
  return c;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot read " + path);
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::string trimmed = trim(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    auto eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: line " + std::to_string(lineno) + " is not key=value");
    }
    kv.push_back({trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1))});
  }
  return from_pairs(kv);
}

std::map<std::string, std::string> TrainConfig::to_meta() const {
  std::map<std::string, std::string> m;
  m["alpha"] = std::to_string(alpha);
  m["lr"] = std::to_string(lr);
  m["batch_size"] = std::to_string(batch_size);
  m["steps"] = std::to_string(steps);
  m["freeze_act_encoder"] = freeze_act_encoder ? "1" : "0";
  m["baseline_concat"] = baseline_concat ? "1" : "0";
  m["seed"] = std::to_string(seed);
  m["regime"] = regime;
  return m;
}

// ---------------------------------------------------------------------------
// Example construction

std::vector<int> build_context_ids(const Vocabulary& vocab, const DialogueRecord& dialogue,
                                   std::size_t turn_idx) {
  if (turn_idx >= dialogue.turns.size()) {
    throw std::runtime_error("context: turn index out of range");
  }
  std::vector<int> ids;
  for (std::size_t i = 0; i < turn_idx; ++i) {
    ids.push_back(Vocabulary::kUsr);
    for (int t : vocab.encode(dialogue.turns[i].user)) ids.push_back(t);
    ids.push_back(Vocabulary::kSys);
    for (int t : vocab.encode(dialogue.turns[i].response)) ids.push_back(t);
  }
  ids.push_back(Vocabulary::kUsr);
  for (int t : vocab.encode(dialogue.turns[turn_idx].user)) ids.push_back(t);
  return ids;
}

TrainExample make_example(const Vocabulary& vocab, const DialogueRecord& dialogue,
                          std::size_t turn_idx) {
  const TurnRecord& turn = dialogue.turns.at(turn_idx);
  TrainExample ex;
  ex.context_ids = build_context_ids(vocab, dialogue, turn_idx);
  ex.db = db_bucket_token(turn.db_count);
  ex.response_ids = vocab.encode(turn.response);
  ex.labeled = turn.act.has_value();
  ex.act_ids = Model<float>::act_encoder_tokenize(
      vocab, ex.labeled ? serialize_act(*turn.act) : turn.response);
  ex.domain = dialogue.domain;
  return ex;
}

// ---------------------------------------------------------------------------
// Training

namespace {

bool dialogue_is_labeled(const DialogueRecord& d) {
  for (const auto& t : d.turns) {
    if (t.act.has_value()) return true;
  }
  return false;
}

std::vector<TrainExample> collect_examples(const Vocabulary& vocab,
                                           const std::vector<const DialogueRecord*>& dialogues,
                                           const std::string& regime) {
  std::vector<TrainExample> out;
  for (const DialogueRecord* d : dialogues) {
    bool labeled = dialogue_is_labeled(*d);
    if (regime == "labeled" && !labeled) continue;
    if (regime == "unlabeled" && labeled) continue;
    for (std::size_t t = 0; t < d->turns.size(); ++t) out.push_back(make_example(vocab, *d, t));
  }
  return out;
}

}  // namespace

TrainedModel run_training(const TrainConfig& config_in, const Corpus& corpus,
                          const Checkpoint* resume, int fewshot_k, std::ostream* log) {
  TrainConfig config = config_in;
  Vocabulary vocab = build_world_vocab(corpus.config.all_domains());
  config.model.vocab_size = vocab.size();
  config.validate();

  if (resume != nullptr && resume->vocab.hash() != vocab.hash()) {
    throw std::runtime_error("training: checkpoint vocabulary differs from the corpus world");
  }

  CorpusSplits splits = split_corpus(corpus, fewshot_k > 0 ? SplitMode::FewShot : SplitMode::Full,
                                     fewshot_k, config.seed);
  std::vector<TrainExample> train = collect_examples(vocab, splits.train, config.regime);
  if (train.empty()) throw std::runtime_error("training: no usable training examples");
  std::vector<TrainExample> val = collect_examples(vocab, splits.val, "mixed");

  Prng init_rng(config.seed);
  Prng weight_rng = init_rng.derive("init");
  Model<float> model = resume != nullptr
                           ? model_from_checkpoint(*resume, config.freeze_act_encoder)
                           : Model<float>::init(config.model, weight_rng,
                                                config.freeze_act_encoder);
  if (resume != nullptr) config.model = model.cfg;

  OptimizerState<float> opt;
  opt.lr = config.lr;
  TrainOptions options;
  options.weights.alpha = config.alpha;
  options.clip_norm = config.clip_norm;
  options.baseline_concat = config.baseline_concat;

  Prng order_rng = init_rng.derive("order");
  Prng dropout_rng = init_rng.derive("dropout");

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // forces a shuffle on first use

  TrainReport report;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<TrainExample> batch;
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor >= order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(train[order[cursor++]]);
    }
    for (const auto& ex : batch) ++report.consumed_domains[ex.domain];

    StepResult r = train_step(model, batch, opt, options, dropout_rng);
    if (step == 0) report.initial_loss = r.loss;
    report.final_loss = r.loss;
    if (r.loss > 10.0 * report.initial_loss) {
      throw std::runtime_error("training diverged: loss " + std::to_string(r.loss) +
                               " exceeds 10x the initial " +
                               std::to_string(report.initial_loss));
    }
    bool last = step + 1 == config.steps;
    if (log != nullptr && (step % 50 == 0 || last)) {
      (*log) << "step " << (step + 1) << "/" << config.steps << " loss " << r.loss << " (policy "
             << r.l_policy << ", response " << r.l_response << ")\n";
    }
    if (!val.empty() && ((step + 1) % config.val_every == 0 || last)) {
      double nll = mean_response_nll(model, val, config.baseline_concat);
      report.val_history.push_back({step + 1, nll});
      if (log != nullptr) (*log) << "  val response nll " << nll << "\n";
    }
  }
  report.steps = config.steps;
  return TrainedModel{std::move(model), std::move(vocab), std::move(report)};
}

// ---------------------------------------------------------------------------
// Tables

namespace {

ActEncodeFn model_encoder(const Model<float>& model, const Vocabulary& vocab) {
  return [&model, &vocab](const std::string& text) {
    NoGradGuard ng;
    Tensor<float> z = model.encode_act_tokens(Model<float>::act_encoder_tokenize(vocab, text));
    return std::vector<float>(z.data(), z.data() + z.numel());
  };
}

}  // namespace

ActTable build_schema_table(const Model<float>& model, const Vocabulary& vocab,
                            const std::vector<std::string>& domains) {
  ActSchema schema = world_schema(domains);
  return build_act_table(enumerate_schema_acts(schema), model_encoder(model, vocab));
}

ActTable build_corpus_table(const Model<float>& model, const Vocabulary& vocab,
                            const Corpus& corpus) {
  return build_act_table(extract_corpus_acts(corpus), model_encoder(model, vocab));
}

// ---------------------------------------------------------------------------
// Control

ControlMode control_mode_from_string(const std::string& s) {
  if (s == "none") return ControlMode::None;
  if (s == "schema") return ControlMode::Schema;
  if (s == "goal") return ControlMode::Goal;
  throw std::runtime_error("unknown control mode '" + s + "'");
}

const char* control_mode_name(ControlMode m) {
  switch (m) {
    case ControlMode::None: return "none";
    case ControlMode::Schema: return "schema";
    case ControlMode::Goal: return "goal";
  }
  return "?";
}

namespace {

bool text_has_word(const std::string& text, const std::string& word) {
  for (const auto& w : split_words(text)) {
    if (w == word) return true;
  }
  return false;
}

bool generated_has_placeholder(const std::vector<std::string>& generated,
                               const std::string& slot) {
  std::string needle = "[" + slot + "]";
  for (const auto& g : generated) {
    if (text_has_word(g, needle)) return true;
  }
  return false;
}

}  // namespace

ControlFilter derive_goal_filter(const DialogueRecord& dialogue, std::size_t turn_idx,
                                 const std::vector<std::string>& generated_so_far,
                                 int max_triples) {
  const TurnRecord& turn = dialogue.turns.at(turn_idx);
  const std::string& d = dialogue.domain;
  ControlFilter f;

  std::vector<std::string> missing;
  for (const auto& s : canonical_informables()) {
    if (!turn.belief.count(s)) missing.push_back(s);
  }
  if (turn.db_count > 1 && !missing.empty()) {
    for (const auto& s : missing) {
      if (static_cast<int>(f.required.size()) >= max_triples) break;
      f.required.push_back(make_triple(ActType::Request, d, s));
    }
    return f;
  }

  if (turn.db_count >= 1 && !generated_has_placeholder(generated_so_far, "name")) {
    f.required.push_back(make_triple(ActType::Inform, d, "name"));
  }
  for (const auto& r : dialogue.goal.requests) {
    if (static_cast<int>(f.required.size()) >= max_triples) break;
    // asked so far: the slot's phrase appears in a gold user utterance, or
    // the user asked vaguely for "the details"
    std::string keyword = split_words(slot_phrase(r)).front();
    bool asked = false;
    for (std::size_t i = 0; i <= turn_idx && !asked; ++i) {
      asked = text_has_word(dialogue.turns[i].user, keyword) ||
              text_has_word(dialogue.turns[i].user, "details");
    }
    if (asked && !generated_has_placeholder(generated_so_far, r)) {
      f.required.push_back(make_triple(ActType::Inform, d, r));
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

Tensor<float> embedding_as_tensor(const std::vector<float>& v) {
  return Tensor<float>::from_values({1, static_cast<int>(v.size())}, v);
}

GenerationResult decode_with_policy(const Model<float>& model, const Vocabulary& vocab,
                                    const std::vector<int>& context_ids, DbBucket db,
                                    const Tensor<float>& z_prime) {
  NoGradGuard ng;
  Tensor<float> h_enc = model.encode(TokenSequence::real(context_ids));
  PolicyResult<float> pol = model.policy_forward(db, h_enc, &z_prime);
  Tensor<float> memory = concat(h_enc, pol.h_policy, 0);
  std::vector<int> ids = greedy_decode(model, memory, nullptr, model.cfg.max_response);
  GenerationResult r;
  r.response = vocab.decode(ids);
  r.z_used.assign(z_prime.data(), z_prime.data() + z_prime.numel());
  return r;
}

}  // namespace

GenerationResult generate_response(const Model<float>& model, const Vocabulary& vocab,
                                   const ActTable& table, const std::vector<int>& context_ids,
                                   DbBucket db, const ControlFilter* filter) {
  NoGradGuard ng;
  Tensor<float> h_enc = model.encode(TokenSequence::real(context_ids));
  PolicyResult<float> first = model.policy_forward(db, h_enc, nullptr);
  std::vector<float> z_hat(first.z_hat.data(), first.z_hat.data() + first.z_hat.numel());

  const ActTable* search = &table;
  ActTable filtered;
  bool fell_back = false;
  if (filter != nullptr && !filter->empty()) {
    try {
      filtered = filter_table(table, *filter);
      search = &filtered;
    } catch (const FilterUnsatisfiable&) {
      fell_back = true;  // recorded in the report; the unfiltered table serves
    }
  }
  QuantizeResult q = quantize(z_hat, *search);
  const ActTable::Entry& entry = search->entries[static_cast<std::size_t>(q.index)];

  GenerationResult r = decode_with_policy(model, vocab, context_ids, db,
                                          embedding_as_tensor(entry.embedding));
  r.act = entry.act;
  r.table_index = q.index;
  r.filter_fell_back = fell_back;
  return r;
}

GenerationResult generate_with_gold_act(const Model<float>& model, const Vocabulary& vocab,
                                        const DialogueAct& act,
                                        const std::vector<int>& context_ids, DbBucket db) {
  NoGradGuard ng;
  Tensor<float> z = model.encode_act_tokens(
      Model<float>::act_encoder_tokenize(vocab, serialize_act(act)));
  GenerationResult r = decode_with_policy(model, vocab, context_ids, db, z);
  r.act = act;
  return r;
}

GenerationResult generate_baseline(const Model<float>& model, const Vocabulary& vocab,
                                   const std::vector<int>& context_ids, DbBucket db) {
  NoGradGuard ng;
  std::vector<int> ctx = context_ids;
  ctx.insert(ctx.begin(), db_vocab_id(db));
  Tensor<float> h_enc = model.encode(TokenSequence::real(ctx));
  std::vector<int> ids = greedy_decode(model, h_enc, nullptr, model.cfg.max_response);
  GenerationResult r;
  auto sep = std::find(ids.begin(), ids.end(), Vocabulary::kSor);
  if (sep != ids.end()) {
    std::vector<int> act_ids(ids.begin(), sep);
    std::vector<int> resp_ids(sep + 1, ids.end());
    r.response = vocab.decode(resp_ids);
    try {
      r.act = parse_act(vocab.decode(act_ids));
    } catch (const std::exception&) {
      // leave the act empty; the report counts it as a miss
    }
  } else {
    r.response = vocab.decode(ids);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport run_eval(Model<float>& model, const Vocabulary& vocab,
                    const std::vector<const DialogueRecord*>& dialogues, const World& world,
                    const EvalOptions& options) {
  if (dialogues.empty()) throw std::runtime_error("eval: no dialogues");

  // gold-act mode still needs tables: unlabeled turns fall back to prediction
  ActTable global_table;
  std::map<std::string, ActTable> domain_tables;
  if (!options.baseline) {
    if (options.control == ControlMode::None) {
      global_table = build_schema_table(model, vocab, world.domains);
    } else {
      std::set<std::string> needed;
      for (const auto* d : dialogues) needed.insert(d->domain);
      for (const auto& d : needed) domain_tables[d] = build_schema_table(model, vocab, {d});
    }
  }

  EvalReport report;
  MicroF1 f1;
  std::vector<std::string> all_hyp, all_ref;
  for (const DialogueRecord* dlg : dialogues) {
    std::vector<std::string> generated;
    for (std::size_t t = 0; t < dlg->turns.size(); ++t) {
      std::vector<int> ctx = build_context_ids(vocab, *dlg, t);
      DbBucket db = db_bucket_token(dlg->turns[t].db_count);
      GenerationResult g;
      if (options.baseline) {
        g = generate_baseline(model, vocab, ctx, db);
      } else if (options.gold_acts && dlg->turns[t].act.has_value()) {
        g = generate_with_gold_act(model, vocab, *dlg->turns[t].act, ctx, db);
      } else {
        const ActTable& table = options.control == ControlMode::None
                                    ? global_table
                                    : domain_tables.at(dlg->domain);
        ControlFilter filter;
        if (options.control == ControlMode::Goal) {
          filter = derive_goal_filter(*dlg, t, generated, world_schema({dlg->domain}).max_triples);
        }
        g = generate_response(model, vocab, table, ctx, db, filter.empty() ? nullptr : &filter);
        if (g.filter_fell_back) ++report.filter_fallbacks;
      }
      if (dlg->turns[t].act.has_value()) {
        if (g.act.triples.empty()) {
          f1.add_unpredicted(*dlg->turns[t].act);
        } else {
          f1.add(g.act, *dlg->turns[t].act);
        }
      }
      all_hyp.push_back(g.response);
      all_ref.push_back(dlg->turns[t].response);
      generated.push_back(std::move(g.response));
    }
    DialogueScore score;
    score.domain = dlg->domain;
    score.inform = eval_inform(*dlg, generated, world);
    score.success = eval_success(*dlg, generated, world);
    report.breakdown.push_back(score);
  }

  double inform_sum = 0, success_sum = 0;
  for (const auto& b : report.breakdown) {
    inform_sum += b.inform;
    success_sum += b.success;
  }
  report.dialogues = static_cast<int>(report.breakdown.size());
  report.inform = 100.0 * inform_sum / report.dialogues;
  report.success = 100.0 * success_sum / report.dialogues;
  report.bleu = eval_bleu(all_hyp, all_ref);
  report.combined = combined_score(report.inform, report.success, report.bleu);
  if (f1.turns() > 0) report.act_f1 = f1.result();
  return report;
}

std::vector<ActPrediction> predict_acts(Model<float>& model, const Vocabulary& vocab,
                                        const std::vector<const DialogueRecord*>& dialogues) {
  NoGradGuard ng;
  std::map<std::string, ActTable> tables;
  std::vector<ActPrediction> out;
  for (const DialogueRecord* dlg : dialogues) {
    auto it = tables.find(dlg->domain);
    if (it == tables.end()) {
      it = tables.emplace(dlg->domain, build_schema_table(model, vocab, {dlg->domain})).first;
    }
    for (std::size_t t = 0; t < dlg->turns.size(); ++t) {
      if (!dlg->turns[t].act.has_value()) continue;
      Tensor<float> h_enc = model.encode(TokenSequence::real(build_context_ids(vocab, *dlg, t)));
      PolicyResult<float> pol =
          model.policy_forward(db_bucket_token(dlg->turns[t].db_count), h_enc, nullptr);
      std::vector<float> z_hat(pol.z_hat.data(), pol.z_hat.data() + pol.z_hat.numel());
      QuantizeResult q = quantize(z_hat, it->second);
      ActPrediction p;
      p.predicted = it->second.entries[static_cast<std::size_t>(q.index)].act;
      p.gold = *dlg->turns[t].act;
      p.domain = dlg->domain;
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Chat

namespace {

struct ChatState {
  std::string domain;
  std::map<std::string, std::string> belief;
  std::vector<std::pair<std::string, std::string>> history;  // (user, system)
  ControlFilter filter;
  bool act_pinned = false;
  DialogueAct pinned;
};

std::vector<int> chat_context(const Vocabulary& vocab, const ChatState& st,
                              const std::string& user) {
  std::vector<int> ids;
  for (const auto& [u, s] : st.history) {
    ids.push_back(Vocabulary::kUsr);
    for (int t : vocab.encode(u)) ids.push_back(t);
    ids.push_back(Vocabulary::kSys);
    for (int t : vocab.encode(s)) ids.push_back(t);
  }
  ids.push_back(Vocabulary::kUsr);
  for (int t : vocab.encode(user)) ids.push_back(t);
  return ids;
}

}  // namespace

int chat_repl(std::istream& in, std::ostream& out, const Checkpoint& ckpt,
              const std::vector<std::string>& require_acts,
              const std::vector<std::string>& forbid_acts) {
  Model<float> model = model_from_checkpoint(ckpt);
  const Vocabulary& vocab = ckpt.vocab;
  auto domains_it = ckpt.meta.find("domains");
  if (domains_it == ckpt.meta.end()) {
    out << "checkpoint carries no domain list; cannot chat\n";
    return 1;
  }
  std::vector<std::string> domains;
  std::stringstream ds(domains_it->second);
  std::string piece;
  while (std::getline(ds, piece, ',')) {
    if (!piece.empty()) domains.push_back(piece);
  }
  World world = build_world(domains);
  ActSchema schema = world_schema(domains);

  ChatState st;
  st.domain = domains.front();
  for (const auto& a : require_acts) {
    for (const auto& t : parse_act(a, &schema).triples) st.filter.required.push_back(t);
  }
  for (const auto& a : forbid_acts) {
    for (const auto& t : parse_act(a, &schema).triples) st.filter.forbidden.push_back(t);
  }

  std::map<std::string, ActTable> tables;
  auto table_for = [&](const std::string& d) -> ActTable& {
    auto it = tables.find(d);
    if (it == tables.end()) it = tables.emplace(d, build_schema_table(model, vocab, {d})).first;
    return it->second;
  };

  out << "chat ready . domain : " << st.domain
      << " ( /act /require /forbid /domain /reset /quit )\n";
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    std::string lowered;
    for (char c : line) lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lowered.empty()) {
      out << "say something , or /quit to leave\n";
      continue;
    }
    if (lowered == "/quit") {
      out << "bye .\n";
      return 0;
    }
    if (lowered == "/reset") {
      st.belief.clear();
      st.history.clear();
      out << "dialogue reset .\n";
      continue;
    }
    if (lowered.rfind("/domain ", 0) == 0) {
      std::string d = lowered.substr(8);
      if (!world.has_domain(d)) {
        out << "unknown domain '" << d << "'\n";
        continue;
      }
      st.domain = d;
      st.belief.clear();
      st.history.clear();
      out << "domain : " << d << "\n";
      continue;
    }
    if (lowered.rfind("/act ", 0) == 0) {
      try {
        st.pinned = parse_act(lowered.substr(5), &schema);
        st.act_pinned = true;
        out << "act pinned : " << serialize_act(st.pinned) << "\n";
      } catch (const std::exception& e) {
        out << "parse error : " << e.what() << "\n";
      }
      continue;
    }
    if (lowered.rfind("/require ", 0) == 0 || lowered.rfind("/forbid ", 0) == 0) {
      bool req = lowered[1] == 'r';
      try {
        DialogueAct a = parse_act(lowered.substr(req ? 9 : 8), &schema);
        auto& list = req ? st.filter.required : st.filter.forbidden;
        for (const auto& t : a.triples) list.push_back(t);
        out << (req ? "required : " : "forbidden : ") << serialize_act(a) << "\n";
      } catch (const std::exception& e) {
        out << "parse error : " << e.what() << "\n";
      }
      continue;
    }

    // a user utterance: update the belief from recognized slot values
    auto [delexed, spans] = delexicalize(lowered, world.lexicon(st.domain));
    (void)delexed;
    for (const auto& span : spans) {
      const auto& informables = canonical_informables();
      if (std::find(informables.begin(), informables.end(), span.slot) != informables.end()) {
        st.belief[span.slot] = span.value;
      }
    }
    DbQueryResult q = world.query(st.domain, st.belief);
    out << "[db] " << q.count << " matches\n";

    std::vector<int> ctx = chat_context(vocab, st, lowered);
    GenerationResult g;
    if (st.act_pinned) {
      g = generate_with_gold_act(model, vocab, st.pinned, ctx, db_bucket_token(q.count));
      st.act_pinned = false;
    } else {
      g = generate_response(model, vocab, table_for(st.domain), ctx, db_bucket_token(q.count),
                            st.filter.empty() ? nullptr : &st.filter);
      if (g.filter_fell_back) out << "[note] filter unsatisfiable , using the full table\n";
    }
    out << "[act] " << serialize_act(g.act) << "\n";
    out << "[sys] " << g.response << "\n";
    if (q.count > 0) out << "[lex] " << lexicalize(g.response, *q.matches.front()) << "\n";
    st.history.push_back({lowered, g.response});
  }
  return 0;
}

// ---------------------------------------------------------------------------
// CLI

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string piece;
  while (std::getline(ss, piece, ',')) {
    if (!piece.empty()) out.push_back(piece);
  }
  return out;
}

std::map<std::string, std::string> checkpoint_meta(const TrainConfig& config,
                                                   const Corpus& corpus) {
  std::map<std::string, std::string> meta = config.to_meta();
  std::string domains;
  for (const auto& d : corpus.config.all_domains()) domains += (domains.empty() ? "" : ",") + d;
  meta["domains"] = domains;
  meta["holdout"] = corpus.config.holdout_domain;
  return meta;
}

void save_trained(const std::string& path, TrainedModel& trained, const Corpus& corpus,
                  const TrainConfig& config) {
  ActTable table;
  bool any_labeled = false;
  for (const auto& d : corpus.dialogues) {
    if (d.split != "holdout" && dialogue_is_labeled(d)) any_labeled = true;
  }
  if (any_labeled && !config.baseline_concat) {
    table = build_corpus_table(trained.model, trained.vocab, corpus);
  }
  save_checkpoint(path, trained.model, trained.vocab, table, checkpoint_meta(config, corpus));
}

std::vector<const DialogueRecord*> pick_split(const Corpus& corpus, const std::string& name) {
  auto dialogues = corpus.split(name);
  if (dialogues.empty()) throw std::runtime_error("no dialogues in split '" + name + "'");
  return dialogues;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv) {
  CLI::App app{"latent-act task-oriented dialogue system"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dialogue corpus");
  std::string gen_out;
  CorpusConfig gen_cfg;
  std::string gen_domains = "restaurant,hotel,attraction";
  gen->add_option("--out", gen_out, "output corpus path (jsonl)")->required();
  gen->add_option("--seed", gen_cfg.seed, "corpus seed");
  gen->add_option("--domains", gen_domains, "comma-separated training domains");
  gen->add_option("--dialogues", gen_cfg.n_dialogues, "number of training-domain dialogues");
  gen->add_option("--unlabeled-frac", gen_cfg.unlabeled_fraction,
                  "fraction of dialogues stripped of act labels");
  gen->add_option("--holdout", gen_cfg.holdout_domain, "held-out domain (empty for none)");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "pre-train a model on a corpus");
  std::string pre_data, pre_config, pre_out;
  pre->add_option("--data", pre_data, "corpus path")->required();
  pre->add_option("--config", pre_config, "key=value training configuration");
  pre->add_option("--out", pre_out, "checkpoint output path")->required();

  // finetune
  auto* fine = app.add_subcommand("finetune", "fine-tune from a checkpoint");
  std::string fine_ckpt, fine_data, fine_out;
  int fine_examples = 0;
  fine->add_option("--ckpt", fine_ckpt, "starting checkpoint")->required();
  fine->add_option("--data", fine_data, "corpus path")->required();
  fine->add_option("--examples", fine_examples, "few-shot dialogue budget (0 = full train split)");
  fine->add_option("--out", fine_out, "checkpoint output path")->required();
  std::string fine_config;
  fine->add_option("--config", fine_config, "key=value training configuration");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_control = "none", ev_report, ev_split = "test";
  bool ev_gold = false;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "corpus path")->required();
  ev->add_option("--control", ev_control, "none | schema | goal");
  ev->add_option("--report", ev_report, "report output path (json + tsv)");
  ev->add_option("--split", ev_split, "test | val | holdout | train");
  ev->add_flag("--gold-acts", ev_gold, "feed gold acts instead of predictions");

  // predict-act
  auto* pa = app.add_subcommand("predict-act", "zero-shot act prediction");
  std::string pa_ckpt, pa_data, pa_split = "holdout";
  pa->add_option("--ckpt", pa_ckpt, "checkpoint path")->required();
  pa->add_option("--data", pa_data, "corpus path")->required();
  pa->add_option("--split", pa_split, "split to score");

  // chat
  auto* chat = app.add_subcommand("chat", "interactive dialogue session");
  std::string chat_ckpt;
  std::vector<std::string> chat_require, chat_forbid;
  chat->add_option("--ckpt", chat_ckpt, "checkpoint path")->required();
  chat->add_option("--require", chat_require, "acts whose triples must appear");
  chat->add_option("--forbid", chat_forbid, "acts whose triples must not appear");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      gen_cfg.domains = split_csv(gen_domains);
      Corpus corpus = generate_corpus(gen_cfg);
      validate_corpus(corpus, build_world(corpus.config.all_domains()));
      save_corpus(corpus, gen_out);
      std::cout << "wrote " << corpus.dialogues.size() << " dialogues to " << gen_out << "\n";
      return 0;
    }
    if (pre->parsed()) {
      TrainConfig config =
          pre_config.empty() ? TrainConfig{} : TrainConfig::from_file(pre_config);
      Corpus corpus = load_corpus(pre_data);
      TrainedModel trained = run_training(config, corpus, nullptr, 0, &std::cout);
      save_trained(pre_out, trained, corpus, config);
      std::cout << "saved checkpoint " << pre_out << "\n";
      return 0;
    }
    if (fine->parsed()) {
      Checkpoint ckpt = load_checkpoint(fine_ckpt);
      TrainConfig config =
          fine_config.empty() ? TrainConfig{} : TrainConfig::from_file(fine_config);
      Corpus corpus = load_corpus(fine_data);
      TrainedModel trained = run_training(config, corpus, &ckpt, fine_examples, &std::cout);
      save_trained(fine_out, trained, corpus, config);
      std::cout << "saved checkpoint " << fine_out << "\n";
      return 0;
    }
    if (ev->parsed()) {
      Checkpoint ckpt = load_checkpoint(ev_ckpt);
      Model<float> model = model_from_checkpoint(ckpt);
      Corpus corpus = load_corpus(ev_data);
      World world = build_world(corpus.config.all_domains());
      EvalOptions options;
      options.control = control_mode_from_string(ev_control);
      options.gold_acts = ev_gold;
      options.baseline = ckpt.meta.count("baseline_concat") &&
                         ckpt.meta.at("baseline_concat") == "1";
      EvalReport report =
          run_eval(model, ckpt.vocab, pick_split(corpus, ev_split), world, options);
      std::cout << report.to_tsv();
      if (!ev_report.empty()) {
        write_report(report, ev_report);
        std::cout << "wrote " << ev_report << "\n";
      }
      return 0;
    }
    if (pa->parsed()) {
      Checkpoint ckpt = load_checkpoint(pa_ckpt);
      Model<float> model = model_from_checkpoint(ckpt);
      Corpus corpus = load_corpus(pa_data);
      auto preds = predict_acts(model, ckpt.vocab, pick_split(corpus, pa_split));
      MicroF1 f1;
      for (const auto& p : preds) {
        std::cout << "gold: " << serialize_act(p.gold) << "\n  -> " << serialize_act(p.predicted)
                  << "\n";
        f1.add(p.predicted, p.gold);
      }
      PrfScores s = f1.result();
      std::cout << "turns\t" << preds.size() << "\nprecision\t" << s.precision << "\nrecall\t"
                << s.recall << "\nf1\t" << s.f1 << "\n";
      return 0;
    }
    if (chat->parsed()) {
      Checkpoint ckpt = load_checkpoint(chat_ckpt);
      return chat_repl(std::cin, std::cout, ckpt, chat_require, chat_forbid);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace latact
