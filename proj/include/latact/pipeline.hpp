#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "latact/checkpoint.hpp"
#include "latact/corpus.hpp"
#include "latact/metrics.hpp"
#include "latact/policy.hpp"

namespace latact {

struct TrainConfig {
  ModelConfig model;
  double alpha = 0.5;
  double lr = 5e-4;
  int batch_size = 8;
  int steps = 3000;
  bool freeze_act_encoder = true;
  bool baseline_concat = false;
  std::uint64_t seed = 1;
  std::string regime = "mixed";  // mixed | labeled | unlabeled
  int val_every = 100;
  double clip_norm = 1.0;

  void validate() const;
  /// Flat key=value file; unknown keys are rejected.
  static TrainConfig from_file(const std::string& path);
  static TrainConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& kv);
  std::map<std::string, std::string> to_meta() const;
};

struct TrainReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int steps = 0;
  std::vector<std::pair<int, double>> val_history;  // (step, mean response NLL)
  std::map<std::string, int> consumed_domains;      // domain -> examples consumed
};

struct TrainedModel {
  Model<float> model;
  Vocabulary vocab;
  TrainReport report;
};

/// Gold-context token ids for predicting turn `turn_idx`'s response.
std::vector<int> build_context_ids(const Vocabulary& vocab, const DialogueRecord& dialogue,
                                   std::size_t turn_idx);

/// One training example per system turn; labeled turns carry the canonical
/// act string, unlabeled ones the response itself as its proxy.
TrainExample make_example(const Vocabulary& vocab, const DialogueRecord& dialogue,
                          std::size_t turn_idx);

/// Trains over the corpus train split (optionally resuming a checkpoint;
/// fewshot_k > 0 subsamples that many dialogues). Aborts when the loss
/// exceeds ten times its initial value.
TrainedModel run_training(const TrainConfig& config, const Corpus& corpus,
                          const Checkpoint* resume = nullptr, int fewshot_k = 0,
                          std::ostream* log = nullptr);

enum class ControlMode { None, Schema, Goal };
ControlMode control_mode_from_string(const std::string& s);
const char* control_mode_name(ControlMode m);

/// Control filter derivation for goal mode at one turn: while several
/// matches remain and informables are unconstrained, require requests for
/// them; afterwards require the name inform until one was generated, plus
/// informs for every requested slot asked so far and not yet covered.
ControlFilter derive_goal_filter(const DialogueRecord& dialogue, std::size_t turn_idx,
                                 const std::vector<std::string>& generated_so_far,
                                 int max_triples);

struct GenerationResult {
  std::string response;  // delexicalized
  DialogueAct act;       // the act actually used
  std::vector<float> z_used;
  int table_index = -1;
  bool filter_fell_back = false;
};

/// Two-pass inference: predict z-hat, quantize it against the (optionally
/// filtered) table, rerun the policy with the retrieved vector, then decode
/// greedily. An unsatisfiable filter falls back to the unfiltered table.
GenerationResult generate_response(const Model<float>& model, const Vocabulary& vocab,
                                   const ActTable& table, const std::vector<int>& context_ids,
                                   DbBucket db, const ControlFilter* filter = nullptr);

/// Bypasses quantization: feeds the gold act's embedding directly.
GenerationResult generate_with_gold_act(const Model<float>& model, const Vocabulary& vocab,
                                        const DialogueAct& act,
                                        const std::vector<int>& context_ids, DbBucket db);

/// Baseline mode: the decoder emits "act tokens <sor> response" with the
/// db bucket as a context token and no policy branch.
GenerationResult generate_baseline(const Model<float>& model, const Vocabulary& vocab,
                                   const std::vector<int>& context_ids, DbBucket db);

struct EvalOptions {
  ControlMode control = ControlMode::None;
  bool gold_acts = false;
  bool baseline = false;
};

/// Replays gold contexts (oracle belief states and db counts), generates
/// every system turn, and scores the result. Act F1 covers labeled turns.
/// Pure over a frozen model; dialogues are independent, the driver serial.
EvalReport run_eval(Model<float>& model, const Vocabulary& vocab,
                    const std::vector<const DialogueRecord*>& dialogues, const World& world,
                    const EvalOptions& options);

struct ActPrediction {
  DialogueAct predicted;
  DialogueAct gold;
  std::string domain;
};

/// Quantizes the first-pass prediction against the dialogue domain's schema
/// table for every labeled turn.
std::vector<ActPrediction> predict_acts(Model<float>& model, const Vocabulary& vocab,
                                        const std::vector<const DialogueRecord*>& dialogues);

/// Builds the act table for the given domains from the schema (the
/// zero-shot path) using the model's act encoder.
ActTable build_schema_table(const Model<float>& model, const Vocabulary& vocab,
                            const std::vector<std::string>& domains);

/// Builds the table from acts observed in the corpus' labeled turns.
ActTable build_corpus_table(const Model<float>& model, const Vocabulary& vocab,
                            const Corpus& corpus);

/// Interactive loop over `in`/`out`. Commands: /act, /require, /forbid,
/// /domain, /reset, /quit; anything else is a user utterance. Returns the
/// exit code.
int chat_repl(std::istream& in, std::ostream& out, const Checkpoint& ckpt,
              const std::vector<std::string>& require_acts,
              const std::vector<std::string>& forbid_acts);

int cli_dispatch(int argc, const char* const* argv);

}  // namespace latact
