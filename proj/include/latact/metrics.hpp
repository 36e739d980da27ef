#pragma once

#include <optional>
#include <string>
#include <vector>

#include "latact/acts.hpp"
#include "latact/corpus.hpp"
#include "latact/world.hpp"

namespace latact {

/// 1 iff some generated response offers an entity ([name]) at a turn where
/// the database, filtered by the constraints known so far, is nonempty and
/// the top match satisfies every final goal constraint.
int eval_inform(const DialogueRecord& dialogue, const std::vector<std::string>& generated,
                const World& world);

/// 1 iff inform holds and every requested slot appears as a placeholder in
/// some generated response.
int eval_success(const DialogueRecord& dialogue, const std::vector<std::string>& generated,
                 const World& world);

/// Corpus-level BLEU-4 with the standard brevity penalty; zero n-gram
/// matches fall back to 1e-9. Returns a percentage.
double eval_bleu(const std::vector<std::string>& hypotheses,
                 const std::vector<std::string>& references);

/// (inform + success) * 0.5 + bleu, all on the 0..100 scale.
double combined_score(double inform, double success, double bleu);

PrfScores aggregate_act_f1(const std::vector<DialogueAct>& predicted,
                           const std::vector<DialogueAct>& gold);

struct DialogueScore {
  std::string domain;
  int inform = 0;
  int success = 0;
};

struct EvalReport {
  double inform = 0.0;   // percent
  double success = 0.0;  // percent
  double bleu = 0.0;     // percent
  double combined = 0.0;
  std::optional<PrfScores> act_f1;
  int dialogues = 0;
  int filter_fallbacks = 0;
  std::vector<DialogueScore> breakdown;

  /// Tab-separated (metric, value) rows, diff-friendly.
  std::string to_tsv() const;
  std::string to_json() const;
};

void write_report(const EvalReport& report, const std::string& path);

}  // namespace latact
