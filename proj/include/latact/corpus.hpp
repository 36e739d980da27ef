#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "latact/acts.hpp"
#include "latact/world.hpp"

namespace latact {

struct GoalSpec {
  std::string domain;
  std::map<std::string, std::string> constraints;  // informable slot -> value
  std::vector<std::string> requests;               // requestable slots
};

struct TurnRecord {
  std::string user;                           // lexical
  std::string response;                       // delexicalized
  std::map<std::string, std::string> belief;  // oracle; may contain "dontcare"
  int db_count = 0;
  std::optional<DialogueAct> act;
};

struct DialogueRecord {
  std::string domain;
  std::string split;  // train | val | test | holdout
  GoalSpec goal;
  std::vector<TurnRecord> turns;
};

struct CorpusConfig {
  std::vector<std::string> domains = {"restaurant", "hotel", "attraction"};
  std::string holdout_domain = "shop";
  int n_dialogues = 180;         // across the training domains
  double unlabeled_fraction = 0.5;
  std::uint64_t seed = 1;

  int holdout_dialogues() const { return n_dialogues / 4; }
  std::vector<std::string> all_domains() const;
};

struct Corpus {
  CorpusConfig config;
  std::vector<DialogueRecord> dialogues;

  std::vector<const DialogueRecord*> split(const std::string& name) const;
};

/// Scripted user simulator + scripted system policy. Reproducible bit for
/// bit from (config, seed): the same config writes identical files.
Corpus generate_corpus(const CorpusConfig& config);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

/// Checks every dialogue invariant: belief consistent with the goal and
/// monotone, db counts equal to fresh queries, placeholders licensed by the
/// act, response words inside the world vocabulary. Throws on violation.
void validate_corpus(const Corpus& corpus, const World& world);

struct DelexSpan {
  std::string value;
  std::string slot;
  int word_pos = 0;
};

/// Longest-match, left-to-right replacement of lexicon values by their
/// [slot] placeholders over whitespace tokens. Idempotent; unmatched text
/// passes through unchanged.
std::pair<std::string, std::vector<DelexSpan>> delexicalize(
    const std::string& text, const std::vector<std::pair<std::string, std::string>>& lexicon);

/// Substitutes [slot] placeholders with the entity's values (the inverse
/// direction, used when showing responses to a human).
std::string lexicalize(const std::string& text, const Entity& e);

struct SlotMapping {
  std::map<std::string, std::string> rename;  // source slot -> canonical slot

  void validate_injective() const;
};

/// Rewrites slot identifiers in acts, belief states, goals and response
/// placeholders. Every slot encountered must be mapped (error lists the
/// missing ones). Applying a mapping twice equals applying it once when the
/// mapping is idempotent on its image.
Corpus map_slots(const Corpus& corpus, const SlotMapping& mapping);

/// Deduplicated act labels over labeled system turns, canonically ordered.
/// Errors when the corpus has no labeled turn.
std::vector<DialogueAct> extract_corpus_acts(const Corpus& corpus);

/// Latent vector for an unlabeled turn: the delexicalized response encoded
/// in place of a gold act. Never enters the act table.
std::vector<float> proxy_latent(const TurnRecord& turn, const ActEncodeFn& encode);

enum class SplitMode { Full, FewShot, ZeroShot };

struct CorpusSplits {
  std::vector<const DialogueRecord*> train, val, test, holdout;
};

/// Full keeps the recorded splits; FewShot(k) subsamples k training
/// dialogues with the documented PRNG; ZeroShot empties the train split.
CorpusSplits split_corpus(const Corpus& corpus, SplitMode mode, int k = 0,
                          std::uint64_t seed = 1);

}  // namespace latact
