#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace latact {

enum class ActType { Inform, Request, Offer, Recommend, Select, Bye, Greet, NoOffer };

const char* act_type_name(ActType t);
bool is_act_type_name(const std::string& s);
ActType act_type_from_name(const std::string& s);
/// bye / greet / no-offer carry no slot.
bool act_type_is_slotless(ActType t);

/// One (act-type, domain, slot) unit. Slot is empty for slotless types.
struct ActTriple {
  ActType type = ActType::Inform;
  std::string domain;
  std::string slot;

  bool operator==(const ActTriple&) const = default;
  /// Canonical order: lexicographic (domain, act-type name, slot).
  bool operator<(const ActTriple& o) const;
  std::string str() const;
};

ActTriple make_triple(ActType type, std::string domain, std::string slot);

/// A dialogue act: a nonempty, duplicate-free set of triples kept in
/// canonical order.
struct DialogueAct {
  std::vector<ActTriple> triples;

  bool operator==(const DialogueAct&) const = default;
  bool contains(const ActTriple& t) const;
  bool contains_slot(const std::string& slot) const;
};

DialogueAct make_act(std::vector<ActTriple> triples);

struct ActSchema {
  struct Domain {
    std::string name;
    std::vector<std::string> informable;
    std::vector<std::string> requestable;
    std::vector<ActType> act_types;
  };
  std::vector<Domain> domains;
  int max_triples = 3;

  const Domain* find(const std::string& name) const;
  /// All triples a domain permits, in canonical order. Inform-like types
  /// range over informable + requestable slots, request over requestable.
  std::vector<ActTriple> legal_triples(const Domain& d) const;
};

ActSchema load_schema(const std::string& path);
void save_schema(const ActSchema& schema, const std::string& path);

/// Canonical surface form: triples grouped by domain, then act type, e.g.
/// "[hotel] [inform] pricerange [request] area". Deterministic; the inverse
/// of parse_act.
std::string serialize_act(const DialogueAct& act);

/// Parses the canonical grammar. With a schema, domains and slots outside
/// it are rejected; act types are always validated. Errors carry the token
/// position.
DialogueAct parse_act(const std::string& text, const ActSchema* schema = nullptr);

/// Every act of 1..max_triples triples drawn from one domain's legal
/// triples, each exactly once, in deterministic order. Throws if the count
/// would exceed `limit`, advising a smaller cap.
std::vector<DialogueAct> enumerate_schema_acts(const ActSchema& schema,
                                               std::size_t limit = 200000);

/// Ordered act table: one unit-norm embedding per valid act.
struct ActTable {
  struct Entry {
    DialogueAct act;
    std::string key;  // canonical string
    std::vector<float> embedding;
  };
  std::vector<Entry> entries;
  int d_act = 0;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
};

using ActEncodeFn = std::function<std::vector<float>(const std::string&)>;

/// Builds the table row-by-row with `encode`. Duplicate acts are dropped
/// with a note on stderr. Embeddings are checked for unit norm.
ActTable build_act_table(const std::vector<DialogueAct>& acts, const ActEncodeFn& encode);

struct QuantizeResult {
  int index = -1;
  float squared_distance = 0.0f;
};

/// Nearest table entry by squared Euclidean distance; ties break toward the
/// lowest index. Throws on an empty table or dimension mismatch.
QuantizeResult quantize(const std::vector<float>& z_hat, const ActTable& table);

struct ControlFilter {
  std::vector<ActTriple> required;
  std::vector<ActTriple> forbidden;

  bool empty() const { return required.empty() && forbidden.empty(); }
  std::string str() const;
};

struct FilterUnsatisfiable : std::runtime_error {
  explicit FilterUnsatisfiable(const std::string& what) : std::runtime_error(what) {}
};

/// Keeps exactly the rows whose act contains every required triple and no
/// forbidden one; order and embeddings unchanged. Throws FilterUnsatisfiable
/// when nothing survives.
ActTable filter_table(const ActTable& table, const ControlFilter& filter);

struct PrfScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Triple-level set overlap between a predicted and a gold act.
PrfScores act_f1(const DialogueAct& predicted, const DialogueAct& gold);

/// Micro-averaged triple-level F1 over many turns.
class MicroF1 {
 public:
  void add(const DialogueAct& predicted, const DialogueAct& gold);
  /// A turn with no usable prediction: every gold triple counts as missed.
  void add_unpredicted(const DialogueAct& gold);
  PrfScores result() const;
  std::int64_t turns() const { return turns_; }

 private:
  std::int64_t tp_ = 0, fp_ = 0, fn_ = 0, turns_ = 0;
};

/// One row per entry: canonical act string, a tab, then the embedding to 9
/// significant digits.
void dump_table(const ActTable& table, const std::string& path);
std::string table_to_text(const ActTable& table);

}  // namespace latact
