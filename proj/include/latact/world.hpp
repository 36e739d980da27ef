#pragma once

#include <map>
#include <string>
#include <vector>

#include "latact/acts.hpp"
#include "latact/vocab.hpp"

namespace latact {

/// The synthetic task world: a fixed entity database per domain plus the
/// surface templates both sides of the scripted dialogues draw from.
/// Everything here is a pure function of the domain names, so corpora,
/// training and evaluation all see the same world.

inline const std::vector<std::string>& canonical_informables() {
  static const std::vector<std::string> v = {"area", "pricerange", "type"};
  return v;
}

inline const std::vector<std::string>& canonical_requestables() {
  static const std::vector<std::string> v = {"area", "pricerange", "type", "phone", "address"};
  return v;
}

struct Entity {
  std::string domain;
  std::string name;
  std::map<std::string, std::string> slots;  // area, pricerange, type, phone, address

  const std::string& value(const std::string& slot) const;
};

struct DbQueryResult {
  int count = 0;
  std::vector<const Entity*> matches;  // ordered by name
};

struct World {
  std::vector<std::string> domains;
  std::map<std::string, std::vector<Entity>> entities;

  bool has_domain(const std::string& d) const { return entities.count(d) > 0; }

  /// Exact-match filter over the domain's entities; constraints with the
  /// value "dontcare" are skipped. Unknown slots are an error.
  DbQueryResult query(const std::string& domain,
                      const std::map<std::string, std::string>& constraints) const;

  /// value -> slot pairs covering every entity attribute of the domain;
  /// feeds the delexicalizer.
  std::vector<std::pair<std::string, std::string>> lexicon(const std::string& domain) const;
};

/// Builds the fixed world for the given domains (error on unknown names).
World build_world(const std::vector<std::string>& domains);

/// Known domain names: restaurant, hotel, attraction, shop.
const std::vector<std::string>& known_domains();

/// The act schema shared by all world domains (cap defaults to 3).
ActSchema world_schema(const std::vector<std::string>& domains, int max_triples = 3);

/// Word-level vocabulary covering all templates, slot values, act tokens
/// and placeholders of the given domains.
Vocabulary build_world_vocab(const std::vector<std::string>& domains);

// Lexical surface templates. `variant` selects among fixed phrasings.
std::string sys_request_text(const std::string& slot, const std::string& domain, int variant);
std::string sys_offer_text(int variant, const Entity& e);
DialogueAct sys_offer_act(int variant, const std::string& domain);
std::string sys_inform_text(const std::vector<std::string>& slots, const Entity& e);
std::string sys_bye_text(int variant);
std::string sys_nooffer_text();

std::string user_open_text(const std::string& domain,
                           const std::vector<std::pair<std::string, std::string>>& mentioned,
                           int variant);
std::string user_answer_text(const std::string& slot, const std::string& value,
                             const std::string& domain, int variant);
std::string user_dontcare_text(int variant);
std::string user_ask_text(const std::vector<std::string>& slots, const std::string& domain,
                          int variant);
/// A vague ask ("the details") that names no slot; the goal decides what
/// the system must cover.
std::string user_detail_ask_text(const std::string& domain, int variant);
std::string user_bye_text(int variant);

/// Human phrase for a slot inside questions ("phone number", "price range").
const std::string& slot_phrase(const std::string& slot);

}  // namespace latact
