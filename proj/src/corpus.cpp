#include "latact/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "latact/prng.hpp"

namespace latact {

using nlohmann::json;

std::vector<std::string> CorpusConfig::all_domains() const {
  std::vector<std::string> v = domains;
  if (!holdout_domain.empty() &&
      std::find(v.begin(), v.end(), holdout_domain) == v.end()) {
    v.push_back(holdout_domain);
  }
  return v;
}

std::vector<const DialogueRecord*> Corpus::split(const std::string& name) const {
  std::vector<const DialogueRecord*> out;
  for (const auto& d : dialogues) {
    if (d.split == name) out.push_back(&d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Delexicalization

namespace {

struct LexEntry {
  std::vector<std::string> value_words;
  std::string slot;
};

}  // namespace

std::pair<std::string, std::vector<DelexSpan>> delexicalize(
    const std::string& text, const std::vector<std::pair<std::string, std::string>>& lexicon) {
  std::vector<LexEntry> entries;
  for (const auto& [value, slot] : lexicon) {
    LexEntry e;
    e.value_words = split_words(value);
    e.slot = slot;
    if (!e.value_words.empty()) entries.push_back(std::move(e));
  }
  // longest value first so the longest span wins at equal start positions
  std::stable_sort(entries.begin(), entries.end(), [](const LexEntry& a, const LexEntry& b) {
    return a.value_words.size() > b.value_words.size();
  });

  std::vector<std::string> words = split_words(text);
  std::vector<std::string> out;
  std::vector<DelexSpan> spans;
  std::size_t i = 0;
  while (i < words.size()) {
    const LexEntry* hit = nullptr;
    for (const auto& e : entries) {
      if (i + e.value_words.size() > words.size()) continue;
      bool match = true;
      for (std::size_t j = 0; j < e.value_words.size(); ++j) {
        if (words[i + j] != e.value_words[j]) {
          match = false;
          break;
        }
      }
      if (match) {
        hit = &e;
        break;
      }
    }
    if (hit != nullptr) {
      DelexSpan span;
      span.slot = hit->slot;
      span.word_pos = static_cast<int>(out.size());
      for (std::size_t j = 0; j < hit->value_words.size(); ++j) {
        span.value += (j ? " " : "") + hit->value_words[j];
      }
      spans.push_back(std::move(span));
      out.push_back("[" + hit->slot + "]");
      i += hit->value_words.size();
    } else {
      out.push_back(words[i]);
      ++i;
    }
  }
  std::string joined;
  for (std::size_t j = 0; j < out.size(); ++j) joined += (j ? " " : "") + out[j];
  return {joined, spans};
}

std::string lexicalize(const std::string& text, const Entity& e) {
  std::vector<std::string> words = split_words(text);
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::string w = words[i];
    if (w.size() > 2 && w.front() == '[' && w.back() == ']') {
      std::string slot = w.substr(1, w.size() - 2);
      if (slot == "name") {
        w = e.name;
      } else if (e.slots.count(slot)) {
        w = e.slots.at(slot);
      }
    }
    out += (i ? " " : "") + w;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

struct DialogueBuilder {
  const World& world;
  const std::string& domain;
  Prng rng;

  GoalSpec make_goal() {
    const auto& entities = world.entities.at(domain);
    const Entity& target = entities[rng.below(entities.size())];
    GoalSpec goal;
    goal.domain = domain;
    std::vector<std::string> slots = canonical_informables();
    rng.shuffle(slots);
    int k_c = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < k_c; ++i) goal.constraints[slots[static_cast<std::size_t>(i)]] = target.value(slots[static_cast<std::size_t>(i)]);
    // requests range over phone/address plus whatever informables the goal
    // left open, so the requested set is not guessable from its size
    std::vector<std::string> reqs = {"phone", "address"};
    for (const auto& s : canonical_informables()) {
      if (!goal.constraints.count(s)) reqs.push_back(s);
    }
    rng.shuffle(reqs);
    int k_r = 1 + static_cast<int>(rng.below(2));
    goal.requests.assign(reqs.begin(), reqs.begin() + k_r);
    std::sort(goal.requests.begin(), goal.requests.end());
    return goal;
  }

  int offer_variant() { return static_cast<int>(rng.below(3)); }

  DialogueRecord build() {
    DialogueRecord dlg;
    dlg.domain = domain;
    dlg.goal = make_goal();
    const GoalSpec& goal = dlg.goal;

    auto lexicon = world.lexicon(domain);
    std::map<std::string, std::string> belief;

    // opening mentions a prefix of the goal constraints, in a shuffled order
    std::vector<std::string> goal_slots;
    for (const auto& [s, v] : goal.constraints) goal_slots.push_back(s);
    rng.shuffle(goal_slots);
    int mention = 1 + static_cast<int>(rng.below(goal_slots.size()));
    std::vector<std::pair<std::string, std::string>> mentioned;
    for (int i = 0; i < mention; ++i) {
      const std::string& s = goal_slots[static_cast<std::size_t>(i)];
      mentioned.push_back({s, goal.constraints.at(s)});
      belief[s] = goal.constraints.at(s);
    }
    std::string user_now = user_open_text(domain, mentioned, static_cast<int>(rng.below(2)));

    const Entity* offered = nullptr;
    std::vector<std::vector<std::string>> ask_batches;
    std::size_t batch_idx = 0;
    enum class Phase { Elicit, Requests, Bye } phase = Phase::Elicit;

    for (int guard = 0; guard < 32; ++guard) {
      auto q = world.query(domain, belief);
      TurnRecord turn;
      turn.user = user_now;
      turn.belief = belief;
      turn.db_count = q.count;

      if (phase == Phase::Elicit) {
        std::string missing;
        for (const auto& s : canonical_informables()) {
          if (!belief.count(s)) {
            missing = s;
            break;
          }
        }
        if (q.count > 1 && !missing.empty()) {
          turn.act = make_act({make_triple(ActType::Request, domain, missing)});
          turn.response = delexicalize(
              sys_request_text(missing, domain, static_cast<int>(rng.below(3))), lexicon).first;
          dlg.turns.push_back(std::move(turn));
          if (goal.constraints.count(missing)) {
            belief[missing] = goal.constraints.at(missing);
            user_now = user_answer_text(missing, goal.constraints.at(missing), domain,
                                        static_cast<int>(rng.below(3)));
          } else {
            belief[missing] = "dontcare";
            user_now = user_dontcare_text(static_cast<int>(rng.below(2)));
          }
          continue;
        }
        // offer: at least the goal entity always matches
        offered = q.matches.at(0);
        int variant = offer_variant();
        turn.act = sys_offer_act(variant, domain);
        turn.response = delexicalize(sys_offer_text(variant, *offered), lexicon).first;
        dlg.turns.push_back(std::move(turn));

        ask_batches.clear();
        bool vague = rng.below(2) == 0;  // asks for "the details", naming no slot
        if (vague) {
          ask_batches.push_back(goal.requests);
        } else {
          for (const auto& r : goal.requests) ask_batches.push_back({r});
        }
        batch_idx = 0;
        if (ask_batches.empty()) {
          user_now = user_bye_text(static_cast<int>(rng.below(2)));
          phase = Phase::Bye;
        } else {
          user_now = vague ? user_detail_ask_text(domain, static_cast<int>(rng.below(3)))
                           : user_ask_text(ask_batches[0], domain, static_cast<int>(rng.below(3)));
          phase = Phase::Requests;
        }
        continue;
      }

      if (phase == Phase::Requests) {
        const auto& batch = ask_batches[batch_idx];
        std::vector<ActTriple> triples;
        for (const auto& r : batch) triples.push_back(make_triple(ActType::Inform, domain, r));
        turn.act = make_act(std::move(triples));
        turn.response = delexicalize(sys_inform_text(batch, *offered), lexicon).first;
        dlg.turns.push_back(std::move(turn));
        ++batch_idx;
        if (batch_idx < ask_batches.size()) {
          user_now = user_ask_text(ask_batches[batch_idx], domain, static_cast<int>(rng.below(3)));
        } else {
          user_now = user_bye_text(static_cast<int>(rng.below(2)));
          phase = Phase::Bye;
        }
        continue;
      }

      turn.act = make_act({make_triple(ActType::Bye, domain, "")});
      turn.response = sys_bye_text(static_cast<int>(rng.below(2)));
      dlg.turns.push_back(std::move(turn));
      break;
    }
    return dlg;
  }
};

}  // namespace

Corpus generate_corpus(const CorpusConfig& config) {
  if (config.n_dialogues < 1) throw std::runtime_error("generate_corpus: n_dialogues must be >= 1");
  if (config.unlabeled_fraction < 0.0 || config.unlabeled_fraction > 1.0) {
    throw std::runtime_error("generate_corpus: unlabeled_fraction outside [0,1]");
  }
  if (config.domains.empty()) throw std::runtime_error("generate_corpus: no domains");
  World world = build_world(config.all_domains());

  Corpus corpus;
  corpus.config = config;
  Prng root(config.seed);

  for (int i = 0; i < config.n_dialogues; ++i) {
    const std::string& domain = config.domains[static_cast<std::size_t>(i) % config.domains.size()];
    DialogueBuilder b{world, domain, root.derive(static_cast<std::uint64_t>(i))};
    corpus.dialogues.push_back(b.build());
  }
  int n_holdout = config.holdout_domain.empty() ? 0 : config.holdout_dialogues();
  for (int i = 0; i < n_holdout; ++i) {
    DialogueBuilder b{world, config.holdout_domain,
                      root.derive(static_cast<std::uint64_t>(1000000 + i))};
    corpus.dialogues.push_back(b.build());
    corpus.dialogues.back().split = "holdout";
  }

  // main-split assignment: seeded shuffle, then 80/10/10
  std::vector<int> order(static_cast<std::size_t>(config.n_dialogues));
  for (int i = 0; i < config.n_dialogues; ++i) order[static_cast<std::size_t>(i)] = i;
  Prng split_rng = root.derive("splits");
  split_rng.shuffle(order);
  int n_val = std::max(1, config.n_dialogues / 10);
  int n_test = std::max(1, config.n_dialogues / 10);
  int n_train = config.n_dialogues - n_val - n_test;
  if (n_train < 1) throw std::runtime_error("generate_corpus: too few dialogues to split");
  for (int pos = 0; pos < config.n_dialogues; ++pos) {
    auto& d = corpus.dialogues[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])];
    d.split = pos < n_train ? "train" : (pos < n_train + n_val ? "val" : "test");
  }

  // strip act labels from exactly floor(f * n) main dialogues
  int n_strip = static_cast<int>(config.unlabeled_fraction * config.n_dialogues);
  std::vector<int> strip_order = order;
  Prng strip_rng = root.derive("unlabeled");
  strip_rng.shuffle(strip_order);
  for (int i = 0; i < n_strip; ++i) {
    auto& d = corpus.dialogues[static_cast<std::size_t>(strip_order[static_cast<std::size_t>(i)])];
    for (auto& t : d.turns) t.act.reset();
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// File form: one JSON object per line, header first

namespace {

json goal_to_json(const GoalSpec& g) {
  json j;
  j["domain"] = g.domain;
  j["constraints"] = g.constraints;
  j["requests"] = g.requests;
  return j;
}

GoalSpec goal_from_json(const json& j) {
  GoalSpec g;
  g.domain = j.at("domain").get<std::string>();
  for (const auto& [k, v] : j.at("constraints").items()) g.constraints[k] = v.get<std::string>();
  for (const auto& v : j.at("requests")) g.requests.push_back(v.get<std::string>());
  return g;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("corpus: cannot write " + path);
  json header;
  header["format"] = 1;
  header["domains"] = corpus.config.domains;
  header["holdout"] = corpus.config.holdout_domain;
  header["n_dialogues"] = corpus.config.n_dialogues;
  header["unlabeled_fraction"] = corpus.config.unlabeled_fraction;
  header["seed"] = corpus.config.seed;
  out << header.dump() << "\n";
  for (const auto& d : corpus.dialogues) {
    json j;
    j["domain"] = d.domain;
    j["split"] = d.split;
    j["goal"] = goal_to_json(d.goal);
    json turns = json::array();
    for (const auto& t : d.turns) {
      json jt;
      jt["user"] = t.user;
      jt["resp"] = t.response;
      jt["belief"] = t.belief;
      jt["db"] = t.db_count;
      if (t.act.has_value()) {
        jt["act"] = serialize_act(*t.act);
      } else {
        jt["act"] = nullptr;
      }
      turns.push_back(jt);
    }
    j["turns"] = turns;
    out << j.dump() << "\n";
  }
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("corpus: cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("corpus: empty file " + path);
  json header = json::parse(line);
  if (header.at("format").get<int>() != 1) {
    throw std::runtime_error("corpus: unsupported format version");
  }
  Corpus corpus;
  corpus.config.domains.clear();
  for (const auto& v : header.at("domains")) corpus.config.domains.push_back(v.get<std::string>());
  corpus.config.holdout_domain = header.at("holdout").get<std::string>();
  corpus.config.n_dialogues = header.at("n_dialogues").get<int>();
  corpus.config.unlabeled_fraction = header.at("unlabeled_fraction").get<double>();
  corpus.config.seed = header.at("seed").get<std::uint64_t>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    DialogueRecord d;
    d.domain = j.at("domain").get<std::string>();
    d.split = j.at("split").get<std::string>();
    d.goal = goal_from_json(j.at("goal"));
    for (const auto& jt : j.at("turns")) {
      TurnRecord t;
      t.user = jt.at("user").get<std::string>();
      t.response = jt.at("resp").get<std::string>();
      for (const auto& [k, v] : jt.at("belief").items()) t.belief[k] = v.get<std::string>();
      t.db_count = jt.at("db").get<int>();
      if (!jt.at("act").is_null()) t.act = parse_act(jt.at("act").get<std::string>());
      d.turns.push_back(std::move(t));
    }
    corpus.dialogues.push_back(std::move(d));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

std::vector<std::string> response_placeholders(const std::string& response) {
  std::vector<std::string> out;
  for (const auto& w : split_words(response)) {
    if (w.size() > 2 && w.front() == '[' && w.back() == ']') {
      out.push_back(w.substr(1, w.size() - 2));
    }
  }
  return out;
}

bool act_licenses_slot(const DialogueAct& act, const std::string& slot) {
  for (const auto& t : act.triples) {
    if (t.slot != slot) continue;
    if (t.type == ActType::Inform || t.type == ActType::Offer || t.type == ActType::Recommend ||
        t.type == ActType::Select) {
      return true;
    }
  }
  return false;
}

}  // namespace

void validate_corpus(const Corpus& corpus, const World& world) {
  Vocabulary vocab = build_world_vocab(corpus.config.all_domains());
  for (std::size_t di = 0; di < corpus.dialogues.size(); ++di) {
    const auto& d = corpus.dialogues[di];
    auto fail = [&](const std::string& why) {
      throw std::runtime_error("corpus: dialogue " + std::to_string(di) + " (" + d.domain + "): " +
                               why);
    };
    if (d.turns.empty()) fail("no turns");
    std::map<std::string, std::string> prev;
    for (std::size_t ti = 0; ti < d.turns.size(); ++ti) {
      const auto& t = d.turns[ti];
      // belief grows monotonically and only with goal values or dontcare
      for (const auto& [slot, value] : prev) {
        auto it = t.belief.find(slot);
        if (it == t.belief.end() || it->second != value) fail("belief shrank at turn " + std::to_string(ti));
      }
      for (const auto& [slot, value] : t.belief) {
        if (value == "dontcare") {
          if (d.goal.constraints.count(slot)) fail("dontcare on a goal slot " + slot);
        } else {
          auto it = d.goal.constraints.find(slot);
          if (it == d.goal.constraints.end() || it->second != value) {
            fail("belief value for " + slot + " not in the goal");
          }
        }
      }
      std::map<std::string, std::string> effective;
      for (const auto& [slot, value] : t.belief) effective[slot] = value;
      if (world.query(d.domain, effective).count != t.db_count) {
        fail("db count mismatch at turn " + std::to_string(ti));
      }
      if (t.act.has_value()) {
        for (const auto& slot : response_placeholders(t.response)) {
          if (!act_licenses_slot(*t.act, slot)) {
            fail("placeholder [" + slot + "] not licensed by act " + serialize_act(*t.act));
          }
        }
      }
      for (const auto& w : split_words(t.response)) {
        if (!vocab.contains(w)) fail("response word '" + w + "' outside the vocabulary");
      }
      for (const auto& w : split_words(t.user)) {
        if (!vocab.contains(w)) fail("user word '" + w + "' outside the vocabulary");
      }
      prev = t.belief;
    }
  }
}

// ---------------------------------------------------------------------------
// Slot mapping

void SlotMapping::validate_injective() const {
  std::set<std::string> targets;
  for (const auto& [from, to] : rename) {
    if (!targets.insert(to).second) {
      throw std::runtime_error("slot mapping: target '" + to + "' used twice");
    }
  }
}

namespace {

// canonical targets are fixed points, so applying a mapping twice equals
// applying it once
std::string map_slot(const SlotMapping& m, const std::string& slot,
                     const std::set<std::string>& image, std::set<std::string>& missing) {
  auto it = m.rename.find(slot);
  if (it != m.rename.end()) return it->second;
  if (image.count(slot)) return slot;
  missing.insert(slot);
  return slot;
}

}  // namespace

Corpus map_slots(const Corpus& corpus, const SlotMapping& mapping) {
  mapping.validate_injective();
  std::set<std::string> image;
  for (const auto& [from, to] : mapping.rename) image.insert(to);
  std::set<std::string> missing;
  Corpus out = corpus;
  for (auto& d : out.dialogues) {
    std::map<std::string, std::string> constraints;
    for (const auto& [slot, value] : d.goal.constraints) {
      constraints[map_slot(mapping, slot, image, missing)] = value;
    }
    d.goal.constraints = std::move(constraints);
    for (auto& r : d.goal.requests) r = map_slot(mapping, r, image, missing);
    for (auto& t : d.turns) {
      std::map<std::string, std::string> belief;
      for (const auto& [slot, value] : t.belief) belief[map_slot(mapping, slot, image, missing)] = value;
      t.belief = std::move(belief);
      if (t.act.has_value()) {
        std::vector<ActTriple> triples;
        for (const auto& tr : t.act->triples) {
          triples.push_back(make_triple(tr.type, tr.domain,
                                        tr.slot.empty() ? "" : map_slot(mapping, tr.slot, image, missing)));
        }
        t.act = make_act(std::move(triples));
      }
      // placeholders in the response
      std::vector<std::string> words = split_words(t.response);
      std::string resp;
      for (std::size_t i = 0; i < words.size(); ++i) {
        std::string w = words[i];
        if (w.size() > 2 && w.front() == '[' && w.back() == ']') {
          w = "[" + map_slot(mapping, w.substr(1, w.size() - 2), image, missing) + "]";
        }
        resp += (i ? " " : "") + w;
      }
      t.response = resp;
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& s : missing) list += (list.empty() ? "" : ", ") + s;
    throw std::runtime_error("slot mapping: unmapped slots: " + list);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<DialogueAct> extract_corpus_acts(const Corpus& corpus) {
  std::set<std::string> seen;
  std::vector<std::pair<std::string, DialogueAct>> acts;
  int labeled = 0;
  for (const auto& d : corpus.dialogues) {
    if (d.split == "holdout") continue;  // the table never sees held-out labels
    for (const auto& t : d.turns) {
      if (!t.act.has_value()) continue;
      ++labeled;
      std::string key = serialize_act(*t.act);
      if (seen.insert(key).second) acts.push_back({key, *t.act});
    }
  }
  if (labeled == 0) throw std::runtime_error("extract_corpus_acts: no labeled turns");
  std::sort(acts.begin(), acts.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<DialogueAct> out;
  for (auto& [key, act] : acts) out.push_back(std::move(act));
  return out;
}

std::vector<float> proxy_latent(const TurnRecord& turn, const ActEncodeFn& encode) {
  if (split_words(turn.response).empty()) {
    throw std::runtime_error("proxy_latent: empty response");
  }
  return encode(turn.response);
}

CorpusSplits split_corpus(const Corpus& corpus, SplitMode mode, int k, std::uint64_t seed) {
  CorpusSplits s;
  s.train = corpus.split("train");
  s.val = corpus.split("val");
  s.test = corpus.split("test");
  s.holdout = corpus.split("holdout");
  if (mode == SplitMode::ZeroShot) {
    s.train.clear();
  } else if (mode == SplitMode::FewShot) {
    if (k < 1 || k > static_cast<int>(s.train.size())) {
      throw std::runtime_error("split_corpus: few-shot k=" + std::to_string(k) +
                               " outside 1.." + std::to_string(s.train.size()));
    }
    Prng rng(seed);
    rng.shuffle(s.train);
    s.train.resize(static_cast<std::size_t>(k));
  }
  return s;
}

}  // namespace latact
