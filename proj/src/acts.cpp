#include "latact/acts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "latact/vocab.hpp"

namespace latact {

namespace {

const char* kActTypeNames[] = {"inform", "request", "offer",  "recommend",
                               "select", "bye",     "greet",  "no-offer"};
constexpr int kNumActTypes = 8;

}  // namespace

const char* act_type_name(ActType t) { return kActTypeNames[static_cast<int>(t)]; }

bool is_act_type_name(const std::string& s) {
  for (int i = 0; i < kNumActTypes; ++i) {
    if (s == kActTypeNames[i]) return true;
  }
  return false;
}

ActType act_type_from_name(const std::string& s) {
  for (int i = 0; i < kNumActTypes; ++i) {
    if (s == kActTypeNames[i]) return static_cast<ActType>(i);
  }
  throw std::runtime_error("unknown act type '" + s + "'");
}

bool act_type_is_slotless(ActType t) {
  return t == ActType::Bye || t == ActType::Greet || t == ActType::NoOffer;
}

bool ActTriple::operator<(const ActTriple& o) const {
  if (domain != o.domain) return domain < o.domain;
  std::string a = act_type_name(type), b = act_type_name(o.type);
  if (a != b) return a < b;
  return slot < o.slot;
}

std::string ActTriple::str() const {
  std::string s = "(" + std::string(act_type_name(type)) + "," + domain + ",";
  s += slot.empty() ? "-" : slot;
  s += ")";
  return s;
}

ActTriple make_triple(ActType type, std::string domain, std::string slot) {
  if (domain.empty()) throw std::runtime_error("act triple: empty domain");
  if (act_type_is_slotless(type)) {
    if (!slot.empty()) {
      throw std::runtime_error(std::string("act triple: ") + act_type_name(type) +
                               " takes no slot, got '" + slot + "'");
    }
  } else if (slot.empty()) {
    throw std::runtime_error(std::string("act triple: ") + act_type_name(type) +
                             " requires a slot");
  }
  return ActTriple{type, std::move(domain), std::move(slot)};
}

bool DialogueAct::contains(const ActTriple& t) const {
  return std::find(triples.begin(), triples.end(), t) != triples.end();
}

bool DialogueAct::contains_slot(const std::string& slot) const {
  for (const auto& t : triples) {
    if (t.slot == slot) return true;
  }
  return false;
}

DialogueAct make_act(std::vector<ActTriple> triples) {
  if (triples.empty()) throw std::runtime_error("dialogue act: empty triple set");
  std::sort(triples.begin(), triples.end());
  triples.erase(std::unique(triples.begin(), triples.end()), triples.end());
  return DialogueAct{std::move(triples)};
}

// ---------------------------------------------------------------------------
// Schema

const ActSchema::Domain* ActSchema::find(const std::string& name) const {
  for (const auto& d : domains) {
    if (d.name == name) return &d;
  }
  return nullptr;
}

std::vector<ActTriple> ActSchema::legal_triples(const Domain& d) const {
  std::vector<ActTriple> out;
  for (ActType t : d.act_types) {
    if (act_type_is_slotless(t)) {
      out.push_back(make_triple(t, d.name, ""));
      continue;
    }
    std::vector<std::string> slots;
    if (t == ActType::Request) {
      slots = d.requestable;
    } else {
      slots = d.informable;
      slots.insert(slots.end(), d.requestable.begin(), d.requestable.end());
    }
    std::sort(slots.begin(), slots.end());
    slots.erase(std::unique(slots.begin(), slots.end()), slots.end());
    for (const auto& s : slots) out.push_back(make_triple(t, d.name, s));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

ActSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("schema: cannot read " + path);
  nlohmann::json j;
  in >> j;
  ActSchema s;
  s.max_triples = j.value("max_triples", 3);
  if (s.max_triples < 1) throw std::runtime_error("schema: max_triples must be >= 1");
  for (const auto& jd : j.at("domains")) {
    ActSchema::Domain d;
    d.name = jd.at("name").get<std::string>();
    for (const auto& v : jd.at("informable")) d.informable.push_back(v.get<std::string>());
    for (const auto& v : jd.at("requestable")) d.requestable.push_back(v.get<std::string>());
    for (const auto& v : jd.at("act_types")) d.act_types.push_back(act_type_from_name(v.get<std::string>()));
    s.domains.push_back(std::move(d));
  }
  return s;
}

void save_schema(const ActSchema& schema, const std::string& path) {
  nlohmann::json j;
  j["max_triples"] = schema.max_triples;
  j["domains"] = nlohmann::json::array();
  for (const auto& d : schema.domains) {
    nlohmann::json jd;
    jd["name"] = d.name;
    jd["informable"] = d.informable;
    jd["requestable"] = d.requestable;
    auto types = nlohmann::json::array();
    for (ActType t : d.act_types) types.push_back(act_type_name(t));
    jd["act_types"] = types;
    j["domains"].push_back(jd);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("schema: cannot write " + path);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Canonical surface form

std::string serialize_act(const DialogueAct& act) {
  if (act.triples.empty()) throw std::runtime_error("serialize: empty act");
  std::string out;
  std::string cur_domain;
  const char* cur_type = nullptr;
  for (const auto& t : act.triples) {
    if (t.domain != cur_domain) {
      if (!out.empty()) out.push_back(' ');
      out += "[" + t.domain + "]";
      cur_domain = t.domain;
      cur_type = nullptr;
    }
    const char* tn = act_type_name(t.type);
    if (cur_type == nullptr || std::string(cur_type) != tn) {
      out += " [" + std::string(tn) + "]";
      cur_type = tn;
    }
    if (!t.slot.empty()) out += " " + t.slot;
  }
  return out;
}

namespace {

struct ParseToken {
  std::string text;
  bool bracketed = false;
  int position = 0;  // 1-based token position
};

[[noreturn]] void parse_fail(const ParseToken& tok, const std::string& why) {
  throw std::runtime_error("parse_act: " + why + " at token " + std::to_string(tok.position) +
                           " ('" + tok.text + "')");
}

}  // namespace

DialogueAct parse_act(const std::string& text, const ActSchema* schema) {
  std::vector<ParseToken> tokens;
  for (const auto& w : split_words(text)) {
    ParseToken t;
    if (w.size() >= 2 && w.front() == '[' && w.back() == ']') {
      t.text = w.substr(1, w.size() - 2);
      t.bracketed = true;
    } else {
      t.text = w;
    }
    t.position = static_cast<int>(tokens.size()) + 1;
    tokens.push_back(std::move(t));
  }
  if (tokens.empty()) throw std::runtime_error("parse_act: empty act string");

  std::vector<ActTriple> triples;
  std::string domain;
  const ActSchema::Domain* dschema = nullptr;
  bool have_type = false;
  ActType type = ActType::Inform;
  int slots_for_type = 0;

  auto check_type_complete = [&](const ParseToken& at) {
    if (have_type && !act_type_is_slotless(type) && slots_for_type == 0) {
      parse_fail(at, std::string("act type '") + act_type_name(type) + "' expects a slot");
    }
  };

  for (const auto& tok : tokens) {
    if (tok.bracketed) {
      if (is_act_type_name(tok.text)) {
        if (domain.empty()) parse_fail(tok, "act type before any domain");
        check_type_complete(tok);
        type = act_type_from_name(tok.text);
        have_type = true;
        slots_for_type = 0;
        if (act_type_is_slotless(type)) triples.push_back(make_triple(type, domain, ""));
      } else {
        // a new domain group; a bracketed non-type right after a domain is
        // an unknown act type
        if (!domain.empty() && !have_type) parse_fail(tok, "unknown act type '" + tok.text + "'");
        check_type_complete(tok);
        if (schema != nullptr) {
          dschema = schema->find(tok.text);
          if (dschema == nullptr) parse_fail(tok, "unknown domain '" + tok.text + "'");
        }
        domain = tok.text;
        have_type = false;
      }
    } else {
      if (domain.empty()) parse_fail(tok, "slot before any domain");
      if (!have_type) parse_fail(tok, "slot before any act type");
      if (act_type_is_slotless(type)) {
        parse_fail(tok, std::string("act type '") + act_type_name(type) + "' takes no slot");
      }
      if (dschema != nullptr) {
        auto in = [&](const std::vector<std::string>& v) {
          return std::find(v.begin(), v.end(), tok.text) != v.end();
        };
        if (!in(dschema->informable) && !in(dschema->requestable)) {
          parse_fail(tok, "unknown slot '" + tok.text + "' for domain '" + domain + "'");
        }
      }
      triples.push_back(make_triple(type, domain, tok.text));
      ++slots_for_type;
    }
  }
  check_type_complete(tokens.back());
  if (!have_type) parse_fail(tokens.back(), "domain without any act type");
  return make_act(std::move(triples));
}

// ---------------------------------------------------------------------------
// Enumeration

std::vector<DialogueAct> enumerate_schema_acts(const ActSchema& schema, std::size_t limit) {
  // count first so oversize caps fail before any allocation
  std::size_t total = 0;
  for (const auto& d : schema.domains) {
    std::size_t t = schema.legal_triples(d).size();
    std::size_t combos = 0;
    for (int k = 1; k <= schema.max_triples && static_cast<std::size_t>(k) <= t; ++k) {
      // C(t, k), watching for overflow against the limit
      std::size_t c = 1;
      for (int i = 0; i < k; ++i) c = c * (t - static_cast<std::size_t>(i)) / static_cast<std::size_t>(i + 1);
      combos += c;
      if (combos > limit) break;
    }
    total += combos;
    if (total > limit) {
      throw std::runtime_error("enumerate_schema_acts: " + std::to_string(total) +
                               "+ combinations exceed the limit of " + std::to_string(limit) +
                               "; use a smaller max_triples cap");
    }
  }

  std::vector<DialogueAct> out;
  out.reserve(total);
  for (const auto& d : schema.domains) {
    std::vector<ActTriple> triples = schema.legal_triples(d);
    int t = static_cast<int>(triples.size());
    for (int k = 1; k <= schema.max_triples && k <= t; ++k) {
      std::vector<int> idx(static_cast<std::size_t>(k));
      for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
      while (true) {
        std::vector<ActTriple> chosen;
        chosen.reserve(static_cast<std::size_t>(k));
        for (int i : idx) chosen.push_back(triples[static_cast<std::size_t>(i)]);
        out.push_back(make_act(std::move(chosen)));
        // next combination
        int pos = k - 1;
        while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == t - k + pos) --pos;
        if (pos < 0) break;
        ++idx[static_cast<std::size_t>(pos)];
        for (int i = pos + 1; i < k; ++i) {
          idx[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(i - 1)] + 1;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Table, quantization, filtering

ActTable build_act_table(const std::vector<DialogueAct>& acts, const ActEncodeFn& encode) {
  if (acts.empty()) throw std::runtime_error("act table: no acts to embed");
  ActTable table;
  std::set<std::string> seen;
  for (const auto& a : acts) {
    std::string key = serialize_act(a);
    if (!seen.insert(key).second) {
      std::cerr << "act table: dropping duplicate act " << key << "\n";
      continue;
    }
    ActTable::Entry e;
    e.act = a;
    e.key = std::move(key);
    e.embedding = encode(e.key);
    if (table.d_act == 0) table.d_act = static_cast<int>(e.embedding.size());
    if (static_cast<int>(e.embedding.size()) != table.d_act) {
      throw std::runtime_error("act table: inconsistent embedding width");
    }
    double norm = 0.0;
    for (float v : e.embedding) norm += static_cast<double>(v) * v;
    norm = std::sqrt(norm);
    if (std::abs(norm - 1.0) > 1e-6) {
      throw std::runtime_error("act table: embedding for " + e.key + " has norm " +
                               std::to_string(norm));
    }
    table.entries.push_back(std::move(e));
  }
  return table;
}

QuantizeResult quantize(const std::vector<float>& z_hat, const ActTable& table) {
  if (table.empty()) throw std::runtime_error("quantize: empty act table");
  if (static_cast<int>(z_hat.size()) != table.d_act) {
    throw std::runtime_error("quantize: vector width " + std::to_string(z_hat.size()) +
                             " does not match table width " + std::to_string(table.d_act));
  }
  QuantizeResult best;
  for (std::size_t i = 0; i < table.entries.size(); ++i) {
    const auto& emb = table.entries[i].embedding;
    float d = 0.0f;
    for (std::size_t j = 0; j < emb.size(); ++j) {
      float diff = z_hat[j] - emb[j];
      d += diff * diff;
    }
    if (best.index < 0 || d < best.squared_distance) {
      best.index = static_cast<int>(i);
      best.squared_distance = d;
    }
  }
  return best;
}

std::string ControlFilter::str() const {
  std::string s = "require{";
  for (std::size_t i = 0; i < required.size(); ++i) s += (i ? " " : "") + required[i].str();
  s += "} forbid{";
  for (std::size_t i = 0; i < forbidden.size(); ++i) s += (i ? " " : "") + forbidden[i].str();
  s += "}";
  return s;
}

ActTable filter_table(const ActTable& table, const ControlFilter& filter) {
  for (const auto& r : filter.required) {
    for (const auto& f : filter.forbidden) {
      if (r == f) {
        throw std::runtime_error("filter: triple " + r.str() + " both required and forbidden");
      }
    }
  }
  ActTable out;
  out.d_act = table.d_act;
  for (const auto& e : table.entries) {
    bool ok = true;
    for (const auto& r : filter.required) {
      if (!e.act.contains(r)) {
        ok = false;
        break;
      }
    }
    if (ok) {
      for (const auto& f : filter.forbidden) {
        if (e.act.contains(f)) {
          ok = false;
          break;
        }
      }
    }
    if (ok) out.entries.push_back(e);
  }
  if (out.entries.empty()) {
    throw FilterUnsatisfiable("filter leaves no acts: " + filter.str());
  }
  return out;
}

// ---------------------------------------------------------------------------
// F1

PrfScores act_f1(const DialogueAct& predicted, const DialogueAct& gold) {
  int tp = 0;
  for (const auto& t : predicted.triples) {
    if (gold.contains(t)) ++tp;
  }
  int fp = static_cast<int>(predicted.triples.size()) - tp;
  int fn = static_cast<int>(gold.triples.size()) - tp;
  PrfScores s;
  s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
  s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
  s.f1 = (s.precision + s.recall) == 0.0 ? 0.0
                                         : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

void MicroF1::add(const DialogueAct& predicted, const DialogueAct& gold) {
  int tp = 0;
  for (const auto& t : predicted.triples) {
    if (gold.contains(t)) ++tp;
  }
  tp_ += tp;
  fp_ += static_cast<int>(predicted.triples.size()) - tp;
  fn_ += static_cast<int>(gold.triples.size()) - tp;
  ++turns_;
}

void MicroF1::add_unpredicted(const DialogueAct& gold) {
  fn_ += static_cast<int>(gold.triples.size());
  ++turns_;
}

PrfScores MicroF1::result() const {
  PrfScores s;
  s.precision = tp_ + fp_ == 0 ? 0.0 : static_cast<double>(tp_) / static_cast<double>(tp_ + fp_);
  s.recall = tp_ + fn_ == 0 ? 0.0 : static_cast<double>(tp_) / static_cast<double>(tp_ + fn_);
  s.f1 = (s.precision + s.recall) == 0.0 ? 0.0
                                         : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

// ---------------------------------------------------------------------------
// Dump

std::string table_to_text(const ActTable& table) {
  std::string out;
  char buf[64];
  for (const auto& e : table.entries) {
    out += e.key;
    out.push_back('\t');
    for (std::size_t j = 0; j < e.embedding.size(); ++j) {
      if (j) out.push_back(' ');
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(e.embedding[j]));
      out += buf;
    }
    out.push_back('\n');
  }
  return out;
}

void dump_table(const ActTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("table dump: cannot write " + path);
  out << table_to_text(table);
}

}  // namespace latact
