#include "latact/world.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "latact/prng.hpp"

namespace latact {

namespace {

const std::vector<std::string> kAreas = {"north", "south", "east", "west", "centre"};
const std::vector<std::string> kPrices = {"cheap", "moderate", "expensive"};
const std::vector<std::string> kNameAdj = {"golden", "silver", "royal", "old", "happy"};
const std::vector<std::string> kNameNoun = {"lion", "crown", "garden", "palace", "corner"};
const std::vector<std::string> kStreets = {"mill", "king", "bridge", "station", "market"};

const std::map<std::string, std::vector<std::string>>& type_pools() {
  static const std::map<std::string, std::vector<std::string>> pools = {
      {"restaurant", {"chinese", "italian", "north indian", "thai", "seafood"}},
      {"hotel", {"boutique", "budget", "luxury", "riverside", "family"}},
      {"attraction", {"museum", "park", "cinema", "gallery", "theatre"}},
      {"shop", {"book", "gift", "toy", "flower", "music"}},
  };
  return pools;
}

std::string domain_noun(const std::string& domain) { return domain; }

// each domain phrases a slice of its turns in its own way, so an unseen
// domain is a genuine surface shift, not only new entity names
const std::map<std::string, std::string>& open_extras() {
  static const std::map<std::string, std::string> m = {
      {"restaurant", "hi , can you find me {a} {parts} to dine at ?"},
      {"hotel", "hi , i need {a} {parts} to stay at ."},
      {"attraction", "hi , what about {a} {parts} to visit ?"},
      {"shop", "hi , i want to find {a} {parts} to browse ."},
  };
  return m;
}

const std::map<std::string, std::string>& ask_extras() {
  static const std::map<std::string, std::string> m = {
      {"restaurant", "could you tell me the {p} ?"},
      {"hotel", "i also need the {p} ."},
      {"attraction", "and the {p} ?"},
      {"shop", "would you mind sharing the {p} ?"},
  };
  return m;
}

const std::map<std::string, std::string>& detail_extras() {
  static const std::map<std::string, std::string> m = {
      {"restaurant", "could you give me the details please ?"},
      {"hotel", "please share the details ."},
      {"attraction", "details please ?"},
      {"shop", "i would love the details ."},
  };
  return m;
}

const std::map<std::string, std::string>& answer_extras() {
  static const std::map<std::string, std::string> m = {
      {"restaurant", "{v} would be great ."},
      {"hotel", "let us do {v} ."},
      {"attraction", "make it {v} ."},
      {"shop", "{v} sounds right ."},
  };
  return m;
}

const std::map<std::string, std::string>& request_leads() {
  static const std::map<std::string, std::string> m = {
      {"restaurant", "sure ,"},
      {"hotel", "of course ,"},
      {"attraction", "happy to help ,"},
      {"shop", "no problem ,"},
  };
  return m;
}

std::string substitute(std::string text, const std::string& key, const std::string& value) {
  auto pos = text.find(key);
  while (pos != std::string::npos) {
    text.replace(pos, key.size(), value);
    pos = text.find(key, pos + value.size());
  }
  return text;
}

std::string article_for(const std::string& phrase) {
  if (phrase.empty()) return "a";
  char c = phrase.front();
  return (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') ? "an" : "a";
}

std::string pick(const std::vector<std::string>& v, int variant) {
  return v[static_cast<std::size_t>(variant) % v.size()];
}

// every fixed surface string, for vocabulary coverage; {x} marks a value
const std::vector<std::string>& template_skeletons() {
  static const std::vector<std::string> v = {
      "what area of town do you have in mind ?",
      "which area would you like ?",
      "do you have a price range in mind ?",
      "what price range are you looking for ?",
      "what type of food would you like ?",
      "any particular type of food ?",
      "what type of {noun} are you looking for ?",
      "any particular type of {noun} ?",
      "i recommend {name} .",
      "how about {name} ?",
      "{name} is a nice option in the {area} .",
      "{name} is a {type} place in the {area} .",
      "the phone number is {v}",
      "the address is {v}",
      "it is in the {v} part of town",
      "it is in the {v} price range",
      "it is a {v} place",
      "and",
      ".",
      "you are welcome . goodbye !",
      "glad i could help . have a great day !",
      "i am sorry , i could not find anything like that .",
      "hello , i am looking for a an {parts} in the {area} .",
      "the {v} please .",
      "somewhere in the {v} .",
      "{v} please .",
      "something {v} .",
      "i would like {v} .",
      "i do not mind .",
      "any is fine .",
      "what is the {p} ?",
      "can i get the {p} ?",
      "what is the {p} and the {p} ?",
      "can i get the details ?",
      "what are the details ?",
      "thank you , goodbye .",
      "thanks , bye !",
      "phone number",
      "price range",
      "may i ask what {p} you prefer ?",
  };
  return v;
}

const std::vector<std::string>& extra_skeletons() {
  static std::vector<std::string> v = [] {
    std::vector<std::string> out;
    for (const auto& [d, t] : open_extras()) out.push_back(t);
    for (const auto& [d, t] : ask_extras()) out.push_back(t);
    for (const auto& [d, t] : detail_extras()) out.push_back(t);
    for (const auto& [d, t] : answer_extras()) out.push_back(t);
    for (const auto& [d, t] : request_leads()) out.push_back(t);
    return out;
  }();
  return v;
}

}  // namespace

const std::string& slot_phrase(const std::string& slot) {
  static const std::map<std::string, std::string> phrases = {
      {"phone", "phone number"}, {"address", "address"},     {"area", "area"},
      {"pricerange", "price range"}, {"type", "type"},
  };
  auto it = phrases.find(slot);
  if (it == phrases.end()) throw std::runtime_error("no phrase for slot '" + slot + "'");
  return it->second;
}

const std::string& Entity::value(const std::string& slot) const {
  if (slot == "name") return name;
  auto it = slots.find(slot);
  if (it == slots.end()) {
    throw std::runtime_error("entity " + name + " has no slot '" + slot + "'");
  }
  return it->second;
}

const std::vector<std::string>& known_domains() {
  static const std::vector<std::string> v = {"restaurant", "hotel", "attraction", "shop"};
  return v;
}

World build_world(const std::vector<std::string>& domains) {
  World w;
  w.domains = domains;
  for (const auto& d : domains) {
    auto pool = type_pools().find(d);
    if (pool == type_pools().end()) {
      std::string known;
      for (const auto& k : known_domains()) known += (known.empty() ? "" : ", ") + k;
      throw std::runtime_error("unknown domain '" + d + "' (known: " + known + ")");
    }
    Prng rng(fnv1a("world:" + d));
    std::vector<Entity>& list = w.entities[d];
    for (int i = 0; i < 25; ++i) {
      Entity e;
      e.domain = d;
      e.name = kNameAdj[static_cast<std::size_t>(i / 5)] + " " +
               kNameNoun[static_cast<std::size_t>(i % 5)];
      e.slots["area"] = kAreas[rng.below(kAreas.size())];
      e.slots["pricerange"] = kPrices[rng.below(kPrices.size())];
      e.slots["type"] = pool->second[rng.below(pool->second.size())];
      char phone[16];
      std::snprintf(phone, sizeof(phone), "01223 %06llu",
                    static_cast<unsigned long long>(100000 + rng.below(900000)));
      e.slots["phone"] = phone;
      e.slots["address"] = std::to_string(1 + rng.below(40)) + " " +
                           kStreets[rng.below(kStreets.size())] + " street";
      list.push_back(std::move(e));
    }
    std::sort(list.begin(), list.end(),
              [](const Entity& a, const Entity& b) { return a.name < b.name; });
  }
  return w;
}

DbQueryResult World::query(const std::string& domain,
                           const std::map<std::string, std::string>& constraints) const {
  auto it = entities.find(domain);
  if (it == entities.end()) throw std::runtime_error("db query: unknown domain '" + domain + "'");
  for (const auto& [slot, value] : constraints) {
    const auto& inf = canonical_informables();
    if (std::find(inf.begin(), inf.end(), slot) == inf.end()) {
      throw std::runtime_error("db query: unknown constraint slot '" + slot + "'");
    }
    (void)value;
  }
  DbQueryResult r;
  for (const Entity& e : it->second) {
    bool ok = true;
    for (const auto& [slot, value] : constraints) {
      if (value == "dontcare") continue;
      if (e.value(slot) != value) {
        ok = false;
        break;
      }
    }
    if (ok) r.matches.push_back(&e);
  }
  r.count = static_cast<int>(r.matches.size());  // matches stay name-sorted
  return r;
}

std::vector<std::pair<std::string, std::string>> World::lexicon(const std::string& domain) const {
  auto it = entities.find(domain);
  if (it == entities.end()) throw std::runtime_error("lexicon: unknown domain '" + domain + "'");
  std::set<std::pair<std::string, std::string>> seen;
  for (const Entity& e : it->second) {
    seen.insert({e.name, "name"});
    for (const auto& [slot, value] : e.slots) seen.insert({value, slot});
  }
  return {seen.begin(), seen.end()};
}

ActSchema world_schema(const std::vector<std::string>& domains, int max_triples) {
  ActSchema s;
  s.max_triples = max_triples;
  for (const auto& d : domains) {
    ActSchema::Domain ds;
    ds.name = d;
    ds.informable = canonical_informables();
    ds.informable.push_back("name");
    ds.requestable = canonical_requestables();
    ds.act_types = {ActType::Inform, ActType::Request, ActType::Bye};
    s.domains.push_back(std::move(ds));
  }
  return s;
}

Vocabulary build_world_vocab(const std::vector<std::string>& domains) {
  std::vector<std::string> words;
  for (const auto& skel : template_skeletons()) {
    for (const auto& w : split_words(skel)) {
      if (w.find('{') == std::string::npos) words.push_back(w);
    }
  }
  for (const auto& skel : extra_skeletons()) {
    for (const auto& w : split_words(skel)) {
      if (w.find('{') == std::string::npos) words.push_back(w);
    }
  }
  for (const auto& d : domains) {
    words.push_back(d);
    words.push_back("[" + d + "]");
    auto pool = type_pools().find(d);
    if (pool == type_pools().end()) throw std::runtime_error("unknown domain '" + d + "'");
    for (const auto& t : pool->second) {
      for (const auto& w : split_words(t)) words.push_back(w);
    }
  }
  for (const auto& a : kAreas) words.push_back(a);
  for (const auto& p : kPrices) words.push_back(p);
  for (int i = 0; i < 8; ++i) {
    words.push_back(act_type_name(static_cast<ActType>(i)));
    words.push_back("[" + std::string(act_type_name(static_cast<ActType>(i))) + "]");
  }
  for (const auto& s : canonical_requestables()) {
    words.push_back(s);
    words.push_back("[" + s + "]");
  }
  words.push_back("name");
  words.push_back("[name]");
  return Vocabulary::from_words(words);
}

// ---------------------------------------------------------------------------
// Templates

std::string sys_request_text(const std::string& slot, const std::string& domain, int variant) {
  std::string lead = request_leads().count(domain) ? request_leads().at(domain) : "well ,";
  std::string extra = lead + " may i ask what " + slot_phrase(slot) + " you prefer ?";
  if (slot == "area") {
    return pick({"what area of town do you have in mind ?", "which area would you like ?", extra},
                variant);
  }
  if (slot == "pricerange") {
    return pick({"do you have a price range in mind ?", "what price range are you looking for ?",
                 extra},
                variant);
  }
  if (slot == "type") {
    if (domain == "restaurant") {
      return pick({"what type of food would you like ?", "any particular type of food ?", extra},
                  variant);
    }
    std::string noun = domain_noun(domain);
    return pick({"what type of " + noun + " are you looking for ?",
                 "any particular type of " + noun + " ?", extra},
                variant);
  }
  throw std::runtime_error("no request template for slot '" + slot + "'");
}

std::string sys_offer_text(int variant, const Entity& e) {
  switch (variant % 3) {
    case 0:
      return pick({"i recommend " + e.name + " .", "how about " + e.name + " ?"}, variant / 3);
    case 1:
      return e.name + " is a nice option in the " + e.value("area") + " .";
    default:
      return e.name + " is a " + e.value("type") + " place in the " + e.value("area") + " .";
  }
}

DialogueAct sys_offer_act(int variant, const std::string& domain) {
  switch (variant % 3) {
    case 0:
      return make_act({make_triple(ActType::Inform, domain, "name")});
    case 1:
      return make_act({make_triple(ActType::Inform, domain, "name"),
                       make_triple(ActType::Inform, domain, "area")});
    default:
      return make_act({make_triple(ActType::Inform, domain, "name"),
                       make_triple(ActType::Inform, domain, "area"),
                       make_triple(ActType::Inform, domain, "type")});
  }
}

std::string sys_inform_text(const std::vector<std::string>& slots, const Entity& e) {
  if (slots.empty()) throw std::runtime_error("inform template: no slots");
  auto fragment = [&e](const std::string& slot) -> std::string {
    if (slot == "phone") return "the phone number is " + e.value("phone");
    if (slot == "address") return "the address is " + e.value("address");
    if (slot == "area") return "it is in the " + e.value("area") + " part of town";
    if (slot == "pricerange") return "it is in the " + e.value("pricerange") + " price range";
    if (slot == "type") return "it is a " + e.value("type") + " place";
    throw std::runtime_error("no inform template for slot '" + slot + "'");
  };
  std::string out = fragment(slots[0]);
  for (std::size_t i = 1; i < slots.size(); ++i) out += " and " + fragment(slots[i]);
  return out + " .";
}

std::string sys_bye_text(int variant) {
  return pick({"you are welcome . goodbye !", "glad i could help . have a great day !"}, variant);
}

std::string sys_nooffer_text() { return "i am sorry , i could not find anything like that ."; }

std::string user_open_text(const std::string& domain,
                           const std::vector<std::pair<std::string, std::string>>& mentioned,
                           int variant) {
  std::string head;  // "<pricerange> <type> <noun>"
  std::string area;
  for (const auto& [slot, value] : mentioned) {
    if (slot == "area") area = value;
  }
  for (const auto& [slot, value] : mentioned) {
    if (slot == "pricerange") head += value + " ";
  }
  for (const auto& [slot, value] : mentioned) {
    if (slot == "type") head += value + " ";
  }
  head += domain_noun(domain);
  std::string parts = head;
  if (!area.empty()) parts += " in the " + area;
  if (variant % 2 == 1 && open_extras().count(domain)) {
    std::string out = substitute(open_extras().at(domain), "{a}", article_for(head));
    return substitute(out, "{parts}", parts);
  }
  return "hello , i am looking for " + article_for(head) + " " + parts + " .";
}

std::string user_answer_text(const std::string& slot, const std::string& value,
                             const std::string& domain, int variant) {
  std::string extra = answer_extras().count(domain)
                          ? substitute(answer_extras().at(domain), "{v}", value)
                          : value + " then .";
  if (slot == "area") {
    return pick({"the " + value + " please .", "somewhere in the " + value + " .", extra},
                variant);
  }
  if (slot == "pricerange") {
    return pick({value + " please .", "something " + value + " .", extra}, variant);
  }
  return pick({value + " please .", "i would like " + value + " .", extra}, variant);
}

std::string user_dontcare_text(int variant) {
  return pick({"i do not mind .", "any is fine ."}, variant);
}

std::string user_detail_ask_text(const std::string& domain, int variant) {
  std::string extra = detail_extras().count(domain) ? detail_extras().at(domain)
                                                    : "the details please .";
  return pick({"can i get the details ?", "what are the details ?", extra}, variant);
}

std::string user_ask_text(const std::vector<std::string>& slots, const std::string& domain,
                          int variant) {
  if (slots.empty()) throw std::runtime_error("ask template: no slots");
  if (slots.size() == 1) {
    const std::string& p = slot_phrase(slots[0]);
    std::string extra = ask_extras().count(domain)
                            ? substitute(ask_extras().at(domain), "{p}", p)
                            : "and the " + p + " ?";
    return pick({"what is the " + p + " ?", "can i get the " + p + " ?", extra}, variant);
  }
  return "what is the " + slot_phrase(slots[0]) + " and the " + slot_phrase(slots[1]) + " ?";
}

std::string user_bye_text(int variant) {
  return pick({"thank you , goodbye .", "thanks , bye !"}, variant);
}

}  // namespace latact
