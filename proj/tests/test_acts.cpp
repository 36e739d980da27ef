#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "latact/acts.hpp"
#include "latact/prng.hpp"
#include "latact/world.hpp"

using namespace latact;

namespace {

ActSchema two_slot_schema(int cap) {
  ActSchema s;
  s.max_triples = cap;
  ActSchema::Domain d;
  d.name = "restaurant";
  d.informable = {"area", "pricerange"};
  d.requestable = {"area", "pricerange"};
  d.act_types = {ActType::Inform, ActType::Request};
  s.domains.push_back(d);
  return s;
}

// deterministic unit vector per act string, independent of any model
ActEncodeFn hash_encoder(int dim = 8) {
  return [dim](const std::string& key) {
    Prng rng(fnv1a(key));
    std::vector<float> v(static_cast<std::size_t>(dim));
    double norm = 0;
    for (auto& x : v) {
      x = static_cast<float>(rng.normal());
      norm += double(x) * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x = static_cast<float>(x / norm);
    return v;
  };
}

std::size_t binom(std::size_t n, std::size_t k) {
  std::size_t c = 1;
  for (std::size_t i = 0; i < k; ++i) c = c * (n - i) / (i + 1);
  return c;
}

}  // namespace

TEST_CASE("serialization groups by domain then act type") {
  auto a = make_act({make_triple(ActType::Request, "restaurant", "area")});
  CHECK(serialize_act(a) == "[restaurant] [request] area");

  auto b = make_act({make_triple(ActType::Request, "hotel", "area"),
                     make_triple(ActType::Inform, "hotel", "pricerange")});
  CHECK(serialize_act(b) == "[hotel] [inform] pricerange [request] area");

  // triple order never matters
  auto c = make_act({make_triple(ActType::Inform, "hotel", "pricerange"),
                     make_triple(ActType::Request, "hotel", "area")});
  CHECK(serialize_act(c) == serialize_act(b));

  auto bye = make_act({make_triple(ActType::Bye, "restaurant", "")});
  CHECK(serialize_act(bye) == "[restaurant] [bye]");
}

TEST_CASE("parse handles slotless types and rejects unknown act types") {
  auto a = parse_act("[restaurant] [bye]");
  CHECK(a.triples.size() == 1);
  CHECK(a.triples[0].type == ActType::Bye);
  CHECK(a.triples[0].slot.empty());

  CHECK_THROWS_WITH_AS(parse_act("[restaurant] [frobnicate] x"),
                       doctest::Contains("frobnicate"), std::runtime_error);
  CHECK_THROWS_AS(parse_act(""), std::runtime_error);
  CHECK_THROWS_AS(parse_act("area"), std::runtime_error);
  CHECK_THROWS_AS(parse_act("[restaurant]"), std::runtime_error);
  CHECK_THROWS_AS(parse_act("[restaurant] [request]"), std::runtime_error);
  CHECK_THROWS_AS(parse_act("[restaurant] [bye] area"), std::runtime_error);
}

TEST_CASE("parse validates domains and slots against a schema") {
  ActSchema s = two_slot_schema(2);
  CHECK_NOTHROW(parse_act("[restaurant] [request] area", &s));
  CHECK_THROWS_WITH_AS(parse_act("[bank] [request] area", &s), doctest::Contains("bank"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_act("[restaurant] [request] wifi", &s), doctest::Contains("wifi"),
                       std::runtime_error);
}

TEST_CASE("round-trip over every act of a two-domain schema") {
  ActSchema s = world_schema({"restaurant", "hotel"}, 2);
  // include the slotless and offer-ish types as well
  for (auto& d : s.domains) {
    d.act_types = {ActType::Inform, ActType::Request, ActType::Offer, ActType::Bye,
                   ActType::Greet};
  }
  auto acts = enumerate_schema_acts(s);
  CHECK(acts.size() > 100);
  for (const auto& a : acts) {
    DialogueAct back = parse_act(serialize_act(a), &s);
    CHECK(back == a);
  }
}

TEST_CASE("schema enumeration counts match the closed form") {
  ActSchema s1 = two_slot_schema(1);
  auto acts1 = enumerate_schema_acts(s1);
  CHECK(acts1.size() == 4);  // inform x2 + request x2

  ActSchema s2 = two_slot_schema(2);
  auto acts2 = enumerate_schema_acts(s2);
  CHECK(acts2.size() == 10);  // 4 + C(4,2)

  // closed form sum_k C(T, k) against brute force, per cap
  for (int cap = 1; cap <= 4; ++cap) {
    ActSchema s = world_schema({"restaurant"}, cap);
    auto acts = enumerate_schema_acts(s);
    std::size_t t = s.legal_triples(s.domains[0]).size();
    std::size_t expected = 0;
    for (int k = 1; k <= cap && static_cast<std::size_t>(k) <= t; ++k) {
      expected += binom(t, static_cast<std::size_t>(k));
    }
    CHECK(acts.size() == expected);
    std::set<std::string> unique;
    for (const auto& a : acts) unique.insert(serialize_act(a));
    CHECK(unique.size() == acts.size());
  }
}

TEST_CASE("single slotless act type enumerates one act") {
  ActSchema s;
  s.max_triples = 2;
  ActSchema::Domain d;
  d.name = "restaurant";
  d.act_types = {ActType::Bye};
  s.domains.push_back(d);
  auto acts = enumerate_schema_acts(s);
  CHECK(acts.size() == 1);
  CHECK(serialize_act(acts[0]) == "[restaurant] [bye]");
}

TEST_CASE("enumeration overflow advises a smaller cap") {
  ActSchema s = world_schema({"restaurant"}, 10);
  CHECK_THROWS_WITH_AS(enumerate_schema_acts(s, 100), doctest::Contains("cap"),
                       std::runtime_error);
}

TEST_CASE("schema json round-trip") {
  ActSchema s = world_schema({"restaurant", "shop"}, 3);
  save_schema(s, "/tmp/latact_schema_test.json");
  ActSchema t = load_schema("/tmp/latact_schema_test.json");
  CHECK(t.max_triples == 3);
  CHECK(t.domains.size() == 2);
  CHECK(t.domains[0].name == "restaurant");
  CHECK(t.domains[0].informable == s.domains[0].informable);
  auto a = enumerate_schema_acts(s);
  auto b = enumerate_schema_acts(t);
  CHECK(a.size() == b.size());
}

TEST_CASE("act table construction deduplicates and checks norms") {
  auto acts = enumerate_schema_acts(two_slot_schema(1));
  auto dup = acts;
  dup.push_back(acts.front());
  ActTable table = build_act_table(dup, hash_encoder());
  CHECK(table.size() == acts.size());
  CHECK(table.d_act == 8);
  for (const auto& e : table.entries) {
    double n = 0;
    for (float v : e.embedding) n += double(v) * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
  }

  auto bad = [](const std::string&) { return std::vector<float>{1.0f, 1.0f}; };
  CHECK_THROWS_AS(build_act_table(acts, bad), std::runtime_error);
}

TEST_CASE("quantize agrees with a linear-scan oracle exactly, ties included") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    Prng rng(seed);
    ActTable table;
    table.d_act = 8;
    ActSchema s = world_schema({"restaurant"}, 3);
    auto acts = enumerate_schema_acts(s);
    for (int i = 0; i < 100; ++i) {
      ActTable::Entry e;
      e.act = acts[static_cast<std::size_t>(i)];
      e.key = serialize_act(e.act);
      for (int j = 0; j < 8; ++j) e.embedding.push_back(static_cast<float>(rng.normal()));
      // duplicated rows at higher indices force tie cases
      if (i >= 90) e.embedding = table.entries[static_cast<std::size_t>(i - 90)].embedding;
      table.entries.push_back(std::move(e));
    }
    std::vector<float> z;
    for (int j = 0; j < 8; ++j) z.push_back(static_cast<float>(rng.normal()));
    // make some queries exactly hit a duplicated row
    if (seed % 5 == 0) z = table.entries[92].embedding;

    QuantizeResult got = quantize(z, table);
    int best = -1;
    float best_d = 0;
    for (int i = 0; i < 100; ++i) {
      float d = 0;
      for (int j = 0; j < 8; ++j) {
        float diff = z[static_cast<std::size_t>(j)] -
                     table.entries[static_cast<std::size_t>(i)].embedding[static_cast<std::size_t>(j)];
        d += diff * diff;
      }
      if (best < 0 || d < best_d) {
        best = i;
        best_d = d;
      }
    }
    CHECK(got.index == best);
  }
}

TEST_CASE("quantize on a known two-entry table") {
  ActTable t;
  t.d_act = 2;
  ActTable::Entry a;
  a.act = make_act({make_triple(ActType::Bye, "restaurant", "")});
  a.key = "a";
  a.embedding = {1.0f, 0.0f};
  ActTable::Entry b = a;
  b.key = "b";
  b.embedding = {0.0f, 1.0f};
  t.entries = {a, b};
  CHECK(quantize({0.9f, 0.2f}, t).index == 0);
  auto exact = quantize({0.0f, 1.0f}, t);
  CHECK(exact.index == 1);
  CHECK(exact.squared_distance == 0.0f);
  CHECK_THROWS_AS(quantize({1.0f}, t), std::runtime_error);
  ActTable empty;
  CHECK_THROWS_AS(quantize({1.0f, 0.0f}, empty), std::runtime_error);
}

TEST_CASE("quantize argmin is invariant to a shared positive scale") {
  Prng rng(77);
  ActTable table;
  table.d_act = 6;
  auto acts = enumerate_schema_acts(world_schema({"hotel"}, 2));
  for (int i = 0; i < 40; ++i) {
    ActTable::Entry e;
    e.act = acts[static_cast<std::size_t>(i)];
    e.key = serialize_act(e.act);
    for (int j = 0; j < 6; ++j) e.embedding.push_back(static_cast<float>(rng.normal()));
    table.entries.push_back(std::move(e));
  }
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> z;
    for (int j = 0; j < 6; ++j) z.push_back(static_cast<float>(rng.normal()));
    int base = quantize(z, table).index;
    float s = static_cast<float>(0.25 + 3.0 * rng.uniform());
    ActTable scaled = table;
    for (auto& e : scaled.entries) {
      for (auto& v : e.embedding) v *= s;
    }
    std::vector<float> zs = z;
    for (auto& v : zs) v *= s;
    CHECK(quantize(zs, scaled).index == base);
  }
}

TEST_CASE("filtering keeps a subsequence and honors required and forbidden") {
  auto acts = enumerate_schema_acts(world_schema({"restaurant"}, 2));
  ActTable table = build_act_table(acts, hash_encoder());

  ControlFilter empty;
  ActTable same = filter_table(table, empty);
  CHECK(same.size() == table.size());

  ControlFilter f;
  f.required.push_back(make_triple(ActType::Request, "restaurant", "area"));
  ActTable filtered = filter_table(table, f);
  CHECK(filtered.size() > 0);
  CHECK(filtered.size() < table.size());
  std::size_t cursor = 0;
  int expected = 0;
  for (const auto& e : table.entries) {
    bool keep = e.act.contains(f.required[0]);
    if (keep) ++expected;
    if (cursor < filtered.entries.size() && filtered.entries[cursor].key == e.key) {
      CHECK(keep);  // order preserved, embeddings untouched
      CHECK(filtered.entries[cursor].embedding == e.embedding);
      ++cursor;
    }
  }
  CHECK(cursor == filtered.entries.size());
  CHECK(expected == static_cast<int>(filtered.size()));

  f.forbidden.push_back(make_triple(ActType::Inform, "restaurant", "name"));
  ActTable both = filter_table(table, f);
  for (const auto& e : both.entries) {
    CHECK(e.act.contains(f.required[0]));
    CHECK(!e.act.contains(f.forbidden[0]));
  }

  ControlFilter impossible;
  impossible.required.push_back(make_triple(ActType::Greet, "restaurant", ""));
  CHECK_THROWS_AS(filter_table(table, impossible), FilterUnsatisfiable);

  ControlFilter contradictory;
  contradictory.required.push_back(make_triple(ActType::Bye, "restaurant", ""));
  contradictory.forbidden.push_back(make_triple(ActType::Bye, "restaurant", ""));
  CHECK_THROWS_AS(filter_table(table, contradictory), std::runtime_error);
}

TEST_CASE("act f1 on the documented cases") {
  auto gold = make_act({make_triple(ActType::Inform, "hotel", "area"),
                        make_triple(ActType::Inform, "hotel", "name")});
  PrfScores all = act_f1(gold, gold);
  CHECK(all.precision == 1.0);
  CHECK(all.recall == 1.0);
  CHECK(all.f1 == 1.0);

  auto disjoint = make_act({make_triple(ActType::Bye, "hotel", "")});
  PrfScores none = act_f1(disjoint, gold);
  CHECK(none.f1 == 0.0);

  // pred {a,b} vs gold {b,c}
  auto pred = make_act({make_triple(ActType::Inform, "hotel", "area"),
                        make_triple(ActType::Inform, "hotel", "phone")});
  PrfScores half = act_f1(pred, gold);
  CHECK(half.precision == doctest::Approx(0.5));
  CHECK(half.recall == doctest::Approx(0.5));
  CHECK(half.f1 == doctest::Approx(0.5));

  MicroF1 micro;
  micro.add(pred, gold);
  micro.add(gold, gold);
  PrfScores s = micro.result();
  CHECK(s.precision == doctest::Approx(3.0 / 4.0));
  CHECK(s.recall == doctest::Approx(3.0 / 4.0));
}

TEST_CASE("table dump format: act, tab, nine-significant-digit values") {
  auto acts = enumerate_schema_acts(two_slot_schema(1));
  ActTable table = build_act_table(acts, hash_encoder(3));
  std::string text = table_to_text(table);
  std::istringstream lines(text);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    CHECK(line.substr(0, tab) == table.entries[rows].key);
    std::istringstream vals(line.substr(tab + 1));
    double v;
    int n = 0;
    while (vals >> v) {
      CHECK(std::abs(v - double(table.entries[rows].embedding[static_cast<std::size_t>(n)])) <
            1e-7);
      ++n;
    }
    CHECK(n == 3);
    ++rows;
  }
  CHECK(rows == table.size());
}

TEST_CASE("triples validate their slot rules") {
  CHECK_THROWS_AS(make_triple(ActType::Bye, "hotel", "area"), std::runtime_error);
  CHECK_THROWS_AS(make_triple(ActType::Inform, "hotel", ""), std::runtime_error);
  CHECK_THROWS_AS(make_triple(ActType::Request, "", "area"), std::runtime_error);
  CHECK_THROWS_AS(make_act({}), std::runtime_error);
  // duplicates collapse
  auto a = make_act({make_triple(ActType::Bye, "hotel", ""), make_triple(ActType::Bye, "hotel", "")});
  CHECK(a.triples.size() == 1);
}
