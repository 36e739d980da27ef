#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "latact/corpus.hpp"
#include "latact/prng.hpp"

using namespace latact;

namespace {

CorpusConfig small_config(std::uint64_t seed = 5) {
  CorpusConfig c;
  c.n_dialogues = 40;
  c.seed = seed;
  return c;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("same config and seed give bitwise-identical corpus files") {
  Corpus a = generate_corpus(small_config());
  Corpus b = generate_corpus(small_config());
  save_corpus(a, "/tmp/latact_corpus_a.jsonl");
  save_corpus(b, "/tmp/latact_corpus_b.jsonl");
  CHECK(file_bytes("/tmp/latact_corpus_a.jsonl") == file_bytes("/tmp/latact_corpus_b.jsonl"));

  Corpus c = generate_corpus(small_config(6));
  save_corpus(c, "/tmp/latact_corpus_c.jsonl");
  CHECK(file_bytes("/tmp/latact_corpus_a.jsonl") != file_bytes("/tmp/latact_corpus_c.jsonl"));
}

TEST_CASE("corpus file round-trips through save and load") {
  Corpus a = generate_corpus(small_config());
  save_corpus(a, "/tmp/latact_corpus_rt.jsonl");
  Corpus b = load_corpus("/tmp/latact_corpus_rt.jsonl");
  REQUIRE(b.dialogues.size() == a.dialogues.size());
  CHECK(b.config.domains == a.config.domains);
  CHECK(b.config.seed == a.config.seed);
  save_corpus(b, "/tmp/latact_corpus_rt2.jsonl");
  CHECK(file_bytes("/tmp/latact_corpus_rt.jsonl") == file_bytes("/tmp/latact_corpus_rt2.jsonl"));
}

TEST_CASE("unlabeled fraction strips exactly the floor count of main dialogues") {
  CorpusConfig c = small_config();
  c.unlabeled_fraction = 0.37;
  Corpus corpus = generate_corpus(c);
  int unlabeled = 0;
  for (const auto& d : corpus.dialogues) {
    if (d.split == "holdout") {
      for (const auto& t : d.turns) CHECK(t.act.has_value());
      continue;
    }
    bool any = false;
    for (const auto& t : d.turns) any = any || t.act.has_value();
    if (!any) ++unlabeled;
  }
  CHECK(unlabeled == static_cast<int>(0.37 * c.n_dialogues));

  c.unlabeled_fraction = 0.0;
  Corpus all_labeled = generate_corpus(c);
  for (const auto& d : all_labeled.dialogues) {
    for (const auto& t : d.turns) CHECK(t.act.has_value());
  }
}

TEST_CASE("generated corpora pass the full validator") {
  CorpusConfig c = small_config();
  Corpus corpus = generate_corpus(c);
  World world = build_world(c.all_domains());
  CHECK_NOTHROW(validate_corpus(corpus, world));
  CHECK_THROWS_AS(generate_corpus([] {
                    CorpusConfig bad;
                    bad.domains = {"bank"};
                    return bad;
                  }()),
                  std::runtime_error);
}

TEST_CASE("db query matches a brute-force scan and rejects unknown slots") {
  World world = build_world({"restaurant"});
  Prng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::map<std::string, std::string> cons;
    if (rng.below(2)) cons["area"] = std::vector<std::string>{"north", "south", "east"}[rng.below(3)];
    if (rng.below(2)) cons["pricerange"] = std::vector<std::string>{"cheap", "moderate"}[rng.below(2)];
    auto q = world.query("restaurant", cons);
    int expected = 0;
    for (const auto& e : world.entities.at("restaurant")) {
      bool ok = true;
      for (const auto& [k, v] : cons) ok = ok && e.value(k) == v;
      if (ok) ++expected;
    }
    CHECK(q.count == expected);
    for (std::size_t i = 1; i < q.matches.size(); ++i) {
      CHECK(q.matches[i - 1]->name < q.matches[i]->name);
    }
  }
  CHECK(world.query("restaurant", {}).count == 25);
  CHECK_THROWS_AS(world.query("restaurant", {{"wifi", "yes"}}), std::runtime_error);
  std::map<std::string, std::string> noneSuch{{"area", "moon"}};
  CHECK(world.query("restaurant", noneSuch).count == 0);
}

TEST_CASE("delexicalization replaces values and the longest span wins") {
  std::vector<std::pair<std::string, std::string>> lex = {
      {"cheap", "pricerange"}, {"north", "area"}, {"north indian", "type"}};
  auto [t1, s1] = delexicalize("i want cheap food", lex);
  CHECK(t1 == "i want [pricerange] food");
  REQUIRE(s1.size() == 1);
  CHECK(s1[0].value == "cheap");
  CHECK(s1[0].slot == "pricerange");

  auto [t2, s2] = delexicalize("nothing to see here", lex);
  CHECK(t2 == "nothing to see here");
  CHECK(s2.empty());

  auto [t3, s3] = delexicalize("a north indian place in the north", lex);
  CHECK(t3 == "a [type] place in the [area]");
  REQUIRE(s3.size() == 2);
  CHECK(s3[0].slot == "type");
  CHECK(s3[0].value == "north indian");
  CHECK(s3[1].slot == "area");
}

TEST_CASE("delexicalization against a crafted overlap suite") {
  std::vector<std::pair<std::string, std::string>> lex = {
      {"north", "area"},       {"north indian", "type"}, {"golden lion", "name"},
      {"golden", "adjective"}, {"12 mill street", "address"}, {"mill", "street"}};
  struct Case {
    const char* in;
    const char* out;
  };
  const Case cases[] = {
      {"north north indian", "[area] [type]"},
      {"north indian north", "[type] [area]"},
      {"golden lion", "[name]"},
      {"golden golden lion", "[adjective] [name]"},
      {"the 12 mill street corner", "the [address] corner"},
      {"mill 12 mill street", "[street] [address]"},
      {"north indian north indian", "[type] [type]"},
  };
  for (const auto& c : cases) {
    auto [out, spans] = delexicalize(c.in, lex);
    CHECK(out == c.out);
  }
}

TEST_CASE("delexicalization is idempotent") {
  World world = build_world({"restaurant", "shop"});
  auto lex = world.lexicon("restaurant");
  Corpus corpus = generate_corpus(small_config());
  for (const auto& d : corpus.dialogues) {
    for (const auto& t : d.turns) {
      auto [once, spans] = delexicalize(t.response, lex);
      CHECK(once == t.response);  // responses are already delexicalized
      auto [user_once, s1] = delexicalize(t.user, lex);
      auto [user_twice, s2] = delexicalize(user_once, lex);
      CHECK(user_twice == user_once);
    }
  }
}

TEST_CASE("lexicalize substitutes entity values back in") {
  World world = build_world({"restaurant"});
  const Entity& e = world.entities.at("restaurant").front();
  std::string out = lexicalize("the phone number is [phone] .", e);
  CHECK(out == "the phone number is " + e.value("phone") + " .");
  CHECK(lexicalize("[name] is nice", e) == e.name + " is nice");
}

TEST_CASE("slot mapping renames everywhere and is idempotent") {
  Corpus corpus = generate_corpus(small_config());
  SlotMapping rename;
  rename.rename = {{"pricerange", "price_range"},
                   {"area", "area"},
                   {"type", "type"},
                   {"phone", "phone"},
                   {"address", "address"},
                   {"name", "name"}};
  Corpus mapped = map_slots(corpus, rename);
  bool saw = false;
  for (const auto& d : mapped.dialogues) {
    for (const auto& [slot, value] : d.goal.constraints) CHECK(slot != "pricerange");
    for (const auto& t : d.turns) {
      CHECK(t.belief.count("pricerange") == 0);
      if (t.response.find("[price_range]") != std::string::npos) saw = true;
      if (t.act.has_value()) {
        for (const auto& tr : t.act->triples) CHECK(tr.slot != "pricerange");
      }
    }
  }
  (void)saw;

  // mapping twice equals mapping once
  Corpus twice = map_slots(mapped, rename);
  save_corpus(mapped, "/tmp/latact_map_once.jsonl");
  save_corpus(twice, "/tmp/latact_map_twice.jsonl");
  CHECK(file_bytes("/tmp/latact_map_once.jsonl") == file_bytes("/tmp/latact_map_twice.jsonl"));

  // inverse composed with mapping restores the corpus
  SlotMapping inverse;
  inverse.rename = {{"price_range", "pricerange"}, {"area", "area"},   {"type", "type"},
                    {"phone", "phone"},            {"address", "address"}, {"name", "name"}};
  Corpus restored = map_slots(mapped, inverse);
  save_corpus(corpus, "/tmp/latact_map_orig.jsonl");
  save_corpus(restored, "/tmp/latact_map_back.jsonl");
  CHECK(file_bytes("/tmp/latact_map_orig.jsonl") == file_bytes("/tmp/latact_map_back.jsonl"));

  // identity mapping leaves the corpus untouched
  SlotMapping identity;
  for (const auto& s : {"area", "pricerange", "type", "phone", "address", "name"}) {
    identity.rename[s] = s;
  }
  Corpus same = map_slots(corpus, identity);
  save_corpus(same, "/tmp/latact_map_id.jsonl");
  CHECK(file_bytes("/tmp/latact_map_id.jsonl") == file_bytes("/tmp/latact_map_orig.jsonl"));

  // turn and triple counts survive any mapping
  REQUIRE(mapped.dialogues.size() == corpus.dialogues.size());
  for (std::size_t i = 0; i < mapped.dialogues.size(); ++i) {
    REQUIRE(mapped.dialogues[i].turns.size() == corpus.dialogues[i].turns.size());
    for (std::size_t t = 0; t < mapped.dialogues[i].turns.size(); ++t) {
      const auto& ta = corpus.dialogues[i].turns[t].act;
      const auto& tb = mapped.dialogues[i].turns[t].act;
      CHECK(ta.has_value() == tb.has_value());
      if (ta.has_value()) CHECK(ta->triples.size() == tb->triples.size());
    }
  }

  SlotMapping missing;
  missing.rename = {{"pricerange", "price_range"}};
  CHECK_THROWS_WITH_AS(map_slots(corpus, missing), doctest::Contains("unmapped"),
                       std::runtime_error);

  SlotMapping collide;
  collide.rename = {{"a", "x"}, {"b", "x"}};
  CHECK_THROWS_AS(collide.validate_injective(), std::runtime_error);
}

TEST_CASE("corpus act extraction dedupes and requires labels") {
  Corpus corpus = generate_corpus(small_config());
  auto acts = extract_corpus_acts(corpus);
  CHECK(!acts.empty());
  std::set<std::string> seen;
  for (const auto& a : acts) CHECK(seen.insert(serialize_act(a)).second);

  // matches a brute-force scan over labeled, non-holdout turns
  std::set<std::string> expected;
  for (const auto& d : corpus.dialogues) {
    if (d.split == "holdout") continue;
    for (const auto& t : d.turns) {
      if (t.act.has_value()) expected.insert(serialize_act(*t.act));
    }
  }
  CHECK(expected.size() == acts.size());

  CorpusConfig c = small_config();
  c.unlabeled_fraction = 1.0;
  c.holdout_domain.clear();
  Corpus none = generate_corpus(c);
  CHECK_THROWS_AS(extract_corpus_acts(none), std::runtime_error);

  // single-act corpora extract that act alone
  Corpus tiny = corpus;
  DialogueAct only = make_act({make_triple(ActType::Bye, "restaurant", "")});
  for (auto& d : tiny.dialogues) {
    for (auto& t : d.turns) {
      if (t.act.has_value()) t.act = only;
    }
  }
  auto single = extract_corpus_acts(tiny);
  REQUIRE(single.size() == 1);
  CHECK(single[0] == only);
}

TEST_CASE("corpus-extracted acts are a subset of the schema enumeration") {
  Corpus corpus = generate_corpus(small_config());
  auto schema_acts = enumerate_schema_acts(world_schema(corpus.config.domains));
  std::set<std::string> schema_keys;
  for (const auto& a : schema_acts) schema_keys.insert(serialize_act(a));
  for (const auto& a : extract_corpus_acts(corpus)) {
    CHECK(schema_keys.count(serialize_act(a)) == 1);
  }
}

TEST_CASE("splits partition the corpus and few-shot subsamples deterministically") {
  Corpus corpus = generate_corpus(small_config());
  CorpusSplits full = split_corpus(corpus, SplitMode::Full);
  CHECK(full.train.size() + full.val.size() + full.test.size() + full.holdout.size() ==
        corpus.dialogues.size());
  CHECK(!full.train.empty());
  CHECK(!full.val.empty());
  CHECK(!full.test.empty());
  CHECK(!full.holdout.empty());
  for (const auto* d : full.holdout) CHECK(d->domain == corpus.config.holdout_domain);
  // test and train never overlap
  std::set<const DialogueRecord*> train_set(full.train.begin(), full.train.end());
  for (const auto* d : full.test) CHECK(train_set.count(d) == 0);

  CorpusSplits zero = split_corpus(corpus, SplitMode::ZeroShot);
  CHECK(zero.train.empty());
  CHECK(zero.test.size() == full.test.size());

  CorpusSplits few = split_corpus(corpus, SplitMode::FewShot, 5, 42);
  CHECK(few.train.size() == 5);
  CorpusSplits few2 = split_corpus(corpus, SplitMode::FewShot, 5, 42);
  for (std::size_t i = 0; i < 5; ++i) CHECK(few.train[i] == few2.train[i]);
  CHECK_THROWS_AS(split_corpus(corpus, SplitMode::FewShot, 100000, 1), std::runtime_error);
}

TEST_CASE("proxy latents equal the response encoding and reject empty responses") {
  TurnRecord turn;
  turn.response = "the phone number is [phone] .";
  int calls = 0;
  ActEncodeFn fake = [&calls](const std::string& s) {
    ++calls;
    CHECK(s == "the phone number is [phone] .");
    return std::vector<float>{1.0f, 0.0f};
  };
  auto z = proxy_latent(turn, fake);
  CHECK(z == std::vector<float>{1.0f, 0.0f});
  CHECK(calls == 1);
  auto z2 = proxy_latent(turn, fake);
  CHECK(z == z2);

  TurnRecord empty;
  empty.response = "   ";
  CHECK_THROWS_AS(proxy_latent(empty, fake), std::runtime_error);
}
