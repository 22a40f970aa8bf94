#include "kelp/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "kelp/errors.hpp"
#include "temp_dir.hpp"

using namespace kelp;
using kelptest::TempDir;

namespace {

AnnotatedSentence fixture_sentence() {
  AnnotatedSentence s;
  s.tokens = {"during", "the",    "patrol", "Falcon-10", "escorts",
              "Triton-11", "near", "the",   "ridge",     "."};
  s.text_type = 2;
  s.phrase_spans = {{0, 3}, {6, 9}};
  s.entity_spans = {{{3, 4}, "e.10"}, {{5, 6}, "e.11"}};
  s.relation_spans = {{{4, 5}, "r.escorts"}};
  s.facts = {{0, 0, 1}};
  return s;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

EntityDictionary fixture_dictionary() {
  return EntityDictionary({
      {"e.10", "Falcon-10", "aircraft", {"Falcon-10", "the falcon"}, "escort craft"},
      {"e.11", "Triton-11", "vessel", {"Triton-11"}, ""},
  });
}

KnowledgeBase fixture_kb() {
  KnowledgeBase kb;
  kb.relations = {
      {"r.escorts", {"escorts"}, {"aircraft"}, {"vessel"}},
      {"r.near", {"is", "near"}, {}, {}},
  };
  kb.facts = {{"e.10", "r.escorts", "e.11"}};
  HornRule rule;
  rule.body = {{Term::parse("?A"), Term::parse("r.escorts"), Term::parse("?B")}};
  rule.head = {Term::parse("?B"), Term::parse("r.near"), Term::parse("?A")};
  kb.rules = {rule};
  return kb;
}

}  // namespace

TEST_CASE("validate_sentence accepts a well-formed record") {
  CHECK_NOTHROW(validate_sentence(fixture_sentence()));
}

TEST_CASE("validate_sentence rejects structural defects") {
  auto base = fixture_sentence();

  SUBCASE("no tokens") {
    AnnotatedSentence s;
    CHECK_THROWS_AS(validate_sentence(s), ValidationError);
  }
  SUBCASE("bad text_type") {
    auto s = base;
    s.text_type = 0;
    CHECK_THROWS_AS(validate_sentence(s), ValidationError);
  }
  SUBCASE("empty token") {
    auto s = base;
    s.tokens[1] = "";
    CHECK_THROWS_AS(validate_sentence(s), ValidationError);
  }
  SUBCASE("span past the end") {
    auto s = base;
    s.phrase_spans.push_back({8, 11});
    CHECK_THROWS_AS(validate_sentence(s), ValidationError);
  }
  SUBCASE("empty span") {
    auto s = base;
    s.phrase_spans.push_back({2, 2});
    CHECK_THROWS_AS(validate_sentence(s), ValidationError);
  }
  SUBCASE("overlapping same-kind spans") {
    auto s = base;
    s.entity_spans.push_back({{3, 5}, "e.12"});
    CHECK_THROWS_AS(validate_sentence(s), ValidationError);
  }
  SUBCASE("entity span without id") {
    auto s = base;
    s.entity_spans[0].id = "";
    CHECK_THROWS_AS(validate_sentence(s), ValidationError);
  }
  SUBCASE("fact index out of range") {
    auto s = base;
    s.facts.push_back({0, 0, 5});
    CHECK_THROWS_AS(validate_sentence(s), ValidationError);
  }
  SUBCASE("fact head and tail share a span") {
    auto s = base;
    s.facts.push_back({0, 0, 0});
    CHECK_THROWS_AS(validate_sentence(s), ValidationError);
  }
  SUBCASE("fact entity overlapping its relation") {
    auto s = base;
    s.relation_spans[0].span = {3, 5};
    CHECK_THROWS_AS(validate_sentence(s), ValidationError);
  }
}

TEST_CASE("fact_bearing_indices filters and is idempotent") {
  AnnotatedSentence bare;
  bare.tokens = {"just", "words"};
  std::vector<AnnotatedSentence> corpus{bare, fixture_sentence(), bare,
                                        fixture_sentence()};
  const auto idx = fact_bearing_indices(corpus);
  CHECK(idx == std::vector<std::size_t>{1, 3});

  std::vector<AnnotatedSentence> filtered;
  for (auto i : idx) filtered.push_back(corpus[i]);
  const auto idx2 = fact_bearing_indices(filtered);
  CHECK(idx2.size() == filtered.size());
}

TEST_CASE("vocabulary ordering is frequency desc then lexicographic") {
  AnnotatedSentence s;
  s.tokens = {"b", "a", "b", "c", "a", "b"};
  Vocabulary v = Vocabulary::build({s});

  CHECK(v.size() == Vocabulary::kReservedCount + 3);
  CHECK(v.token(Vocabulary::kPad) == "[PAD]");
  CHECK(v.token(Vocabulary::kUnk) == "[UNK]");
  CHECK(v.token(Vocabulary::kMask) == "[MASK]");
  CHECK(v.encode("b") == Vocabulary::kReservedCount);      // count 3
  CHECK(v.encode("a") == Vocabulary::kReservedCount + 1);  // count 2
  CHECK(v.encode("c") == Vocabulary::kReservedCount + 2);  // count 1
  CHECK(v.encode("zzz") == Vocabulary::kUnk);
  CHECK(v.is_reserved(Vocabulary::kMask));
  CHECK_FALSE(v.is_reserved(v.encode("b")));
  CHECK_THROWS_AS(v.token(-1), LookupError);
  CHECK_THROWS_AS(v.token(static_cast<int>(v.size())), LookupError);
}

TEST_CASE("vocabulary min_count drops rare tokens") {
  AnnotatedSentence s;
  s.tokens = {"x", "x", "y"};
  Vocabulary v = Vocabulary::build({s}, 2);
  CHECK(v.encode("x") == Vocabulary::kReservedCount);
  CHECK(v.encode("y") == Vocabulary::kUnk);
  CHECK_THROWS_AS(Vocabulary::build({}, 1), ValidationError);
}

TEST_CASE("vocabulary ignores sentence order") {
  std::vector<AnnotatedSentence> corpus;
  for (int i = 0; i < 6; ++i) {
    AnnotatedSentence s;
    s.tokens = {"tok" + std::to_string(i), "shared", "tok" + std::to_string(i % 3)};
    corpus.push_back(s);
  }
  Vocabulary base = Vocabulary::build(corpus);
  std::mt19937 shuffler(99);
  for (int round = 0; round < 10; ++round) {
    std::shuffle(corpus.begin(), corpus.end(), shuffler);
    Vocabulary v = Vocabulary::build(corpus);
    REQUIRE(v.size() == base.size());
    for (int id = 0; id < static_cast<int>(v.size()); ++id)
      CHECK(v.token(id) == base.token(id));
  }
}

TEST_CASE("corpus file round trip is byte identical") {
  TempDir tmp("corpus");
  std::vector<AnnotatedSentence> corpus{fixture_sentence()};
  AnnotatedSentence plain;
  plain.tokens = {"plain", "words", "only"};
  plain.text_type = 1;
  corpus.push_back(plain);

  const auto p1 = tmp.file("c1.jsonl");
  save_corpus(p1, corpus);
  const auto loaded = load_corpus(p1);
  REQUIRE(loaded.size() == corpus.size());
  CHECK(loaded[0] == corpus[0]);
  CHECK(loaded[1] == corpus[1]);

  const auto p2 = tmp.file("c2.jsonl");
  save_corpus(p2, loaded);
  CHECK(read_bytes(p1) == read_bytes(p2));
}

TEST_CASE("corpus loader reports path and line for bad records") {
  TempDir tmp("corpus");
  const auto path = tmp.file("bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"format":"kelp-corpus","version":1})" << "\n";
    out << corpus_line(fixture_sentence()) << "\n";
    out << "{not json\n";
  }
  try {
    load_corpus(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(path) != std::string::npos);
    CHECK(msg.find(":3") != std::string::npos);
  }

  const auto nohdr = tmp.file("nohdr.jsonl");
  {
    std::ofstream out(nohdr);
    out << corpus_line(fixture_sentence()) << "\n";
  }
  CHECK_THROWS_AS(load_corpus(nohdr), ParseError);

  CHECK_THROWS_AS(load_corpus(tmp.file("missing.jsonl")), Error);
}

TEST_CASE("parse_corpus_line inverts corpus_line and validates") {
  const auto s = fixture_sentence();
  CHECK(parse_corpus_line(corpus_line(s)) == s);
  CHECK_THROWS_AS(parse_corpus_line("{"), ParseError);
  // Structurally bad content (span out of bounds) is also a parse failure.
  CHECK_THROWS_AS(parse_corpus_line(
                      R"({"entities":[[0,9,"e.1"]],"facts":[],"phrases":[],)"
                      R"("relations":[],"text_type":1,"tokens":["one"]})"),
                  ParseError);
}

TEST_CASE("entity dictionary lookups and validation") {
  EntityDictionary dict = fixture_dictionary();
  CHECK(dict.size() == 2);
  CHECK(dict.contains("e.10"));
  CHECK(dict.get("e.10").type == "aircraft");
  CHECK(dict.get("e.11").mentions == std::vector<std::string>{"Triton-11"});
  CHECK_THROWS_AS(dict.get("e.99"), LookupError);

  // Official name must be listed among the mentions.
  CHECK_THROWS_AS(EntityDictionary({{"e.1", "Alpha", "t", {"not-alpha"}, ""}}),
                  ValidationError);
  CHECK_THROWS_AS(EntityDictionary({{"", "Alpha", "t", {"Alpha"}, ""}}),
                  ValidationError);
  CHECK_THROWS_AS(EntityDictionary({{"e.1", "Alpha", "", {"Alpha"}, ""}}),
                  ValidationError);
  std::vector<EntityRecord> dup = {{"e.1", "Alpha", "t", {"Alpha"}, ""},
                                   {"e.1", "Beta", "t", {"Beta"}, ""}};
  CHECK_THROWS_AS(EntityDictionary{dup}, ValidationError);
}

TEST_CASE("entity dictionary file round trip") {
  TempDir tmp("dict");
  const auto p1 = tmp.file("d1.json");
  save_entity_dictionary(p1, fixture_dictionary());
  EntityDictionary back = load_entity_dictionary(p1);
  REQUIRE(back.size() == 2);
  CHECK(back.get("e.10").mentions == fixture_dictionary().get("e.10").mentions);
  CHECK(back.get("e.10").info == "escort craft");

  const auto p2 = tmp.file("d2.json");
  save_entity_dictionary(p2, back);
  CHECK(read_bytes(p1) == read_bytes(p2));

  const auto bad = tmp.file("bad.json");
  {
    std::ofstream out(bad);
    out << R"({"format":"something-else"})";
  }
  CHECK_THROWS_AS(load_entity_dictionary(bad), ParseError);
}

TEST_CASE("mention table stores vectors and checks dictionary coverage") {
  MentionEmbeddingTable table(3);
  table.put("Falcon-10", {1.0, 0.0, 0.0});
  CHECK(table.contains("Falcon-10"));
  CHECK(table.get("Falcon-10") == std::vector<double>{1.0, 0.0, 0.0});
  CHECK_THROWS_AS(table.get("nope"), LookupError);
  CHECK_THROWS_AS(table.put("bad", {1.0}), DimensionError);

  EntityDictionary dict = fixture_dictionary();
  CHECK_THROWS_AS(table.validate_covers(dict), ValidationError);
  table.put("the falcon", {0.0, 1.0, 0.0});
  table.put("Triton-11", {0.0, 0.0, 1.0});
  CHECK_NOTHROW(table.validate_covers(dict));
}

TEST_CASE("mention embedding file round trip preserves exact doubles") {
  TempDir tmp("emb");
  MentionEmbeddingTable table(2);
  table.put("alpha one", {0.1234567890123456789, -7.25});
  table.put("beta", {1e-17, 3.0});
  const auto p1 = tmp.file("m1.txt");
  save_mention_embeddings(p1, table);
  MentionEmbeddingTable back = load_mention_embeddings(p1);
  REQUIRE(back.size() == 2);
  CHECK(back.dim() == 2);
  CHECK(back.get("alpha one") == table.get("alpha one"));
  CHECK(back.get("beta") == table.get("beta"));

  const auto p2 = tmp.file("m2.txt");
  save_mention_embeddings(p2, back);
  CHECK(read_bytes(p1) == read_bytes(p2));
}

TEST_CASE("knowledge base round trip and lookups") {
  TempDir tmp("kb");
  KnowledgeBase kb = fixture_kb();
  CHECK(kb.has_relation("r.near"));
  CHECK_FALSE(kb.has_relation("r.missing"));
  CHECK(kb.relation("r.escorts").head_types.count("aircraft") == 1);
  CHECK_THROWS_AS(kb.relation("r.missing"), LookupError);

  const auto p1 = tmp.file("kb1.json");
  save_knowledge_base(p1, kb);
  KnowledgeBase back = load_knowledge_base(p1);
  CHECK(back.facts == kb.facts);
  REQUIRE(back.rules.size() == 1);
  CHECK(back.rules[0].head.relation.text == "r.near");
  CHECK(back.rules[0].body[0].head.is_var);

  const auto p2 = tmp.file("kb2.json");
  save_knowledge_base(p2, back);
  CHECK(read_bytes(p1) == read_bytes(p2));

  // A fact mentioning an undeclared relation fails load-time validation.
  KnowledgeBase bad = kb;
  bad.facts.push_back({"e.1", "r.ghost", "e.2"});
  const auto pbad = tmp.file("bad.json");
  save_knowledge_base(pbad, bad);
  CHECK_THROWS_AS(load_knowledge_base(pbad), ValidationError);
}

TEST_CASE("term parsing and rule validation") {
  CHECK(Term::parse("?X") == Term{true, "X"});
  CHECK(Term::parse("e.1") == Term{false, "e.1"});
  CHECK_THROWS_AS(Term::parse("?"), ValidationError);
  CHECK_THROWS_AS(Term::parse(""), ValidationError);

  HornRule ok;
  ok.body = {{Term::parse("?A"), Term::parse("r.x"), Term::parse("?B")}};
  ok.head = {Term::parse("?A"), Term::parse("r.y"), Term::parse("?B")};
  CHECK_NOTHROW(validate_rules({ok}));

  HornRule empty_body = ok;
  empty_body.body.clear();
  CHECK_THROWS_AS(validate_rules({empty_body}), ValidationError);

  HornRule too_long = ok;
  too_long.body = {ok.body[0], ok.body[0], ok.body[0], ok.body[0]};
  CHECK_THROWS_AS(validate_rules({too_long}), ValidationError);

  HornRule unbound = ok;
  unbound.head.tail = Term::parse("?C");
  CHECK_THROWS_AS(validate_rules({unbound}), ValidationError);
}
