#include "kelp/reasoner.hpp"

#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "kelp/corpus.hpp"
#include "kelp/errors.hpp"
#include "kelp/rng.hpp"

using namespace kelp;

namespace {

TriplePattern pat(const std::string& h, const std::string& r,
                  const std::string& t) {
  return {Term::parse(h), Term::parse(r), Term::parse(t)};
}

// Reference fixpoint: enumerate every assignment of rule variables to the
// constants seen anywhere, apply rules until nothing new appears. Deliberately
// naive so it shares no code with the production engine.
std::set<FactTriple> brute_force_closure(const KnowledgeBase& kb) {
  std::set<std::string> constants;
  for (const auto& f : kb.facts) {
    constants.insert(f.head);
    constants.insert(f.tail);
  }
  for (const auto& rule : kb.rules) {
    auto add_terms = [&constants](const TriplePattern& p) {
      if (!p.head.is_var) constants.insert(p.head.text);
      if (!p.tail.is_var) constants.insert(p.tail.text);
    };
    add_terms(rule.head);
    for (const auto& atom : rule.body) add_terms(atom);
  }
  const std::vector<std::string> pool(constants.begin(), constants.end());

  std::set<FactTriple> known(kb.facts.begin(), kb.facts.end());
  bool grew = true;
  while (grew) {
    grew = false;
    for (const auto& rule : kb.rules) {
      std::set<std::string> var_set;
      auto collect = [&var_set](const TriplePattern& p) {
        if (p.head.is_var) var_set.insert(p.head.text);
        if (p.relation.is_var) var_set.insert(p.relation.text);
        if (p.tail.is_var) var_set.insert(p.tail.text);
      };
      collect(rule.head);
      for (const auto& atom : rule.body) collect(atom);
      const std::vector<std::string> vars(var_set.begin(), var_set.end());

      // Odometer over pool^|vars|.
      std::vector<std::size_t> pick(vars.size(), 0);
      while (true) {
        std::map<std::string, std::string> bind;
        for (std::size_t i = 0; i < vars.size(); ++i) bind[vars[i]] = pool[pick[i]];
        auto subst = [&bind](const Term& t) {
          return t.is_var ? bind.at(t.text) : t.text;
        };
        bool body_holds = true;
        for (const auto& atom : rule.body) {
          FactTriple g{subst(atom.head), subst(atom.relation), subst(atom.tail)};
          if (!known.count(g)) {
            body_holds = false;
            break;
          }
        }
        if (body_holds) {
          FactTriple g{subst(rule.head.head), subst(rule.head.relation),
                       subst(rule.head.tail)};
          if (known.insert(g).second) grew = true;
        }
        std::size_t d = 0;
        for (; d < pick.size(); ++d) {
          if (++pick[d] < pool.size()) break;
          pick[d] = 0;
        }
        if (d == pick.size()) break;
      }
    }
  }
  return known;
}

KnowledgeBase random_kb(Rng& rng) {
  KnowledgeBase kb;
  const std::size_t n_rel = 2 + rng.below(3);  // 2..4 relations
  for (std::size_t r = 0; r < n_rel; ++r) {
    kb.relations.push_back({"r" + std::to_string(r), {"rel"}, {}, {}});
  }
  const std::size_t n_ent = 3 + rng.below(6);  // 3..8 entities
  std::vector<std::string> ents;
  for (std::size_t e = 0; e < n_ent; ++e) ents.push_back("e" + std::to_string(e));

  const std::size_t n_facts = 1 + rng.below(50);
  std::set<FactTriple> seen;
  for (std::size_t i = 0; i < n_facts; ++i) {
    FactTriple f{ents[rng.below(ents.size())],
                 "r" + std::to_string(rng.below(n_rel)),
                 ents[rng.below(ents.size())]};
    if (seen.insert(f).second) kb.facts.push_back(f);
  }

  const std::size_t n_rules = 1 + rng.below(10);
  const std::vector<std::string> vars{"?X", "?Y", "?Z"};
  for (std::size_t i = 0; i < n_rules; ++i) {
    HornRule rule;
    const std::size_t body_len = 1 + rng.below(3);
    // Track used variables so the head only draws from bound ones.
    std::set<std::string> bound;
    for (std::size_t b = 0; b < body_len; ++b) {
      auto slot = [&]() -> std::string {
        if (rng.bernoulli(0.7)) {
          const auto v = vars[rng.below(vars.size())];
          bound.insert(v);
          return v;
        }
        return ents[rng.below(ents.size())];
      };
      rule.body.push_back(pat(slot(), "r" + std::to_string(rng.below(n_rel)), slot()));
    }
    auto head_slot = [&]() -> std::string {
      if (!bound.empty() && rng.bernoulli(0.8)) {
        std::vector<std::string> b(bound.begin(), bound.end());
        return b[rng.below(b.size())];
      }
      return ents[rng.below(ents.size())];
    };
    rule.head = pat(head_slot(), "r" + std::to_string(rng.below(n_rel)), head_slot());
    kb.rules.push_back(rule);
  }
  validate_rules(kb.rules);
  return kb;
}

}  // namespace

TEST_CASE("transitive chain closes with correct depths") {
  KnowledgeBase kb;
  kb.relations = {{"r.before", {"before"}, {}, {}}};
  kb.facts = {{"a", "r.before", "b"}, {"b", "r.before", "c"}, {"c", "r.before", "d"}};
  HornRule trans;
  trans.body = {pat("?X", "r.before", "?Y"), pat("?Y", "r.before", "?Z")};
  trans.head = pat("?X", "r.before", "?Z");
  kb.rules = {trans};

  const Closure c = infer_closure(kb);
  CHECK(c.facts.size() == 6);  // 3 ground + ac, bd, ad
  CHECK(c.facts.count({"a", "r.before", "c"}) == 1);
  CHECK(c.facts.count({"a", "r.before", "d"}) == 1);
  CHECK(c.depth.at({"a", "r.before", "b"}) == 0);
  CHECK(c.depth.at({"a", "r.before", "c"}) == 1);
  CHECK(c.depth.at({"b", "r.before", "d"}) == 1);
  // ad needs a round-1 fact in its body.
  CHECK(c.depth.at({"a", "r.before", "d"}) == 2);
}

TEST_CASE("rule heads may introduce inverse relations") {
  KnowledgeBase kb;
  kb.relations = {{"r.escorts", {"escorts"}, {}, {}}, {"r.near", {"near"}, {}, {}}};
  kb.facts = {{"e.1", "r.escorts", "e.2"}};
  HornRule inv;
  inv.body = {pat("?A", "r.escorts", "?B")};
  inv.head = pat("?B", "r.near", "?A");
  kb.rules = {inv};
  const Closure c = infer_closure(kb);
  CHECK(c.facts.count({"e.2", "r.near", "e.1"}) == 1);
  CHECK(c.facts.size() == 2);
}

TEST_CASE("no rules means the closure is the ground set") {
  KnowledgeBase kb;
  kb.relations = {{"r", {"r"}, {}, {}}};
  kb.facts = {{"a", "r", "b"}};
  const Closure c = infer_closure(kb);
  CHECK(c.facts == std::set<FactTriple>{{"a", "r", "b"}});
  CHECK(c.depth.at({"a", "r", "b"}) == 0);
}

TEST_CASE("closure equals a brute-force fixpoint on randomized inputs") {
  Rng rng(4242);
  for (int round = 0; round < 60; ++round) {
    const KnowledgeBase kb = random_kb(rng);
    const Closure fast = infer_closure(kb);
    const auto slow = brute_force_closure(kb);
    REQUIRE(fast.facts == slow);
    // Every closure member has a recorded depth; ground facts are depth 0.
    for (const auto& f : fast.facts) REQUIRE(fast.depth.count(f) == 1);
    for (const auto& f : kb.facts) CHECK(fast.depth.at(f) == 0);
  }
}

TEST_CASE("closure is idempotent") {
  Rng rng(777);
  for (int round = 0; round < 20; ++round) {
    KnowledgeBase kb = random_kb(rng);
    const Closure once = infer_closure(kb);
    KnowledgeBase again = kb;
    again.facts.assign(once.facts.begin(), once.facts.end());
    const Closure twice = infer_closure(again);
    CHECK(twice.facts == once.facts);
  }
}

TEST_CASE("check_knowledge filters by relation type signatures") {
  EntityDictionary dict({
      {"e.1", "Falcon-10", "aircraft", {"Falcon-10"}, ""},
      {"e.2", "Triton-11", "vessel", {"Triton-11"}, ""},
      {"e.3", "Ridge-3", "place", {"Ridge-3"}, ""},
  });
  KnowledgeBase kb;
  kb.relations = {
      {"r.escorts", {"escorts"}, {"aircraft"}, {"vessel"}},
      {"r.near", {"near"}, {}, {}},  // unconstrained
  };

  const std::vector<FactTriple> candidates = {
      {"e.1", "r.escorts", "e.2"},  // ok
      {"e.2", "r.escorts", "e.1"},  // wrong head type
      {"e.1", "r.escorts", "e.3"},  // wrong tail type
      {"e.3", "r.near", "e.1"},     // unconstrained relation
  };
  const auto kept = check_knowledge(candidates, dict, kb);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0] == FactTriple{"e.1", "r.escorts", "e.2"});
  CHECK(kept[1] == FactTriple{"e.3", "r.near", "e.1"});

  // Unknown ids are lookup failures, not silent drops.
  CHECK_THROWS_AS(check_knowledge({{"e.9", "r.near", "e.1"}}, dict, kb),
                  LookupError);
  CHECK_THROWS_AS(check_knowledge({{"e.1", "r.ghost", "e.2"}}, dict, kb),
                  LookupError);
}
