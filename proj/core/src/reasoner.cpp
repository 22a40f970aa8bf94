#include "kelp/reasoner.hpp"

#include <algorithm>
#include <string>
#include <unordered_map>

namespace kelp {

namespace {

using Binding = std::map<std::string, std::string>;

bool unify_term(const Term& t, const std::string& value, Binding& b) {
  if (!t.is_var) return t.text == value;
  auto it = b.find(t.text);
  if (it == b.end()) {
    b.emplace(t.text, value);
    return true;
  }
  return it->second == value;
}

bool unify_atom(const TriplePattern& p, const FactTriple& f, Binding& b) {
  const Binding saved = b;
  if (unify_term(p.head, f.head, b) && unify_term(p.relation, f.relation, b) &&
      unify_term(p.tail, f.tail, b)) {
    return true;
  }
  b = saved;
  return false;
}

std::string instantiate(const Term& t, const Binding& b) {
  if (!t.is_var) return t.text;
  return b.at(t.text);  // guaranteed bound by rule validation
}

// Facts indexed by relation id; patterns with a variable relation slot scan
// the whole set.
struct FactIndex {
  std::vector<FactTriple> all;
  std::unordered_map<std::string, std::vector<FactTriple>> by_relation;

  void add(const FactTriple& f) {
    all.push_back(f);
    by_relation[f.relation].push_back(f);
  }
  const std::vector<FactTriple>& candidates(const TriplePattern& p,
                                            const Binding& b) const {
    static const std::vector<FactTriple> empty;
    if (!p.relation.is_var) {
      auto it = by_relation.find(p.relation.text);
      return it == by_relation.end() ? empty : it->second;
    }
    auto bound = b.find(p.relation.text);
    if (bound != b.end()) {
      auto it = by_relation.find(bound->second);
      return it == by_relation.end() ? empty : it->second;
    }
    return all;
  }
};

void match_body(const HornRule& rule, std::size_t atom, const FactIndex& index,
                Binding& binding, std::vector<FactTriple>& derived) {
  if (atom == rule.body.size()) {
    derived.push_back({instantiate(rule.head.head, binding),
                       instantiate(rule.head.relation, binding),
                       instantiate(rule.head.tail, binding)});
    return;
  }
  for (const FactTriple& f : index.candidates(rule.body[atom], binding)) {
    Binding next = binding;
    if (unify_atom(rule.body[atom], f, next)) {
      match_body(rule, atom + 1, index, next, derived);
    }
  }
}

}  // namespace

Closure infer_closure(const KnowledgeBase& kb) {
  validate_rules(kb.rules);
  Closure out;
  for (const auto& f : kb.facts) {
    if (out.facts.insert(f).second) out.depth.emplace(f, 0);
  }
  std::size_t round = 0;
  bool grew = true;
  while (grew) {
    grew = false;
    ++round;
    FactIndex index;
    for (const auto& f : out.facts) index.add(f);
    std::vector<FactTriple> derived;
    for (const auto& rule : kb.rules) {
      Binding binding;
      match_body(rule, 0, index, binding, derived);
    }
    for (const auto& f : derived) {
      if (out.facts.insert(f).second) {
        out.depth.emplace(f, round);
        grew = true;
      }
    }
  }
  return out;
}

std::vector<FactTriple> check_knowledge(const std::vector<FactTriple>& candidates,
                                        const EntityDictionary& dict,
                                        const KnowledgeBase& kb) {
  std::vector<FactTriple> kept;
  for (const auto& c : candidates) {
    const RelationRecord& rel = kb.relation(c.relation);
    const std::string& head_type = dict.get(c.head).type;
    const std::string& tail_type = dict.get(c.tail).type;
    const bool head_ok = rel.head_types.empty() || rel.head_types.count(head_type);
    const bool tail_ok = rel.tail_types.empty() || rel.tail_types.count(tail_type);
    if (head_ok && tail_ok) kept.push_back(c);
  }
  return kept;
}

}  // namespace kelp
