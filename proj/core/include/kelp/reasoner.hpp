#pragma once

#include <map>
#include <set>
#include <vector>

#include "kelp/corpus.hpp"
#include "kelp/rng.hpp"

namespace kelp {

// Least fixpoint of the rule set over the ground facts, with the round at
// which each triple first appeared (ground facts are round 0).
struct Closure {
  std::set<FactTriple> facts;
  std::map<FactTriple, std::size_t> depth;
};

// Forward chaining to fixpoint. Rules are function-free Horn clauses, so the
// closure stays within the constants already present and always terminates.
Closure infer_closure(const KnowledgeBase& kb);

// Filters candidates by the relation type signatures: a triple survives when
// its head and tail entity types are allowed by the relation record (an
// empty allowed set means unconstrained).
std::vector<FactTriple> check_knowledge(const std::vector<FactTriple>& candidates,
                                        const EntityDictionary& dict,
                                        const KnowledgeBase& kb);

}  // namespace kelp
