#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kelp/corpus.hpp"
#include "kelp/rng.hpp"

namespace kelp {

enum class MaskStage { word, phrase, entity, relation };
const char* mask_stage_name(MaskStage s);

enum class MaskAction { mask, random, keep };

struct MaskOp {
  std::size_t pos = 0;
  MaskAction action = MaskAction::mask;
  int replacement_id = -1;  // vocabulary id when action == random
  auto operator<=>(const MaskOp&) const = default;
};

// Per-sentence corruption recipe. ops are sorted by position and unique;
// targets align one-to-one with ops and hold the original vocabulary ids.
struct MaskingPlan {
  MaskStage stage = MaskStage::word;
  std::vector<MaskOp> ops;
  std::vector<int> targets;

  // Stage-specific context, set for entity and relation plans.
  std::optional<Span> masked_unit;       // the masked entity or relation span
  std::optional<Span> context_a;         // entity: unmasked entity; relation: head
  std::optional<Span> context_b;         // entity: relation span;   relation: tail
  std::size_t fact_index = 0;            // which sentence fact the plan serves

  std::vector<std::size_t> positions() const;
};

struct MaskingConfig {
  double mask_ratio = 0.15;   // token budget = ceil(ratio * len)
  double mask_prob = 0.8;     // word stage action split
  double random_prob = 0.1;
  double keep_prob = 0.1;
};

// Uniformly samples ceil(ratio*n) positions; each gets mask/random/keep by
// the configured split. Random replacements draw from the non-reserved
// vocabulary range.
MaskingPlan plan_word_masking(const AnnotatedSentence& s, const Vocabulary& v,
                              const MaskingConfig& cfg, Rng& rng);

// Whole phrases, shuffled, taken until the budget is met; the last phrase may
// overshoot. Every covered position becomes a mask token. Sentences without
// phrase annotations yield nullopt so callers can fall back to word masking.
std::optional<MaskingPlan> plan_phrase_masking(const AnnotatedSentence& s,
                                               const Vocabulary& v,
                                               const MaskingConfig& cfg,
                                               Rng& rng);

// Picks one fact and masks exactly one of its two entities (coin flip), whole
// span, mask tokens only. The other entity and the relation stay intact and
// are recorded as FKP context. Throws FactRequiredError without facts.
MaskingPlan plan_entity_masking(const AnnotatedSentence& s, const Vocabulary& v,
                                const MaskingConfig& cfg, Rng& rng);

// Picks one fact and masks its whole relation span, topping up to the token
// budget with positions that lie in no entity span. Head and tail become FKP
// context. Throws FactRequiredError without facts.
MaskingPlan plan_relation_masking(const AnnotatedSentence& s,
                                  const Vocabulary& v,
                                  const MaskingConfig& cfg, Rng& rng);

// Applies a plan to the encoded sentence: mask -> mask_id, random -> stored
// replacement, keep -> unchanged.
std::vector<int> apply_masking(const std::vector<int>& input_ids,
                               const MaskingPlan& plan, int mask_id);

// One plan per line in the corpus JSON dialect; used by plan dump tooling.
std::string plan_line(const MaskingPlan& plan);

}  // namespace kelp
