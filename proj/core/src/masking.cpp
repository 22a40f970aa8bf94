#include "kelp/masking.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace kelp {

namespace {

std::size_t token_budget(double ratio, std::size_t n) {
  return static_cast<std::size_t>(
      std::ceil(ratio * static_cast<double>(n) - 1e-12));
}

// First k of a seeded shuffle of 0..n-1 (partial Fisher-Yates).
std::vector<std::size_t> sample_positions(std::size_t n, std::size_t k,
                                          Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

int random_regular_token(const Vocabulary& v, Rng& rng) {
  const std::size_t regular = v.size() - Vocabulary::kReservedCount;
  if (regular == 0) return Vocabulary::kUnk;
  return Vocabulary::kReservedCount + static_cast<int>(rng.below(regular));
}

void finalize(MaskingPlan& plan, const AnnotatedSentence& s,
              const Vocabulary& v) {
  std::sort(plan.ops.begin(), plan.ops.end());
  plan.targets.clear();
  plan.targets.reserve(plan.ops.size());
  for (const auto& op : plan.ops) {
    plan.targets.push_back(v.encode(s.tokens[op.pos]));
  }
}

}  // namespace

const char* mask_stage_name(MaskStage s) {
  switch (s) {
    case MaskStage::word: return "word";
    case MaskStage::phrase: return "phrase";
    case MaskStage::entity: return "entity";
    case MaskStage::relation: return "relation";
  }
  return "?";
}

std::vector<std::size_t> MaskingPlan::positions() const {
  std::vector<std::size_t> out;
  out.reserve(ops.size());
  for (const auto& op : ops) out.push_back(op.pos);
  return out;
}

MaskingPlan plan_word_masking(const AnnotatedSentence& s, const Vocabulary& v,
                              const MaskingConfig& cfg, Rng& rng) {
  MaskingPlan plan;
  plan.stage = MaskStage::word;
  const std::size_t n = s.tokens.size();
  const std::size_t budget = token_budget(cfg.mask_ratio, n);
  auto picked = sample_positions(n, budget, rng);
  std::sort(picked.begin(), picked.end());
  for (std::size_t pos : picked) {
    MaskOp op;
    op.pos = pos;
    const double u = rng.uniform();
    if (u < cfg.mask_prob) {
      op.action = MaskAction::mask;
    } else if (u < cfg.mask_prob + cfg.random_prob) {
      op.action = MaskAction::random;
      op.replacement_id = random_regular_token(v, rng);
    } else {
      op.action = MaskAction::keep;
    }
    plan.ops.push_back(op);
  }
  finalize(plan, s, v);
  return plan;
}

std::optional<MaskingPlan> plan_phrase_masking(const AnnotatedSentence& s,
                                               const Vocabulary& v,
                                               const MaskingConfig& cfg,
                                               Rng& rng) {
  if (s.phrase_spans.empty()) return std::nullopt;
  MaskingPlan plan;
  plan.stage = MaskStage::phrase;
  const std::size_t budget = token_budget(cfg.mask_ratio, s.tokens.size());
  const auto order = sample_positions(s.phrase_spans.size(),
                                      s.phrase_spans.size(), rng);
  std::size_t covered = 0;
  for (std::size_t k : order) {
    if (covered >= budget) break;
    const Span& p = s.phrase_spans[k];
    for (std::size_t pos = p.start; pos < p.end; ++pos) {
      plan.ops.push_back({pos, MaskAction::mask, -1});
    }
    covered += p.len();
  }
  finalize(plan, s, v);
  return plan;
}

MaskingPlan plan_entity_masking(const AnnotatedSentence& s, const Vocabulary& v,
                                const MaskingConfig& cfg, Rng& rng) {
  (void)cfg;  // entity plans mask one whole span regardless of budget
  if (s.facts.empty()) {
    throw FactRequiredError("entity masking needs a sentence with a fact");
  }
  MaskingPlan plan;
  plan.stage = MaskStage::entity;
  plan.fact_index = static_cast<std::size_t>(rng.below(s.facts.size()));
  const FactRef& f = s.facts[plan.fact_index];
  const bool mask_head = rng.bernoulli(0.5);
  const Span victim = s.entity_spans[mask_head ? f.head : f.tail].span;
  const Span other = s.entity_spans[mask_head ? f.tail : f.head].span;
  const Span rel = s.relation_spans[f.relation].span;
  for (std::size_t pos = victim.start; pos < victim.end; ++pos) {
    plan.ops.push_back({pos, MaskAction::mask, -1});
  }
  plan.masked_unit = victim;
  plan.context_a = other;
  plan.context_b = rel;
  finalize(plan, s, v);
  return plan;
}

MaskingPlan plan_relation_masking(const AnnotatedSentence& s,
                                  const Vocabulary& v,
                                  const MaskingConfig& cfg, Rng& rng) {
  if (s.facts.empty()) {
    throw FactRequiredError("relation masking needs a sentence with a fact");
  }
  MaskingPlan plan;
  plan.stage = MaskStage::relation;
  plan.fact_index = static_cast<std::size_t>(rng.below(s.facts.size()));
  const FactRef& f = s.facts[plan.fact_index];
  const Span rel = s.relation_spans[f.relation].span;
  for (std::size_t pos = rel.start; pos < rel.end; ++pos) {
    plan.ops.push_back({pos, MaskAction::mask, -1});
  }
  const std::size_t budget = token_budget(cfg.mask_ratio, s.tokens.size());
  if (rel.len() < budget) {
    // Filler positions may sit anywhere outside entity spans and the chosen
    // relation span; other facts' relation tokens are fair game.
    std::vector<std::size_t> pool;
    for (std::size_t pos = 0; pos < s.tokens.size(); ++pos) {
      if (rel.contains(pos)) continue;
      bool in_entity = false;
      for (const auto& e : s.entity_spans) {
        if (e.span.contains(pos)) {
          in_entity = true;
          break;
        }
      }
      if (!in_entity) pool.push_back(pos);
    }
    const std::size_t want = std::min(budget - rel.len(), pool.size());
    const auto picked = sample_positions(pool.size(), want, rng);
    for (std::size_t k : picked) {
      plan.ops.push_back({pool[k], MaskAction::mask, -1});
    }
  }
  plan.masked_unit = rel;
  plan.context_a = s.entity_spans[f.head].span;
  plan.context_b = s.entity_spans[f.tail].span;
  finalize(plan, s, v);
  return plan;
}

std::vector<int> apply_masking(const std::vector<int>& input_ids,
                               const MaskingPlan& plan, int mask_id) {
  std::vector<int> out = input_ids;
  for (const auto& op : plan.ops) {
    if (op.pos >= out.size()) {
      throw DimensionError("masking op at position " + std::to_string(op.pos) +
                           " outside sentence of length " +
                           std::to_string(out.size()));
    }
    switch (op.action) {
      case MaskAction::mask: out[op.pos] = mask_id; break;
      case MaskAction::random: out[op.pos] = op.replacement_id; break;
      case MaskAction::keep: break;
    }
  }
  return out;
}

std::string plan_line(const MaskingPlan& plan) {
  nlohmann::json j;
  j["stage"] = mask_stage_name(plan.stage);
  j["ops"] = nlohmann::json::array();
  for (const auto& op : plan.ops) {
    const char* act = op.action == MaskAction::mask     ? "mask"
                      : op.action == MaskAction::random ? "random"
                                                        : "keep";
    j["ops"].push_back({op.pos, act, op.replacement_id});
  }
  j["targets"] = plan.targets;
  if (plan.masked_unit) {
    j["unit"] = {plan.masked_unit->start, plan.masked_unit->end};
    j["context"] = {{plan.context_a->start, plan.context_a->end},
                    {plan.context_b->start, plan.context_b->end}};
    j["fact"] = plan.fact_index;
  }
  return j.dump();
}

}  // namespace kelp
