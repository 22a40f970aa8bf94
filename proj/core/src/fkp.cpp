#include "kelp/fkp.hpp"

#include <algorithm>

namespace kelp {

FkpHead::FkpHead(std::size_t hidden, ParamRegistry& params, Rng& init_rng)
    : hidden_(hidden), params_(&params) {
  params.create("fkp.w1", {3 * hidden, hidden}, init_rng, 0.02);
  params.create_full("fkp.ln1.gain", {hidden}, 1.0);
  params.create_zeros("fkp.ln1.bias", {hidden});
  params.create("fkp.w2", {hidden, hidden}, init_rng, 0.02);
  params.create_full("fkp.ln2.gain", {hidden}, 1.0);
  params.create_zeros("fkp.ln2.bias", {hidden});
}

FkpHead::FkpHead(std::size_t hidden, ParamRegistry& params)
    : hidden_(hidden), params_(&params) {
  params.get("fkp.w1");
}

Tensor FkpHead::token_rep(const Tensor& ctx_a, const Tensor& ctx_b,
                          const Tensor& pos_row) const {
  for (const Tensor* t : {&ctx_a, &ctx_b, &pos_row}) {
    if (t->rank() != 1 || t->dim(0) != hidden_) {
      throw DimensionError("fkp token_rep: context piece " +
                           shape_str(t->shape()) + " vs hidden " +
                           std::to_string(hidden_));
    }
  }
  Tensor h0 = as_row(concat({ctx_a, ctx_b, pos_row}));
  Tensor h1 = layer_norm(gelu(matmul(h0, params_->get("fkp.w1"))),
                         params_->get("fkp.ln1.gain"),
                         params_->get("fkp.ln1.bias"), ln_eps_);
  Tensor h2 = layer_norm(gelu(matmul(h1, params_->get("fkp.w2"))),
                         params_->get("fkp.ln2.gain"),
                         params_->get("fkp.ln2.bias"), ln_eps_);
  return as_vec(h2);
}

namespace {

std::vector<int> as_int_positions(const std::vector<std::size_t>& pos) {
  std::vector<int> out;
  out.reserve(pos.size());
  for (std::size_t p : pos) out.push_back(static_cast<int>(p));
  return out;
}

Tensor masked_mlm_ce(const MaskingPlan& plan, const Tensor& reps,
                     const Encoder& enc) {
  if (plan.ops.empty()) {
    throw DimensionError("loss over a plan with no masked positions");
  }
  Tensor rows = gather_rows(reps, as_int_positions(plan.positions()));
  return cross_entropy(enc.mlm_logits(rows), plan.targets);
}

}  // namespace

LossParts mlm_only_loss(const MaskingPlan& plan, const Tensor& reps,
                        const Encoder& enc) {
  Tensor mlm = masked_mlm_ce(plan, reps, enc);
  return {mlm, mlm, std::nullopt};
}

LossParts fkp_entity_loss(const MaskingPlan& plan, const Tensor& reps,
                          const Encoder& enc, const FkpHead& head,
                          double fkp_weight) {
  if (plan.stage != MaskStage::entity || !plan.masked_unit) {
    throw Error("fkp_entity_loss expects an entity-stage plan");
  }
  Tensor mlm = masked_mlm_ce(plan, reps, enc);
  if (fkp_weight == 0.0) return {mlm, mlm, std::nullopt};

  Tensor ctx_a = span_mean(reps, plan.context_a->start, plan.context_a->end);
  Tensor ctx_b = span_mean(reps, plan.context_b->start, plan.context_b->end);
  std::vector<Tensor> fact_rows;
  for (const auto& op : plan.ops) {
    fact_rows.push_back(
        head.token_rep(ctx_a, ctx_b, enc.position_row(op.pos)));
  }
  Tensor fkp_ce =
      cross_entropy(enc.vocab_project(stack_rows(fact_rows)), plan.targets);
  Tensor total = weighted_sum_scalars({mlm, fkp_ce}, {1.0, fkp_weight});
  return {total, mlm, fkp_ce};
}

LossParts fkp_relation_loss(const MaskingPlan& plan, const Tensor& reps,
                            const Encoder& enc, const FkpHead& head,
                            double fkp_weight) {
  if (plan.stage != MaskStage::relation || !plan.masked_unit) {
    throw Error("fkp_relation_loss expects a relation-stage plan");
  }
  Tensor mlm = masked_mlm_ce(plan, reps, enc);
  if (fkp_weight == 0.0) return {mlm, mlm, std::nullopt};

  Tensor ctx_a = span_mean(reps, plan.context_a->start, plan.context_a->end);
  Tensor ctx_b = span_mean(reps, plan.context_b->start, plan.context_b->end);
  std::vector<Tensor> fact_rows;
  std::vector<int> fact_targets;
  for (std::size_t i = 0; i < plan.ops.size(); ++i) {
    if (!plan.masked_unit->contains(plan.ops[i].pos)) continue;  // filler
    fact_rows.push_back(
        head.token_rep(ctx_a, ctx_b, enc.position_row(plan.ops[i].pos)));
    fact_targets.push_back(plan.targets[i]);
  }
  Tensor fkp_ce = cross_entropy(enc.vocab_project(stack_rows(fact_rows)),
                                fact_targets);
  // Rescale so total stays the mean over all masked positions of
  // (token term + fact term at relation positions).
  const double share = static_cast<double>(fact_rows.size()) /
                       static_cast<double>(plan.ops.size());
  Tensor fkp_scaled = scale(fkp_ce, share);
  Tensor total = weighted_sum_scalars({mlm, fkp_scaled}, {1.0, fkp_weight});
  return {total, mlm, fkp_scaled};
}

}  // namespace kelp
