#pragma once

#include <optional>

#include "kelp/encoder.hpp"
#include "kelp/masking.hpp"
#include "kelp/optim.hpp"
#include "kelp/tensor.hpp"

namespace kelp {

// Two-layer projection that turns (pooled context a, pooled context b,
// position row) into a hidden-sized token representation:
//   h0 = concat(a, b, p)            3H
//   h1 = LayerNorm(GeLU(W1 h0))      H
//   h2 = LayerNorm(GeLU(W2 h1))      H
// Logits come from the encoder's tied vocabulary projection, so the head
// never owns an output matrix.
class FkpHead {
 public:
  FkpHead(std::size_t hidden, ParamRegistry& params, Rng& init_rng);
  FkpHead(std::size_t hidden, ParamRegistry& params);  // rebind

  Tensor token_rep(const Tensor& ctx_a, const Tensor& ctx_b,
                   const Tensor& pos_row) const;
  std::size_t hidden() const { return hidden_; }

 private:
  std::size_t hidden_;
  ParamRegistry* params_;
  double ln_eps_ = 1e-12;
};

// A loss split into its token-prediction and fact-prediction parts.
// total always equals mlm + fkp_weight * fkp by construction; fkp is absent
// when the plan has no fact context or the weight is zero.
struct LossParts {
  Tensor total;
  Tensor mlm;
  std::optional<Tensor> fkp;  // already scaled by its share of positions
};

// Plain masked-token cross-entropy over the plan's positions (word and
// phrase stages).
LossParts mlm_only_loss(const MaskingPlan& plan, const Tensor& reps,
                        const Encoder& enc);

// Entity-stage objective: every masked position of the chosen entity gets a
// token-prediction term from the encoder and a fact-prediction term from the
// head, conditioned on (other entity, relation, position). Terms are averaged
// over masked positions.
LossParts fkp_entity_loss(const MaskingPlan& plan, const Tensor& reps,
                          const Encoder& enc, const FkpHead& head,
                          double fkp_weight = 1.0);

// Relation-stage objective: token prediction covers every masked position
// (relation span plus filler); fact prediction, conditioned on (head, tail,
// position), covers relation-span positions only. The fact term is scaled by
// its share of masked positions so total stays a per-position average.
LossParts fkp_relation_loss(const MaskingPlan& plan, const Tensor& reps,
                            const Encoder& enc, const FkpHead& head,
                            double fkp_weight = 1.0);

}  // namespace kelp
