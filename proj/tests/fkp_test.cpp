#include "kelp/fkp.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "kelp/corpus.hpp"
#include "kelp/encoder.hpp"
#include "kelp/errors.hpp"
#include "kelp/masking.hpp"
#include "kelp/optim.hpp"
#include "kelp/rng.hpp"
#include "kelp/tensor.hpp"

using namespace kelp;

namespace {

using Vec = std::vector<double>;

AnnotatedSentence fact_sentence() {
  AnnotatedSentence s;
  s.tokens = {"during", "the",    "patrol", "Falcon-10", "escorts",
              "Triton-11", "near", "the",   "ridge",     "."};
  s.phrase_spans = {{0, 3}, {6, 9}};
  s.entity_spans = {{{3, 4}, "e.10"}, {{5, 6}, "e.11"}};
  s.relation_spans = {{{4, 5}, "r.escorts"}};
  s.facts = {{0, 0, 1}};
  return s;
}

struct Fixture {
  AnnotatedSentence sent = fact_sentence();
  Vocabulary vocab = Vocabulary::build({fact_sentence()});
  ParamRegistry params;
  EncoderConfig cfg;
  Encoder enc;
  FkpHead head;
  Tensor reps;

  Fixture() : cfg(EncoderConfig::toy(vocab.size())), enc(build_enc()), head(build_head()) {
    MaskingConfig mcfg;
    Rng plan_rng(400);
    plan = plan_entity_masking(sent, vocab, mcfg, plan_rng);
    Rng rel_rng(401);
    rel_plan = plan_relation_masking(sent, vocab, mcfg, rel_rng);
    const auto ids = vocab.encode_all(sent.tokens);
    const auto masked = apply_masking(ids, rel_plan, Vocabulary::kMask);
    // Shared representation computed from the relation-plan corruption; the
    // oracle only needs any fixed reps matrix, so one serves both stages.
    reps = enc.encode(enc.embed(masked, 1),
                      std::vector<std::uint8_t>(sent.tokens.size(), 1));
  }

  MaskingPlan plan;      // entity stage
  MaskingPlan rel_plan;  // relation stage

 private:
  Encoder build_enc() {
    Rng rng(7);
    return Encoder(cfg, params, rng);
  }
  FkpHead build_head() {
    Rng rng(8);
    return FkpHead(cfg.hidden, params, rng);
  }
};

// ---- independent scalar recomputation, no Tensor machinery ----------------

Vec row_of(const Tensor& m, std::size_t r) {
  Vec out(m.dim(1));
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = m.at(r, j);
  return out;
}

Vec span_mean_ref(const Tensor& reps, Span sp) {
  Vec out(reps.dim(1), 0.0);
  for (std::size_t p = sp.start; p < sp.end; ++p)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += reps.at(p, j);
  for (auto& x : out) x /= static_cast<double>(sp.len());
  return out;
}

Vec mat_vec_t(const Tensor& w, const Vec& x) {  // w[in,out], returns x.w
  const std::size_t in = w.dim(0), out = w.dim(1);
  REQUIRE(x.size() == in);
  Vec y(out, 0.0);
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < out; ++j) y[j] += x[i] * w.at(i, j);
  return y;
}

Vec gelu_ref(Vec x) {
  for (auto& v : x) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return x;
}

Vec layer_norm_ref(const Vec& x, const Tensor& gain, const Tensor& bias,
                   double eps = 1e-12) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + eps);
  Vec y(n);
  for (std::size_t i = 0; i < n; ++i)
    y[i] = (x[i] - mean) * inv * gain.at(i) + bias.at(i);
  return y;
}

double ce_ref(const std::vector<Vec>& logits, const std::vector<int>& targets) {
  REQUIRE(logits.size() == targets.size());
  double total = 0.0;
  for (std::size_t r = 0; r < logits.size(); ++r) {
    double mx = logits[r][0];
    for (double v : logits[r]) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits[r]) z += std::exp(v - mx);
    total += -(logits[r][static_cast<std::size_t>(targets[r])] - mx - std::log(z));
  }
  return total / static_cast<double>(logits.size());
}

Vec vocab_logits_ref(const Fixture& f, const Vec& rep) {
  const auto& table = f.params.get("enc.embed.token");
  const auto& bias = f.params.get("enc.mlm.out_bias");
  Vec out(table.dim(0), 0.0);
  for (std::size_t t = 0; t < out.size(); ++t) {
    double s = 0.0;
    for (std::size_t j = 0; j < rep.size(); ++j) s += rep[j] * table.at(t, j);
    out[t] = s + bias.at(t);
  }
  return out;
}

double mlm_ref(const Fixture& f, const MaskingPlan& plan) {
  std::vector<Vec> logits;
  const auto& b = f.params.get("enc.mlm.b");
  for (const auto& op : plan.ops) {
    Vec h = mat_vec_t(f.params.get("enc.mlm.w"), row_of(f.reps, op.pos));
    for (std::size_t j = 0; j < h.size(); ++j) h[j] += b.at(j);
    h = layer_norm_ref(gelu_ref(h), f.params.get("enc.mlm.ln.gain"),
                       f.params.get("enc.mlm.ln.bias"));
    logits.push_back(vocab_logits_ref(f, h));
  }
  return ce_ref(logits, plan.targets);
}

Vec fkp_rep_ref(const Fixture& f, const Vec& a, const Vec& b, std::size_t pos) {
  Vec h0 = a;
  h0.insert(h0.end(), b.begin(), b.end());
  const auto& ptable = f.params.get("enc.embed.position");
  for (std::size_t j = 0; j < f.cfg.hidden; ++j) h0.push_back(ptable.at(pos, j));
  Vec h1 = layer_norm_ref(gelu_ref(mat_vec_t(f.params.get("fkp.w1"), h0)),
                          f.params.get("fkp.ln1.gain"), f.params.get("fkp.ln1.bias"));
  Vec h2 = layer_norm_ref(gelu_ref(mat_vec_t(f.params.get("fkp.w2"), h1)),
                          f.params.get("fkp.ln2.gain"), f.params.get("fkp.ln2.bias"));
  return h2;
}

}  // namespace

TEST_CASE("token_rep shape checks") {
  Fixture f;
  Tensor good = Tensor::zeros({f.cfg.hidden});
  Tensor bad = Tensor::zeros({f.cfg.hidden + 1});
  CHECK_NOTHROW(f.head.token_rep(good, good, good));
  CHECK_THROWS_AS(f.head.token_rep(bad, good, good), DimensionError);
  CHECK_THROWS_AS(f.head.token_rep(good, good, Tensor::zeros({2, 2})),
                  DimensionError);
}

TEST_CASE("mlm_only_loss matches the scalar recomputation") {
  Fixture f;
  MaskingConfig mcfg;
  Rng rng(402);
  const auto word_plan = plan_word_masking(f.sent, f.vocab, mcfg, rng);
  // Reps fixed by the fixture; the loss only needs plan rows out of it.
  const LossParts parts = mlm_only_loss(word_plan, f.reps, f.enc);
  CHECK(parts.total.value() == parts.mlm.value());
  CHECK_FALSE(parts.fkp.has_value());
  CHECK(parts.total.value() ==
        doctest::Approx(mlm_ref(f, word_plan)).epsilon(1e-10));

  MaskingPlan empty;
  CHECK_THROWS_AS(mlm_only_loss(empty, f.reps, f.enc), DimensionError);
}

TEST_CASE("entity loss decomposes exactly and matches the oracle") {
  Fixture f;
  const double w = 0.7;
  const LossParts parts = fkp_entity_loss(f.plan, f.reps, f.enc, f.head, w);
  REQUIRE(parts.fkp.has_value());

  // total = mlm + w * fkp as doubles.
  CHECK(std::abs(parts.total.value() -
                 (parts.mlm.value() + w * parts.fkp->value())) < 1e-12);

  // Scalar recomputation of both terms.
  CHECK(parts.mlm.value() == doctest::Approx(mlm_ref(f, f.plan)).epsilon(1e-10));
  const Vec a = span_mean_ref(f.reps, *f.plan.context_a);
  const Vec b = span_mean_ref(f.reps, *f.plan.context_b);
  std::vector<Vec> logits;
  for (const auto& op : f.plan.ops)
    logits.push_back(vocab_logits_ref(f, fkp_rep_ref(f, a, b, op.pos)));
  CHECK(parts.fkp->value() ==
        doctest::Approx(ce_ref(logits, f.plan.targets)).epsilon(1e-10));
}

TEST_CASE("relation loss scales the fact term by its position share") {
  Fixture f;
  const double w = 1.0;
  const LossParts parts = fkp_relation_loss(f.rel_plan, f.reps, f.enc, f.head, w);
  REQUIRE(parts.fkp.has_value());
  CHECK(std::abs(parts.total.value() -
                 (parts.mlm.value() + w * parts.fkp->value())) < 1e-12);
  CHECK(parts.mlm.value() ==
        doctest::Approx(mlm_ref(f, f.rel_plan)).epsilon(1e-10));

  // Fact term: relation-span positions only, scaled by span/total ops.
  const Vec a = span_mean_ref(f.reps, *f.rel_plan.context_a);
  const Vec b = span_mean_ref(f.reps, *f.rel_plan.context_b);
  std::vector<Vec> logits;
  std::vector<int> targets;
  for (std::size_t i = 0; i < f.rel_plan.ops.size(); ++i) {
    const auto& op = f.rel_plan.ops[i];
    if (!f.rel_plan.masked_unit->contains(op.pos)) continue;
    logits.push_back(vocab_logits_ref(f, fkp_rep_ref(f, a, b, op.pos)));
    targets.push_back(f.rel_plan.targets[i]);
  }
  REQUIRE_FALSE(logits.empty());
  const double share = static_cast<double>(logits.size()) /
                       static_cast<double>(f.rel_plan.ops.size());
  CHECK(parts.fkp->value() ==
        doctest::Approx(share * ce_ref(logits, targets)).epsilon(1e-10));
  CHECK(share < 1.0);  // the fixture plan includes at least one filler position
}

TEST_CASE("zero weight reproduces the plain masked loss bit for bit") {
  Fixture f;
  const LossParts with_head = fkp_entity_loss(f.plan, f.reps, f.enc, f.head, 0.0);
  const LossParts plain = mlm_only_loss(f.plan, f.reps, f.enc);
  CHECK(with_head.total.value() == plain.total.value());
  CHECK_FALSE(with_head.fkp.has_value());

  const LossParts rel0 = fkp_relation_loss(f.rel_plan, f.reps, f.enc, f.head, 0.0);
  const LossParts rel_plain = mlm_only_loss(f.rel_plan, f.reps, f.enc);
  CHECK(rel0.total.value() == rel_plain.total.value());
  CHECK_FALSE(rel0.fkp.has_value());
}

TEST_CASE("stage mismatches are rejected") {
  Fixture f;
  CHECK_THROWS_AS(fkp_entity_loss(f.rel_plan, f.reps, f.enc, f.head), Error);
  CHECK_THROWS_AS(fkp_relation_loss(f.plan, f.reps, f.enc, f.head), Error);
}

TEST_CASE("losses are differentiable end to end") {
  Fixture f;
  f.params.zero_grads();
  const LossParts parts = fkp_entity_loss(f.plan, f.reps, f.enc, f.head, 1.0);
  parts.total.backward();
  // Fact context flows through the head weights and the tied table.
  CHECK(f.params.get("fkp.w1").has_grad());
  CHECK(f.params.get("enc.embed.token").has_grad());
  double sum = 0.0;
  for (double g : f.params.get("fkp.w1").grad()) sum += std::abs(g);
  CHECK(sum > 0.0);
}
