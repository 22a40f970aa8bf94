#include "kelp/replacement.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "kelp/text.hpp"

namespace kelp {

namespace {

std::string span_surface(const AnnotatedSentence& s, const Span& sp) {
  std::string out;
  for (std::size_t i = sp.start; i < sp.end; ++i) {
    if (i > sp.start) out += ' ';
    out += s.tokens[i];
  }
  return out;
}

// Splices new tokens over [old.start, old.end) and shifts every annotation.
// Boundaries strictly inside the replaced window clamp to its edges; same
// kind spans are disjoint so this only affects enclosing phrase spans.
AnnotatedSentence splice_span(const AnnotatedSentence& s, const Span& old_span,
                              const std::vector<std::string>& new_tokens) {
  AnnotatedSentence out = s;
  out.tokens.erase(out.tokens.begin() + static_cast<std::ptrdiff_t>(old_span.start),
                   out.tokens.begin() + static_cast<std::ptrdiff_t>(old_span.end));
  out.tokens.insert(out.tokens.begin() + static_cast<std::ptrdiff_t>(old_span.start),
                    new_tokens.begin(), new_tokens.end());
  const std::ptrdiff_t delta = static_cast<std::ptrdiff_t>(new_tokens.size()) -
                               static_cast<std::ptrdiff_t>(old_span.len());
  auto shift = [&](std::size_t b, bool is_end) -> std::size_t {
    if (b <= old_span.start) return b;
    if (b >= old_span.end) return static_cast<std::size_t>(
        static_cast<std::ptrdiff_t>(b) + delta);
    return is_end ? old_span.start + new_tokens.size() : old_span.start;
  };
  auto shift_span = [&](Span& sp) {
    sp = {shift(sp.start, false), shift(sp.end, true)};
  };
  for (auto& p : out.phrase_spans) shift_span(p);
  for (auto& e : out.entity_spans) shift_span(e.span);
  for (auto& r : out.relation_spans) shift_span(r.span);
  return out;
}

std::size_t sample_index(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

}  // namespace

const char* mention_provenance_name(MentionProvenance p) {
  switch (p) {
    case MentionProvenance::kept: return "kept";
    case MentionProvenance::positive: return "positive";
    case MentionProvenance::negative: return "negative";
  }
  return "?";
}

std::vector<double> positive_mention_distribution(
    const std::string& original, const std::vector<std::string>& candidates,
    const MentionEmbeddingTable& table) {
  if (candidates.empty()) {
    throw DimensionError("positive_mention_distribution: no candidates");
  }
  const auto& ref = table.get(original);
  std::vector<double> d(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& v = table.get(candidates[i]);
    if (v.size() != ref.size()) {
      throw DimensionError("mention vectors of unequal dimension");
    }
    double sq = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double diff = v[k] - ref[k];
      sq += diff * diff;
    }
    d[i] = std::sqrt(sq);
  }
  double mx = d[0];
  for (double x : d) mx = std::max(mx, x);
  double z = 0.0;
  for (double& x : d) {
    x = std::exp(x - mx);
    z += x;
  }
  for (double& x : d) x /= z;
  return d;
}

std::optional<MentionSample> replace_mention(const AnnotatedSentence& s,
                                             std::size_t fact_index,
                                             const EntityDictionary& dict,
                                             const MentionEmbeddingTable& table,
                                             const ReplacementConfig& cfg,
                                             Rng& rng) {
  if (fact_index >= s.facts.size()) {
    throw LookupError("replace_mention: sentence has no fact " +
                      std::to_string(fact_index));
  }
  const FactRef& f = s.facts[fact_index];
  const LabeledSpan& tail = s.entity_spans[f.tail];
  const EntityRecord& entity = dict.get(tail.id);
  const std::string original = span_surface(s, tail.span);

  MentionSample sample;
  sample.fact_index = fact_index;
  const double u = rng.uniform();
  if (u < cfg.keep_prob) {
    sample.sentence = s;
    sample.provenance = MentionProvenance::kept;
    sample.label = true;
    sample.replacement = original;
    return sample;
  }
  if (u < cfg.keep_prob + cfg.positive_prob) {
    std::vector<std::string> candidates;
    for (const auto& m : entity.mentions) {
      if (m != original) candidates.push_back(m);
    }
    if (candidates.empty()) return std::nullopt;
    const auto probs = positive_mention_distribution(original, candidates, table);
    const std::string& chosen = candidates[sample_index(probs, rng)];
    sample.sentence = splice_span(s, tail.span, tokenize(chosen));
    sample.provenance = MentionProvenance::positive;
    sample.label = true;
    sample.replacement = chosen;
    return sample;
  }
  // Negative branch: any mention string listed only for other entities.
  std::set<std::string> own(entity.mentions.begin(), entity.mentions.end());
  std::set<std::string> pool;
  for (const auto& rec : dict.records()) {
    if (rec.id == entity.id) continue;
    for (const auto& m : rec.mentions) {
      if (!own.count(m)) pool.insert(m);
    }
  }
  if (pool.empty()) return std::nullopt;
  std::vector<std::string> negatives(pool.begin(), pool.end());
  const std::string& chosen = negatives[rng.below(negatives.size())];
  sample.sentence = splice_span(s, tail.span, tokenize(chosen));
  sample.provenance = MentionProvenance::negative;
  sample.label = false;
  sample.replacement = chosen;
  return sample;
}

// ---- fact replacement ----------------------------------------------------

FactSets build_fact_sets(const std::vector<FactTriple>& verified_positives,
                         const EntityDictionary& dict,
                         const KnowledgeBase& kb, Rng& rng) {
  if (verified_positives.empty()) {
    throw ConfigError("build_fact_sets: empty positive set");
  }
  FactSets sets;
  {
    std::set<FactTriple> dedup(verified_positives.begin(),
                               verified_positives.end());
    sets.positives.assign(dedup.begin(), dedup.end());
  }
  std::vector<std::string> entity_ids;
  for (const auto& r : dict.records()) entity_ids.push_back(r.id);
  std::vector<std::string> relation_ids;
  for (const auto& r : kb.relations) relation_ids.push_back(r.id);
  const std::size_t universe = entity_ids.size() * relation_ids.size() *
                               (entity_ids.size() - 1);
  const std::size_t want = 2 * sets.positives.size();
  if (universe < sets.positives.size() + want) {
    throw ConfigError("build_fact_sets: universe of " +
                      std::to_string(universe) +
                      " triples cannot supply " + std::to_string(want) +
                      " negatives beside " +
                      std::to_string(sets.positives.size()) + " positives");
  }
  std::set<FactTriple> positive_set(sets.positives.begin(),
                                    sets.positives.end());
  std::set<FactTriple> drawn;
  while (drawn.size() < want) {
    FactTriple t;
    t.head = entity_ids[rng.below(entity_ids.size())];
    t.relation = relation_ids[rng.below(relation_ids.size())];
    t.tail = entity_ids[rng.below(entity_ids.size())];
    if (t.head == t.tail) continue;
    if (positive_set.count(t)) continue;
    drawn.insert(t);
  }
  sets.negatives.assign(drawn.begin(), drawn.end());
  return sets;
}

std::optional<FactSample> replace_fact(const AnnotatedSentence& s,
                                       std::size_t fact_index,
                                       const FactSets& sets,
                                       const EntityDictionary& dict, Rng& rng) {
  if (fact_index >= s.facts.size()) {
    throw LookupError("replace_fact: sentence has no fact " +
                      std::to_string(fact_index));
  }
  const FactRef& f = s.facts[fact_index];
  const std::string& head_id = s.entity_spans[f.head].id;
  const std::string& relation_id = s.relation_spans[f.relation].id;

  const bool from_positive = rng.bernoulli(0.5);
  const auto& source = from_positive ? sets.positives : sets.negatives;
  std::vector<const FactTriple*> pool;
  for (const auto& t : source) {
    if (t.head == head_id && t.relation == relation_id) pool.push_back(&t);
  }
  if (pool.empty()) return std::nullopt;
  const FactTriple& chosen = *pool[rng.below(pool.size())];

  FactSample sample;
  sample.fact_index = fact_index;
  sample.from_positive = from_positive;
  sample.fact = {head_id, relation_id, chosen.tail};
  sample.label = from_positive;
  const Span tail_span = s.entity_spans[f.tail].span;
  sample.sentence =
      splice_span(s, tail_span, tokenize(dict.get(chosen.tail).name));
  sample.sentence.entity_spans[f.tail].id = chosen.tail;
  return sample;
}

// ---- binary heads ------------------------------------------------------------

BinarySpanHead::BinarySpanHead(const std::string& prefix, std::size_t input_dim,
                               ParamRegistry& params, Rng& init_rng)
    : prefix_(prefix), input_dim_(input_dim), params_(&params) {
  params.create(prefix + ".w", {input_dim}, init_rng, 0.02);
  params.create_zeros(prefix + ".b", {1});
}

BinarySpanHead::BinarySpanHead(const std::string& prefix, std::size_t input_dim,
                               ParamRegistry& params)
    : prefix_(prefix), input_dim_(input_dim), params_(&params) {
  params.get(prefix + ".w");
}

Tensor BinarySpanHead::logit(const std::vector<Tensor>& pooled) const {
  Tensor x = concat(pooled);
  if (x.dim(0) != input_dim_) {
    throw DimensionError("binary head '" + prefix_ + "': input " +
                         shape_str(x.shape()) + " vs expected [" +
                         std::to_string(input_dim_) + "]");
  }
  return add(dot(x, params_->get(prefix_ + ".w")), params_->get(prefix_ + ".b"));
}

Tensor BinarySpanHead::loss(const std::vector<Tensor>& pooled,
                            bool label) const {
  return bce_with_logit(logit(pooled), label ? 1.0 : 0.0);
}

Tensor mention_prediction_loss(const MentionSample& sample, const Tensor& reps,
                               const BinarySpanHead& head) {
  const auto& s = sample.sentence;
  const FactRef& f = s.facts[sample.fact_index];
  const Span h = s.entity_spans[f.head].span;
  const Span r = s.relation_spans[f.relation].span;
  return head.loss({span_mean(reps, h.start, h.end),
                    span_mean(reps, r.start, r.end)},
                   sample.label);
}

Tensor fact_truth_loss(const FactSample& sample, const Tensor& reps,
                       const BinarySpanHead& head) {
  const auto& s = sample.sentence;
  const FactRef& f = s.facts[sample.fact_index];
  const Span h = s.entity_spans[f.head].span;
  const Span r = s.relation_spans[f.relation].span;
  const Span t = s.entity_spans[f.tail].span;
  return head.loss({span_mean(reps, h.start, h.end),
                    span_mean(reps, r.start, r.end),
                    span_mean(reps, t.start, t.end)},
                   sample.label);
}

}  // namespace kelp
