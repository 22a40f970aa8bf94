#include "kelp/gradsuite.hpp"

#include <algorithm>

#include "kelp/fkp.hpp"
#include "kelp/gradcheck.hpp"
#include "kelp/replacement.hpp"

namespace kelp {

namespace {

// Hand-built single-fact world, just rich enough to exercise every loss:
// two entities with alternates, a one-token relation, one phrase span.
struct Fixture {
  std::vector<AnnotatedSentence> corpus;
  EntityDictionary dict{std::vector<EntityRecord>{
      {"e.10", "Falcon-10", "aircraft", {"Falcon-10", "Falcon10", "FA-10"}, ""},
      {"e.11", "Triton-11", "vessel", {"Triton-11", "Triton11"}, ""},
      {"e.12", "Triton-12", "vessel", {"Triton-12", "Triton12"}, ""},
  }};
  KnowledgeBase kb;
  MentionEmbeddingTable mentions{4};
  Vocabulary vocab;

  Fixture() {
    AnnotatedSentence s;
    s.tokens = {"during", "the", "patrol", "Falcon-10", "escorts",
                "Triton-11", "near", "the", "ridge", "."};
    s.text_type = 1;
    s.phrase_spans = {{0, 3}, {6, 9}};
    s.entity_spans = {{{3, 4}, "e.10"}, {{5, 6}, "e.11"}};
    s.relation_spans = {{{4, 5}, "r.escorts"}};
    s.facts = {{0, 0, 1}};
    validate_sentence(s);
    corpus.push_back(s);

    kb.relations.push_back(
        {"r.escorts", {"escorts"}, {"aircraft"}, {"vessel"}});
    kb.facts = {{"e.10", "r.escorts", "e.11"}, {"e.10", "r.escorts", "e.12"}};

    Rng vec_rng(41);
    for (const auto& rec : dict.records()) {
      for (const auto& m : rec.mentions) {
        std::vector<double> v(4);
        for (auto& x : v) x = vec_rng.normal();
        mentions.put(m, std::move(v));
      }
    }
    vocab = Vocabulary::build(corpus);
  }
};

struct PathCheck {
  const char* name;
  std::function<Tensor(const Fixture&, Encoder&, FkpHead&, BinarySpanHead&,
                       BinarySpanHead&, ParamRegistry&, Rng&)>
      build;
};

Tensor encode_fixture(const Encoder& enc, const std::vector<int>& ids,
                      int text_type) {
  const Tensor x = enc.embed(ids, text_type);
  const std::vector<std::uint8_t> attn(ids.size(), 1);
  return enc.encode(x, attn);
}

}  // namespace

GradSuiteResult run_gradient_suite(std::uint64_t seed,
                                   std::size_t seeds_per_path,
                                   std::size_t coords_per_param,
                                   double fd_step) {
  static const Fixture fx;
  const MaskingConfig mask_cfg;
  const ReplacementConfig rep_cfg;

  const std::vector<PathCheck> checks = {
      {"mlm",
       [&](const Fixture& f, Encoder& enc, FkpHead&, BinarySpanHead&,
           BinarySpanHead&, ParamRegistry&, Rng& rng) {
         const auto& s = f.corpus[0];
         const auto plan = plan_word_masking(s, f.vocab, mask_cfg, rng);
         const auto ids = apply_masking(f.vocab.encode_all(s.tokens), plan,
                                        Vocabulary::kMask);
         return mlm_only_loss(plan, encode_fixture(enc, ids, s.text_type), enc)
             .total;
       }},
      {"fkp_entity",
       [&](const Fixture& f, Encoder& enc, FkpHead& head, BinarySpanHead&,
           BinarySpanHead&, ParamRegistry&, Rng& rng) {
         const auto& s = f.corpus[0];
         const auto plan = plan_entity_masking(s, f.vocab, mask_cfg, rng);
         const auto ids = apply_masking(f.vocab.encode_all(s.tokens), plan,
                                        Vocabulary::kMask);
         return fkp_entity_loss(plan, encode_fixture(enc, ids, s.text_type),
                                enc, head, 1.0)
             .total;
       }},
      {"fkp_relation",
       [&](const Fixture& f, Encoder& enc, FkpHead& head, BinarySpanHead&,
           BinarySpanHead&, ParamRegistry&, Rng& rng) {
         const auto& s = f.corpus[0];
         const auto plan = plan_relation_masking(s, f.vocab, mask_cfg, rng);
         const auto ids = apply_masking(f.vocab.encode_all(s.tokens), plan,
                                        Vocabulary::kMask);
         return fkp_relation_loss(plan, encode_fixture(enc, ids, s.text_type),
                                  enc, head, 1.0)
             .total;
       }},
      {"mention_head",
       [&](const Fixture& f, Encoder& enc, FkpHead&, BinarySpanHead& mention,
           BinarySpanHead&, ParamRegistry&, Rng& rng) {
         const auto& s = f.corpus[0];
         std::optional<MentionSample> sample;
         while (!sample) {
           sample = replace_mention(s, 0, f.dict, f.mentions, rep_cfg, rng);
         }
         const auto ids = f.vocab.encode_all(sample->sentence.tokens);
         return mention_prediction_loss(
             *sample, encode_fixture(enc, ids, sample->sentence.text_type),
             mention);
       }},
      {"fact_head",
       [&](const Fixture& f, Encoder& enc, FkpHead&, BinarySpanHead&,
           BinarySpanHead& fact, ParamRegistry&, Rng& rng) {
         const auto& s = f.corpus[0];
         Rng sets_rng(rng.next_u64());
         const auto sets = build_fact_sets(f.kb.facts, f.dict, f.kb, sets_rng);
         std::optional<FactSample> sample;
         while (!sample) {
           sample = replace_fact(s, 0, sets, f.dict, rng);
         }
         const auto ids = f.vocab.encode_all(sample->sentence.tokens);
         return fact_truth_loss(
             *sample, encode_fixture(enc, ids, sample->sentence.text_type),
             fact);
       }},
  };

  GradSuiteResult result;
  for (const auto& check : checks) {
    GradSuitePathResult pr;
    pr.path = check.name;
    for (std::size_t k = 0; k < seeds_per_path; ++k) {
      const auto path_seed =
          Rng::mix(seed, Rng::mix(k, std::hash<std::string>{}(pr.path)));
      Rng rng(path_seed);
      ParamRegistry params;
      EncoderConfig cfg = EncoderConfig::toy(fx.vocab.size());
      cfg.dropout = 0.0;
      Encoder enc(cfg, params, rng);
      FkpHead fkp(cfg.hidden, params, rng);
      BinarySpanHead mention("rep.mention", 2 * cfg.hidden, params, rng);
      BinarySpanHead fact("rep.fact", 3 * cfg.hidden, params, rng);

      // The builder reseeds its draw stream on every call, so each FD
      // re-evaluation rebuilds exactly the same graph.
      Rng probe_rng(Rng::mix(path_seed, 0x9B0B));
      const auto stats = check_gradients(
          [&] {
            Rng fixed(Rng::mix(path_seed, 0xD12A));
            return check.build(fx, enc, fkp, mention, fact, params, fixed);
          },
          params, probe_rng, coords_per_param, fd_step);
      pr.max_rel_err = std::max(pr.max_rel_err, stats.max_rel_err);
      pr.checked += stats.checked;
    }
    result.max_rel_err = std::max(result.max_rel_err, pr.max_rel_err);
    result.paths.push_back(std::move(pr));
  }
  return result;
}

}  // namespace kelp
