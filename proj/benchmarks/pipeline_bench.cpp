#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "kelp/corpus.hpp"
#include "kelp/masking.hpp"
#include "kelp/reasoner.hpp"
#include "kelp/replacement.hpp"
#include "kelp/rng.hpp"

using namespace kelp;

namespace {

AnnotatedSentence fact_sentence() {
  AnnotatedSentence s;
  s.tokens = {"harbor", "control", "reports", "Osprey-4", "escorts",
              "Pelican-9", "past",  "the",    "narrows",  "."};
  s.phrase_spans = {{0, 3}, {6, 9}};
  s.entity_spans = {{{3, 4}, "e.4"}, {{5, 6}, "e.9"}};
  s.relation_spans = {{{4, 5}, "r.escorts"}};
  s.facts = {{0, 0, 1}};
  return s;
}

void BM_word_plan(benchmark::State& state) {
  const AnnotatedSentence s = fact_sentence();
  const Vocabulary vocab = Vocabulary::build({s});
  MaskingConfig cfg;
  Rng rng(21);
  for (auto _ : state) {
    benchmark::DoNotOptimize(plan_word_masking(s, vocab, cfg, rng));
  }
}
BENCHMARK(BM_word_plan);

void BM_entity_plan(benchmark::State& state) {
  const AnnotatedSentence s = fact_sentence();
  const Vocabulary vocab = Vocabulary::build({s});
  MaskingConfig cfg;
  Rng rng(22);
  for (auto _ : state) {
    benchmark::DoNotOptimize(plan_entity_masking(s, vocab, cfg, rng));
  }
}
BENCHMARK(BM_entity_plan);

void BM_mention_rewrite(benchmark::State& state) {
  const AnnotatedSentence s = fact_sentence();
  std::vector<EntityRecord> records;
  MentionEmbeddingTable table(16);
  Rng vec_rng(23);
  for (int e = 0; e < 6; ++e) {
    EntityRecord rec;
    rec.id = "e." + std::to_string(e);
    rec.name = "unit-" + std::to_string(e);
    rec.type = "vessel";
    rec.mentions = {rec.name, "craft-" + std::to_string(e),
                    "hull-" + std::to_string(e)};
    for (const auto& m : rec.mentions) {
      std::vector<double> v(16);
      for (auto& x : v) x = vec_rng.normal();
      table.put(m, v);
    }
    records.push_back(rec);
  }
  EntityDictionary dict(std::move(records));
  ReplacementConfig cfg;
  Rng rng(24);
  for (auto _ : state) {
    benchmark::DoNotOptimize(replace_mention(s, 0, dict, table, cfg, rng));
  }
}
BENCHMARK(BM_mention_rewrite);

// Transitive chain: closure size grows quadratically in the chain length,
// so this scales the reasoner's workload without changing the rule count.
void BM_closure_chain(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  KnowledgeBase kb;
  kb.relations.push_back({"q.follows", {"follows"}, {}, {}});
  for (std::size_t i = 0; i + 1 < n; ++i) {
    kb.facts.push_back({"c" + std::to_string(i), "q.follows",
                        "c" + std::to_string(i + 1)});
  }
  HornRule transitive;
  transitive.body = {
      {Term{true, "A"}, Term{false, "q.follows"}, Term{true, "B"}},
      {Term{true, "B"}, Term{false, "q.follows"}, Term{true, "C"}},
  };
  transitive.head = {Term{true, "A"}, Term{false, "q.follows"}, Term{true, "C"}};
  kb.rules.push_back(transitive);
  for (auto _ : state) {
    benchmark::DoNotOptimize(infer_closure(kb));
  }
}
BENCHMARK(BM_closure_chain)->Arg(8)->Arg(16)->Arg(32);

}  // namespace
