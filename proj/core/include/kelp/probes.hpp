#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kelp/corpus.hpp"
#include "kelp/encoder.hpp"
#include "kelp/metrics.hpp"
#include "kelp/rng.hpp"

namespace kelp {

// Sizes for the synthetic world. Defaults give a vocabulary near 200 tokens
// and enough fact sentences for every pretraining task.
struct GeneratorConfig {
  std::size_t n_entities = 24;
  std::size_t n_sentences = 600;
  std::size_t mention_dim = 64;
  double dev_fraction = 0.15;
  double test_fraction = 0.15;
};

struct TypingExample {
  AnnotatedSentence sentence;
  Span span;
  std::string label;
};

struct NerExample {
  AnnotatedSentence sentence;
  std::vector<std::string> tags;  // BIO, aligned to tokens
};

struct RelationExample {
  AnnotatedSentence sentence;
  Span head;
  Span tail;
  std::string label;
};

template <typename T>
struct ProbeSplit {
  std::vector<T> train, dev, test;
};

struct World {
  std::vector<AnnotatedSentence> corpus;
  EntityDictionary dictionary;
  KnowledgeBase kb;
  MentionEmbeddingTable mentions;
  std::vector<std::string> entity_types;    // label inventory
  std::vector<std::string> relation_labels;
  ProbeSplit<TypingExample> typing;
  ProbeSplit<NerExample> ner;
  ProbeSplit<RelationExample> relation;
};

// Deterministic in (seed, cfg). Every entity carries at least one alternate
// mention, every mention has an embedding vector, and the knowledge base
// rules derive new facts so the downstream closure is strictly larger than
// the ground set.
World generate_world(std::uint64_t seed, const GeneratorConfig& cfg = {});

// Writes corpus.jsonl, dictionary.json, kb.json, mention_embeddings.txt and
// probes/<task>_{train,dev,test}.jsonl under dir (created if needed).
void write_world(const std::string& dir, const World& w);
World load_world(const std::string& dir);

// ---- fine-tuning ---------------------------------------------------------

struct ProbeConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 11;
};

// Each harness fine-tunes the given encoder (parameters update in place) with
// a fresh task head, selects the best epoch on dev, and reports test-set
// metrics. When dump_path is non-empty, per-example "index gold predicted"
// lines are written there for independent rescoring.
MetricsReport finetune_entity_typing(Encoder& enc, ParamRegistry& params,
                                     const ProbeSplit<TypingExample>& data,
                                     const std::vector<std::string>& labels,
                                     const Vocabulary& vocab,
                                     const ProbeConfig& cfg,
                                     const std::string& dump_path = "");

MetricsReport finetune_ner(Encoder& enc, ParamRegistry& params,
                           const ProbeSplit<NerExample>& data,
                           const std::vector<std::string>& entity_types,
                           const Vocabulary& vocab, const ProbeConfig& cfg,
                           const std::string& dump_path = "");

MetricsReport finetune_relation_classification(
    Encoder& enc, ParamRegistry& params,
    const ProbeSplit<RelationExample>& data,
    const std::vector<std::string>& labels, const Vocabulary& vocab,
    const ProbeConfig& cfg, const std::string& dump_path = "");

// Scores the constant most-frequent-train-label predictor on the test split.
MetricsReport majority_baseline_typing(const ProbeSplit<TypingExample>& data,
                                       const std::vector<std::string>& labels);

}  // namespace kelp
