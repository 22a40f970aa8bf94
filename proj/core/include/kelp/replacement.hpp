#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kelp/corpus.hpp"
#include "kelp/encoder.hpp"
#include "kelp/reasoner.hpp"
#include "kelp/rng.hpp"

namespace kelp {

struct ReplacementConfig {
  double keep_prob = 0.30;      // leave the mention untouched (label true)
  double positive_prob = 0.35;  // another mention of the same entity
  double negative_prob = 0.35;  // a mention of some other entity
};

enum class MentionProvenance { kept, positive, negative };
const char* mention_provenance_name(MentionProvenance p);

struct MentionSample {
  AnnotatedSentence sentence;
  std::size_t fact_index = 0;
  MentionProvenance provenance = MentionProvenance::kept;
  bool label = true;  // true unless the surface came from another entity
  std::string replacement;
};

// Softmax over the L2 distances between each candidate's vector and the
// original mention's vector; farther candidates get more probability.
std::vector<double> positive_mention_distribution(
    const std::string& original, const std::vector<std::string>& candidates,
    const MentionEmbeddingTable& table);

// Rewrites the tail mention of the chosen fact. Draws provenance by the
// configured split; positive draws sample the entity's other mentions by the
// distance softmax, negative draws sample uniformly from mentions belonging
// only to other entities. Returns nullopt when the drawn branch has no
// candidates. Spans after the tail shift to the new surface length.
std::optional<MentionSample> replace_mention(const AnnotatedSentence& s,
                                             std::size_t fact_index,
                                             const EntityDictionary& dict,
                                             const MentionEmbeddingTable& table,
                                             const ReplacementConfig& cfg,
                                             Rng& rng);

// ---- fact replacement -----------------------------------------------------

// Verified positives plus uniformly sampled distractors, two negatives per
// positive, all distinct and disjoint from the positive set.
struct FactSets {
  std::vector<FactTriple> positives;
  std::vector<FactTriple> negatives;
};

FactSets build_fact_sets(const std::vector<FactTriple>& verified_positives,
                         const EntityDictionary& dict,
                         const KnowledgeBase& kb, Rng& rng);

struct FactSample {
  AnnotatedSentence sentence;
  std::size_t fact_index = 0;
  FactTriple fact;            // head and relation kept, tail possibly swapped
  bool from_positive = false; // which set supplied the tail
  bool label = false;         // fact is in the positive set
};

// Flips a fair coin between the positive and negative set, restricts the
// chosen set to triples sharing the fact's head and relation, and splices the
// sampled tail's official name over the tail span. Returns nullopt when the
// restricted pool is empty.
std::optional<FactSample> replace_fact(const AnnotatedSentence& s,
                                       std::size_t fact_index,
                                       const FactSets& sets,
                                       const EntityDictionary& dict, Rng& rng);

// ---- binary heads -----------------------------------------------------------

// Linear probe over pooled span representations; logit 0 at zero weights, so
// an untrained head scores ln 2 on any sample.
class BinarySpanHead {
 public:
  BinarySpanHead(const std::string& prefix, std::size_t input_dim,
                 ParamRegistry& params, Rng& init_rng);
  BinarySpanHead(const std::string& prefix, std::size_t input_dim,
                 ParamRegistry& params);  // rebind

  Tensor logit(const std::vector<Tensor>& pooled) const;
  Tensor loss(const std::vector<Tensor>& pooled, bool label) const;

 private:
  std::string prefix_;
  std::size_t input_dim_;
  ParamRegistry* params_;
};

// Replaced-mention detection from (head entity, relation) pools: 2H -> 1.
Tensor mention_prediction_loss(const MentionSample& sample, const Tensor& reps,
                               const BinarySpanHead& head);
// Fact truth from (head, relation, tail) pools: 3H -> 1.
Tensor fact_truth_loss(const FactSample& sample, const Tensor& reps,
                       const BinarySpanHead& head);

}  // namespace kelp
