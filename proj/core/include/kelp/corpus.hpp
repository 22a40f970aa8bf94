#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "kelp/errors.hpp"

namespace kelp {

// Half-open token range [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t len() const { return end - start; }
  bool contains(std::size_t pos) const { return pos >= start && pos < end; }
  bool overlaps(const Span& o) const { return start < o.end && o.start < end; }
  auto operator<=>(const Span&) const = default;
};

struct LabeledSpan {
  Span span;
  std::string id;  // entity id or relation id
  auto operator<=>(const LabeledSpan&) const = default;
};

// Indices into entity_spans (head, tail) and relation_spans (relation).
struct FactRef {
  std::size_t head = 0;
  std::size_t relation = 0;
  std::size_t tail = 0;
  auto operator<=>(const FactRef&) const = default;
};

struct AnnotatedSentence {
  std::vector<std::string> tokens;
  int text_type = 1;  // 1-based corpus-source tag
  std::vector<Span> phrase_spans;
  std::vector<LabeledSpan> entity_spans;
  std::vector<LabeledSpan> relation_spans;
  std::vector<FactRef> facts;

  bool operator==(const AnnotatedSentence&) const = default;
};

// Throws ValidationError naming the offending span or index. Checks bounds,
// same-kind span disjointness, fact index validity, and per-fact span
// disjointness (head, tail, relation of one fact never share tokens).
void validate_sentence(const AnnotatedSentence& s);

std::vector<std::size_t> fact_bearing_indices(
    const std::vector<AnnotatedSentence>& corpus);

// ---- entity dictionary -------------------------------------------------

struct EntityRecord {
  std::string id;
  std::string name;  // official name; always listed in mentions too
  std::string type;
  std::vector<std::string> mentions;
  std::string info;
};

class EntityDictionary {
 public:
  EntityDictionary() = default;
  explicit EntityDictionary(std::vector<EntityRecord> records);

  const EntityRecord& get(const std::string& id) const;
  bool contains(const std::string& id) const;
  const std::vector<EntityRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

 private:
  std::vector<EntityRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---- mention embedding table --------------------------------------------

class MentionEmbeddingTable {
 public:
  MentionEmbeddingTable() = default;
  explicit MentionEmbeddingTable(std::size_t dim) : dim_(dim) {}

  void put(const std::string& mention, std::vector<double> vec);
  const std::vector<double>& get(const std::string& mention) const;
  bool contains(const std::string& mention) const;
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  const std::map<std::string, std::vector<double>>& entries() const {
    return vectors_;
  }
  // Every mention of every dictionary entry must have a vector.
  void validate_covers(const EntityDictionary& dict) const;

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<double>> vectors_;
};

// ---- knowledge base ------------------------------------------------------

struct FactTriple {
  std::string head;
  std::string relation;
  std::string tail;
  auto operator<=>(const FactTriple&) const = default;
};

// Pattern slot: either a constant or a "?Name" variable.
struct Term {
  bool is_var = false;
  std::string text;
  auto operator<=>(const Term&) const = default;

  static Term parse(const std::string& raw);  // leading '?' marks a variable
  std::string raw() const { return is_var ? "?" + text : text; }
};

struct TriplePattern {
  Term head, relation, tail;
  auto operator<=>(const TriplePattern&) const = default;
};

struct HornRule {
  std::vector<TriplePattern> body;  // at most 3 atoms
  TriplePattern head;
};

// Allowed head/tail entity types per relation. Empty set = unconstrained.
struct RelationRecord {
  std::string id;
  std::vector<std::string> surface_tokens;
  std::set<std::string> head_types;
  std::set<std::string> tail_types;
};

struct KnowledgeBase {
  std::vector<RelationRecord> relations;
  std::vector<FactTriple> facts;
  std::vector<HornRule> rules;

  const RelationRecord& relation(const std::string& id) const;
  bool has_relation(const std::string& id) const;
};

// Rule sanity: bodies non-empty with at most 3 atoms, every head variable
// bound somewhere in the body. Throws ValidationError.
void validate_rules(const std::vector<HornRule>& rules);

// ---- vocabulary ----------------------------------------------------------

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kReservedCount = 5;

  Vocabulary();

  // Tokens with count >= min_count enter after the reserved block, ordered
  // by descending count then lexicographically.
  static Vocabulary build(const std::vector<AnnotatedSentence>& corpus,
                          std::size_t min_count = 1);

  int encode(const std::string& token) const;  // kUnk when unknown
  std::vector<int> encode_all(const std::vector<std::string>& tokens) const;
  const std::string& token(int id) const;
  std::size_t size() const { return id_to_token_.size(); }
  bool is_reserved(int id) const { return id >= 0 && id < kReservedCount; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// ---- file formats ---------------------------------------------------------

// Corpus: JSON Lines; first line is a header object carrying the format name
// and version, each further line one sentence. Serialisation is canonical
// (sorted keys, no whitespace), so load-then-save is byte identical.
std::vector<AnnotatedSentence> load_corpus(const std::string& path);
void save_corpus(const std::string& path,
                 const std::vector<AnnotatedSentence>& corpus);
std::string corpus_line(const AnnotatedSentence& s);  // one canonical record
AnnotatedSentence parse_corpus_line(const std::string& line);

EntityDictionary load_entity_dictionary(const std::string& path);
void save_entity_dictionary(const std::string& path,
                            const EntityDictionary& dict);

KnowledgeBase load_knowledge_base(const std::string& path);
void save_knowledge_base(const std::string& path, const KnowledgeBase& kb);

// Standalone rule list (same schema as the "rules" array of the knowledge
// base document).
std::vector<HornRule> load_rules(const std::string& path);

// Plain text: "count dim" header, then one "mention TAB v1 v2 ..." per line.
MentionEmbeddingTable load_mention_embeddings(const std::string& path);
void save_mention_embeddings(const std::string& path,
                             const MentionEmbeddingTable& table);

}  // namespace kelp
