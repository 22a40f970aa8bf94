#include "kelp/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace kelp {

namespace {

using nlohmann::json;

constexpr int kCorpusVersion = 1;
constexpr int kDictionaryVersion = 1;
constexpr int kKbVersion = 1;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void bad_line(const std::string& path, std::size_t line,
                           const std::string& what) {
  throw ParseError(path + ":" + std::to_string(line) + ": " + what);
}

void check_spans_disjoint(const std::vector<Span>& spans, const char* kind) {
  std::vector<Span> sorted = spans;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i - 1].overlaps(sorted[i])) {
      throw ValidationError(std::string(kind) + " spans overlap: [" +
                            std::to_string(sorted[i - 1].start) + "," +
                            std::to_string(sorted[i - 1].end) + ") and [" +
                            std::to_string(sorted[i].start) + "," +
                            std::to_string(sorted[i].end) + ")");
    }
  }
}

void check_span_bounds(const Span& sp, std::size_t n, const char* kind) {
  if (sp.start >= sp.end || sp.end > n) {
    throw ValidationError(std::string(kind) + " span [" +
                          std::to_string(sp.start) + "," +
                          std::to_string(sp.end) + ") invalid for " +
                          std::to_string(n) + " tokens");
  }
}

json sentence_to_json(const AnnotatedSentence& s) {
  json j;
  j["tokens"] = s.tokens;
  j["text_type"] = s.text_type;
  j["phrases"] = json::array();
  for (const auto& p : s.phrase_spans) j["phrases"].push_back({p.start, p.end});
  j["entities"] = json::array();
  for (const auto& e : s.entity_spans)
    j["entities"].push_back({e.span.start, e.span.end, e.id});
  j["relations"] = json::array();
  for (const auto& r : s.relation_spans)
    j["relations"].push_back({r.span.start, r.span.end, r.id});
  j["facts"] = json::array();
  for (const auto& f : s.facts)
    j["facts"].push_back({f.head, f.relation, f.tail});
  return j;
}

AnnotatedSentence sentence_from_json(const json& j) {
  AnnotatedSentence s;
  s.tokens = j.at("tokens").get<std::vector<std::string>>();
  s.text_type = j.at("text_type").get<int>();
  for (const auto& p : j.at("phrases"))
    s.phrase_spans.push_back({p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>()});
  for (const auto& e : j.at("entities"))
    s.entity_spans.push_back(
        {{e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>()},
         e.at(2).get<std::string>()});
  for (const auto& r : j.at("relations"))
    s.relation_spans.push_back(
        {{r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()},
         r.at(2).get<std::string>()});
  for (const auto& f : j.at("facts"))
    s.facts.push_back({f.at(0).get<std::size_t>(), f.at(1).get<std::size_t>(),
                       f.at(2).get<std::size_t>()});
  return s;
}

}  // namespace

// ---- sentence validation ---------------------------------------------

void validate_sentence(const AnnotatedSentence& s) {
  const std::size_t n = s.tokens.size();
  if (n == 0) throw ValidationError("sentence has no tokens");
  if (s.text_type < 1) {
    throw ValidationError("text_type must be >= 1, got " +
                          std::to_string(s.text_type));
  }
  for (const auto& t : s.tokens) {
    if (t.empty()) throw ValidationError("empty token in sentence");
  }
  for (const auto& p : s.phrase_spans) check_span_bounds(p, n, "phrase");
  std::vector<Span> ent, rel;
  for (const auto& e : s.entity_spans) {
    check_span_bounds(e.span, n, "entity");
    if (e.id.empty()) throw ValidationError("entity span without id");
    ent.push_back(e.span);
  }
  for (const auto& r : s.relation_spans) {
    check_span_bounds(r.span, n, "relation");
    if (r.id.empty()) throw ValidationError("relation span without id");
    rel.push_back(r.span);
  }
  check_spans_disjoint(s.phrase_spans, "phrase");
  check_spans_disjoint(ent, "entity");
  check_spans_disjoint(rel, "relation");
  for (std::size_t k = 0; k < s.facts.size(); ++k) {
    const auto& f = s.facts[k];
    if (f.head >= s.entity_spans.size() || f.tail >= s.entity_spans.size()) {
      throw ValidationError("fact " + std::to_string(k) +
                            " references a missing entity span");
    }
    if (f.relation >= s.relation_spans.size()) {
      throw ValidationError("fact " + std::to_string(k) +
                            " references a missing relation span");
    }
    if (f.head == f.tail) {
      throw ValidationError("fact " + std::to_string(k) +
                            " uses one span as both head and tail");
    }
    const Span h = s.entity_spans[f.head].span;
    const Span t = s.entity_spans[f.tail].span;
    const Span r = s.relation_spans[f.relation].span;
    if (h.overlaps(t) || h.overlaps(r) || t.overlaps(r)) {
      throw ValidationError("fact " + std::to_string(k) +
                            " has overlapping head/relation/tail spans");
    }
  }
}

std::vector<std::size_t> fact_bearing_indices(
    const std::vector<AnnotatedSentence>& corpus) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!corpus[i].facts.empty()) out.push_back(i);
  }
  return out;
}

// ---- entity dictionary -------------------------------------------------

EntityDictionary::EntityDictionary(std::vector<EntityRecord> records)
    : records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.id.empty()) throw ValidationError("entity record without id");
    if (r.type.empty()) {
      throw ValidationError("entity '" + r.id + "' has no type label");
    }
    if (r.mentions.empty()) {
      throw ValidationError("entity '" + r.id + "' lists no mentions");
    }
    if (std::find(r.mentions.begin(), r.mentions.end(), r.name) ==
        r.mentions.end()) {
      throw ValidationError("entity '" + r.id + "': official name '" + r.name +
                            "' missing from its mention list");
    }
    if (!index_.emplace(r.id, i).second) {
      throw ValidationError("duplicate entity id '" + r.id + "'");
    }
  }
}

const EntityRecord& EntityDictionary::get(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw LookupError("unknown entity id '" + id + "'");
  return records_[it->second];
}

bool EntityDictionary::contains(const std::string& id) const {
  return index_.count(id) != 0;
}

// ---- mention embedding table --------------------------------------------

void MentionEmbeddingTable::put(const std::string& mention,
                                std::vector<double> vec) {
  if (dim_ == 0) dim_ = vec.size();
  if (vec.size() != dim_) {
    throw DimensionError("mention '" + mention + "': vector size " +
                         std::to_string(vec.size()) + " vs table dimension " +
                         std::to_string(dim_));
  }
  vectors_[mention] = std::move(vec);
}

const std::vector<double>& MentionEmbeddingTable::get(
    const std::string& mention) const {
  auto it = vectors_.find(mention);
  if (it == vectors_.end()) {
    throw LookupError("no embedding for mention '" + mention + "'");
  }
  return it->second;
}

bool MentionEmbeddingTable::contains(const std::string& mention) const {
  return vectors_.count(mention) != 0;
}

void MentionEmbeddingTable::validate_covers(const EntityDictionary& dict) const {
  for (const auto& r : dict.records()) {
    for (const auto& m : r.mentions) {
      if (!contains(m)) {
        throw ValidationError("mention '" + m + "' of entity '" + r.id +
                              "' has no embedding vector");
      }
    }
  }
}

// ---- knowledge base ------------------------------------------------------

Term Term::parse(const std::string& raw) {
  if (!raw.empty() && raw[0] == '?') {
    if (raw.size() == 1) throw ValidationError("bare '?' is not a variable");
    return {true, raw.substr(1)};
  }
  if (raw.empty()) throw ValidationError("empty term in rule pattern");
  return {false, raw};
}

const RelationRecord& KnowledgeBase::relation(const std::string& id) const {
  for (const auto& r : relations) {
    if (r.id == id) return r;
  }
  throw LookupError("unknown relation id '" + id + "'");
}

bool KnowledgeBase::has_relation(const std::string& id) const {
  for (const auto& r : relations) {
    if (r.id == id) return true;
  }
  return false;
}

void validate_rules(const std::vector<HornRule>& rules) {
  for (std::size_t i = 0; i < rules.size(); ++i) {
    const auto& rule = rules[i];
    if (rule.body.empty()) {
      throw ValidationError("rule " + std::to_string(i) + " has empty body");
    }
    if (rule.body.size() > 3) {
      throw ValidationError("rule " + std::to_string(i) + " has " +
                            std::to_string(rule.body.size()) +
                            " body atoms; at most 3 allowed");
    }
    std::set<std::string> bound;
    for (const auto& atom : rule.body) {
      for (const Term* t : {&atom.head, &atom.relation, &atom.tail}) {
        if (t->is_var) bound.insert(t->text);
      }
    }
    for (const Term* t :
         {&rule.head.head, &rule.head.relation, &rule.head.tail}) {
      if (t->is_var && !bound.count(t->text)) {
        throw ValidationError("rule " + std::to_string(i) + ": head variable ?" +
                              t->text + " never appears in the body");
      }
    }
  }
}

// ---- vocabulary ----------------------------------------------------------

Vocabulary::Vocabulary() {
  id_to_token_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    token_to_id_[id_to_token_[i]] = static_cast<int>(i);
  }
}

Vocabulary Vocabulary::build(const std::vector<AnnotatedSentence>& corpus,
                             std::size_t min_count) {
  if (corpus.empty()) {
    throw ValidationError("cannot build a vocabulary from an empty corpus");
  }
  Vocabulary v;
  std::map<std::string, std::size_t> counts;
  for (const auto& s : corpus) {
    for (const auto& t : s.tokens) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> order(counts.begin(),
                                                         counts.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [tok, cnt] : order) {
    if (cnt < min_count) continue;
    if (v.token_to_id_.count(tok)) continue;  // collides with a reserved form
    v.token_to_id_[tok] = static_cast<int>(v.id_to_token_.size());
    v.id_to_token_.push_back(tok);
  }
  return v;
}

int Vocabulary::encode(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode_all(
    const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(encode(t));
  return out;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw LookupError("vocabulary id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

// ---- corpus file ----------------------------------------------------------

std::string corpus_line(const AnnotatedSentence& s) {
  return sentence_to_json(s).dump();
}

AnnotatedSentence parse_corpus_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("sentence record: ") + e.what());
  }
  AnnotatedSentence s;
  try {
    s = sentence_from_json(j);
    validate_sentence(s);
  } catch (const json::exception& e) {
    throw ParseError(std::string("sentence record: ") + e.what());
  } catch (const ValidationError& e) {
    throw ParseError(std::string("sentence record: ") + e.what());
  }
  return s;
}

std::vector<AnnotatedSentence> load_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open corpus '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  std::vector<AnnotatedSentence> out;
  bool saw_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      bad_line(path, lineno, std::string("bad JSON: ") + e.what());
    }
    if (!saw_header) {
      if (!j.is_object() || j.value("format", "") != "kelp-corpus") {
        bad_line(path, lineno, "missing kelp-corpus header line");
      }
      if (j.value("version", -1) != kCorpusVersion) {
        bad_line(path, lineno, "unsupported corpus version");
      }
      saw_header = true;
      continue;
    }
    AnnotatedSentence s;
    try {
      s = sentence_from_json(j);
    } catch (const json::exception& e) {
      bad_line(path, lineno, std::string("bad record: ") + e.what());
    }
    try {
      validate_sentence(s);
    } catch (const ValidationError& e) {
      bad_line(path, lineno, e.what());
    }
    out.push_back(std::move(s));
  }
  if (!saw_header) throw ParseError(path + ": empty corpus file (no header)");
  return out;
}

void save_corpus(const std::string& path,
                 const std::vector<AnnotatedSentence>& corpus) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  json header;
  header["format"] = "kelp-corpus";
  header["version"] = kCorpusVersion;
  os << header.dump() << '\n';
  for (const auto& s : corpus) os << corpus_line(s) << '\n';
  if (!os) throw Error("write failed for '" + path + "'");
}

// ---- dictionary file -------------------------------------------------------

EntityDictionary load_entity_dictionary(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open dictionary '" + path + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(path + ": bad JSON: " + e.what());
  }
  if (j.value("format", "") != "kelp-entity-dictionary" ||
      j.value("version", -1) != kDictionaryVersion) {
    throw ParseError(path + ": not a kelp-entity-dictionary document");
  }
  std::vector<EntityRecord> records;
  for (const auto& e : j.at("entities")) {
    EntityRecord r;
    r.id = e.at("id").get<std::string>();
    r.name = e.at("name").get<std::string>();
    r.type = e.at("type").get<std::string>();
    r.mentions = e.at("mentions").get<std::vector<std::string>>();
    r.info = e.value("info", "");
    records.push_back(std::move(r));
  }
  return EntityDictionary(std::move(records));
}

void save_entity_dictionary(const std::string& path,
                            const EntityDictionary& dict) {
  json j;
  j["format"] = "kelp-entity-dictionary";
  j["version"] = kDictionaryVersion;
  j["entities"] = json::array();
  for (const auto& r : dict.records()) {
    json e;
    e["id"] = r.id;
    e["name"] = r.name;
    e["type"] = r.type;
    e["mentions"] = r.mentions;
    e["info"] = r.info;
    j["entities"].push_back(std::move(e));
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << j.dump(2) << '\n';
  if (!os) throw Error("write failed for '" + path + "'");
}

// ---- knowledge base file -----------------------------------------------------

namespace {

TriplePattern pattern_from_json(const json& a) {
  if (!a.is_array() || a.size() != 3) {
    throw ParseError("rule pattern must be a [head, relation, tail] triple");
  }
  return {Term::parse(a.at(0).get<std::string>()),
          Term::parse(a.at(1).get<std::string>()),
          Term::parse(a.at(2).get<std::string>())};
}

json pattern_to_json(const TriplePattern& p) {
  return {p.head.raw(), p.relation.raw(), p.tail.raw()};
}

std::vector<HornRule> rules_from_json(const json& arr) {
  std::vector<HornRule> rules;
  for (const auto& rj : arr) {
    HornRule r;
    for (const auto& b : rj.at("body")) r.body.push_back(pattern_from_json(b));
    r.head = pattern_from_json(rj.at("head"));
    rules.push_back(std::move(r));
  }
  validate_rules(rules);
  return rules;
}

}  // namespace

KnowledgeBase load_knowledge_base(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open knowledge base '" + path + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(path + ": bad JSON: " + e.what());
  }
  if (j.value("format", "") != "kelp-knowledge-base" ||
      j.value("version", -1) != kKbVersion) {
    throw ParseError(path + ": not a kelp-knowledge-base document");
  }
  KnowledgeBase kb;
  for (const auto& rj : j.at("relations")) {
    RelationRecord r;
    r.id = rj.at("id").get<std::string>();
    r.surface_tokens = rj.value("surface", std::vector<std::string>{});
    for (const auto& t : rj.value("head_types", std::vector<std::string>{}))
      r.head_types.insert(t);
    for (const auto& t : rj.value("tail_types", std::vector<std::string>{}))
      r.tail_types.insert(t);
    kb.relations.push_back(std::move(r));
  }
  for (const auto& fj : j.at("facts")) {
    kb.facts.push_back({fj.at(0).get<std::string>(), fj.at(1).get<std::string>(),
                        fj.at(2).get<std::string>()});
  }
  if (j.contains("rules")) kb.rules = rules_from_json(j.at("rules"));
  for (const auto& f : kb.facts) {
    if (!kb.has_relation(f.relation)) {
      throw ValidationError(path + ": fact uses undeclared relation '" +
                            f.relation + "'");
    }
  }
  return kb;
}

void save_knowledge_base(const std::string& path, const KnowledgeBase& kb) {
  json j;
  j["format"] = "kelp-knowledge-base";
  j["version"] = kKbVersion;
  j["relations"] = json::array();
  for (const auto& r : kb.relations) {
    json rj;
    rj["id"] = r.id;
    rj["surface"] = r.surface_tokens;
    rj["head_types"] = std::vector<std::string>(r.head_types.begin(),
                                                r.head_types.end());
    rj["tail_types"] = std::vector<std::string>(r.tail_types.begin(),
                                                r.tail_types.end());
    j["relations"].push_back(std::move(rj));
  }
  j["facts"] = json::array();
  for (const auto& f : kb.facts)
    j["facts"].push_back({f.head, f.relation, f.tail});
  j["rules"] = json::array();
  for (const auto& r : kb.rules) {
    json rj;
    rj["body"] = json::array();
    for (const auto& b : r.body) rj["body"].push_back(pattern_to_json(b));
    rj["head"] = pattern_to_json(r.head);
    j["rules"].push_back(std::move(rj));
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << j.dump(2) << '\n';
  if (!os) throw Error("write failed for '" + path + "'");
}

std::vector<HornRule> load_rules(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open rules file '" + path + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(path + ": bad JSON: " + e.what());
  }
  if (!j.is_array()) throw ParseError(path + ": rules file must be a JSON list");
  return rules_from_json(j);
}

// ---- mention embeddings file ---------------------------------------------

MentionEmbeddingTable load_mention_embeddings(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open embeddings '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) {
    throw ParseError(path + ":1: missing 'count dim' header");
  }
  std::istringstream hs(line);
  std::size_t count = 0, dim = 0;
  if (!(hs >> count >> dim) || dim == 0) {
    throw ParseError(path + ":1: header must be 'count dim'");
  }
  MentionEmbeddingTable table(dim);
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      bad_line(path, lineno, "expected 'mention<TAB>values'");
    }
    const std::string mention = line.substr(0, tab);
    std::istringstream vs(line.substr(tab + 1));
    std::vector<double> vec;
    double x;
    while (vs >> x) vec.push_back(x);
    if (vec.size() != dim) {
      bad_line(path, lineno,
               "expected " + std::to_string(dim) + " values, got " +
                   std::to_string(vec.size()));
    }
    table.put(mention, std::move(vec));
  }
  if (table.size() != count) {
    throw ParseError(path + ": header count " + std::to_string(count) +
                     " vs " + std::to_string(table.size()) + " entries");
  }
  return table;
}

void save_mention_embeddings(const std::string& path,
                             const MentionEmbeddingTable& table) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << table.size() << ' ' << table.dim() << '\n';
  for (const auto& [mention, vec] : table.entries()) {
    os << mention << '\t';
    for (std::size_t i = 0; i < vec.size(); ++i) {
      if (i) os << ' ';
      os << fmt_double(vec[i]);
    }
    os << '\n';
  }
  if (!os) throw Error("write failed for '" + path + "'");
}

}  // namespace kelp
