#include "kelp/probes.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "json.hpp"
#include "kelp/checkpoint.hpp"
#include "kelp/text.hpp"

namespace kelp {

namespace {

using nlohmann::json;

// ---- world tables ---------------------------------------------------------

struct TypeSpec {
  const char* name;
  const char* stems[4];
};

constexpr TypeSpec kTypes[] = {
    {"aircraft", {"Falcon", "Condor", "Raptor", "Osprey"}},
    {"vessel", {"Triton", "Corsair", "Meridian", "Tempest"}},
    {"launcher", {"Javelin", "Ballista", "Trebuchet", "Catapult"}},
    {"unit", {"Vanguard", "Bastion", "Phalanx", "Legion"}},
    {"depot", {"Granary", "Arsenal", "Caisson", "Quarry"}},
    {"sensor", {"Watcher", "Beacon", "Oculus", "Sentry"}},
};
constexpr std::size_t kTypeCount = std::size(kTypes);

struct RelationSpec {
  const char* id;
  std::vector<const char*> surface;
  std::vector<const char*> head_types;
  std::vector<const char*> tail_types;
  std::size_t fact_count;
};

const std::vector<RelationSpec>& relation_specs() {
  static const std::vector<RelationSpec> specs = {
      {"r.commands", {"commands"}, {"unit"}, {"unit"}, 8},
      {"r.defends", {"defends"}, {"launcher", "unit"}, {"depot", "sensor"}, 8},
      {"r.escorts", {"escorts"}, {"aircraft", "vessel"}, {"vessel"}, 8},
      {"r.supplies",
       {"supplies", "ammunition", "to"},
       {"depot"},
       {"launcher", "unit"},
       10},
      {"r.supports", {"coordinates", "with"}, {"unit", "vessel"}, {"unit"}, 8},
      {"r.tracks", {"tracks"}, {"sensor"}, {"aircraft", "vessel"}, 8},
  };
  return specs;
}

const std::vector<std::vector<std::string>>& phrase_pool() {
  static const std::vector<std::vector<std::string>> pool = {
      {"during", "the", "night", "patrol"},
      {"under", "heavy", "fog"},
      {"from", "the", "forward", "base"},
      {"with", "minimal", "delay"},
      {"across", "the", "northern", "sector"},
      {"near", "the", "coastal", "ridge"},
      {"after", "the", "morning", "briefing"},
      {"despite", "the", "storm"},
      {"along", "the", "supply", "route"},
      {"inside", "the", "exercise", "zone"},
      {"before", "the", "scheduled", "rotation"},
      {"beyond", "the", "recon", "perimeter"},
      {"throughout", "the", "second", "watch"},
      {"against", "a", "strong", "headwind"},
      {"over", "the", "open", "water"},
      {"past", "the", "outer", "markers"},
  };
  return pool;
}

const std::vector<std::vector<std::string>>& filler_cores() {
  static const std::vector<std::vector<std::string>> cores = {
      {"the", "crews", "held", "position"},
      {"the", "convoy", "changed", "heading"},
      {"radio", "checks", "continued", "hourly"},
      {"maintenance", "teams", "rotated", "early"},
      {"the", "skies", "stayed", "clear"},
      {"no", "contacts", "were", "reported"},
  };
  return cores;
}

std::string two_letter_code(const std::string& stem) {
  std::string code = stem.substr(0, 2);
  for (char& c : code) c = static_cast<char>(std::toupper(c));
  return code;
}

template <typename T>
void shuffle_vec(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(i)]);
  }
}

// ---- sentence assembly ----------------------------------------------------

struct SentenceBuilder {
  AnnotatedSentence s;

  void push_tokens(const std::vector<std::string>& toks) {
    s.tokens.insert(s.tokens.end(), toks.begin(), toks.end());
  }
  void push_phrase(const std::vector<std::string>& toks) {
    const std::size_t a = s.tokens.size();
    push_tokens(toks);
    s.phrase_spans.push_back({a, s.tokens.size()});
  }
  // Returns index of the new entity span.
  std::size_t push_entity(const std::vector<std::string>& toks,
                          const std::string& id) {
    const std::size_t a = s.tokens.size();
    push_tokens(toks);
    s.entity_spans.push_back({{a, s.tokens.size()}, id});
    return s.entity_spans.size() - 1;
  }
  std::size_t push_relation(const std::vector<std::string>& toks,
                            const std::string& id) {
    const std::size_t a = s.tokens.size();
    push_tokens(toks);
    s.relation_spans.push_back({{a, s.tokens.size()}, id});
    return s.relation_spans.size() - 1;
  }
};

std::vector<std::string> pick_mention_tokens(const EntityRecord& rec,
                                             Rng& rng) {
  const auto& m = rec.mentions[rng.below(rec.mentions.size())];
  return tokenize(m);
}

// Head mention, relation surface, tail mention; records the fact reference.
void realize_fact(SentenceBuilder& b, const FactTriple& f,
                  const EntityDictionary& dict, const KnowledgeBase& kb,
                  Rng& rng) {
  const std::size_t h = b.push_entity(pick_mention_tokens(dict.get(f.head), rng), f.head);
  const auto& rel = kb.relation(f.relation);
  std::vector<std::string> surf(rel.surface_tokens.begin(),
                                rel.surface_tokens.end());
  const std::size_t r = b.push_relation(surf, f.relation);
  const std::size_t t = b.push_entity(pick_mention_tokens(dict.get(f.tail), rng), f.tail);
  b.s.facts.push_back({h, r, t});
}

// ---- probe dataset assembly -----------------------------------------------

template <typename T>
ProbeSplit<T> split_examples(std::vector<T> all, double dev_frac,
                             double test_frac, Rng& rng) {
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle_vec(order, rng);
  const auto n = all.size();
  const auto n_test = static_cast<std::size_t>(test_frac * n);
  const auto n_dev = static_cast<std::size_t>(dev_frac * n);
  ProbeSplit<T> out;
  for (std::size_t k = 0; k < n; ++k) {
    T& ex = all[order[k]];
    if (k < n_test) {
      out.test.push_back(std::move(ex));
    } else if (k < n_test + n_dev) {
      out.dev.push_back(std::move(ex));
    } else {
      out.train.push_back(std::move(ex));
    }
  }
  return out;
}

std::vector<std::string> bio_tags(const AnnotatedSentence& s,
                                  const EntityDictionary& dict) {
  std::vector<std::string> tags(s.tokens.size(), "O");
  for (const auto& e : s.entity_spans) {
    const std::string& type = dict.get(e.id).type;
    tags[e.span.start] = "B-" + type;
    for (std::size_t p = e.span.start + 1; p < e.span.end; ++p) {
      tags[p] = "I-" + type;
    }
  }
  return tags;
}

}  // namespace

// ---- generation -----------------------------------------------------------

World generate_world(std::uint64_t seed, const GeneratorConfig& cfg) {
  // The pinned facts below need four units, so every type gets four slots.
  if (cfg.n_entities < 4 * kTypeCount) {
    throw ConfigError("n_entities must be at least " +
                      std::to_string(4 * kTypeCount));
  }
  if (cfg.dev_fraction + cfg.test_fraction >= 1.0) {
    throw ConfigError("dev_fraction + test_fraction must be below 1");
  }
  World w;
  Rng rng(Rng::mix(seed, 0xB10B5));

  // Entities: round-robin over types, numbered names, 2..4 mentions each.
  std::map<std::string, std::vector<std::string>> by_type;
  std::vector<EntityRecord> records;
  for (std::size_t i = 0; i < cfg.n_entities; ++i) {
    const auto& ts = kTypes[i % kTypeCount];
    const std::string stem = ts.stems[(i / kTypeCount) % 4];
    const std::string num = std::to_string(10 + i);
    EntityRecord rec;
    rec.type = ts.name;
    rec.name = stem + "-" + num;
    rec.id = "e." + num;
    rec.mentions = {rec.name, stem + num};
    if (rng.bernoulli(0.5)) rec.mentions.push_back(stem + " Mk" + num);
    if (rng.bernoulli(0.5)) {
      rec.mentions.push_back(two_letter_code(stem) + "-" + num);
    }
    rec.info = std::string(ts.name) + " callsign " + rec.name;
    by_type[rec.type].push_back(rec.id);
    records.push_back(std::move(rec));
  }
  w.dictionary = EntityDictionary(std::move(records));
  for (const auto& t : kTypes) w.entity_types.push_back(t.name);
  std::sort(w.entity_types.begin(), w.entity_types.end());

  // Mention vectors: one centroid per type, per-mention noise around it.
  w.mentions = MentionEmbeddingTable(cfg.mention_dim);
  std::map<std::string, std::vector<double>> centroids;
  for (const auto& type : w.entity_types) {
    std::vector<double> c(cfg.mention_dim);
    for (auto& x : c) x = rng.normal();
    centroids[type] = std::move(c);
  }
  for (const auto& rec : w.dictionary.records()) {
    const auto& c = centroids[rec.type];
    for (const auto& m : rec.mentions) {
      std::vector<double> v(cfg.mention_dim);
      for (std::size_t d = 0; d < cfg.mention_dim; ++d) {
        v[d] = c[d] + rng.normal(0.0, 0.35);
      }
      w.mentions.put(m, std::move(v));
    }
  }
  w.mentions.validate_covers(w.dictionary);

  // Relations and their type signatures.
  for (const auto& spec : relation_specs()) {
    RelationRecord rel;
    rel.id = spec.id;
    for (const auto* t : spec.surface) rel.surface_tokens.push_back(t);
    rel.head_types.insert(spec.head_types.begin(), spec.head_types.end());
    rel.tail_types.insert(spec.tail_types.begin(), spec.tail_types.end());
    w.kb.relations.push_back(std::move(rel));
    w.relation_labels.push_back(spec.id);
  }
  std::sort(w.relation_labels.begin(), w.relation_labels.end());

  // Ground facts. A few are pinned so that the rules below always fire and
  // so that at least one (head, relation) pair has several tails.
  const auto& units = by_type["unit"];
  const auto& depots = by_type["depot"];
  const auto& vessels = by_type["vessel"];
  const auto& aircraft = by_type["aircraft"];
  std::set<FactTriple> used;
  auto add_fact = [&](const std::string& h, const std::string& r,
                      const std::string& t) {
    if (h != t && used.insert({h, r, t}).second) {
      w.kb.facts.push_back({h, r, t});
    }
  };
  add_fact(units[0], "r.commands", units[1]);
  add_fact(units[1], "r.commands", units[2]);
  add_fact(units[2], "r.commands", units[3]);
  add_fact(depots[0], "r.supplies", units[1]);
  add_fact(depots[0], "r.supplies", by_type["launcher"][0]);
  add_fact(vessels[0], "r.supports", units[0]);
  add_fact(units[3], "r.supports", units[0]);
  add_fact(aircraft[0], "r.escorts", vessels[0]);
  add_fact(aircraft[0], "r.escorts", vessels[1]);

  for (const auto& spec : relation_specs()) {
    std::vector<std::string> heads, tails;
    for (const auto* t : spec.head_types) {
      const auto& ids = by_type[t];
      heads.insert(heads.end(), ids.begin(), ids.end());
    }
    for (const auto* t : spec.tail_types) {
      const auto& ids = by_type[t];
      tails.insert(tails.end(), ids.begin(), ids.end());
    }
    std::size_t have = 0;
    for (const auto& f : w.kb.facts) have += f.relation == spec.id;
    std::size_t guard = 0;
    while (have < spec.fact_count) {
      if (++guard > 10000) {
        throw ConfigError(std::string("cannot place ") +
                          std::to_string(spec.fact_count) + " facts for " +
                          spec.id);
      }
      const auto& h = heads[rng.below(heads.size())];
      const auto& t = tails[rng.below(tails.size())];
      if (h == t || used.count({h, spec.id, t})) continue;
      add_fact(h, spec.id, t);
      ++have;
    }
  }

  // Rules: command chains collapse, supply lines follow command, and a
  // supporting ship inherits command (the last one can derive facts whose
  // head type is outside the r.commands signature, on purpose).
  auto atom = [](const char* h, const char* r, const char* t) {
    return TriplePattern{Term::parse(h), Term::parse(r), Term::parse(t)};
  };
  w.kb.rules.push_back({{atom("?A", "r.commands", "?B"),
                         atom("?B", "r.commands", "?C")},
                        atom("?A", "r.commands", "?C")});
  w.kb.rules.push_back({{atom("?D", "r.supplies", "?U"),
                         atom("?U", "r.commands", "?V")},
                        atom("?D", "r.supplies", "?V")});
  w.kb.rules.push_back({{atom("?U", "r.supports", "?V"),
                         atom("?V", "r.commands", "?W")},
                        atom("?U", "r.commands", "?W")});
  validate_rules(w.kb.rules);

  // Sentences: mostly one fact, some two-fact compounds, some pure filler.
  // Facts are realised round robin so every triple is seen at a steady rate.
  const auto& pool = phrase_pool();
  const auto& cores = filler_cores();
  std::size_t cursor = 0;
  auto next_fact = [&]() -> const FactTriple& {
    return w.kb.facts[cursor++ % w.kb.facts.size()];
  };
  for (std::size_t i = 0; i < cfg.n_sentences; ++i) {
    SentenceBuilder b;
    const double u = rng.uniform();
    if (u < 0.12) {
      b.s.text_type = 3;
      b.push_phrase(pool[rng.below(pool.size())]);
      b.push_tokens(cores[rng.below(cores.size())]);
      if (rng.bernoulli(0.5)) b.push_phrase(pool[rng.below(pool.size())]);
    } else if (u < 0.20) {
      b.s.text_type = 2;
      if (rng.bernoulli(0.5)) b.push_phrase(pool[rng.below(pool.size())]);
      realize_fact(b, next_fact(), w.dictionary, w.kb, rng);
      b.push_tokens({"and"});
      realize_fact(b, next_fact(), w.dictionary, w.kb, rng);
    } else {
      b.s.text_type = 1;
      if (rng.bernoulli(0.5)) b.push_phrase(pool[rng.below(pool.size())]);
      realize_fact(b, next_fact(), w.dictionary, w.kb, rng);
      if (rng.bernoulli(0.35)) b.push_phrase(pool[rng.below(pool.size())]);
    }
    b.push_tokens({"."});
    validate_sentence(b.s);
    w.corpus.push_back(std::move(b.s));
  }

  // Probe examples, then disjoint train/dev/test cuts per task.
  std::vector<TypingExample> typing;
  std::vector<NerExample> ner;
  std::vector<RelationExample> relation;
  for (const auto& s : w.corpus) {
    ner.push_back({s, bio_tags(s, w.dictionary)});
    for (const auto& e : s.entity_spans) {
      typing.push_back({s, e.span, w.dictionary.get(e.id).type});
    }
    for (const auto& f : s.facts) {
      relation.push_back({s, s.entity_spans[f.head].span,
                          s.entity_spans[f.tail].span,
                          s.relation_spans[f.relation].id});
    }
  }
  w.typing = split_examples(std::move(typing), cfg.dev_fraction,
                            cfg.test_fraction, rng);
  w.ner =
      split_examples(std::move(ner), cfg.dev_fraction, cfg.test_fraction, rng);
  w.relation = split_examples(std::move(relation), cfg.dev_fraction,
                              cfg.test_fraction, rng);
  return w;
}

// ---- world IO ---------------------------------------------------------------

namespace {

json sentence_json(const AnnotatedSentence& s) {
  return json::parse(corpus_line(s));
}

void write_probe_file(const std::string& path, const std::string& format,
                      const std::vector<json>& lines) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << json{{"format", format}, {"version", 1}}.dump() << '\n';
  for (const auto& j : lines) os << j.dump() << '\n';
  if (!os) throw Error("write failed for '" + path + "'");
}

std::vector<json> read_probe_file(const std::string& path,
                                  const std::string& format) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "' for reading");
  std::string line;
  std::size_t lineno = 0;
  std::vector<json> out;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (lineno == 1) {
      if (j.value("format", "") != format) {
        throw ParseError(path + ":1: expected format '" + format + "'");
      }
      continue;
    }
    out.push_back(std::move(j));
  }
  if (lineno == 0) throw ParseError(path + ": empty file");
  return out;
}

Span span_from(const json& a) {
  return {a.at(0).get<std::size_t>(), a.at(1).get<std::size_t>()};
}

void write_typing(const std::string& path,
                  const std::vector<TypingExample>& xs) {
  std::vector<json> lines;
  for (const auto& x : xs) {
    lines.push_back({{"label", x.label},
                     {"sentence", sentence_json(x.sentence)},
                     {"span", {x.span.start, x.span.end}}});
  }
  write_probe_file(path, "kelp-probe-typing", lines);
}

std::vector<TypingExample> read_typing(const std::string& path) {
  std::vector<TypingExample> out;
  for (const auto& j : read_probe_file(path, "kelp-probe-typing")) {
    out.push_back({parse_corpus_line(j.at("sentence").dump()),
                   span_from(j.at("span")), j.at("label").get<std::string>()});
  }
  return out;
}

void write_ner(const std::string& path, const std::vector<NerExample>& xs) {
  std::vector<json> lines;
  for (const auto& x : xs) {
    lines.push_back(
        {{"sentence", sentence_json(x.sentence)}, {"tags", x.tags}});
  }
  write_probe_file(path, "kelp-probe-ner", lines);
}

std::vector<NerExample> read_ner(const std::string& path) {
  std::vector<NerExample> out;
  for (const auto& j : read_probe_file(path, "kelp-probe-ner")) {
    NerExample x{parse_corpus_line(j.at("sentence").dump()),
                 j.at("tags").get<std::vector<std::string>>()};
    if (x.tags.size() != x.sentence.tokens.size()) {
      throw ParseError(path + ": tag count does not match token count");
    }
    out.push_back(std::move(x));
  }
  return out;
}

void write_relation(const std::string& path,
                    const std::vector<RelationExample>& xs) {
  std::vector<json> lines;
  for (const auto& x : xs) {
    lines.push_back({{"head", {x.head.start, x.head.end}},
                     {"label", x.label},
                     {"sentence", sentence_json(x.sentence)},
                     {"tail", {x.tail.start, x.tail.end}}});
  }
  write_probe_file(path, "kelp-probe-relation", lines);
}

std::vector<RelationExample> read_relation(const std::string& path) {
  std::vector<RelationExample> out;
  for (const auto& j : read_probe_file(path, "kelp-probe-relation")) {
    out.push_back({parse_corpus_line(j.at("sentence").dump()),
                   span_from(j.at("head")), span_from(j.at("tail")),
                   j.at("label").get<std::string>()});
  }
  return out;
}

const char* split_names[] = {"train", "dev", "test"};

}  // namespace

void write_world(const std::string& dir, const World& w) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "probes");
  const auto base = fs::path(dir);
  save_corpus((base / "corpus.jsonl").string(), w.corpus);
  save_entity_dictionary((base / "dictionary.json").string(), w.dictionary);
  save_knowledge_base((base / "kb.json").string(), w.kb);
  save_mention_embeddings((base / "mention_embeddings.txt").string(),
                          w.mentions);
  const std::vector<TypingExample>* ty[] = {&w.typing.train, &w.typing.dev,
                                            &w.typing.test};
  const std::vector<NerExample>* ne[] = {&w.ner.train, &w.ner.dev,
                                         &w.ner.test};
  const std::vector<RelationExample>* re[] = {
      &w.relation.train, &w.relation.dev, &w.relation.test};
  for (int k = 0; k < 3; ++k) {
    const auto stem = base / "probes";
    write_typing((stem / ("typing_" + std::string(split_names[k]) + ".jsonl"))
                     .string(),
                 *ty[k]);
    write_ner(
        (stem / ("ner_" + std::string(split_names[k]) + ".jsonl")).string(),
        *ne[k]);
    write_relation(
        (stem / ("relation_" + std::string(split_names[k]) + ".jsonl"))
            .string(),
        *re[k]);
  }
}

World load_world(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto base = fs::path(dir);
  World w;
  w.corpus = load_corpus((base / "corpus.jsonl").string());
  w.dictionary = load_entity_dictionary((base / "dictionary.json").string());
  w.kb = load_knowledge_base((base / "kb.json").string());
  w.mentions =
      load_mention_embeddings((base / "mention_embeddings.txt").string());
  std::set<std::string> types;
  for (const auto& r : w.dictionary.records()) types.insert(r.type);
  w.entity_types.assign(types.begin(), types.end());
  for (const auto& r : w.kb.relations) w.relation_labels.push_back(r.id);
  std::sort(w.relation_labels.begin(), w.relation_labels.end());

  const auto stem = base / "probes";
  std::vector<TypingExample>* ty[] = {&w.typing.train, &w.typing.dev,
                                      &w.typing.test};
  std::vector<NerExample>* ne[] = {&w.ner.train, &w.ner.dev, &w.ner.test};
  std::vector<RelationExample>* re[] = {&w.relation.train, &w.relation.dev,
                                        &w.relation.test};
  for (int k = 0; k < 3; ++k) {
    *ty[k] = read_typing(
        (stem / ("typing_" + std::string(split_names[k]) + ".jsonl")).string());
    *ne[k] = read_ner(
        (stem / ("ner_" + std::string(split_names[k]) + ".jsonl")).string());
    *re[k] = read_relation(
        (stem / ("relation_" + std::string(split_names[k]) + ".jsonl"))
            .string());
  }
  return w;
}

// ---- fine-tuning ------------------------------------------------------------

namespace {

int label_index(const std::vector<std::string>& labels,
                const std::string& label) {
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw LookupError("unknown label '" + label + "'");
  return static_cast<int>(it - labels.begin());
}

std::size_t argmax_row(const Tensor& row_matrix) {
  const auto& v = row_matrix.values();
  return static_cast<std::size_t>(
      std::max_element(v.begin(), v.end()) - v.begin());
}

Tensor encode_sentence(const Encoder& enc, const Vocabulary& vocab,
                       const AnnotatedSentence& s, Rng* train_rng) {
  const auto ids = vocab.encode_all(s.tokens);
  const Tensor x = enc.embed(ids, s.text_type);
  const std::vector<std::uint8_t> mask(ids.size(), 1);
  return train_rng ? enc.encode_train(x, mask, *train_rng)
                   : enc.encode(x, mask);
}

Tensor head_logits(ParamRegistry& params, const std::string& prefix,
                   const Tensor& features) {
  return add_rows(matmul_nt(as_row(features), params.get(prefix + ".w")),
                  params.get(prefix + ".b"));
}

// Generic epoch loop: builds per-example losses, averages per minibatch,
// snapshots the best dev epoch, restores it, then scores the test split.
struct Harness {
  ParamRegistry& params;
  const ProbeConfig& cfg;
  std::size_t n_train;

  // build_loss(index, rng) -> scalar loss for train example `index`.
  template <typename LossFn, typename DevFn, typename TestFn>
  MetricsReport run(LossFn build_loss, DevFn evaluate_dev,
                    TestFn evaluate_test) {
    Rng rng(Rng::mix(cfg.seed, 0xF17E));
    AdamState adam;
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    double best = -1.0;
    CheckpointMap best_params;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      shuffle_vec(order, rng);
      for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
        const auto stop = std::min(order.size(), at + cfg.batch_size);
        std::vector<Tensor> losses;
        for (std::size_t k = at; k < stop; ++k) {
          losses.push_back(build_loss(order[k], rng));
        }
        params.zero_grads();
        Tensor loss = mean_scalars(losses);
        loss.backward();
        adam_step(params, adam, cfg.lr, 0.0);
      }
      const double score = evaluate_dev().micro_f1;
      if (score > best) {
        best = score;
        best_params = snapshot_params(params);
      }
    }
    if (!best_params.empty()) restore_params(params, best_params);
    return evaluate_test();
  }
};

void dump_lines(const std::string& path,
                const std::vector<std::array<std::string, 2>>& rows) {
  if (path.empty()) return;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    os << i << '\t' << rows[i][0] << '\t' << rows[i][1] << '\n';
  }
}

std::string join_ws(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ' ';
    out += parts[i];
  }
  return out;
}

}  // namespace

MetricsReport finetune_entity_typing(Encoder& enc, ParamRegistry& params,
                                     const ProbeSplit<TypingExample>& data,
                                     const std::vector<std::string>& labels,
                                     const Vocabulary& vocab,
                                     const ProbeConfig& cfg,
                                     const std::string& dump_path) {
  const auto hidden = enc.config().hidden;
  Rng init(Rng::mix(cfg.seed, 0x7191));
  params.create("probe.typing.w", {labels.size(), hidden}, init, 0.02);
  params.create_zeros("probe.typing.b", {labels.size()});

  auto example_logits = [&](const TypingExample& ex, Rng* train_rng) {
    const Tensor reps = encode_sentence(enc, vocab, ex.sentence, train_rng);
    return head_logits(params, "probe.typing",
                       span_mean(reps, ex.span.start, ex.span.end));
  };
  auto predict = [&](const std::vector<TypingExample>& xs) {
    std::vector<std::string> gold, pred;
    for (const auto& ex : xs) {
      gold.push_back(ex.label);
      pred.push_back(labels[argmax_row(example_logits(ex, nullptr))]);
    }
    return classification_metrics("entity-typing", labels, gold, pred);
  };

  Harness h{params, cfg, data.train.size()};
  auto report = h.run(
      [&](std::size_t i, Rng& rng) {
        const auto& ex = data.train[i];
        return cross_entropy(example_logits(ex, &rng),
                             {label_index(labels, ex.label)});
      },
      [&] { return predict(data.dev); }, [&] { return predict(data.test); });

  if (!dump_path.empty()) {
    std::vector<std::array<std::string, 2>> rows;
    for (const auto& ex : data.test) {
      rows.push_back(
          {ex.label, labels[argmax_row(example_logits(ex, nullptr))]});
    }
    dump_lines(dump_path, rows);
  }
  return report;
}

MetricsReport finetune_ner(Encoder& enc, ParamRegistry& params,
                           const ProbeSplit<NerExample>& data,
                           const std::vector<std::string>& entity_types,
                           const Vocabulary& vocab, const ProbeConfig& cfg,
                           const std::string& dump_path) {
  std::vector<std::string> tagset = {"O"};
  for (const auto& t : entity_types) {
    tagset.push_back("B-" + t);
    tagset.push_back("I-" + t);
  }
  const auto hidden = enc.config().hidden;
  Rng init(Rng::mix(cfg.seed, 0x7192));
  params.create("probe.ner.w", {tagset.size(), hidden}, init, 0.02);
  params.create_zeros("probe.ner.b", {tagset.size()});

  auto sentence_logits = [&](const NerExample& ex, Rng* train_rng) {
    const Tensor reps = encode_sentence(enc, vocab, ex.sentence, train_rng);
    return add_rows(matmul_nt(reps, params.get("probe.ner.w")),
                    params.get("probe.ner.b"));
  };
  auto predict_tags = [&](const NerExample& ex) {
    const Tensor logits = sentence_logits(ex, nullptr);
    const auto& v = logits.values();
    const std::size_t n_tags = tagset.size();
    std::vector<std::string> tags;
    for (std::size_t p = 0; p < ex.sentence.tokens.size(); ++p) {
      const auto begin = v.begin() + static_cast<std::ptrdiff_t>(p * n_tags);
      const auto best = std::max_element(begin, begin + static_cast<std::ptrdiff_t>(n_tags));
      tags.push_back(tagset[static_cast<std::size_t>(best - begin)]);
    }
    return tags;
  };
  auto evaluate = [&](const std::vector<NerExample>& xs) {
    std::vector<std::vector<std::string>> gold, pred;
    for (const auto& ex : xs) {
      gold.push_back(ex.tags);
      pred.push_back(predict_tags(ex));
    }
    return span_exact_match_metrics("ner", entity_types, gold, pred);
  };

  Harness h{params, cfg, data.train.size()};
  auto report = h.run(
      [&](std::size_t i, Rng& rng) {
        const auto& ex = data.train[i];
        std::vector<int> targets;
        for (const auto& t : ex.tags) targets.push_back(label_index(tagset, t));
        return cross_entropy(sentence_logits(ex, &rng), targets);
      },
      [&] { return evaluate(data.dev); }, [&] { return evaluate(data.test); });

  if (!dump_path.empty()) {
    std::vector<std::array<std::string, 2>> rows;
    for (const auto& ex : data.test) {
      rows.push_back({join_ws(ex.tags), join_ws(predict_tags(ex))});
    }
    dump_lines(dump_path, rows);
  }
  return report;
}

MetricsReport finetune_relation_classification(
    Encoder& enc, ParamRegistry& params,
    const ProbeSplit<RelationExample>& data,
    const std::vector<std::string>& labels, const Vocabulary& vocab,
    const ProbeConfig& cfg, const std::string& dump_path) {
  const auto hidden = enc.config().hidden;
  Rng init(Rng::mix(cfg.seed, 0x7193));
  params.create("probe.rel.w", {labels.size(), 2 * hidden}, init, 0.02);
  params.create_zeros("probe.rel.b", {labels.size()});

  auto example_logits = [&](const RelationExample& ex, Rng* train_rng) {
    const Tensor reps = encode_sentence(enc, vocab, ex.sentence, train_rng);
    const Tensor features =
        concat({span_mean(reps, ex.head.start, ex.head.end),
                span_mean(reps, ex.tail.start, ex.tail.end)});
    return head_logits(params, "probe.rel", features);
  };
  auto predict = [&](const std::vector<RelationExample>& xs) {
    std::vector<std::string> gold, pred;
    for (const auto& ex : xs) {
      gold.push_back(ex.label);
      pred.push_back(labels[argmax_row(example_logits(ex, nullptr))]);
    }
    return classification_metrics("relation-classification", labels, gold,
                                  pred);
  };

  Harness h{params, cfg, data.train.size()};
  auto report = h.run(
      [&](std::size_t i, Rng& rng) {
        const auto& ex = data.train[i];
        return cross_entropy(example_logits(ex, &rng),
                             {label_index(labels, ex.label)});
      },
      [&] { return predict(data.dev); }, [&] { return predict(data.test); });

  if (!dump_path.empty()) {
    std::vector<std::array<std::string, 2>> rows;
    for (const auto& ex : data.test) {
      rows.push_back(
          {ex.label, labels[argmax_row(example_logits(ex, nullptr))]});
    }
    dump_lines(dump_path, rows);
  }
  return report;
}

MetricsReport majority_baseline_typing(const ProbeSplit<TypingExample>& data,
                                       const std::vector<std::string>& labels) {
  std::map<std::string, std::size_t> counts;
  for (const auto& ex : data.train) ++counts[ex.label];
  std::string majority = labels.empty() ? "" : labels.front();
  std::size_t best = 0;
  for (const auto& [label, n] : counts) {
    if (n > best) {
      best = n;
      majority = label;
    }
  }
  std::vector<std::string> gold, pred;
  for (const auto& ex : data.test) {
    gold.push_back(ex.label);
    pred.push_back(majority);
  }
  return classification_metrics("entity-typing-majority", labels, gold, pred);
}

}  // namespace kelp
