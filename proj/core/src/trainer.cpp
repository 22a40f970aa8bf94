#include "kelp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <set>

#include "kelp/checkpoint.hpp"
#include "kelp/fkp.hpp"
#include "kelp/reasoner.hpp"

namespace kelp {

const char* task_name(Task t) {
  switch (t) {
    case Task::word_mask: return "word";
    case Task::phrase_mask: return "phrase";
    case Task::entity_mask: return "entity";
    case Task::relation_mask: return "relation";
    case Task::mention_replace: return "mention_replace";
    case Task::fact_replace: return "fact_replace";
  }
  return "?";
}

AblationFlags flags_for_arm(AblationArm arm) {
  switch (arm) {
    case AblationArm::base: return {false, false};
    case AblationArm::rel_ent_mask: return {true, false};
    case AblationArm::ment_ent_rep: return {false, true};
    case AblationArm::full: return {true, true};
  }
  return {};
}

const char* arm_name(AblationArm arm) {
  switch (arm) {
    case AblationArm::base: return "base";
    case AblationArm::rel_ent_mask: return "rel_ent_mask";
    case AblationArm::ment_ent_rep: return "ment_ent_rep";
    case AblationArm::full: return "full";
  }
  return "?";
}

std::optional<AblationArm> parse_arm(const std::string& name) {
  for (auto arm : {AblationArm::base, AblationArm::rel_ent_mask,
                   AblationArm::ment_ent_rep, AblationArm::full}) {
    if (name == arm_name(arm)) return arm;
  }
  return std::nullopt;
}

void TrainConfig::validate() const {
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError("warmup_fraction must lie in (0,1)");
  }
  if (peak_lr < 0) throw ConfigError("peak_lr must be >= 0");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (clip_norm <= 0) throw ConfigError("clip_norm must be > 0");
  if (fkp_weight < 0) throw ConfigError("fkp_weight must be >= 0");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step > cfg.total_steps) {
    throw ValidationError("step " + std::to_string(step) +
                          " outside schedule of " +
                          std::to_string(cfg.total_steps));
  }
  if (step == 0) return 0.0;
  const auto warmup = static_cast<std::size_t>(
      cfg.warmup_fraction * static_cast<double>(cfg.total_steps));
  if (warmup > 0 && step <= warmup) {
    return cfg.peak_lr * static_cast<double>(step) /
           static_cast<double>(warmup);
  }
  const auto tail = cfg.total_steps - warmup;
  if (tail == 0) return 0.0;
  return cfg.peak_lr * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(tail);
}

std::size_t TaskSchedule::stage_at(std::size_t step,
                                   std::size_t total_steps) const {
  if (stages.empty()) throw ConfigError("empty schedule");
  if (step < 1 || step > total_steps) {
    throw ValidationError("step " + std::to_string(step) +
                          " outside 1.." + std::to_string(total_steps));
  }
  const std::size_t s = (step - 1) * stages.size() / total_steps;
  return std::min(s, stages.size() - 1);
}

const std::vector<Task>& TaskSchedule::mixture_at(
    std::size_t step, std::size_t total_steps) const {
  return stages[stage_at(step, total_steps)];
}

TaskSchedule build_schedule(const AblationFlags& flags) {
  TaskSchedule sched;
  std::vector<Task> mix;
  auto push_stage = [&](std::vector<Task> extra) {
    mix.insert(mix.end(), extra.begin(), extra.end());
    sched.stages.push_back(mix);
  };
  push_stage({Task::word_mask});
  push_stage({Task::phrase_mask});
  push_stage({Task::entity_mask});
  if (flags.enable_fkp_entity_relation) push_stage({Task::relation_mask});
  if (flags.enable_replacement_tasks) {
    push_stage({Task::mention_replace, Task::fact_replace});
  }
  return sched;
}

namespace {

struct PreparedSample {
  Task task = Task::word_mask;
  std::vector<int> ids;  // model input after masking or replacement
  int text_type = 1;
  MaskingPlan plan;
  std::optional<MentionSample> mention;
  std::optional<FactSample> fact;
};

struct PreparedBatch {
  std::size_t step = 0;
  Task task = Task::word_mask;
  std::vector<PreparedSample> samples;
};

// Everything batch construction needs; immutable during the loop so the
// lookahead worker can run while the optimizer owns the parameters.
struct BatchSource {
  const std::vector<AnnotatedSentence>& corpus;
  const EntityDictionary& dict;
  const MentionEmbeddingTable& mentions;
  const Vocabulary& vocab;
  const TrainConfig& cfg;
  TaskSchedule schedule;
  std::vector<std::size_t> phrase_bearing;
  std::vector<std::size_t> fact_bearing;
  std::optional<FactSets> fact_sets;
};

PreparedBatch build_batch(const BatchSource& src, std::size_t step) {
  Rng rng(Rng::mix(Rng::mix(src.cfg.seed, step), 0));
  PreparedBatch batch;
  batch.step = step;
  const auto& mixture = src.schedule.mixture_at(step, src.cfg.total_steps);
  batch.task = mixture[rng.below(mixture.size())];

  auto any_sentence = [&]() -> const AnnotatedSentence& {
    return src.corpus[rng.below(src.corpus.size())];
  };
  auto from = [&](const std::vector<std::size_t>& pool)
      -> const AnnotatedSentence& {
    return src.corpus[pool[rng.below(pool.size())]];
  };

  for (std::size_t b = 0; b < src.cfg.batch_size; ++b) {
    PreparedSample ps;
    ps.task = batch.task;
    switch (batch.task) {
      case Task::word_mask: {
        const auto& s = any_sentence();
        ps.plan = plan_word_masking(s, src.vocab, src.cfg.masking, rng);
        ps.ids = apply_masking(src.vocab.encode_all(s.tokens), ps.plan,
                               Vocabulary::kMask);
        ps.text_type = s.text_type;
        break;
      }
      case Task::phrase_mask: {
        const auto& s = from(src.phrase_bearing);
        ps.plan = *plan_phrase_masking(s, src.vocab, src.cfg.masking, rng);
        ps.ids = apply_masking(src.vocab.encode_all(s.tokens), ps.plan,
                               Vocabulary::kMask);
        ps.text_type = s.text_type;
        break;
      }
      case Task::entity_mask:
      case Task::relation_mask: {
        const auto& s = from(src.fact_bearing);
        ps.plan = batch.task == Task::entity_mask
                      ? plan_entity_masking(s, src.vocab, src.cfg.masking, rng)
                      : plan_relation_masking(s, src.vocab, src.cfg.masking,
                                              rng);
        ps.ids = apply_masking(src.vocab.encode_all(s.tokens), ps.plan,
                               Vocabulary::kMask);
        ps.text_type = s.text_type;
        break;
      }
      case Task::mention_replace: {
        for (int attempt = 0;; ++attempt) {
          if (attempt >= 50) {
            throw RuntimeAbort("step " + std::to_string(step) +
                               ": no mention replacement sample after 50 "
                               "attempts (seed " +
                               std::to_string(src.cfg.seed) + ")");
          }
          const auto& s = from(src.fact_bearing);
          const auto fi = rng.below(s.facts.size());
          auto sample = replace_mention(s, fi, src.dict, src.mentions,
                                        src.cfg.replacement, rng);
          if (!sample) continue;
          ps.mention = std::move(sample);
          break;
        }
        ps.ids = src.vocab.encode_all(ps.mention->sentence.tokens);
        ps.text_type = ps.mention->sentence.text_type;
        break;
      }
      case Task::fact_replace: {
        for (int attempt = 0;; ++attempt) {
          if (attempt >= 50) {
            throw RuntimeAbort("step " + std::to_string(step) +
                               ": no fact replacement sample after 50 "
                               "attempts (seed " +
                               std::to_string(src.cfg.seed) + ")");
          }
          const auto& s = from(src.fact_bearing);
          const auto fi = rng.below(s.facts.size());
          auto sample = replace_fact(s, fi, *src.fact_sets, src.dict, rng);
          if (!sample) continue;
          ps.fact = std::move(sample);
          break;
        }
        ps.ids = src.vocab.encode_all(ps.fact->sentence.tokens);
        ps.text_type = ps.fact->sentence.text_type;
        break;
      }
    }
    batch.samples.push_back(std::move(ps));
  }
  return batch;
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void preflight(const std::vector<AnnotatedSentence>& corpus,
               const KnowledgeBase& kb, const EntityDictionary& dict,
               const MentionEmbeddingTable& mentions, const TrainConfig& cfg,
               const BatchSource& src) {
  if (corpus.empty()) throw ConfigError("corpus is empty");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& s = corpus[i];
    if (s.tokens.size() > cfg.encoder.max_seq) {
      throw ConfigError("sentence " + std::to_string(i) + " has " +
                        std::to_string(s.tokens.size()) +
                        " tokens, above max_seq " +
                        std::to_string(cfg.encoder.max_seq));
    }
    if (s.text_type < 1 ||
        static_cast<std::size_t>(s.text_type) > cfg.encoder.n_text_types) {
      throw ConfigError("sentence " + std::to_string(i) + " has text_type " +
                        std::to_string(s.text_type) + ", encoder allows 1.." +
                        std::to_string(cfg.encoder.n_text_types));
    }
  }
  if (src.phrase_bearing.empty()) {
    throw ConfigError("phrase masking scheduled but no sentence has phrases");
  }
  if (src.fact_bearing.empty()) {
    throw ConfigError("entity masking scheduled but no sentence has facts");
  }
  if (cfg.flags.enable_replacement_tasks) {
    if (dict.size() == 0) {
      throw ConfigError("replacement tasks enabled with an empty dictionary");
    }
    for (const auto& rec : dict.records()) {
      if (rec.mentions.empty()) {
        throw ConfigError("replacement tasks enabled but entity '" + rec.id +
                          "' has no mentions");
      }
    }
    mentions.validate_covers(dict);
    for (std::size_t i : src.fact_bearing) {
      for (const auto& e : corpus[i].entity_spans) {
        if (!dict.contains(e.id)) {
          throw ConfigError("sentence " + std::to_string(i) +
                            " references unknown entity '" + e.id + "'");
        }
      }
      for (const auto& r : corpus[i].relation_spans) {
        if (!kb.has_relation(r.id)) {
          throw ConfigError("sentence " + std::to_string(i) +
                            " references unknown relation '" + r.id + "'");
        }
      }
    }
  }
}

}  // namespace

PretrainResult pretrain(const std::vector<AnnotatedSentence>& corpus,
                        const KnowledgeBase& kb, const EntityDictionary& dict,
                        const MentionEmbeddingTable& mentions,
                        const TrainConfig& cfg, const std::string& out_dir,
                        const std::string& resume_from) {
  cfg.validate();
  if (corpus.empty()) throw ConfigError("corpus is empty");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  const Vocabulary vocab = Vocabulary::build(corpus);
  EncoderConfig enc_cfg = cfg.encoder;
  enc_cfg.vocab_size = vocab.size();
  enc_cfg.validate();

  BatchSource src{corpus,      dict, mentions, vocab,
                  cfg,         build_schedule(cfg.flags),
                  {},          {},   std::nullopt};
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!corpus[i].phrase_spans.empty()) src.phrase_bearing.push_back(i);
  }
  src.fact_bearing = fact_bearing_indices(corpus);
  preflight(corpus, kb, dict, mentions, cfg, src);

  if (cfg.flags.enable_replacement_tasks) {
    const Closure closure = infer_closure(kb);
    const std::vector<FactTriple> candidates(closure.facts.begin(),
                                             closure.facts.end());
    const auto verified = check_knowledge(candidates, dict, kb);
    Rng sets_rng(Rng::mix(cfg.seed, 0xFAC7));
    src.fact_sets = build_fact_sets(verified, dict, kb, sets_rng);
  }

  // Model. Parameter creation order is fixed, so fresh runs with one seed
  // are identical and checkpoints always cover the same name set.
  ParamRegistry params;
  Rng init_rng(Rng::mix(cfg.seed, 0x1217));
  Encoder enc(enc_cfg, params, init_rng);
  FkpHead fkp_head(enc_cfg.hidden, params, init_rng);
  BinarySpanHead mention_head("rep.mention", 2 * enc_cfg.hidden, params,
                              init_rng);
  BinarySpanHead fact_head("rep.fact", 3 * enc_cfg.hidden, params, init_rng);

  AdamState adam;
  std::size_t start_step = 1;
  if (!resume_from.empty()) {
    const auto saved = load_checkpoint(resume_from);
    restore_params(params, saved);
    for (const auto& [name, tensor] : params.items()) {
      const auto m = saved.find("adam.m." + name);
      const auto v = saved.find("adam.v." + name);
      if (m == saved.end() || v == saved.end()) {
        throw LookupError("checkpoint lacks optimizer state for '" + name +
                          "'");
      }
      adam.m[name] = m->second.data;
      adam.v[name] = v->second.data;
    }
    const auto meta = saved.find("meta.step");
    if (meta == saved.end() || meta->second.data.size() != 1) {
      throw LookupError("checkpoint lacks meta.step");
    }
    adam.step = static_cast<std::uint64_t>(meta->second.data[0]);
    start_step = static_cast<std::size_t>(meta->second.data[0]) + 1;
    if (start_step > cfg.total_steps + 1) {
      throw ConfigError("checkpoint step " +
                        std::to_string(start_step - 1) +
                        " is beyond total_steps");
    }
  }

  {
    std::ofstream os(fs::path(out_dir) / "vocab.txt",
                     std::ios::binary | std::ios::trunc);
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      os << vocab.token(static_cast<int>(i)) << '\n';
    }
  }

  const auto metrics_path = (fs::path(out_dir) / "metrics.tsv").string();
  const bool fresh_log = !fs::exists(metrics_path);
  std::ofstream log(metrics_path, std::ios::binary | std::ios::app);
  if (!log) throw Error("cannot open '" + metrics_path + "' for writing");
  if (fresh_log) log << "step\ttask\tloss\tlr\tgrad_norm\n";

  auto save_state = [&](std::size_t step) {
    CheckpointMap map = snapshot_params(params);
    for (const auto& [name, tensor] : params.items()) {
      const auto mi = adam.m.find(name);
      const auto vi = adam.v.find(name);
      const std::size_t n = tensor.size();
      map.emplace("adam.m." + name,
                  CheckpointEntry{tensor.shape(),
                                  mi == adam.m.end() ? std::vector<double>(n)
                                                     : mi->second});
      map.emplace("adam.v." + name,
                  CheckpointEntry{tensor.shape(),
                                  vi == adam.v.end() ? std::vector<double>(n)
                                                     : vi->second});
    }
    map.emplace("meta.step",
                CheckpointEntry{{1}, {static_cast<double>(step)}});
    const auto put_meta = [&map](const std::string& name, double v) {
      map.emplace(name, CheckpointEntry{{1}, {v}});
    };
    put_meta("meta.enc.layers", static_cast<double>(enc_cfg.layers));
    put_meta("meta.enc.heads", static_cast<double>(enc_cfg.heads));
    put_meta("meta.enc.hidden", static_cast<double>(enc_cfg.hidden));
    put_meta("meta.enc.ffn_hidden", static_cast<double>(enc_cfg.ffn()));
    put_meta("meta.enc.max_seq", static_cast<double>(enc_cfg.max_seq));
    put_meta("meta.enc.vocab_size", static_cast<double>(enc_cfg.vocab_size));
    put_meta("meta.enc.n_segments", static_cast<double>(enc_cfg.n_segments));
    put_meta("meta.enc.n_text_types",
             static_cast<double>(enc_cfg.n_text_types));
    put_meta("meta.enc.dropout", enc_cfg.dropout);
    const auto path =
        (fs::path(out_dir) / ("checkpoint-" + std::to_string(step) + ".ckpt"))
            .string();
    save_checkpoint(path, map);
    return path;
  };

  PretrainResult result;
  result.metrics_path = metrics_path;
  if (start_step > cfg.total_steps) {
    result.final_checkpoint = save_state(cfg.total_steps);
    return result;
  }

  auto prepare = [&src](std::size_t step) { return build_batch(src, step); };
  std::future<PreparedBatch> next =
      std::async(std::launch::async, prepare, start_step);

  for (std::size_t step = start_step; step <= cfg.total_steps; ++step) {
    PreparedBatch batch = next.get();
    if (step + 1 <= cfg.total_steps) {
      next = std::async(std::launch::async, prepare, step + 1);
    }

    Rng dropout_rng(Rng::mix(Rng::mix(cfg.seed, step), 1));
    std::vector<Tensor> losses;
    losses.reserve(batch.samples.size());
    for (const auto& ps : batch.samples) {
      const Tensor x = enc.embed(ps.ids, ps.text_type);
      const std::vector<std::uint8_t> attn(ps.ids.size(), 1);
      const Tensor reps = enc.encode_train(x, attn, dropout_rng);
      switch (ps.task) {
        case Task::word_mask:
        case Task::phrase_mask:
          losses.push_back(mlm_only_loss(ps.plan, reps, enc).total);
          break;
        case Task::entity_mask:
          losses.push_back(
              fkp_entity_loss(ps.plan, reps, enc, fkp_head,
                              cfg.flags.enable_fkp_entity_relation
                                  ? cfg.fkp_weight
                                  : 0.0)
                  .total);
          break;
        case Task::relation_mask:
          losses.push_back(
              fkp_relation_loss(ps.plan, reps, enc, fkp_head, cfg.fkp_weight)
                  .total);
          break;
        case Task::mention_replace:
          losses.push_back(
              mention_prediction_loss(*ps.mention, reps, mention_head));
          break;
        case Task::fact_replace:
          losses.push_back(fact_truth_loss(*ps.fact, reps, fact_head));
          break;
      }
    }

    params.zero_grads();
    Tensor loss = mean_scalars(losses);
    loss.backward();
    const double loss_value = loss.value();
    if (!std::isfinite(loss_value)) {
      throw RuntimeAbort("non-finite loss at step " + std::to_string(step) +
                         ", task " + task_name(batch.task) + ", seed " +
                         std::to_string(cfg.seed));
    }
    const double grad_norm = clip_global_grad_norm(params, cfg.clip_norm);
    const double lr = lr_at(step, cfg);
    adam_step(params, adam, lr, cfg.weight_decay);

    StepRecord rec{step, batch.task, loss_value, lr, grad_norm};
    result.records.push_back(rec);
    log << rec.step << '\t' << task_name(rec.task) << '\t' << fmt_g(rec.loss)
        << '\t' << fmt_g(rec.lr) << '\t' << fmt_g(rec.grad_norm) << '\n';
    log.flush();

    if (step % cfg.checkpoint_every == 0 || step == cfg.total_steps) {
      result.final_checkpoint = save_state(step);
    }
  }
  return result;
}

namespace {

double meta_value(const CheckpointMap& map, const std::string& name) {
  const auto it = map.find(name);
  if (it == map.end() || it->second.data.size() != 1) {
    throw LookupError("checkpoint lacks '" + name + "'");
  }
  return it->second.data[0];
}

}  // namespace

EncoderConfig encoder_config_from_checkpoint(const std::string& path) {
  const auto map = load_checkpoint(path);
  EncoderConfig cfg;
  cfg.layers = static_cast<std::size_t>(meta_value(map, "meta.enc.layers"));
  cfg.heads = static_cast<std::size_t>(meta_value(map, "meta.enc.heads"));
  cfg.hidden = static_cast<std::size_t>(meta_value(map, "meta.enc.hidden"));
  cfg.ffn_hidden =
      static_cast<std::size_t>(meta_value(map, "meta.enc.ffn_hidden"));
  cfg.max_seq = static_cast<std::size_t>(meta_value(map, "meta.enc.max_seq"));
  cfg.vocab_size =
      static_cast<std::size_t>(meta_value(map, "meta.enc.vocab_size"));
  cfg.n_segments =
      static_cast<std::size_t>(meta_value(map, "meta.enc.n_segments"));
  cfg.n_text_types =
      static_cast<std::size_t>(meta_value(map, "meta.enc.n_text_types"));
  cfg.dropout = meta_value(map, "meta.enc.dropout");
  cfg.validate();
  return cfg;
}

Encoder load_pretrained_encoder(const std::string& path,
                                ParamRegistry& params) {
  const EncoderConfig cfg = encoder_config_from_checkpoint(path);
  Rng init_rng(1);
  Encoder enc(cfg, params, init_rng);
  restore_params(params, load_checkpoint(path));
  return enc;
}

}  // namespace kelp
