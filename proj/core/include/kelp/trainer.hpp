#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kelp/corpus.hpp"
#include "kelp/encoder.hpp"
#include "kelp/masking.hpp"
#include "kelp/replacement.hpp"

namespace kelp {

enum class Task {
  word_mask,
  phrase_mask,
  entity_mask,
  relation_mask,
  mention_replace,
  fact_replace,
};
const char* task_name(Task t);

// Two independent toggles; the four on/off combinations are the ablation
// arms. With both off, entity masking still runs but contributes token
// prediction only.
struct AblationFlags {
  bool enable_fkp_entity_relation = false;
  bool enable_replacement_tasks = false;
};

enum class AblationArm { base, rel_ent_mask, ment_ent_rep, full };
AblationFlags flags_for_arm(AblationArm arm);
const char* arm_name(AblationArm arm);
std::optional<AblationArm> parse_arm(const std::string& name);

struct TrainConfig {
  std::size_t total_steps = 2000;
  std::size_t batch_size = 32;
  double peak_lr = 3e-5;
  double weight_decay = 1e-3;
  double warmup_fraction = 0.20;  // must lie strictly inside (0,1)
  double clip_norm = 1.0;
  double fkp_weight = 1.0;
  std::uint64_t seed = 7;
  std::size_t checkpoint_every = 500;
  AblationFlags flags;
  EncoderConfig encoder;  // vocab_size is filled in from the corpus
  MaskingConfig masking;
  ReplacementConfig replacement;

  void validate() const;  // throws ConfigError
};

// Piecewise-linear schedule: 0 at step 0, peak_lr at floor(warmup_fraction *
// total_steps), back to 0 at total_steps. Throws ValidationError outside
// [0, total_steps].
double lr_at(std::size_t step, const TrainConfig& cfg);

// Cumulative curriculum: each stage's mixture is the previous stage's plus
// one newly introduced objective, all drawn with equal weight. Stages cover
// equal step ranges.
struct TaskSchedule {
  std::vector<std::vector<Task>> stages;

  std::size_t stage_at(std::size_t step, std::size_t total_steps) const;
  const std::vector<Task>& mixture_at(std::size_t step,
                                      std::size_t total_steps) const;
};
TaskSchedule build_schedule(const AblationFlags& flags);

struct StepRecord {
  std::size_t step = 0;
  Task task = Task::word_mask;
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;  // global L2 norm before clipping
};

struct PretrainResult {
  std::vector<StepRecord> records;  // steps executed by this call
  std::string final_checkpoint;
  std::string metrics_path;
};

// Runs the full loop: builds the vocabulary and schedule, verifies every
// enabled objective has usable inputs (throwing ConfigError before the first
// step otherwise), then optimizes for cfg.total_steps. Writes metrics.tsv
// (tab-separated step/task/loss/lr/grad_norm), vocab.txt, and
// checkpoint-<step>.ckpt files under out_dir. Checkpoints carry parameters,
// optimizer moments, and the step counter; passing one as resume_from
// continues after its stored step with bit-identical results. A non-finite
// loss aborts with the step and seed in the diagnostic.
PretrainResult pretrain(const std::vector<AnnotatedSentence>& corpus,
                        const KnowledgeBase& kb, const EntityDictionary& dict,
                        const MentionEmbeddingTable& mentions,
                        const TrainConfig& cfg, const std::string& out_dir,
                        const std::string& resume_from = "");

class ParamRegistry;
class Encoder;

// Rebuilds the encoder shape stored in a pretraining checkpoint's meta
// entries. Throws LookupError when the entries are missing.
EncoderConfig encoder_config_from_checkpoint(const std::string& path);

// Loads a checkpoint, creates encoder parameters in the registry, and
// overwrites them with the stored values. Heads and optimizer state in the
// file are ignored.
Encoder load_pretrained_encoder(const std::string& path,
                                ParamRegistry& params);

}  // namespace kelp
