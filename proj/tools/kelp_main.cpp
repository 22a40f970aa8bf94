// kelp: corpus generation, pretraining, probes, gradient checks, plan dumps,
// and metric plots behind one binary. Every command takes --seed and
// --config; explicit flags beat config-file values beat built-in defaults.
// Exit codes: 0 success, 1 configuration or validation failure, 2 runtime
// abort.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kelp/gradsuite.hpp"
#include "kelp/plot.hpp"
#include "kelp/probes.hpp"
#include "kelp/trainer.hpp"

namespace {

using nlohmann::json;

// Post-parse value resolution: an option the user typed wins, otherwise a
// config-file key (flag name with dashes swapped for underscores), otherwise
// the built-in default already in the bound variable.
class Settings {
 public:
  void load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw kelp::ConfigError("cannot open config '" + path + "'");
    try {
      cfg_ = json::parse(is);
    } catch (const json::exception& e) {
      throw kelp::ParseError("config '" + path + "': " + e.what());
    }
    if (!cfg_.is_object()) {
      throw kelp::ConfigError("config '" + path + "' must be a JSON object");
    }
  }

  template <typename T>
  void resolve(const CLI::Option* opt, T& value, const char* key) const {
    if (opt != nullptr && opt->count() > 0) return;
    if (!cfg_.contains(key)) return;
    try {
      value = cfg_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw kelp::ConfigError(std::string("config key '") + key +
                              "': " + e.what());
    }
  }

 private:
  json cfg_ = json::object();
};

struct CommonArgs {
  std::uint64_t seed = 7;
  std::string config;
  CLI::Option* seed_opt = nullptr;

  void attach(CLI::App* cmd) {
    seed_opt = cmd->add_option("--seed", seed, "Root random seed");
    cmd->add_option("--config", config,
                    "JSON config file; flags override its keys");
  }
  Settings settings() {
    Settings s;
    if (!config.empty()) s.load(config);
    s.resolve(seed_opt, seed, "seed");
    return s;
  }
};

void write_text(const std::string& path, const std::string& body) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw kelp::Error("cannot open '" + path + "' for writing");
  os << body;
}

int run_generate_corpus(const CommonArgs& common, const Settings& st,
                        std::string out, kelp::GeneratorConfig gen,
                        const std::map<std::string, const CLI::Option*>& opts) {
  st.resolve(opts.at("out"), out, "out");
  st.resolve(opts.at("entities"), gen.n_entities, "entities");
  st.resolve(opts.at("sentences"), gen.n_sentences, "sentences");
  st.resolve(opts.at("mention-dim"), gen.mention_dim, "mention_dim");
  st.resolve(opts.at("dev-fraction"), gen.dev_fraction, "dev_fraction");
  st.resolve(opts.at("test-fraction"), gen.test_fraction, "test_fraction");
  if (out.empty()) throw kelp::ConfigError("--out is required");

  const kelp::World world = kelp::generate_world(common.seed, gen);
  kelp::write_world(out, world);
  std::cout << "wrote " << world.corpus.size() << " sentences, "
            << world.dictionary.size() << " entities, "
            << world.kb.facts.size() << " facts to " << out << "\n";
  return 0;
}

int run_pretrain(const CommonArgs& common, const Settings& st,
                 std::string data, std::string out, std::string ablation,
                 std::string resume, kelp::TrainConfig cfg,
                 const std::map<std::string, const CLI::Option*>& opts) {
  st.resolve(opts.at("data"), data, "data");
  st.resolve(opts.at("out"), out, "out");
  st.resolve(opts.at("ablation"), ablation, "ablation");
  st.resolve(opts.at("resume"), resume, "resume");
  st.resolve(opts.at("steps"), cfg.total_steps, "steps");
  st.resolve(opts.at("batch"), cfg.batch_size, "batch");
  st.resolve(opts.at("peak-lr"), cfg.peak_lr, "peak_lr");
  st.resolve(opts.at("weight-decay"), cfg.weight_decay, "weight_decay");
  st.resolve(opts.at("fkp-weight"), cfg.fkp_weight, "fkp_weight");
  st.resolve(opts.at("checkpoint-every"), cfg.checkpoint_every,
             "checkpoint_every");
  st.resolve(opts.at("layers"), cfg.encoder.layers, "layers");
  st.resolve(opts.at("heads"), cfg.encoder.heads, "heads");
  st.resolve(opts.at("hidden"), cfg.encoder.hidden, "hidden");
  st.resolve(opts.at("max-seq"), cfg.encoder.max_seq, "max_seq");
  st.resolve(opts.at("dropout"), cfg.encoder.dropout, "dropout");
  if (data.empty()) throw kelp::ConfigError("--data is required");
  if (out.empty()) throw kelp::ConfigError("--out is required");

  const auto arm = kelp::parse_arm(ablation);
  if (!arm) {
    throw kelp::ConfigError("unknown ablation arm '" + ablation +
                            "' (expected base, rel_ent_mask, ment_ent_rep, "
                            "or full)");
  }
  cfg.flags = kelp::flags_for_arm(*arm);
  cfg.seed = common.seed;

  const auto corpus = kelp::load_corpus(data + "/corpus.jsonl");
  const auto dict = kelp::load_entity_dictionary(data + "/dictionary.json");
  const auto kb = kelp::load_knowledge_base(data + "/kb.json");
  const auto mentions =
      kelp::load_mention_embeddings(data + "/mention_embeddings.txt");

  const auto result =
      kelp::pretrain(corpus, kb, dict, mentions, cfg, out, resume);
  std::cout << "ran " << result.records.size() << " steps (arm "
            << kelp::arm_name(*arm) << "); final checkpoint "
            << result.final_checkpoint << "\n";
  return 0;
}

int run_probe(const CommonArgs& common, const Settings& st, std::string data,
              std::string checkpoint, std::string out, std::string task,
              bool dump, kelp::ProbeConfig pc,
              const std::map<std::string, const CLI::Option*>& opts) {
  st.resolve(opts.at("data"), data, "data");
  st.resolve(opts.at("checkpoint"), checkpoint, "checkpoint");
  st.resolve(opts.at("out"), out, "out");
  st.resolve(opts.at("task"), task, "task");
  st.resolve(opts.at("epochs"), pc.epochs, "epochs");
  st.resolve(opts.at("batch"), pc.batch_size, "batch");
  st.resolve(opts.at("lr"), pc.lr, "lr");
  if (data.empty()) throw kelp::ConfigError("--data is required");
  if (checkpoint.empty()) throw kelp::ConfigError("--checkpoint is required");
  if (out.empty()) throw kelp::ConfigError("--out is required");
  pc.seed = common.seed;

  const kelp::World world = kelp::load_world(data);
  const auto vocab = kelp::Vocabulary::build(world.corpus);
  const auto enc_cfg = kelp::encoder_config_from_checkpoint(checkpoint);
  if (vocab.size() != enc_cfg.vocab_size) {
    throw kelp::ConfigError(
        "vocabulary built from '" + data + "' has " +
        std::to_string(vocab.size()) + " tokens but the checkpoint expects " +
        std::to_string(enc_cfg.vocab_size) +
        "; probe data must match the pretraining corpus");
  }

  std::filesystem::create_directories(out);
  std::vector<std::string> tasks;
  if (task == "all") {
    tasks = {"typing", "ner", "relation"};
  } else if (task == "typing" || task == "ner" || task == "relation") {
    tasks = {task};
  } else {
    throw kelp::ConfigError("unknown probe task '" + task +
                            "' (expected typing, ner, relation, or all)");
  }

  for (const auto& t : tasks) {
    kelp::ParamRegistry params;
    kelp::Encoder enc = kelp::load_pretrained_encoder(checkpoint, params);
    const std::string dump_path =
        dump ? out + "/" + t + "_predictions.tsv" : "";
    kelp::MetricsReport report;
    if (t == "typing") {
      report =
          kelp::finetune_entity_typing(enc, params, world.typing,
                                       world.entity_types, vocab, pc, dump_path);
      const auto baseline =
          kelp::majority_baseline_typing(world.typing, world.entity_types);
      write_text(out + "/typing_majority_report.json",
                 baseline.to_json() + "\n");
    } else if (t == "ner") {
      report = kelp::finetune_ner(enc, params, world.ner, world.entity_types,
                                  vocab, pc, dump_path);
    } else {
      report = kelp::finetune_relation_classification(
          enc, params, world.relation, world.relation_labels, vocab, pc,
          dump_path);
    }
    write_text(out + "/" + t + "_report.json", report.to_json() + "\n");
    std::cout << t << ": micro_f1=" << report.micro_f1
              << " macro_f1=" << report.macro_f1 << "\n";
  }
  return 0;
}

int run_gradcheck(const CommonArgs& common, const Settings& st,
                  std::size_t seeds, std::size_t coords, double tolerance,
                  const std::map<std::string, const CLI::Option*>& opts) {
  st.resolve(opts.at("seeds"), seeds, "seeds");
  st.resolve(opts.at("coords"), coords, "coords");
  st.resolve(opts.at("tolerance"), tolerance, "tolerance");

  const auto result = kelp::run_gradient_suite(common.seed, seeds, coords);
  for (const auto& p : result.paths) {
    std::cout << p.path << ": max_rel_err=" << p.max_rel_err << " over "
              << p.checked << " probes\n";
  }
  std::cout << (result.pass(tolerance) ? "PASS" : "FAIL")
            << " (max_rel_err=" << result.max_rel_err << ", tolerance "
            << tolerance << ")\n";
  return result.pass(tolerance) ? 0 : 1;
}

int run_dump_plans(const CommonArgs& common, const Settings& st,
                   std::string data, std::string stage, std::string out,
                   std::size_t count,
                   const std::map<std::string, const CLI::Option*>& opts) {
  st.resolve(opts.at("data"), data, "data");
  st.resolve(opts.at("stage"), stage, "stage");
  st.resolve(opts.at("out"), out, "out");
  st.resolve(opts.at("count"), count, "count");
  if (data.empty()) throw kelp::ConfigError("--data is required");

  const auto corpus = kelp::load_corpus(data + "/corpus.jsonl");
  const auto vocab = kelp::Vocabulary::build(corpus);
  const auto fact_bearing = kelp::fact_bearing_indices(corpus);
  std::vector<std::size_t> phrase_bearing;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!corpus[i].phrase_spans.empty()) phrase_bearing.push_back(i);
  }

  std::vector<kelp::MaskStage> stages;
  if (stage == "all") {
    stages = {kelp::MaskStage::word, kelp::MaskStage::phrase,
              kelp::MaskStage::entity, kelp::MaskStage::relation};
  } else if (stage == "word") {
    stages = {kelp::MaskStage::word};
  } else if (stage == "phrase") {
    stages = {kelp::MaskStage::phrase};
  } else if (stage == "entity") {
    stages = {kelp::MaskStage::entity};
  } else if (stage == "relation") {
    stages = {kelp::MaskStage::relation};
  } else {
    throw kelp::ConfigError("unknown stage '" + stage +
                            "' (expected word, phrase, entity, relation, or "
                            "all)");
  }

  std::ostringstream body;
  kelp::Rng rng(common.seed);
  const kelp::MaskingConfig mask_cfg;
  for (std::size_t i = 0; i < count; ++i) {
    const auto s = stages[i % stages.size()];
    std::optional<kelp::MaskingPlan> plan;
    while (!plan) {
      switch (s) {
        case kelp::MaskStage::word:
          plan = kelp::plan_word_masking(corpus[rng.below(corpus.size())],
                                         vocab, mask_cfg, rng);
          break;
        case kelp::MaskStage::phrase: {
          if (phrase_bearing.empty()) {
            throw kelp::ConfigError("corpus has no phrase annotations");
          }
          const auto& sent =
              corpus[phrase_bearing[rng.below(phrase_bearing.size())]];
          plan = kelp::plan_phrase_masking(sent, vocab, mask_cfg, rng);
          break;
        }
        case kelp::MaskStage::entity:
        case kelp::MaskStage::relation: {
          if (fact_bearing.empty()) {
            throw kelp::ConfigError("corpus has no fact annotations");
          }
          const auto& sent =
              corpus[fact_bearing[rng.below(fact_bearing.size())]];
          plan = s == kelp::MaskStage::entity
                     ? kelp::plan_entity_masking(sent, vocab, mask_cfg, rng)
                     : kelp::plan_relation_masking(sent, vocab, mask_cfg, rng);
          break;
        }
      }
    }
    body << kelp::plan_line(*plan) << '\n';
  }
  if (out.empty() || out == "-") {
    std::cout << body.str();
  } else {
    write_text(out, body.str());
  }
  return 0;
}

int run_plot(const Settings& st, std::string metrics, std::string out,
             const std::map<std::string, const CLI::Option*>& opts) {
  st.resolve(opts.at("metrics"), metrics, "metrics");
  st.resolve(opts.at("out"), out, "out");
  if (metrics.empty()) throw kelp::ConfigError("--metrics is required");
  if (out.empty()) throw kelp::ConfigError("--out is required");

  const auto rows = kelp::load_metrics(metrics);
  const auto written = kelp::write_plots(rows, out);
  for (const auto& p : written) std::cout << p << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kelp: knowledge-masked encoder pretraining workbench"};
  app.require_subcommand(1);

  // generate-corpus
  auto* gen_cmd = app.add_subcommand(
      "generate-corpus", "Write a synthetic corpus, dictionary, knowledge "
                         "base, embeddings, and probe splits");
  CommonArgs gen_common;
  gen_common.attach(gen_cmd);
  std::string gen_out;
  kelp::GeneratorConfig gen_cfg;
  std::map<std::string, const CLI::Option*> gen_opts;
  gen_opts["out"] = gen_cmd->add_option("--out", gen_out, "Output directory");
  gen_opts["entities"] =
      gen_cmd->add_option("--entities", gen_cfg.n_entities, "Entity count");
  gen_opts["sentences"] =
      gen_cmd->add_option("--sentences", gen_cfg.n_sentences, "Sentence count");
  gen_opts["mention-dim"] = gen_cmd->add_option(
      "--mention-dim", gen_cfg.mention_dim, "Mention vector width");
  gen_opts["dev-fraction"] = gen_cmd->add_option(
      "--dev-fraction", gen_cfg.dev_fraction, "Probe dev split fraction");
  gen_opts["test-fraction"] = gen_cmd->add_option(
      "--test-fraction", gen_cfg.test_fraction, "Probe test split fraction");

  // pretrain
  auto* pre_cmd =
      app.add_subcommand("pretrain", "Multi-task pretraining over a corpus "
                                     "directory produced by generate-corpus");
  CommonArgs pre_common;
  pre_common.attach(pre_cmd);
  std::string pre_data, pre_out, pre_ablation = "full", pre_resume;
  kelp::TrainConfig train_cfg;
  train_cfg.encoder = kelp::EncoderConfig::toy(0);
  std::map<std::string, const CLI::Option*> pre_opts;
  pre_opts["data"] =
      pre_cmd->add_option("--data", pre_data, "Corpus directory");
  pre_opts["out"] = pre_cmd->add_option("--out", pre_out, "Run directory");
  pre_opts["ablation"] = pre_cmd->add_option(
      "--ablation", pre_ablation,
      "Arm: base, rel_ent_mask, ment_ent_rep, or full");
  pre_opts["resume"] = pre_cmd->add_option(
      "--resume", pre_resume, "Checkpoint to continue from");
  pre_opts["steps"] =
      pre_cmd->add_option("--steps", train_cfg.total_steps, "Total steps");
  pre_opts["batch"] =
      pre_cmd->add_option("--batch", train_cfg.batch_size, "Batch size");
  pre_opts["peak-lr"] =
      pre_cmd->add_option("--peak-lr", train_cfg.peak_lr, "Peak learning rate");
  pre_opts["weight-decay"] = pre_cmd->add_option(
      "--weight-decay", train_cfg.weight_decay, "Decoupled weight decay");
  pre_opts["fkp-weight"] = pre_cmd->add_option(
      "--fkp-weight", train_cfg.fkp_weight,
      "Weight of the fact-prediction term in entity/relation stages");
  pre_opts["checkpoint-every"] = pre_cmd->add_option(
      "--checkpoint-every", train_cfg.checkpoint_every, "Checkpoint cadence");
  pre_opts["layers"] =
      pre_cmd->add_option("--layers", train_cfg.encoder.layers, "Encoder depth");
  pre_opts["heads"] = pre_cmd->add_option("--heads", train_cfg.encoder.heads,
                                          "Attention heads");
  pre_opts["hidden"] = pre_cmd->add_option(
      "--hidden", train_cfg.encoder.hidden, "Encoder width");
  pre_opts["max-seq"] = pre_cmd->add_option(
      "--max-seq", train_cfg.encoder.max_seq, "Positions available");
  pre_opts["dropout"] = pre_cmd->add_option(
      "--dropout", train_cfg.encoder.dropout, "Sublayer dropout rate");

  // probe
  auto* probe_cmd = app.add_subcommand(
      "probe", "Fine-tune a pretrained checkpoint on the synthetic tasks");
  CommonArgs probe_common;
  probe_common.attach(probe_cmd);
  std::string probe_data, probe_ckpt, probe_out, probe_task = "all";
  bool probe_dump = false;
  kelp::ProbeConfig probe_cfg;
  std::map<std::string, const CLI::Option*> probe_opts;
  probe_opts["data"] =
      probe_cmd->add_option("--data", probe_data, "Corpus directory");
  probe_opts["checkpoint"] = probe_cmd->add_option(
      "--checkpoint", probe_ckpt, "Pretraining checkpoint");
  probe_opts["out"] = probe_cmd->add_option("--out", probe_out,
                                            "Directory for report files");
  probe_opts["task"] = probe_cmd->add_option(
      "--task", probe_task, "typing, ner, relation, or all");
  probe_opts["epochs"] =
      probe_cmd->add_option("--epochs", probe_cfg.epochs, "Fine-tune epochs");
  probe_opts["batch"] = probe_cmd->add_option(
      "--batch", probe_cfg.batch_size, "Fine-tune batch size");
  probe_opts["lr"] =
      probe_cmd->add_option("--lr", probe_cfg.lr, "Fine-tune learning rate");
  probe_cmd->add_flag("--dump", probe_dump,
                      "Also write per-example prediction files");

  // gradcheck
  auto* grad_cmd = app.add_subcommand(
      "gradcheck", "Finite-difference audit of every training loss");
  CommonArgs grad_common;
  grad_common.attach(grad_cmd);
  std::size_t grad_seeds = 20, grad_coords = 2;
  double grad_tol = 1e-4;
  std::map<std::string, const CLI::Option*> grad_opts;
  grad_opts["seeds"] = grad_cmd->add_option(
      "--seeds", grad_seeds, "Model initialisations per loss path");
  grad_opts["coords"] = grad_cmd->add_option(
      "--coords", grad_coords, "Probed coordinates per parameter tensor");
  grad_opts["tolerance"] =
      grad_cmd->add_option("--tolerance", grad_tol, "Relative error bound");

  // dump-plans
  auto* dump_cmd = app.add_subcommand(
      "dump-plans", "Print sampled masking plans as JSON lines");
  CommonArgs dump_common;
  dump_common.attach(dump_cmd);
  std::string dump_data, dump_stage = "all", dump_out;
  std::size_t dump_count = 16;
  std::map<std::string, const CLI::Option*> dump_opts;
  dump_opts["data"] =
      dump_cmd->add_option("--data", dump_data, "Corpus directory");
  dump_opts["stage"] = dump_cmd->add_option(
      "--stage", dump_stage, "word, phrase, entity, relation, or all");
  dump_opts["count"] =
      dump_cmd->add_option("--count", dump_count, "Plans to emit");
  dump_opts["out"] =
      dump_cmd->add_option("--out", dump_out, "Output file ('-' = stdout)");

  // plot
  auto* plot_cmd = app.add_subcommand(
      "plot", "Render per-task loss curves and the learning-rate curve");
  CommonArgs plot_common;
  plot_common.attach(plot_cmd);
  std::string plot_metrics, plot_out;
  std::map<std::string, const CLI::Option*> plot_opts;
  plot_opts["metrics"] =
      plot_cmd->add_option("--metrics", plot_metrics, "metrics.tsv path");
  plot_opts["out"] =
      plot_cmd->add_option("--out", plot_out, "Directory for SVG files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen_cmd->parsed()) {
      return run_generate_corpus(gen_common, gen_common.settings(), gen_out,
                                 gen_cfg, gen_opts);
    }
    if (pre_cmd->parsed()) {
      return run_pretrain(pre_common, pre_common.settings(), pre_data,
                          pre_out, pre_ablation, pre_resume, train_cfg,
                          pre_opts);
    }
    if (probe_cmd->parsed()) {
      return run_probe(probe_common, probe_common.settings(), probe_data,
                       probe_ckpt, probe_out, probe_task, probe_dump,
                       probe_cfg, probe_opts);
    }
    if (grad_cmd->parsed()) {
      return run_gradcheck(grad_common, grad_common.settings(), grad_seeds,
                           grad_coords, grad_tol, grad_opts);
    }
    if (dump_cmd->parsed()) {
      return run_dump_plans(dump_common, dump_common.settings(), dump_data,
                            dump_stage, dump_out, dump_count, dump_opts);
    }
    if (plot_cmd->parsed()) {
      return run_plot(plot_common.settings(), plot_metrics, plot_out,
                      plot_opts);
    }
  } catch (const kelp::RuntimeAbort& e) {
    std::cerr << "abort: " << e.what() << "\n";
    return 2;
  } catch (const kelp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
