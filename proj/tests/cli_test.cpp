#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"
#include "temp_dir.hpp"

using kelptest::TempDir;

namespace {

std::string binary() {
  const char* bin = std::getenv("KELP_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "KELP_BIN must point at the kelp binary");
  return bin;
}

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Runs the binary with the given argument string; captures both streams.
RunResult run(const std::string& args) {
  static TempDir io("cli-io");
  static int counter = 0;
  const std::string out_path = io.file("out" + std::to_string(counter));
  const std::string err_path = io.file("err" + std::to_string(counter));
  ++counter;
  const std::string cmd =
      binary() + " " + args + " >" + out_path + " 2>" + err_path;
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

std::map<std::string, std::string> slurp_tree(const std::string& dir) {
  namespace fs = std::filesystem;
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    out[fs::relative(e.path(), dir).string()] = slurp(e.path().string());
  }
  return out;
}

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

// Shared tiny corpus so the happy-path cases do not regenerate it each time.
const std::string& data_dir() {
  static TempDir dir("cli-data");
  static const std::string path = dir.str();
  static bool made = false;
  if (!made) {
    const auto r = run("generate-corpus --seed 41 --sentences 60 "
                       "--mention-dim 8 --out " + path);
    REQUIRE(r.code == 0);
    made = true;
  }
  return path;
}

}  // namespace

TEST_CASE("help succeeds and bad invocations fail cleanly") {
  CHECK(run("--help").code == 0);
  CHECK(run("pretrain --help").code == 0);
  CHECK(run("").code == 1);             // a subcommand is required
  CHECK(run("frobnicate").code == 1);   // unknown subcommand
  CHECK(run("generate-corpus --no-such-flag 1").code == 1);

  const auto missing_out = run("generate-corpus --sentences 30");
  CHECK(missing_out.code == 1);
  CHECK(missing_out.err.find("--out is required") != std::string::npos);
}

TEST_CASE("corpus generation is deterministic per seed") {
  TempDir a("cli"), b("cli"), c("cli");
  const std::string base = "generate-corpus --sentences 50 --mention-dim 8 ";
  CHECK(run(base + "--seed 5 --out " + a.str()).code == 0);
  CHECK(run(base + "--seed 5 --out " + b.str()).code == 0);
  CHECK(run(base + "--seed 6 --out " + c.str()).code == 0);
  CHECK(slurp_tree(a.str()) == slurp_tree(b.str()));
  CHECK(slurp_tree(a.str()) != slurp_tree(c.str()));
}

TEST_CASE("explicit flags beat config keys beat defaults") {
  TempDir tmp("cli");
  const std::string cfg_path = tmp.file("run.json");
  {
    std::ofstream cfg(cfg_path, std::ios::binary);
    cfg << R"({"sentences": 40, "seed": 9, "mention_dim": 8})";
  }

  // Flag overrides the config's sentence count; seed comes from the config.
  const auto mixed = run("generate-corpus --config " + cfg_path +
                         " --sentences 30 --out " + tmp.file("mixed"));
  REQUIRE(mixed.code == 0);
  CHECK(mixed.out.find("wrote 30 sentences") != std::string::npos);

  const auto from_cfg =
      run("generate-corpus --config " + cfg_path + " --out " + tmp.file("cfg"));
  REQUIRE(from_cfg.code == 0);
  CHECK(from_cfg.out.find("wrote 40 sentences") != std::string::npos);

  // Same outcome as spelling the config out in flags.
  const auto spelled = run("generate-corpus --seed 9 --sentences 40 "
                           "--mention-dim 8 --out " + tmp.file("flags"));
  REQUIRE(spelled.code == 0);
  CHECK(slurp_tree(tmp.file("cfg")) == slurp_tree(tmp.file("flags")));

  // An explicit --seed beats the config seed.
  const auto reseeded = run("generate-corpus --config " + cfg_path +
                            " --seed 10 --out " + tmp.file("reseeded"));
  REQUIRE(reseeded.code == 0);
  CHECK(slurp_tree(tmp.file("reseeded")) != slurp_tree(tmp.file("cfg")));

  // Config-file failure modes.
  CHECK(run("generate-corpus --config " + tmp.file("absent.json") +
            " --out " + tmp.file("x")).code == 1);
  {
    std::ofstream bad(tmp.file("bad.json"), std::ios::binary);
    bad << "{not json";
  }
  CHECK(run("generate-corpus --config " + tmp.file("bad.json") + " --out " +
            tmp.file("y")).code == 1);
  {
    std::ofstream arr(tmp.file("arr.json"), std::ios::binary);
    arr << "[1,2]";
  }
  CHECK(run("generate-corpus --config " + tmp.file("arr.json") + " --out " +
            tmp.file("z")).code == 1);
}

TEST_CASE("pretraining, resuming, plotting, and probing work end to end") {
  const std::string& data = data_dir();
  TempDir runs("cli");
  const std::string train_args =
      " --data " + data + " --steps 6 --batch 2 --layers 1 --hidden 32 "
      "--heads 2 --checkpoint-every 3 --seed 13 ";

  const auto full = run("pretrain --ablation full --out " + runs.file("a") +
                        train_args);
  REQUIRE_MESSAGE(full.code == 0, full.err);
  CHECK(full.out.find("ran 6 steps (arm full)") != std::string::npos);
  CHECK(std::filesystem::exists(runs.file("a") + "/metrics.tsv"));
  CHECK(std::filesystem::exists(runs.file("a") + "/vocab.txt"));
  CHECK(std::filesystem::exists(runs.file("a") + "/checkpoint-6.ckpt"));

  // Resuming the same configuration from the midpoint reproduces the bytes.
  const auto resumed = run("pretrain --ablation full --out " + runs.file("b") +
                           train_args + "--resume " + runs.file("a") +
                           "/checkpoint-3.ckpt");
  REQUIRE_MESSAGE(resumed.code == 0, resumed.err);
  CHECK(resumed.out.find("ran 3 steps") != std::string::npos);
  CHECK(slurp(runs.file("a") + "/checkpoint-6.ckpt") ==
        slurp(runs.file("b") + "/checkpoint-6.ckpt"));

  // Unknown ablation arms and missing inputs are configuration errors.
  const auto bad_arm = run("pretrain --ablation bogus --out " +
                           runs.file("c") + train_args);
  CHECK(bad_arm.code == 1);
  CHECK(bad_arm.err.find("unknown ablation arm") != std::string::npos);
  CHECK(run("pretrain --ablation full --out " + runs.file("d") +
            " --data " + runs.file("nowhere") + " --steps 4").code == 1);

  // Plots render from the produced metrics file.
  const auto plotted = run("plot --metrics " + runs.file("a") +
                           "/metrics.tsv --out " + runs.file("svg"));
  REQUIRE_MESSAGE(plotted.code == 0, plotted.err);
  CHECK(std::filesystem::exists(runs.file("svg") + "/lr.svg"));
  CHECK(std::filesystem::exists(runs.file("svg") + "/loss_word.svg"));
  CHECK(run("plot --metrics " + runs.file("missing.tsv") + " --out " +
            runs.file("svg2")).code == 1);

  // Probe fine-tuning against the trained checkpoint.
  const auto probed = run("probe --data " + data + " --checkpoint " +
                          runs.file("a") + "/checkpoint-6.ckpt --task typing "
                          "--epochs 1 --dump --out " + runs.file("probe"));
  REQUIRE_MESSAGE(probed.code == 0, probed.err);
  CHECK(probed.out.find("typing: micro_f1=") != std::string::npos);
  const auto report_text = slurp(runs.file("probe") + "/typing_report.json");
  const auto report = nlohmann::json::parse(report_text);
  CHECK(report.at("task") == "entity-typing");
  CHECK(report.contains("macro"));
  CHECK(std::filesystem::exists(runs.file("probe") +
                                "/typing_majority_report.json"));
  CHECK(std::filesystem::exists(runs.file("probe") +
                                "/typing_predictions.tsv"));

  // A probe corpus that disagrees with the checkpoint vocabulary is refused.
  TempDir other("cli");
  REQUIRE(run("generate-corpus --seed 77 --sentences 30 --mention-dim 8 "
              "--out " + other.str()).code == 0);
  const auto mismatched = run("probe --data " + other.str() +
                              " --checkpoint " + runs.file("a") +
                              "/checkpoint-6.ckpt --task typing --epochs 1 "
                              "--out " + runs.file("probe2"));
  CHECK(mismatched.code == 1);
  CHECK(mismatched.err.find("checkpoint expects") != std::string::npos);

  const auto bad_task = run("probe --data " + data + " --checkpoint " +
                            runs.file("a") + "/checkpoint-6.ckpt "
                            "--task everything --out " + runs.file("probe3"));
  CHECK(bad_task.code == 1);
}

TEST_CASE("masking plans dump as JSON lines") {
  const std::string& data = data_dir();
  TempDir tmp("cli");

  const auto to_stdout =
      run("dump-plans --data " + data + " --stage word --count 5 --out -");
  REQUIRE_MESSAGE(to_stdout.code == 0, to_stdout.err);
  CHECK(line_count(to_stdout.out) == 5);
  std::istringstream lines(to_stdout.out);
  std::string line;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("stage") == "word");
    CHECK(j.at("ops").is_array());
    CHECK_FALSE(j.at("ops").empty());
  }

  const auto to_file = run("dump-plans --data " + data +
                           " --stage all --count 8 --out " + tmp.file("p.jsonl"));
  REQUIRE_MESSAGE(to_file.code == 0, to_file.err);
  CHECK(line_count(slurp(tmp.file("p.jsonl"))) == 8);

  CHECK(run("dump-plans --data " + data + " --stage bogus --count 2").code == 1);
  CHECK(run("dump-plans --data " + tmp.file("nope") + " --count 2").code == 1);
}

TEST_CASE("gradient audit command reports and gates on tolerance") {
  const auto pass = run("gradcheck --seeds 2 --coords 1 --tolerance 1e-3");
  REQUIRE_MESSAGE(pass.code == 0, pass.err);
  CHECK(pass.out.find("PASS") != std::string::npos);
  CHECK(pass.out.find("max_rel_err=") != std::string::npos);

  const auto fail = run("gradcheck --seeds 1 --coords 1 --tolerance 1e-18");
  CHECK(fail.code == 1);
  CHECK(fail.out.find("FAIL") != std::string::npos);
}
