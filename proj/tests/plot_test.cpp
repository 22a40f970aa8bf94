#include "kelp/plot.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "kelp/errors.hpp"
#include "temp_dir.hpp"

using namespace kelp;
using kelptest::TempDir;

namespace {

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_log(const std::string& path, const std::vector<std::string>& rows) {
  std::ofstream out(path);
  out << "step\ttask\tloss\tlr\tgrad_norm\n";
  for (const auto& r : rows) out << r << "\n";
}

}  // namespace

TEST_CASE("metrics log parses into typed rows") {
  TempDir tmp("plot");
  const auto path = tmp.file("metrics.tsv");
  write_log(path, {"1\tword\t5.25\t1.5e-06\t0.75",
                   "2\tphrase\t4.5\t3e-06\t1"});
  const auto rows = load_metrics(path);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].step == 1);
  CHECK(rows[0].task == "word");
  CHECK(rows[0].loss == 5.25);
  CHECK(rows[0].lr == 1.5e-06);
  CHECK(rows[0].grad_norm == 0.75);
  CHECK(rows[1].task == "phrase");
}

TEST_CASE("metrics log rejects malformed content") {
  TempDir tmp("plot");

  const auto empty = tmp.file("empty.tsv");
  { std::ofstream out(empty); out << "step\ttask\tloss\tlr\tgrad_norm\n"; }
  CHECK_THROWS_AS(load_metrics(empty), ValidationError);

  const auto nohdr = tmp.file("nohdr.tsv");
  { std::ofstream out(nohdr); out << "1\tword\t5\t1e-5\t1\n"; }
  CHECK_THROWS_AS(load_metrics(nohdr), ParseError);

  const auto shortrow = tmp.file("short.tsv");
  write_log(shortrow, {"1\tword\t5"});
  try {
    load_metrics(shortrow);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(shortrow) != std::string::npos);
    CHECK(msg.find(":2") != std::string::npos);
  }

  const auto badnum = tmp.file("badnum.tsv");
  write_log(badnum, {"1\tword\tfive\t1e-5\t1"});
  CHECK_THROWS_AS(load_metrics(badnum), ParseError);

  CHECK_THROWS_AS(load_metrics(tmp.file("missing.tsv")), Error);
}

TEST_CASE("charts are deterministic functions of their data") {
  const std::vector<double> xs{0, 1, 2, 3};
  const std::vector<double> ys{1.0, 0.5, 0.25, 0.125};
  const auto a = svg_line_chart("loss", xs, ys);
  const auto b = svg_line_chart("loss", xs, ys);
  CHECK(a == b);
  CHECK(a.find("<svg") != std::string::npos);
  CHECK(a.find("loss") != std::string::npos);
  CHECK(a != svg_line_chart("loss", xs, {1.0, 0.5, 0.25, 0.5}));
}

TEST_CASE("write_plots emits one chart per task plus the lr curve") {
  TempDir tmp("plot");
  std::vector<MetricsRow> rows{
      {1, "word", 5.0, 1e-6, 1.0},
      {2, "word", 4.5, 2e-6, 1.0},
      {3, "phrase", 4.0, 3e-6, 1.0},
  };
  const auto paths = write_plots(rows, tmp.str());
  REQUIRE(paths.size() == 3);  // loss_phrase, loss_word, lr
  bool saw_word = false, saw_phrase = false, saw_lr = false;
  for (const auto& p : paths) {
    CHECK(std::filesystem::exists(p));
    if (p.find("loss_word.svg") != std::string::npos) saw_word = true;
    if (p.find("loss_phrase.svg") != std::string::npos) saw_phrase = true;
    if (p.find("lr.svg") != std::string::npos) saw_lr = true;
  }
  CHECK(saw_word);
  CHECK(saw_phrase);
  CHECK(saw_lr);

  // Sorted return order and idempotent rewrite.
  auto sorted = paths;
  std::sort(sorted.begin(), sorted.end());
  CHECK(paths == sorted);
  const auto before = read_bytes(paths[0]);
  const auto again = write_plots(rows, tmp.str());
  CHECK(again == paths);
  CHECK(read_bytes(paths[0]) == before);
}
