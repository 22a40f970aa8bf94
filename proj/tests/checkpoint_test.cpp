#include "kelp/checkpoint.hpp"

#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "kelp/errors.hpp"
#include "kelp/optim.hpp"
#include "kelp/rng.hpp"
#include "temp_dir.hpp"

using namespace kelp;
using kelptest::TempDir;

namespace {

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

CheckpointMap sample_map() {
  CheckpointMap m;
  m["enc.tok"] = {{3, 2}, {0.1, -0.2, 0.3, 1e-300, -1e300, 0.0}};
  m["meta.step"] = {{1}, {42.0}};
  m["z.last"] = {{2}, {2.5, -2.5}};
  return m;
}

}  // namespace

TEST_CASE("checkpoint round trip preserves shapes and exact values") {
  TempDir tmp("ckpt");
  const auto path = tmp.file("a.ckpt");
  const CheckpointMap orig = sample_map();
  save_checkpoint(path, orig);
  const CheckpointMap back = load_checkpoint(path);

  REQUIRE(back.size() == orig.size());
  for (const auto& [name, entry] : orig) {
    REQUIRE(back.count(name) == 1);
    CHECK(back.at(name).shape == entry.shape);
    CHECK(back.at(name).data == entry.data);
  }
}

TEST_CASE("the same content writes the same bytes") {
  TempDir tmp("ckpt");
  save_checkpoint(tmp.file("x.ckpt"), sample_map());
  save_checkpoint(tmp.file("y.ckpt"), sample_map());
  CHECK(read_bytes(tmp.file("x.ckpt")) == read_bytes(tmp.file("y.ckpt")));
}

TEST_CASE("corrupt files are rejected") {
  TempDir tmp("ckpt");
  CHECK_THROWS_AS(load_checkpoint(tmp.file("missing.ckpt")), Error);

  {
    std::ofstream out(tmp.file("bad-magic.ckpt"), std::ios::binary);
    out << "NOTAMAGIXXXXX";
  }
  CHECK_THROWS_AS(load_checkpoint(tmp.file("bad-magic.ckpt")), Error);

  save_checkpoint(tmp.file("truncme.ckpt"), sample_map());
  const std::string full = read_bytes(tmp.file("truncme.ckpt"));
  {
    std::ofstream out(tmp.file("trunc.ckpt"), std::ios::binary);
    out.write(full.data(), static_cast<std::streamsize>(full.size() - 9));
  }
  CHECK_THROWS_AS(load_checkpoint(tmp.file("trunc.ckpt")), Error);
}

TEST_CASE("snapshot and restore move values through a registry") {
  ParamRegistry reg;
  Rng rng(21);
  reg.create("w", {2, 2}, rng, 0.5);
  reg.create("b", {3}, rng, 0.5);
  const auto w0 = reg.get("w").values();
  const auto b0 = reg.get("b").values();

  CheckpointMap snap = snapshot_params(reg);
  REQUIRE(snap.count("w") == 1);
  CHECK(snap.at("w").data == w0);

  // Mutate, then restore.
  reg.get("w").values_mut()[0] = 99.0;
  reg.get("b").values_mut()[2] = -99.0;
  restore_params(reg, snap);
  CHECK(reg.get("w").values() == w0);
  CHECK(reg.get("b").values() == b0);

  // Snapshots are deep copies: mutating the registry later must not change
  // an already-taken snapshot.
  reg.get("w").values_mut()[1] = 123.0;
  CHECK(snap.at("w").data == w0);

  // Extra entries (optimizer state, metadata) are ignored on restore.
  snap["adam.m.w"] = {{4}, {0, 0, 0, 0}};
  snap["meta.step"] = {{1}, {7.0}};
  restore_params(reg, snap);
  CHECK(reg.get("w").values() == w0);
}

TEST_CASE("restore rejects missing names and shape mismatches") {
  ParamRegistry reg;
  Rng rng(22);
  reg.create("w", {2, 2}, rng, 0.5);

  CheckpointMap empty;
  CHECK_THROWS_AS(restore_params(reg, empty), LookupError);

  CheckpointMap wrong;
  wrong["w"] = {{3}, {1.0, 2.0, 3.0}};
  CHECK_THROWS_AS(restore_params(reg, wrong), DimensionError);
}
