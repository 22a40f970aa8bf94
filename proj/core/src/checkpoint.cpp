#include "kelp/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "kelp/errors.hpp"
#include "kelp/optim.hpp"

namespace kelp {

namespace {

constexpr char kMagic[8] = {'K', 'E', 'L', 'P', 'C', 'K', 'P', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; add byte swaps before "
              "building on a big-endian target");

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw ParseError("checkpoint '" + path + "': truncated file");
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMap& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint64_t>(os, entries.size());
  for (const auto& [name, e] : entries) {
    std::size_t expect = 1;
    for (auto d : e.shape) expect *= d;
    if (expect != e.data.size()) {
      throw DimensionError("checkpoint entry '" + name + "': shape " +
                           shape_str(e.shape) + " vs " +
                           std::to_string(e.data.size()) + " values");
    }
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(e.data.data()),
             static_cast<std::streamsize>(e.data.size() * sizeof(double)));
  }
  if (!os) throw Error("write failed for '" + path + "'");
}

CheckpointMap load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "' for reading");
  char magic[8];
  if (!is.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("checkpoint '" + path + "': bad magic");
  }
  const auto count = take<std::uint64_t>(is, path);
  CheckpointMap out;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = take<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) {
      throw ParseError("checkpoint '" + path + "': truncated name");
    }
    const auto ndim = take<std::uint32_t>(is, path);
    CheckpointEntry e;
    std::size_t total = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      e.shape.push_back(static_cast<std::size_t>(take<std::uint64_t>(is, path)));
      total *= e.shape.back();
    }
    e.data.resize(total);
    if (!is.read(reinterpret_cast<char*>(e.data.data()),
                 static_cast<std::streamsize>(total * sizeof(double)))) {
      throw ParseError("checkpoint '" + path + "': truncated payload for '" +
                       name + "'");
    }
    out.emplace(std::move(name), std::move(e));
  }
  return out;
}

CheckpointMap snapshot_params(const ParamRegistry& params) {
  CheckpointMap out;
  for (const auto& [name, tensor] : params.items()) {
    out.emplace(name, CheckpointEntry{tensor.shape(), tensor.values()});
  }
  return out;
}

void restore_params(ParamRegistry& params, const CheckpointMap& entries) {
  for (auto& [name, tensor] : params.items_mut()) {
    auto it = entries.find(name);
    if (it == entries.end()) {
      throw LookupError("checkpoint has no entry for parameter '" + name + "'");
    }
    if (it->second.shape != tensor.shape()) {
      throw DimensionError("parameter '" + name + "': registry shape " +
                           shape_str(tensor.shape()) + " vs checkpoint " +
                           shape_str(it->second.shape));
    }
    tensor.values_mut() = it->second.data;
  }
}

}  // namespace kelp
