#pragma once

#include <map>
#include <string>
#include <vector>

#include "kelp/tensor.hpp"

namespace kelp {

// On-disk parameter container. Layout (all integers little-endian):
//   magic   "KELPCKP1" (8 bytes)
//   count   u64
//   entries, each:
//     name_len u32, name bytes
//     ndim     u32, dims u64 * ndim
//     payload  f64 * prod(dims), little-endian IEEE-754
// Entries are sorted by name, so writing the same content twice produces
// identical bytes.
struct CheckpointEntry {
  Shape shape;
  std::vector<double> data;
};

using CheckpointMap = std::map<std::string, CheckpointEntry>;

void save_checkpoint(const std::string& path, const CheckpointMap& entries);
CheckpointMap load_checkpoint(const std::string& path);

class ParamRegistry;

// Deep copies of every registered tensor's values.
CheckpointMap snapshot_params(const ParamRegistry& params);
// Copies values back into same-named, same-shaped registry tensors. Every
// registered parameter must be present in the map; unrelated map entries
// (optimizer state, metadata) are ignored.
void restore_params(ParamRegistry& params, const CheckpointMap& entries);

}  // namespace kelp
