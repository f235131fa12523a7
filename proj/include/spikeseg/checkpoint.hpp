#pragma once

#include <map>
#include <optional>
#include <string>

#include "spikeseg/network.hpp"
#include "spikeseg/training.hpp"

namespace spikeseg {

// Binary model container: magic "SSEG", format version, architecture text
// block, named little-endian float32 arrays, optional optimizer state.
// load(save(x)) round-trips bit-identically; a version mismatch refuses to
// load.
struct Checkpoint {
  NetworkSpec spec;
  ModelParams params;
  std::optional<OptimState> optim;
  std::map<std::string, std::string> meta;  // free-form key/value strings
};

constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace spikeseg
