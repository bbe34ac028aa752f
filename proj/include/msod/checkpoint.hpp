#pragma once

// Parameter checkpoints: JSON header (model config, flags, seed, epoch,
// tensor manifest) plus raw little-endian float64 tensors, optionally the
// optimizer velocity for resuming.

#include <cstdint>
#include <string>

#include "msod/netcore.hpp"
#include "msod/trainer.hpp"

namespace msod {

struct Checkpoint {
  ModelParams params;
  ParamSet velocity;
  bool has_velocity = false;
  AblationFlags flags;
  uint64_t seed = 0;
  int epoch = 0;
};

void write_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace msod
