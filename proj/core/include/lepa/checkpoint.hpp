#pragma once

#include <string>

#include "lepa/nn.hpp"

namespace lepa {

// Checkpoint layout (all integers little-endian):
//   magic "LEPA", u32 format version,
//   serialized ModelConfig,
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, u32 dims[rank], f32 data.
// Tensors cover the trainable store, the teacher mirror under a "teacher."
// prefix, and the normalization stats. Round-trips are bit-exact.
void save_checkpoint(const std::string& path, const nn::ModelState<float>& state);
nn::ModelState<float> load_checkpoint(const std::string& path);

}  // namespace lepa
