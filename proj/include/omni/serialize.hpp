#pragma once
// Bit-exact checkpoint format: manifest.json (name -> dtype/shape/offset/length)
// next to a single weights.bin of little-endian IEEE-754 float32, row-major.

#include <string>
#include <vector>

#include "omni/tensor.hpp"

namespace omni {

void save_checkpoint(const std::string& dir, const ParamRegistry& reg);
// loads by name; missing or shape-mismatched entries throw
void load_checkpoint(const std::string& dir, ParamRegistry& reg);
bool checkpoint_exists(const std::string& dir);

}  // namespace omni
