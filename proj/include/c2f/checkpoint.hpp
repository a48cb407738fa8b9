#pragma once

#include <string>

#include "c2f/encoder.hpp"

namespace c2f {

// Checkpoint file layout:
//   bytes 0-7   magic "C2FCKPT1"
//   bytes 8-11  uint32 little-endian JSON header length
//   JSON header: both encoder configs, image size, vocab size, and a table
//     of {name, shape, offset} entries sorted by name
//   payload: float64 little-endian parameter data, concatenated in table
//     order
// Writing the same model twice produces byte-identical files.
void save_checkpoint(const std::string& path, const DualEncoder& model,
                     int vocab);

DualEncoder load_checkpoint(const std::string& path);

}  // namespace c2f
