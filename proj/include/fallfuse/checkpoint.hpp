#pragma once

#include <string>

#include "fallfuse/model.hpp"

namespace fallfuse {

// Checkpoint container, magic "FALLFUSE-CKPT-1". Byte layout:
//   bytes 0..15   magic "FALLFUSE-CKPT-1\n"
//   u64           manifest length in bytes (little-endian)
//   manifest      UTF-8 JSON: model spec plus an ordered tensor table of
//                 [name, shape] covering parameters, running buffers and,
//                 when fitted, standardizer.mean / standardizer.stddev
//   data          raw little-endian float64 payloads in table order
void save_checkpoint(const std::string& path, Model& model);

Model load_checkpoint(const std::string& path);

}  // namespace fallfuse
