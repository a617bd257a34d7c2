#pragma once

#include <cstdint>
#include <filesystem>

#include "v2p/ad/params.hpp"

namespace v2p::ad {

// Checkpoint layout (all integers and floats little-endian):
//   8-byte magic "V2PCKPT\0", u32 version (=1), u64 entry count, then per
//   entry: u32 name length, name bytes, u32 rows, u32 cols, rows*cols f64
//   values. Optimizer moments are not persisted.
void save_checkpoint(const ParamStore& store,
                     const std::filesystem::path& path);

// `seed` seeds initialization of any parameters created after loading.
ParamStore load_checkpoint(const std::filesystem::path& path,
                           std::uint64_t seed = 0);

}  // namespace v2p::ad
