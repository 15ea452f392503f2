#pragma once

#include <map>

#include "bevmem/model.hpp"

BEVMEM_NS_BEGIN

// Checkpoint format, bit-exact:
//   magic "BVM1", u32 version=1, u32 tensor count;
//   per tensor: u16 name length, UTF-8 name, u8 rank, u32 dims,
//               32-bit little-endian reals in row-major order;
//   trailing CRC32 (zlib polynomial) of all preceding bytes.
// Values are stored as 32-bit floats regardless of the library precision.

std::uint32_t crc32(const std::uint8_t* data, std::size_t n, std::uint32_t seed = 0);

void save_checkpoint(const ModelParams& params, const std::string& path);

// Raw tensor table, order-preserving. Throws CheckpointError on bad magic,
// version, truncation, or CRC mismatch.
std::vector<std::pair<std::string, Tensor>> load_checkpoint_raw(const std::string& path);

// Loads into params initialized for the target config; throws
// CheckpointError when the inventory or shapes do not match.
void load_checkpoint(ModelParams& params, const std::string& path);

BEVMEM_NS_END
