#pragma once

#include <filesystem>
#include <string>

#include "taskvec/tensor.hpp"

namespace taskvec {

// Checkpoint container format ("TVKP"):
//
//   bytes 0..3    magic "TVKP"
//   bytes 4..7    format version, u32 LE (currently 1)
//   bytes 8..15   header length H, u64 LE
//   bytes 16..    UTF-8 JSON header, H bytes
//   then          raw little-endian float32 payload
//
// The header holds {"meta": {...}, "tensors": {name: {dtype, shape, offset,
// nbytes}}}. Offsets are relative to the payload start; tensors are packed
// contiguously in lexicographic name order with no gaps. Save is
// deterministic: the same checkpoint always produces byte-identical files.
//
// All load/save failures throw ConfigError with a message naming the problem
// ("bad magic", "unsupported version", "truncated payload", "overlapping
// offsets", "non-finite value in tensor <name>", ...).

inline constexpr std::uint32_t kTvkpVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace taskvec
