#pragma once

#include <string>

#include "taskvec/tensor.hpp"

namespace taskvec {

// SHA-256 of a byte string, lowercase hex.
std::string sha256_hex(const void* data, std::size_t nbytes);
std::string sha256_hex(const std::string& s);

// Content hash of a tensor collection: SHA-256 over the canonical stream
//   for each entry in lexicographic name order:
//     u64 name length (LE), name bytes, u64 rank (LE), u64 per dim (LE),
//     raw float32 payload (LE).
// Identical contents hash identically no matter how the map was built;
// any single-element change changes the digest.
std::string content_hash(const TensorMap& m);

} // namespace taskvec
