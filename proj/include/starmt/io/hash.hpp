#pragma once

#include <cstdint>
#include <string>

namespace starmt::io {

// SHA-256 hex digest of a byte string (OpenSSL EVP).
std::string sha256_hex(const std::string& bytes);

// SHA-256 hex digest of a file's contents.
std::string sha256_file(const std::string& path);

// FNV-1a 64-bit, used for cheap structural fingerprints (not provenance).
uint64_t fnv1a64(const std::string& bytes);

} // namespace starmt::io
