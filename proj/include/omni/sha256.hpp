#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace omni {

// FIPS 180-4 SHA-256, returns lowercase hex digest.
std::string sha256_hex(const uint8_t* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::string& path);

}  // namespace omni
