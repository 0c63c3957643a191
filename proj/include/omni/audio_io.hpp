#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace omni {

// 16-bit PCM mono WAV at a fixed sample rate. Samples are doubles in [-1,1].
void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate);
std::vector<double> read_wav(const std::string& path, int expect_rate);

// u16 little-endian code streams (the discrete audio token wire format)
void write_u16le(const std::string& path, const std::vector<uint16_t>& codes);
std::vector<uint16_t> read_u16le(const std::string& path);

}  // namespace omni
