#include "omni/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace omni {

namespace {

void put_u32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(uint8_t(x));
    v.push_back(uint8_t(x >> 8));
    v.push_back(uint8_t(x >> 16));
    v.push_back(uint8_t(x >> 24));
}

void put_u16(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(uint8_t(x));
    v.push_back(uint8_t(x >> 8));
}

uint32_t get_u32(const uint8_t* p) {
    return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}

uint16_t get_u16(const uint8_t* p) {
    return uint16_t(p[0]) | (uint16_t(p[1]) << 8);
}

}  // namespace

void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate) {
    std::vector<uint8_t> out;
    const uint32_t data_bytes = uint32_t(samples.size() * 2);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + data_bytes);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, 1);                       // PCM
    put_u16(out, 1);                       // mono
    put_u32(out, uint32_t(sample_rate));
    put_u32(out, uint32_t(sample_rate) * 2);
    put_u16(out, 2);                       // block align
    put_u16(out, 16);                      // bits
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, data_bytes);
    for (double s : samples) {
        const double c = std::clamp(s, -1.0, 1.0);
        const int16_t q = int16_t(std::lround(c * 32767.0));
        put_u16(out, uint16_t(q));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("wav: cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) throw std::runtime_error("wav: write failed: " + path);
}

std::vector<double> read_wav(const std::string& path, int expect_rate) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("wav: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw std::runtime_error("wav: not a RIFF/WAVE file: " + path);
    }
    size_t pos = 12;
    int channels = 0, rate = 0, bits = 0;
    std::vector<double> samples;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(&bytes[pos]);
        const uint32_t len = get_u32(&bytes[pos + 4]);
        const uint8_t* payload = &bytes[pos + 8];
        if (pos + 8 + len > bytes.size()) throw std::runtime_error("wav: truncated chunk");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (get_u16(payload) != 1) throw std::runtime_error("wav: only PCM supported");
            channels = get_u16(payload + 2);
            rate = int(get_u32(payload + 4));
            bits = get_u16(payload + 14);
        } else if (std::memcmp(id, "data", 4) == 0) {
            if (channels != 1 || bits != 16) throw std::runtime_error("wav: need 16-bit mono");
            samples.reserve(len / 2);
            for (uint32_t i = 0; i + 1 < len; i += 2) {
                const int16_t q = int16_t(get_u16(payload + i));
                samples.push_back(q / 32767.0);
            }
        }
        pos += 8 + len + (len & 1);
    }
    if (expect_rate > 0 && rate != expect_rate) {
        throw std::runtime_error("wav: sample rate mismatch in " + path);
    }
    return samples;
}

void write_u16le(const std::string& path, const std::vector<uint16_t>& codes) {
    std::vector<uint8_t> out;
    out.reserve(codes.size() * 2);
    for (uint16_t c : codes) put_u16(out, c);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("u16: cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
}

std::vector<uint16_t> read_u16le(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("u16: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::vector<uint16_t> codes(bytes.size() / 2);
    for (size_t i = 0; i < codes.size(); ++i) codes[i] = get_u16(&bytes[2 * i]);
    return codes;
}

}  // namespace omni
