#include "omni/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace omni {

ImageBuffer resize_bilinear(const ImageBuffer& src, int new_w, int new_h) {
    if (new_w < 1 || new_h < 1) throw std::invalid_argument("resize: degenerate target");
    ImageBuffer out(new_w, new_h);
    out.orig_width = src.orig_width;
    out.orig_height = src.orig_height;
    const double sx = double(src.width) / new_w;
    const double sy = double(src.height) / new_h;
    for (int y = 0; y < new_h; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        const int y0 = std::clamp(int(std::floor(fy)), 0, src.height - 1);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = std::clamp(fy - y0, 0.0, 1.0);
        for (int x = 0; x < new_w; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            const int x0 = std::clamp(int(std::floor(fx)), 0, src.width - 1);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double wx = std::clamp(fx - x0, 0.0, 1.0);
            const double* p00 = src.px(x0, y0);
            const double* p10 = src.px(x1, y0);
            const double* p01 = src.px(x0, y1);
            const double* p11 = src.px(x1, y1);
            double* o = out.px(x, y);
            for (int c = 0; c < 3; ++c) {
                const double top = p00[c] * (1 - wx) + p10[c] * wx;
                const double bot = p01[c] * (1 - wx) + p11[c] * wx;
                o[c] = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

namespace {

uint32_t crc32_of(const uint8_t* p, size_t n, uint32_t seed) {
    return uint32_t(::crc32(seed, p, uInt(n)));
}

void put_u32be(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(uint8_t(x >> 24));
    v.push_back(uint8_t(x >> 16));
    v.push_back(uint8_t(x >> 8));
    v.push_back(uint8_t(x));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
    put_u32be(out, uint32_t(payload.size()));
    std::vector<uint8_t> body(type, type + 4);
    body.insert(body.end(), payload.begin(), payload.end());
    out.insert(out.end(), body.begin(), body.end());
    put_u32be(out, crc32_of(body.data(), body.size(), ::crc32(0, nullptr, 0)));
}

uint8_t to_u8(double v) {
    return uint8_t(std::clamp(std::lround(v * 255.0), 0l, 255l));
}

uint32_t get_u32be(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | p[3];
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_png(const std::string& path, const ImageBuffer& img) {
    const size_t stride = size_t(img.width) * 3;
    std::vector<uint8_t> raw((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        uint8_t* row = raw.data() + y * (stride + 1);
        row[0] = 0;  // filter none
        for (int x = 0; x < img.width; ++x) {
            const double* p = img.px(x, y);
            row[1 + 3 * x + 0] = to_u8(p[0]);
            row[1 + 3 * x + 1] = to_u8(p[1]);
            row[1 + 3 * x + 2] = to_u8(p[2]);
        }
    }
    uLongf comp_cap = compressBound(uLong(raw.size()));
    std::vector<uint8_t> comp(comp_cap);
    if (compress2(comp.data(), &comp_cap, raw.data(), uLong(raw.size()), 6) != Z_OK) {
        throw std::runtime_error("png: compression failed");
    }
    comp.resize(comp_cap);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<uint8_t> ihdr;
    put_u32be(ihdr, uint32_t(img.width));
    put_u32be(ihdr, uint32_t(img.height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type RGB
    ihdr.push_back(0);   // deflate
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // no interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", comp);
    put_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png: cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) throw std::runtime_error("png: write failed: " + path);
}

ImageBuffer read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("png: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0) {
        throw std::runtime_error("png: bad signature in " + path);
    }
    size_t pos = 8;
    int width = 0, height = 0, color_type = 0;
    std::vector<uint8_t> idat;
    while (pos + 8 <= bytes.size()) {
        const uint32_t len = get_u32be(&bytes[pos]);
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        const uint8_t* payload = &bytes[pos + 8];
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("png: truncated chunk");
        if (std::memcmp(type, "IHDR", 4) == 0) {
            width = int(get_u32be(payload));
            height = int(get_u32be(payload + 4));
            const int bit_depth = payload[8];
            color_type = payload[9];
            if (bit_depth != 8 || (color_type != 2 && color_type != 6) || payload[12] != 0) {
                throw std::runtime_error("png: unsupported format (need 8-bit RGB/RGBA, no interlace)");
            }
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (width < 1 || height < 1 || idat.empty()) throw std::runtime_error("png: missing data");

    const int ch = color_type == 2 ? 3 : 4;
    const size_t stride = size_t(width) * ch;
    std::vector<uint8_t> raw((stride + 1) * height);
    uLongf raw_len = uLongf(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) != Z_OK || raw_len != raw.size()) {
        throw std::runtime_error("png: inflate failed");
    }

    // undo per-row filters in place
    std::vector<uint8_t> prev(stride, 0);
    ImageBuffer img(width, height);
    for (int y = 0; y < height; ++y) {
        uint8_t* row = raw.data() + y * (stride + 1);
        const uint8_t filter = row[0];
        uint8_t* cur = row + 1;
        for (size_t i = 0; i < stride; ++i) {
            const int a = i >= size_t(ch) ? cur[i - ch] : 0;
            const int b = prev[i];
            const int c = i >= size_t(ch) ? prev[i - ch] : 0;
            int v = cur[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw std::runtime_error("png: bad filter byte");
            }
            cur[i] = uint8_t(v);
        }
        std::memcpy(prev.data(), cur, stride);
        for (int x = 0; x < width; ++x) {
            double* p = img.px(x, y);
            p[0] = cur[ch * x + 0] / 255.0;
            p[1] = cur[ch * x + 1] / 255.0;
            p[2] = cur[ch * x + 2] / 255.0;
        }
    }
    return img;
}

}  // namespace omni
