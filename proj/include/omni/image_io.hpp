#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace omni {

// Planar-free interleaved RGB image, values in [0,1], row-major.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    std::vector<double> rgb;         // height*width*3
    int orig_width = 0;              // aspect recorded before any square resize
    int orig_height = 0;

    ImageBuffer() = default;
    ImageBuffer(int w, int h) : width(w), height(h), rgb(size_t(w) * h * 3, 0.0), orig_width(w), orig_height(h) {
        if (w < 1 || h < 1) throw std::invalid_argument("image: degenerate size");
    }

    double* px(int x, int y) { return rgb.data() + 3 * (size_t(y) * width + x); }
    const double* px(int x, int y) const { return rgb.data() + 3 * (size_t(y) * width + x); }
};

// Bilinear resample; keeps the source's original-aspect record.
ImageBuffer resize_bilinear(const ImageBuffer& src, int new_w, int new_h);

// 8-bit RGB PNG (zlib-compressed). write uses filter 0; read handles filters 0-4,
// color types 2 (RGB) and 6 (RGBA, alpha dropped), bit depth 8.
void write_png(const std::string& path, const ImageBuffer& img);
ImageBuffer read_png(const std::string& path);

}  // namespace omni
