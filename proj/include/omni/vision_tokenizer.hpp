#pragma once
// Toy semantic vision tokenizer: square-resize policy, stride-16 patch
// features pooled to a 27x27 grid, EMA vector quantization with a
// straight-through encoder gradient, and feature reconstruction from tokens.

#include <cstdint>
#include <memory>
#include <vector>

#include "omni/image_io.hpp"
#include "omni/nn.hpp"

namespace omni {

struct VisionTokGrid {
    std::vector<uint16_t> ids;  // 729 local codebook ids, row-major
    int64_t codebook_size = 0;
};

struct FeatureGrid {
    int h = 0, w = 0, c = 0;
    std::vector<double> data;  // [h, w, c]
};

struct VisionTokenizerConfig {
    int input_size = 384;
    int grid = 27;          // 27x27 = 729 tokens
    int patch_stride = 16;  // 384/16 = 24x24 patch features
    int feature_width = 64;
    int64_t codebook_size = 512;
};

// resize to input_size x input_size, recording the original aspect
ImageBuffer resize_square(const ImageBuffer& img, int input_size = 384);

class VisionTokenizer {
public:
    VisionTokenizer(const VisionTokenizerConfig& cfg, uint64_t seed);

    const VisionTokenizerConfig& config() const { return cfg_; }

    // square input only; deterministic given weights
    VisionTokGrid tokenize(const ImageBuffer& img384) const;
    // per-cell codebook lookup -> [grid, grid, feature_width]
    FeatureGrid detokenize(const VisionTokGrid& grid) const;
    // nearest-centroid assignment of arbitrary grid features
    VisionTokGrid assign(const FeatureGrid& features) const;

    // one optimizer step of reconstruction + commitment with EMA centroids;
    // returns the batch loss. Frozen mode leaves every weight bit-identical.
    double train_vq_step(const std::vector<ImageBuffer>& batch);

    void set_frozen(bool f) { frozen_ = f; }
    bool frozen() const { return frozen_; }

    // informational: mean squared pixel error of encode->quantize->decode
    double reconstruction_mse(const ImageBuffer& img384) const;

    std::vector<Param*> params();

private:
    // stride-16 patch features pooled to grid x grid, [n_cells, feature_width]
    std::vector<double> cell_features(const ImageBuffer& img, std::vector<double>* patches_out,
                                      std::vector<double>* pre_pool_out) const;
    int64_t nearest(const double* feat) const;

    VisionTokenizerConfig cfg_;
    bool frozen_ = false;
    std::unique_ptr<nn::Linear> encoder_;   // patch pixels -> feature
    std::unique_ptr<nn::Linear> decoder_;   // feature -> patch pixels
    std::unique_ptr<Param> codebook_;       // [codebook, feature_width]
    std::vector<double> ema_count_;
    std::vector<double> ema_sum_;
    std::unique_ptr<nn::Adam> opt_;
};

}  // namespace omni
