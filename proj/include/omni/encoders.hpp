#pragma once
// Continuous understanding path: log-mel frontend, frozen 25 Hz audio encoder,
// Linear-GELU-Linear adapter, 25->1 Hz gated compressor, and a budgeted
// patch-embedding vision encoder with linear adapter.

#include <memory>
#include <string>
#include <vector>

#include "omni/fsq.hpp"
#include "omni/image_io.hpp"
#include "omni/nn.hpp"
#include "omni/rng.hpp"

namespace omni {

struct MelConfig {
    int sample_rate = 16000;
    int mel_bins = 128;
    int win_ms = 25;   // 400 samples
    int hop_ms = 10;   // 160 samples
};

struct MelFrames {
    int64_t frames = 0;
    int bins = 0;
    std::vector<double> data;  // [frames, bins]
};

// 128-channel log-magnitude mel frames at 100 Hz; frame count = floor(N/hop)
// under center padding. Throws on an empty waveform.
MelFrames log_mel(const std::vector<double>& wav, const MelConfig& cfg = {});

struct TokenBudget {
    int64_t image_budget = 3072;
    int64_t video_budget = 11264;  // 120-frame reference
};

// 4x temporal downsampling (two stride-2 conv blocks) then two attention
// blocks at width `width`. Frozen through every training stage.
class AudioEncoder {
public:
    AudioEncoder(const std::string& name, int mel_bins, int width, uint64_t seed);

    // mel [frames, bins] -> features [floor(frames/4), width]
    std::vector<double> forward(const MelFrames& mel) const;
    static int64_t out_len(int64_t mel_frames) { return mel_frames / 4; }

    int width() const { return width_; }
    std::vector<Param*> params();

private:
    int width_;
    std::unique_ptr<nn::Conv1d> conv1_;
    std::unique_ptr<nn::Conv1d> conv2_;
    std::unique_ptr<nn::TransformerBlock> blk1_;
    std::unique_ptr<nn::TransformerBlock> blk2_;
};

// Linear-GELU-Linear to the backbone width.
class AudioAdapter {
public:
    AudioAdapter(const std::string& name, int in_width, int out_width, int hidden_mult, Rng& rng);

    struct Cache {
        std::vector<double> x, pre, post;
        size_t n = 0;
    };
    void forward(const double* x, size_t n, double* out, Cache& cache) const;
    void backward(const Cache& cache, const double* dout, double* dx /*nullable*/);
    int out_width() const { return fc2_->out_dim; }
    int in_width() const { return fc1_->in_dim; }
    std::vector<Param*> params();

private:
    std::unique_ptr<nn::Linear> fc1_;
    std::unique_ptr<nn::Linear> fc2_;
};

// Non-overlapping 25-frame windows -> one output each via softmax-gated
// pooling plus an output affine; a trailing partial window pools over what
// remains. Trainable only when a stage unfreezes it.
class AudioCompressor {
public:
    AudioCompressor(const std::string& name, int width, int window, Rng& rng);

    struct Cache {
        std::vector<double> x;
        std::vector<std::vector<double>> alphas;  // per window
        std::vector<double> pooled;
        size_t n = 0;
    };
    // x [n, width] -> out [ceil(n/window), width]
    void forward(const double* x, size_t n, double* out, Cache& cache) const;
    void backward(const Cache& cache, const double* dout, double* dx /*nullable*/);
    int64_t out_len(int64_t n) const { return (n + window_ - 1) / window_; }
    int window() const { return window_; }
    std::vector<Param*> params();

private:
    int width_, window_;
    std::unique_ptr<Param> gate_;  // [width]
    std::unique_ptr<nn::Linear> proj_;
};

// Patch embedding (stride-16 patches, fixed sinusoidal position signal),
// budget-driven adaptive pooling, then a linear adapter to backbone width.
class VisionEncoder {
public:
    VisionEncoder(const std::string& name, int enc_width, int backbone_width, Rng& rng);

    struct Cache {
        std::vector<double> patches;     // [np, 768] flattened pixels (pre-embed)
        std::vector<double> embedded;    // [np, enc_width]
        std::vector<double> pooled;      // [n_out, enc_width]
        // pooling map: for each output cell, the patch indices averaged
        std::vector<std::vector<int>> pool_src;
        int grid_h = 0, grid_w = 0;
        int out_h = 0, out_w = 0;
    };

    // single image; budget must be >= 1
    std::vector<double> encode_image(const ImageBuffer& img, int64_t budget, Cache& cache) const;
    // uniform frames sharing one budget; caches one entry per frame
    std::vector<double> encode_video(const std::vector<ImageBuffer>& frames, int64_t budget,
                                     std::vector<Cache>& caches) const;

    // routes gradient at the adapter output back through pooling and the
    // patch embedding (cache from encode_image)
    void backward(const Cache& cache, const double* dout);

    int backbone_width() const { return adapter_->out_dim; }
    std::vector<Param*> params();
    std::vector<Param*> adapter_params();

    static constexpr int kPatch = 16;

private:
    int enc_width_;
    std::unique_ptr<nn::Linear> embed_;
    std::unique_ptr<nn::Linear> adapter_;
};

// Discrete audio tokenizer: frozen encoder features at 25 Hz pushed through
// the learned low-rank FSQ projection. Codes come out at exactly 25/s.
class AudioTokenizer {
public:
    AudioTokenizer(const std::string& name, const FsqConfig& cfg, int mel_bins, int width, uint64_t seed);

    std::vector<FsqCode> codes(const std::vector<double>& wav) const;
    std::vector<uint16_t> codes_u16(const std::vector<double>& wav) const;
    const FsqConfig& config() const { return proj_->cfg; }
    std::vector<Param*> params();

private:
    std::unique_ptr<AudioEncoder> enc_;
    std::unique_ptr<FsqProjection> proj_;
};

}  // namespace omni
