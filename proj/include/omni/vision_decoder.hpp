#pragma once
// Toy diffusion transformer decoding 27x27 vision tokens to pixels. The
// conditioning grid enters by channel-wise concatenation with the noisy
// latents; there is no text pathway anywhere. Sampling integrates a
// rectified-flow ODE with optional autoguidance from a weaker twin.

#include <cstdint>
#include <memory>
#include <vector>

#include "omni/image_io.hpp"
#include "omni/nn.hpp"
#include "omni/rng.hpp"
#include "omni/vision_tokenizer.hpp"

namespace omni {

struct LatentGrid {
    int ch = 0, h = 0, w = 0;  // spatial factor 8 vs pixels
    std::vector<double> data;  // [ch, h, w]
};

struct CondGrid {
    int ch = 0, h = 0, w = 0;
    std::vector<double> data;  // [ch, h, w]
};

struct GuidanceConfig {
    double scale = 1.75;  // s = 1 disables guidance entirely
};

// pixel <-> latent codec: exact 8x area-downsampling, bilinear upsampling back
LatentGrid pixels_to_latent(const ImageBuffer& img, int spatial_factor = 8);
ImageBuffer latent_to_pixels(const LatentGrid& lat, int pix_w, int pix_h, int spatial_factor = 8);

// detokenize then bilinear-resize features to the latent's spatial shape
CondGrid tokens_to_cond(const VisionTokenizer& tok, const VisionTokGrid& grid, int target_h,
                        int target_w);

enum class CondMode {
    channel_concat,   // cond stacked with noisy latents along channels
    prefix_attention, // cond as extra attention tokens (baseline for comparison)
};

struct DitConfig {
    int width = 256;
    int blocks = 8;
    int heads = 4;
    int latent_ch = 3;
    int cond_ch = 64;
    CondMode mode = CondMode::channel_concat;
};

class Dit {
public:
    Dit(const std::string& name, const DitConfig& cfg, uint64_t seed);

    const DitConfig& config() const { return cfg_; }

    // velocity field v(x_t, cond, t); shapes must match pairwise
    LatentGrid velocity(const LatentGrid& x, const CondGrid& cond, double t) const;

    // rectified flow step: x_t = (1-t) x0 + t e; target = e - x0; returns MSE
    // and accumulates parameter gradients
    double train_step_grads(const LatentGrid& x0, const CondGrid& cond, double t,
                            const std::vector<double>& noise);

    std::vector<Param*> params();
    size_t param_count() const;

private:
    struct Fwd;
    void forward_impl(const LatentGrid& x, const CondGrid& cond, double t, LatentGrid& out,
                      Fwd* cache) const;

    DitConfig cfg_;
    std::unique_ptr<nn::Linear> in_proj_;     // concat mode: latent+cond channels
    std::unique_ptr<nn::Linear> lat_proj_;    // prefix mode
    std::unique_ptr<nn::Linear> cond_proj_;   // prefix mode (no bias, equal-param twin)
    std::unique_ptr<nn::Linear> time_fc1_;
    std::unique_ptr<nn::Linear> time_fc2_;
    std::vector<std::unique_ptr<nn::TransformerBlock>> blocks_;
    std::unique_ptr<nn::RmsNorm> out_norm_;
    std::unique_ptr<nn::Linear> out_proj_;
};

struct PhaseConfig {
    int phase = 1;
    int crop_px = 64;       // crop window edge (phase 2 uses 1:2 windows)
    bool full_image = false;
    double lr_scale = 1.0;
};

// four-phase curriculum: low-res crops, 1:2 crops, full images, refinement
PhaseConfig phase_schedule(int phase);

class VisionDecoder {
public:
    VisionDecoder(const DitConfig& main_cfg, const DitConfig& bad_cfg, uint64_t seed);

    Dit& main() { return *main_; }
    Dit& bad() { return *bad_; }
    const Dit& main() const { return *main_; }
    const Dit& bad() const { return *bad_; }

    // deterministic Euler ODE over `steps` uniform t-steps from noise to data;
    // s=1 runs the main model only (bit-identical to unguided sampling)
    LatentGrid sample(const CondGrid& cond, int steps, const GuidanceConfig& g, Rng& rng,
                      bool bad_available = true) const;

    // full tokens -> image path, restoring the recorded original aspect
    ImageBuffer decode_image(const VisionTokenizer& tok, const VisionTokGrid& grid, int orig_w,
                             int orig_h, int steps, const GuidanceConfig& g, Rng& rng) const;

    std::vector<Param*> params();      // main + bad
    std::vector<Param*> main_params();
    std::vector<Param*> bad_params();

private:
    std::unique_ptr<Dit> main_;
    std::unique_ptr<Dit> bad_;
};

}  // namespace omni
