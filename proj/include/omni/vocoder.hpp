#pragma once
// Unit vocoder: code embedding, speaker-embedding channel concatenation, an
// upsampling generator with snake-activated residual blocks, and a fixed
// 40 ms-per-token output length contract.

#include <cstdint>
#include <memory>
#include <vector>

#include "omni/fsq.hpp"
#include "omni/nn.hpp"
#include "omni/rng.hpp"

namespace omni {

struct SpeakerEmbedding {
    std::vector<double> v;  // unit norm
};

struct VocoderConfig {
    int sample_rate = 16000;
    std::vector<int> upsample_factors = {8, 5, 4, 4};  // product 640 = 16000 * 0.040
    int64_t codebook_size = 6561;
    int base_channels = 128;  // code embedding + speaker channels combined
    int speaker_dim = 64;
    int token_rate = 25;  // Hz

    int64_t samples_per_token() const;  // product of factors
    void validate() const;              // factors must multiply to rate * 0.040
};

// mel statistics pooling + a fixed seeded affine, unit-normalized.
// Requires at least half a second of reference audio.
SpeakerEmbedding speaker_embed(const std::vector<double>& reference_wav, int speaker_dim = 64,
                               uint64_t seed = 0xECA9Dull);

class UnitVocoder {
public:
    UnitVocoder(const VocoderConfig& cfg, uint64_t seed);

    const VocoderConfig& config() const { return cfg_; }

    // output length is exactly codes.size() * samples_per_token()
    std::vector<double> synthesize(const std::vector<FsqCode>& codes, const SpeakerEmbedding& spk) const;

    // multi-resolution spectral + waveform L1 reconstruction; accumulates
    // parameter gradients and returns the loss
    double train_step_grads(const std::vector<FsqCode>& codes, const std::vector<double>& target,
                            const SpeakerEmbedding& spk);

    std::vector<Param*> params();
    std::vector<Param*> snake_params();

private:
    struct Fwd;
    void forward_impl(const std::vector<FsqCode>& codes, const SpeakerEmbedding& spk,
                      std::vector<double>& wav_out, Fwd* cache) const;

    VocoderConfig cfg_;
    std::unique_ptr<nn::Embedding> code_embed_;
    std::unique_ptr<nn::Conv1d> pre_;
    struct Stage {
        std::unique_ptr<nn::ConvTranspose1d> up;
        std::unique_ptr<nn::Snake> act1;
        std::unique_ptr<nn::Conv1d> res1;
        std::unique_ptr<nn::Snake> act2;
        std::unique_ptr<nn::Conv1d> res2;
    };
    std::vector<Stage> stages_;
    std::unique_ptr<nn::Conv1d> post_;
};

// L1 waveform + multi-resolution log-magnitude STFT distance, with a
// hand-written backward (finite-difference checked in tests).
struct SpectralLossResult {
    double loss = 0.0;
    std::vector<double> grad;  // dL/dx, same length as x
};
SpectralLossResult spectral_l1_loss(const std::vector<double>& x, const std::vector<double>& y,
                                    bool want_grad);

}  // namespace omni
