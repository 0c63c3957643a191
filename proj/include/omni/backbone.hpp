#pragma once
// Decoder-only autoregressive transformer over the unified vocabulary with a
// multi-token-prediction auxiliary head, weighted cross-entropy, and
// modality-constrained generation.

#include <cstdint>
#include <memory>
#include <vector>

#include "omni/interleave.hpp"
#include "omni/nn.hpp"
#include "omni/rng.hpp"
#include "omni/vocab.hpp"

namespace omni {

struct BackboneConfig {
    int layers = 4;
    int hidden = 128;
    int heads = 4;
    int context_length = 512;
};

struct MtpConfig {
    bool enabled = false;
    double weight = 0.2;  // lambda
    int extra_layers = 1;
};

struct LossParts {
    double total = 0.0;
    double main_ce = 0.0;
    double aux_ce = 0.0;
    // unnormalized weighted CE sums per target region of the main path
    double text_sum = 0.0;
    double vision_sum = 0.0;
    double audio_sum = 0.0;
};

// total = main + lambda * aux
double combine_mtp(double main_ce, double aux_ce, const MtpConfig& mtp);

struct SamplerState {
    enum class Mode { free, vision_span, audio_span, think };
    Mode mode = Mode::free;
    double temperature = 1.0;
    int top_k = 0;  // 0 = unrestricted
    int span_count = 0;
};

class Backbone {
public:
    Backbone(const BackboneConfig& cfg, const VocabLayout& lay, const MtpConfig& mtp, uint64_t seed);

    const BackboneConfig& config() const { return cfg_; }
    const MtpConfig& mtp_config() const { return mtp_; }
    const VocabLayout& layout() const { return lay_; }

    struct Logits {
        std::vector<double> main;  // [L, V]
        std::vector<double> aux;   // [L, V] when mtp enabled
        size_t seq = 0;
        bool has_aux = false;
    };

    struct FwdCache {
        std::vector<double> x0;  // embedded inputs
        std::vector<nn::TransformerBlock::Cache> blocks;
        std::vector<double> trunk_out;
        std::vector<double> normed;
        std::vector<double> inv_rms;
        nn::TransformerBlock::Cache mtp_block;
        std::vector<double> mtp_in, mtp_normed;
        std::vector<double> mtp_inv_rms;
    };

    Logits forward(const ModelInput& input, FwdCache* cache) const;

    // weighted CE over the main path plus lambda-weighted CE over the
    // aux path (targets shifted one further); accumulates all parameter
    // gradients and, when slot_grads is non-null, the gradients w.r.t. the
    // injected continuous rows [n_slots, hidden].
    LossParts loss_and_grads(const ModelInput& input, std::vector<double>* slot_grads);

    // loss only (no gradients); same value as loss_and_grads
    LossParts loss(const ModelInput& input) const;

    // Modality-constrained sampling. Vision spans always complete with
    // exactly 729 ids; max_new is budgeted in free mode. Every sampled id is
    // asserted to be inside the state machine's permitted region.
    struct GenResult {
        std::vector<int64_t> ids;  // newly generated global ids
    };
    GenResult generate(const ModelInput& prompt, SamplerState sampler, int max_new,
                       uint64_t seed) const;

    std::vector<Param*> params();
    Param& embedding() { return embed_->table; }
    Param& head_weight() { return head_->w; }

private:
    void embed_input(const ModelInput& input, std::vector<double>& x) const;

    BackboneConfig cfg_;
    MtpConfig mtp_;
    VocabLayout lay_;
    std::unique_ptr<nn::Embedding> embed_;
    std::vector<std::unique_ptr<nn::TransformerBlock>> blocks_;
    std::unique_ptr<nn::RmsNorm> final_norm_;
    std::unique_ptr<nn::Linear> head_;
    std::unique_ptr<nn::TransformerBlock> mtp_block_;
    std::unique_ptr<nn::RmsNorm> mtp_norm_;
    std::unique_ptr<nn::Linear> mtp_head_;
};

}  // namespace omni
