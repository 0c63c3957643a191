#pragma once
// Run configuration: one JSON document tying every module's config together,
// validated for internal consistency (codebook sizes, vocoder rate contract).

#include <string>
#include <vector>

#include "omni/backbone.hpp"
#include "omni/fsq.hpp"
#include "omni/vision_decoder.hpp"
#include "omni/vision_tokenizer.hpp"
#include "omni/vocab.hpp"
#include "omni/vocoder.hpp"

namespace omni {

struct AudioConfig {
    int sample_rate = 16000;
    int mel_bins = 128;
    int win_ms = 25;
    int hop_ms = 10;
    int encoder_width = 128;
    int adapter_hidden_mult = 4;  // adapter hidden = mult * backbone hidden
    int compress_window = 25;     // 25 Hz -> 1 Hz
};

struct RunConfig {
    uint64_t seed = 1234;
    std::string out_dir = ".";
    std::string corpus_dir = "corpus";
    std::string stages_file = "stages.json";
    double budget_scale = 1e-6;
    int batch_size = 2;
    double learning_rate = 1e-3;

    std::vector<std::string> special_tokens = default_special_names();
    int64_t text_size = 1024;
    int64_t vision_codebook_size = 512;
    int64_t audio_codebook_size = 6561;

    FsqConfig fsq{8, 1, 1.0};
    BackboneConfig backbone{4, 128, 4, 1024};
    MtpConfig mtp{false, 0.2, 1};
    VisionTokenizerConfig vision_tokenizer{384, 27, 16, 64, 512};
    DitConfig decoder_main{256, 8, 4, 3, 64, CondMode::channel_concat};
    DitConfig decoder_bad{128, 4, 4, 3, 64, CondMode::channel_concat};
    GuidanceConfig guidance{1.75};
    int sample_steps = 16;
    AudioConfig audio{};
    VocoderConfig vocoder{};

    void validate() const;  // throws std::invalid_argument with the violated rule
    std::string to_json() const;
    static RunConfig from_json(const std::string& text);

    VocabLayout make_layout() const {
        return build_layout(special_tokens, text_size, vision_codebook_size, audio_codebook_size);
    }
};

bool config_equal(const RunConfig& a, const RunConfig& b);

}  // namespace omni
