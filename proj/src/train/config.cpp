#include "omni/config.hpp"

#include <stdexcept>

#include "json.hpp"

using nlohmann::json;

namespace omni {

void RunConfig::validate() const {
    make_layout();  // throws on malformed regions
    if (audio_codebook_size != fsq.codebook_size()) {
        throw std::invalid_argument("config: audio_codebook_size " + std::to_string(audio_codebook_size) +
                                    " != fsq lattice size " + std::to_string(fsq.codebook_size()));
    }
    if (vocoder.codebook_size != audio_codebook_size) {
        throw std::invalid_argument("config: vocoder codebook != audio codebook");
    }
    vocoder.validate();
    if (vocoder.sample_rate != audio.sample_rate) {
        throw std::invalid_argument("config: vocoder and audio sample rates differ");
    }
    if (vision_tokenizer.codebook_size != vision_codebook_size) {
        throw std::invalid_argument("config: vision tokenizer codebook != layout vision size");
    }
    if (vision_tokenizer.grid != 27) {
        throw std::invalid_argument("config: vision grid must be 27 (729 tokens)");
    }
    if (decoder_main.cond_ch != vision_tokenizer.feature_width ||
        decoder_bad.cond_ch != vision_tokenizer.feature_width) {
        throw std::invalid_argument("config: decoder cond channels != tokenizer feature width");
    }
    if (backbone.context_length < 732) {
        throw std::invalid_argument("config: context must hold a full 729-token vision span");
    }
    if (guidance.scale < 1.0) {
        throw std::invalid_argument("config: guidance scale must be >= 1");
    }
    if (budget_scale <= 0 || batch_size < 1 || learning_rate <= 0) {
        throw std::invalid_argument("config: bad training scalars");
    }
}

namespace {

json dit_to_json(const DitConfig& d) {
    return json{{"width", d.width},
                {"blocks", d.blocks},
                {"heads", d.heads},
                {"latent_ch", d.latent_ch},
                {"cond_ch", d.cond_ch},
                {"mode", d.mode == CondMode::channel_concat ? "channel_concat" : "prefix_attention"}};
}

DitConfig dit_from_json(const json& j) {
    DitConfig d;
    d.width = j.at("width");
    d.blocks = j.at("blocks");
    d.heads = j.at("heads");
    d.latent_ch = j.at("latent_ch");
    d.cond_ch = j.at("cond_ch");
    const std::string mode = j.at("mode");
    if (mode == "channel_concat") {
        d.mode = CondMode::channel_concat;
    } else if (mode == "prefix_attention") {
        d.mode = CondMode::prefix_attention;
    } else {
        throw std::invalid_argument("config: unknown cond mode " + mode);
    }
    return d;
}

}  // namespace

std::string RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["corpus_dir"] = corpus_dir;
    j["stages_file"] = stages_file;
    j["budget_scale"] = budget_scale;
    j["batch_size"] = batch_size;
    j["learning_rate"] = learning_rate;
    j["vocab"] = {{"special_tokens", special_tokens},
                  {"text_size", text_size},
                  {"vision_codebook_size", vision_codebook_size},
                  {"audio_codebook_size", audio_codebook_size}};
    j["fsq"] = {{"dims", fsq.dims}, {"levels_k", fsq.levels_k}, {"bound_scale", fsq.bound_scale}};
    j["backbone"] = {{"layers", backbone.layers},
                     {"hidden", backbone.hidden},
                     {"heads", backbone.heads},
                     {"context_length", backbone.context_length}};
    j["mtp"] = {{"enabled", mtp.enabled}, {"weight", mtp.weight}, {"extra_layers", mtp.extra_layers}};
    j["vision_tokenizer"] = {{"input_size", vision_tokenizer.input_size},
                             {"grid", vision_tokenizer.grid},
                             {"patch_stride", vision_tokenizer.patch_stride},
                             {"feature_width", vision_tokenizer.feature_width},
                             {"codebook_size", vision_tokenizer.codebook_size}};
    j["decoder_main"] = dit_to_json(decoder_main);
    j["decoder_bad"] = dit_to_json(decoder_bad);
    j["guidance_scale"] = guidance.scale;
    j["sample_steps"] = sample_steps;
    j["audio"] = {{"sample_rate", audio.sample_rate},
                  {"mel_bins", audio.mel_bins},
                  {"win_ms", audio.win_ms},
                  {"hop_ms", audio.hop_ms},
                  {"encoder_width", audio.encoder_width},
                  {"adapter_hidden_mult", audio.adapter_hidden_mult},
                  {"compress_window", audio.compress_window}};
    j["vocoder"] = {{"sample_rate", vocoder.sample_rate},
                    {"upsample_factors", vocoder.upsample_factors},
                    {"codebook_size", vocoder.codebook_size},
                    {"base_channels", vocoder.base_channels},
                    {"speaker_dim", vocoder.speaker_dim},
                    {"token_rate", vocoder.token_rate}};
    return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    RunConfig c;
    c.seed = j.at("seed");
    c.out_dir = j.at("out_dir");
    c.corpus_dir = j.at("corpus_dir");
    c.stages_file = j.at("stages_file");
    c.budget_scale = j.at("budget_scale");
    c.batch_size = j.at("batch_size");
    c.learning_rate = j.at("learning_rate");
    const auto& v = j.at("vocab");
    c.special_tokens = v.at("special_tokens").get<std::vector<std::string>>();
    c.text_size = v.at("text_size");
    c.vision_codebook_size = v.at("vision_codebook_size");
    c.audio_codebook_size = v.at("audio_codebook_size");
    const auto& f = j.at("fsq");
    c.fsq = {f.at("dims"), f.at("levels_k"), f.at("bound_scale")};
    const auto& b = j.at("backbone");
    c.backbone = {b.at("layers"), b.at("hidden"), b.at("heads"), b.at("context_length")};
    const auto& m = j.at("mtp");
    c.mtp = {m.at("enabled"), m.at("weight"), m.at("extra_layers")};
    const auto& vt = j.at("vision_tokenizer");
    c.vision_tokenizer = {vt.at("input_size"), vt.at("grid"), vt.at("patch_stride"),
                          vt.at("feature_width"), vt.at("codebook_size")};
    c.decoder_main = dit_from_json(j.at("decoder_main"));
    c.decoder_bad = dit_from_json(j.at("decoder_bad"));
    c.guidance = {j.at("guidance_scale")};
    c.sample_steps = j.at("sample_steps");
    const auto& a = j.at("audio");
    c.audio = {a.at("sample_rate"), a.at("mel_bins"),    a.at("win_ms"),
               a.at("hop_ms"),      a.at("encoder_width"), a.at("adapter_hidden_mult"),
               a.at("compress_window")};
    const auto& vc = j.at("vocoder");
    c.vocoder.sample_rate = vc.at("sample_rate");
    c.vocoder.upsample_factors = vc.at("upsample_factors").get<std::vector<int>>();
    c.vocoder.codebook_size = vc.at("codebook_size");
    c.vocoder.base_channels = vc.at("base_channels");
    c.vocoder.speaker_dim = vc.at("speaker_dim");
    c.vocoder.token_rate = vc.at("token_rate");
    return c;
}

bool config_equal(const RunConfig& a, const RunConfig& b) {
    return json::parse(a.to_json()) == json::parse(b.to_json());
}

}  // namespace omni
