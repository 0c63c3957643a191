#include "omni/vocoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "omni/encoders.hpp"

namespace omni {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kLogEps = 1e-5;
constexpr double kWaveWeight = 1.0;
constexpr double kSpecWeight = 1.0;

struct StftPlan {
    int n_fft;
    int hop;
    std::vector<double> window;
    std::vector<double> cos_tab;  // [n_bins, n_fft]
    std::vector<double> sin_tab;
    int n_bins;

    StftPlan(int n_fft_, int hop_) : n_fft(n_fft_), hop(hop_), n_bins(n_fft_ / 2 + 1) {
        window.resize(size_t(n_fft));
        for (int i = 0; i < n_fft; ++i) {
            window[size_t(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / (n_fft - 1));
        }
        cos_tab.resize(size_t(n_bins) * n_fft);
        sin_tab.resize(size_t(n_bins) * n_fft);
        for (int k = 0; k < n_bins; ++k) {
            for (int n = 0; n < n_fft; ++n) {
                const double a = 2.0 * kPi * k * n / n_fft;
                cos_tab[size_t(k) * n_fft + n] = std::cos(a);
                sin_tab[size_t(k) * n_fft + n] = std::sin(a);
            }
        }
    }

    int frames(size_t len) const { return len < size_t(n_fft) ? 1 : int((len - n_fft) / hop) + 1; }

    // magnitudes [frames, n_bins]; per-frame windowed DFT via the tables
    void magnitudes(const std::vector<double>& x, std::vector<double>& mags,
                    std::vector<double>& re, std::vector<double>& im) const {
        const int nf = frames(x.size());
        mags.assign(size_t(nf) * n_bins, 0.0);
        re.assign(size_t(nf) * n_bins, 0.0);
        im.assign(size_t(nf) * n_bins, 0.0);
        for (int f = 0; f < nf; ++f) {
            const size_t base = size_t(f) * hop;
            for (int k = 0; k < n_bins; ++k) {
                double r = 0.0, q = 0.0;
                const double* ct = cos_tab.data() + size_t(k) * n_fft;
                const double* st = sin_tab.data() + size_t(k) * n_fft;
                for (int n = 0; n < n_fft; ++n) {
                    const size_t idx = base + size_t(n);
                    const double v = idx < x.size() ? x[idx] * window[size_t(n)] : 0.0;
                    r += v * ct[n];
                    q -= v * st[n];
                }
                re[size_t(f) * n_bins + k] = r;
                im[size_t(f) * n_bins + k] = q;
                mags[size_t(f) * n_bins + k] = std::sqrt(r * r + q * q);
            }
        }
    }
};

const std::vector<StftPlan>& stft_plans() {
    static const std::vector<StftPlan> plans = [] {
        std::vector<StftPlan> p;
        p.emplace_back(128, 32);
        p.emplace_back(256, 64);
        p.emplace_back(512, 128);
        return p;
    }();
    return plans;
}

}  // namespace

SpectralLossResult spectral_l1_loss(const std::vector<double>& x, const std::vector<double>& y,
                                    bool want_grad) {
    if (x.size() != y.size()) throw std::invalid_argument("spectral loss: length mismatch");
    SpectralLossResult res;
    if (want_grad) res.grad.assign(x.size(), 0.0);

    // waveform L1
    const double inv_n = 1.0 / double(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        res.loss += kWaveWeight * std::abs(d) * inv_n;
        if (want_grad) res.grad[i] += kWaveWeight * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) * inv_n;
    }

    std::vector<double> mx, rex, imx, my, rey, imy;
    for (const auto& plan : stft_plans()) {
        plan.magnitudes(x, mx, rex, imx);
        plan.magnitudes(y, my, rey, imy);
        const double inv_m = 1.0 / double(mx.size());
        const int nf = plan.frames(x.size());
        for (int f = 0; f < nf; ++f) {
            for (int k = 0; k < plan.n_bins; ++k) {
                const size_t idx = size_t(f) * plan.n_bins + k;
                const double lx = std::log(mx[idx] + kLogEps);
                const double ly = std::log(my[idx] + kLogEps);
                const double d = lx - ly;
                res.loss += kSpecWeight * std::abs(d) * inv_m / double(stft_plans().size());
                if (!want_grad) continue;
                const double dmag = kSpecWeight * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) * inv_m /
                                    (double(stft_plans().size()) * (mx[idx] + kLogEps));
                if (mx[idx] < 1e-12) continue;
                const double gre = dmag * rex[idx] / mx[idx];
                const double gim = dmag * imx[idx] / mx[idx];
                // adjoint of the windowed DFT frame
                const size_t base = size_t(f) * plan.hop;
                const double* ct = plan.cos_tab.data() + size_t(k) * plan.n_fft;
                const double* st = plan.sin_tab.data() + size_t(k) * plan.n_fft;
                for (int n = 0; n < plan.n_fft; ++n) {
                    const size_t xi = base + size_t(n);
                    if (xi >= x.size()) break;
                    res.grad[xi] += (gre * ct[n] - gim * st[n]) * plan.window[size_t(n)];
                }
            }
        }
    }
    return res;
}

int64_t VocoderConfig::samples_per_token() const {
    int64_t p = 1;
    for (int f : upsample_factors) p *= f;
    return p;
}

void VocoderConfig::validate() const {
    const int64_t expect = int64_t(std::llround(sample_rate * 0.040));
    if (samples_per_token() != expect) {
        throw std::invalid_argument("vocoder: upsample factors multiply to " +
                                    std::to_string(samples_per_token()) + ", need sample_rate*0.040 = " +
                                    std::to_string(expect));
    }
    if (sample_rate != token_rate * int(samples_per_token())) {
        throw std::invalid_argument("vocoder: token_rate * samples_per_token != sample_rate");
    }
    if (base_channels <= speaker_dim) {
        throw std::invalid_argument("vocoder: base_channels must exceed speaker_dim");
    }
}

SpeakerEmbedding speaker_embed(const std::vector<double>& reference_wav, int speaker_dim,
                               uint64_t seed) {
    if (reference_wav.size() < 8000) {  // 0.5 s at 16 kHz
        throw std::invalid_argument("speaker_embed: reference shorter than 0.5 s");
    }
    const MelFrames mel = log_mel(reference_wav);
    // statistics pooling: per-bin mean and stddev over time
    std::vector<double> stats(size_t(mel.bins) * 2, 0.0);
    for (int64_t f = 0; f < mel.frames; ++f) {
        for (int b = 0; b < mel.bins; ++b) stats[size_t(b)] += mel.data[size_t(f) * mel.bins + b];
    }
    for (int b = 0; b < mel.bins; ++b) stats[size_t(b)] /= double(mel.frames);
    for (int64_t f = 0; f < mel.frames; ++f) {
        for (int b = 0; b < mel.bins; ++b) {
            const double d = mel.data[size_t(f) * mel.bins + b] - stats[size_t(b)];
            stats[size_t(mel.bins) + b] += d * d;
        }
    }
    for (int b = 0; b < mel.bins; ++b) {
        stats[size_t(mel.bins) + b] = std::sqrt(stats[size_t(mel.bins) + b] / double(mel.frames));
    }
    // fixed seeded affine standing in for the pretrained extractor
    Rng rng(seed);
    SpeakerEmbedding emb;
    emb.v.assign(size_t(speaker_dim), 0.0);
    for (int j = 0; j < speaker_dim; ++j) {
        double acc = 0.0;
        for (size_t i = 0; i < stats.size(); ++i) acc += rng.normal() * stats[i];
        emb.v[size_t(j)] = acc;
    }
    double norm = 0.0;
    for (double v : emb.v) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 1e-12) norm = 1.0;
    for (double& v : emb.v) v /= norm;
    return emb;
}

// ----------------------------------------------------------- UnitVocoder

struct UnitVocoder::Fwd {
    std::vector<double> input;  // [base_channels, T0]
    struct StageFwd {
        std::vector<double> up_out, act1_out, res1_out, act2_out, res2_out, sum;
        int t_in = 0, t_out = 0;
    };
    std::vector<StageFwd> stages;
    std::vector<double> pre_out;
    std::vector<double> post_in;
    int t0 = 0;
};

UnitVocoder::UnitVocoder(const VocoderConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int code_ch = cfg.base_channels - cfg.speaker_dim;
    code_embed_ = std::make_unique<nn::Embedding>("vocoder.code_embed", cfg.codebook_size, code_ch,
                                                  rng, 0.5);
    pre_ = std::make_unique<nn::Conv1d>("vocoder.pre", cfg.base_channels, cfg.base_channels, 7, 1, 3,
                                        1, rng, -1.0);
    int ch = cfg.base_channels;
    for (size_t s = 0; s < cfg.upsample_factors.size(); ++s) {
        const int f = cfg.upsample_factors[size_t(s)];
        const int out_ch = std::max(8, ch / 2);
        Stage st;
        // kernel/pad pairs chosen so out = factor * in exactly
        const int k = f % 2 == 0 ? 2 * f : 3 * f;
        const int p = f % 2 == 0 ? f / 2 : f;
        const std::string base = "vocoder.stage" + std::to_string(s);
        st.up = std::make_unique<nn::ConvTranspose1d>(base + ".up", ch, out_ch, k, f, p, rng, -1.0);
        st.act1 = std::make_unique<nn::Snake>(base + ".snake1", out_ch);
        st.res1 = std::make_unique<nn::Conv1d>(base + ".res1", out_ch, out_ch, 3, 1, 1, 1, rng, -1.0);
        st.act2 = std::make_unique<nn::Snake>(base + ".snake2", out_ch);
        st.res2 = std::make_unique<nn::Conv1d>(base + ".res2", out_ch, out_ch, 3, 1, 3, 3, rng, -1.0);
        stages_.push_back(std::move(st));
        ch = out_ch;
    }
    post_ = std::make_unique<nn::Conv1d>("vocoder.post", ch, 1, 7, 1, 3, 1, rng, -1.0);
}

void UnitVocoder::forward_impl(const std::vector<FsqCode>& codes, const SpeakerEmbedding& spk,
                               std::vector<double>& wav_out, Fwd* cache) const {
    if (codes.empty()) throw std::invalid_argument("synthesize: empty code sequence");
    if (int(spk.v.size()) != cfg_.speaker_dim) throw std::invalid_argument("synthesize: speaker dim mismatch");
    const int t0 = int(codes.size());
    const int code_ch = cfg_.base_channels - cfg_.speaker_dim;
    Fwd local;
    Fwd& fw = cache != nullptr ? *cache : local;
    fw.t0 = t0;

    // channels-first input: code embedding rows then the broadcast speaker embedding
    fw.input.assign(size_t(cfg_.base_channels) * t0, 0.0);
    std::vector<double> row(static_cast<size_t>(code_ch));
    for (int t = 0; t < t0; ++t) {
        if (codes[size_t(t)].value < 0 || codes[size_t(t)].value >= cfg_.codebook_size) {
            throw std::out_of_range("synthesize: code out of range");
        }
        code_embed_->forward_row(codes[size_t(t)].value, row.data());
        for (int c = 0; c < code_ch; ++c) fw.input[size_t(c) * t0 + t] = row[size_t(c)];
        for (int c = 0; c < cfg_.speaker_dim; ++c) {
            fw.input[size_t(code_ch + c) * t0 + t] = spk.v[size_t(c)];
        }
    }

    fw.pre_out.assign(size_t(cfg_.base_channels) * t0, 0.0);
    pre_->forward(fw.input.data(), t0, fw.pre_out.data());

    const std::vector<double>* cur = &fw.pre_out;
    int t = t0;
    fw.stages.resize(stages_.size());
    for (size_t s = 0; s < stages_.size(); ++s) {
        auto& st = stages_[s];
        auto& sf = fw.stages[s];
        sf.t_in = t;
        const int t_out = st.up->out_len(t);
        sf.t_out = t_out;
        const int out_ch = st.up->cout;
        sf.up_out.assign(size_t(out_ch) * t_out, 0.0);
        st.up->forward(cur->data(), t, sf.up_out.data());
        sf.act1_out.assign(sf.up_out.size(), 0.0);
        st.act1->forward(sf.up_out.data(), t_out, sf.act1_out.data());
        sf.res1_out.assign(sf.up_out.size(), 0.0);
        st.res1->forward(sf.act1_out.data(), t_out, sf.res1_out.data());
        sf.act2_out.assign(sf.up_out.size(), 0.0);
        st.act2->forward(sf.res1_out.data(), t_out, sf.act2_out.data());
        sf.res2_out.assign(sf.up_out.size(), 0.0);
        st.res2->forward(sf.act2_out.data(), t_out, sf.res2_out.data());
        sf.sum.resize(sf.up_out.size());
        kern::active().add(sf.up_out.data(), sf.res2_out.data(), sf.sum.data(), sf.sum.size());
        cur = &sf.sum;
        t = t_out;
    }
    fw.post_in = *cur;
    std::vector<double> out(size_t(t), 0.0);
    post_->forward(fw.post_in.data(), t, out.data());
    wav_out.resize(size_t(t));
    for (int i = 0; i < t; ++i) wav_out[size_t(i)] = std::tanh(out[size_t(i)]);
}

std::vector<double> UnitVocoder::synthesize(const std::vector<FsqCode>& codes,
                                            const SpeakerEmbedding& spk) const {
    std::vector<double> wav;
    forward_impl(codes, spk, wav, nullptr);
    return wav;
}

double UnitVocoder::train_step_grads(const std::vector<FsqCode>& codes,
                                     const std::vector<double>& target, const SpeakerEmbedding& spk) {
    const int64_t expect = int64_t(codes.size()) * cfg_.samples_per_token();
    if (std::llabs(int64_t(target.size()) - expect) > cfg_.samples_per_token()) {
        throw std::invalid_argument("train_step: target length differs by more than one token span");
    }
    Fwd fw;
    std::vector<double> wav;
    forward_impl(codes, spk, wav, &fw);
    const size_t n = std::min(wav.size(), target.size());
    std::vector<double> x(wav.begin(), wav.begin() + n);
    std::vector<double> y(target.begin(), target.begin() + n);
    auto sl = spectral_l1_loss(x, y, true);

    // back through tanh
    std::vector<double> dpost_out(wav.size(), 0.0);
    for (size_t i = 0; i < n; ++i) {
        dpost_out[i] = sl.grad[i] * (1.0 - wav[i] * wav[i]);
    }
    const int t_final = int(wav.size());
    std::vector<double> dcur(fw.post_in.size(), 0.0);
    post_->backward(fw.post_in.data(), t_final, dpost_out.data(), dcur.data());

    for (size_t s = stages_.size(); s-- > 0;) {
        auto& st = stages_[s];
        auto& sf = fw.stages[s];
        // residual: dcur splits into the up path and the conv path
        std::vector<double> dres2 = dcur;  // grad into res2 output
        std::vector<double> dact2(sf.act2_out.size(), 0.0);
        st.res2->backward(sf.act2_out.data(), sf.t_out, dres2.data(), dact2.data());
        std::vector<double> dres1(sf.res1_out.size(), 0.0);
        st.act2->backward(sf.res1_out.data(), sf.t_out, dact2.data(), dres1.data());
        std::vector<double> dact1(sf.act1_out.size(), 0.0);
        st.res1->backward(sf.act1_out.data(), sf.t_out, dres1.data(), dact1.data());
        std::vector<double> dup(sf.up_out.size(), 0.0);
        st.act1->backward(sf.up_out.data(), sf.t_out, dact1.data(), dup.data());
        kern::active().add(dup.data(), dcur.data(), dup.data(), dup.size());  // + residual skip
        std::vector<double> din(size_t(st.up->cin) * sf.t_in, 0.0);
        st.up->backward(s == 0 ? fw.pre_out.data() : fw.stages[s - 1].sum.data(), sf.t_in,
                        dup.data(), din.data());
        dcur.swap(din);
    }
    std::vector<double> dinput(fw.input.size(), 0.0);
    pre_->backward(fw.input.data(), fw.t0, dcur.data(), dinput.data());
    // code embedding rows (speaker embedding is an input, not a parameter)
    const int code_ch = cfg_.base_channels - cfg_.speaker_dim;
    std::vector<double> drow(static_cast<size_t>(code_ch));
    for (int t = 0; t < fw.t0; ++t) {
        for (int c = 0; c < code_ch; ++c) drow[size_t(c)] = dinput[size_t(c) * fw.t0 + t];
        code_embed_->backward_row(codes[size_t(t)].value, drow.data());
    }
    return sl.loss;
}

std::vector<Param*> UnitVocoder::params() {
    std::vector<Param*> ps;
    for (auto* p : code_embed_->params()) ps.push_back(p);
    for (auto* p : pre_->params()) ps.push_back(p);
    for (auto& st : stages_) {
        for (auto* p : st.up->params()) ps.push_back(p);
        for (auto* p : st.act1->params()) ps.push_back(p);
        for (auto* p : st.res1->params()) ps.push_back(p);
        for (auto* p : st.act2->params()) ps.push_back(p);
        for (auto* p : st.res2->params()) ps.push_back(p);
    }
    for (auto* p : post_->params()) ps.push_back(p);
    return ps;
}

std::vector<Param*> UnitVocoder::snake_params() {
    std::vector<Param*> ps;
    for (auto& st : stages_) {
        ps.push_back(&st.act1->alpha);
        ps.push_back(&st.act2->alpha);
    }
    return ps;
}

}  // namespace omni
