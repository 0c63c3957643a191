#include "omni/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>

namespace omni {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// iterative radix-2 FFT, n must be a power of two
void fft(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / double(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                const auto u = a[i + j];
                const auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// fixed sinusoidal position signal added to encoder features
void add_sin_pos(double* x, size_t n, int width) {
    for (size_t t = 0; t < n; ++t) {
        double* row = x + t * size_t(width);
        for (int j = 0; j < width; j += 2) {
            const double freq = std::pow(10000.0, -double(j) / width);
            row[j] += 0.1 * std::sin(double(t) * freq);
            if (j + 1 < width) row[j + 1] += 0.1 * std::cos(double(t) * freq);
        }
    }
}

}  // namespace

MelFrames log_mel(const std::vector<double>& wav, const MelConfig& cfg) {
    if (wav.empty()) throw std::invalid_argument("log_mel: empty waveform");
    const int win = cfg.sample_rate * cfg.win_ms / 1000;   // 400
    const int hop = cfg.sample_rate * cfg.hop_ms / 1000;   // 160
    size_t n_fft = 1;
    while (n_fft < size_t(win)) n_fft <<= 1;

    const int64_t frames = int64_t(wav.size()) / hop;
    MelFrames out;
    out.frames = std::max<int64_t>(frames, 1);
    out.bins = cfg.mel_bins;
    out.data.assign(size_t(out.frames) * cfg.mel_bins, 0.0);

    // triangular mel filter bank over [0, sr/2]
    const size_t n_bins = n_fft / 2 + 1;
    const double mel_lo = hz_to_mel(0.0);
    const double mel_hi = hz_to_mel(cfg.sample_rate / 2.0);
    std::vector<double> centers(size_t(cfg.mel_bins) + 2);
    for (size_t i = 0; i < centers.size(); ++i) {
        centers[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * double(i) / double(cfg.mel_bins + 1));
    }
    std::vector<double> hann(win);
    for (int i = 0; i < win; ++i) hann[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / (win - 1));

    std::vector<std::complex<double>> buf(n_fft);
    std::vector<double> power(n_bins);
    for (int64_t f = 0; f < out.frames; ++f) {
        const int64_t center = f * hop + hop / 2;
        for (size_t i = 0; i < n_fft; ++i) buf[i] = 0.0;
        for (int i = 0; i < win; ++i) {
            const int64_t s = center - win / 2 + i;
            const double v = (s >= 0 && s < int64_t(wav.size())) ? wav[size_t(s)] : 0.0;
            buf[size_t(i)] = v * hann[size_t(i)];
        }
        fft(buf);
        for (size_t i = 0; i < n_bins; ++i) power[i] = std::norm(buf[i]);
        double* row = out.data.data() + size_t(f) * cfg.mel_bins;
        for (int m = 0; m < cfg.mel_bins; ++m) {
            const double fl = centers[size_t(m)], fc = centers[size_t(m) + 1], fr = centers[size_t(m) + 2];
            double acc = 0.0;
            for (size_t i = 0; i < n_bins; ++i) {
                const double freq = double(i) * cfg.sample_rate / double(n_fft);
                double wgt = 0.0;
                if (freq > fl && freq < fc) {
                    wgt = (freq - fl) / (fc - fl);
                } else if (freq >= fc && freq < fr) {
                    wgt = (fr - freq) / (fr - fc);
                }
                acc += wgt * power[i];
            }
            row[m] = std::log(std::max(acc, 1e-10));
        }
    }
    return out;
}

// ------------------------------------------------------------ AudioEncoder

AudioEncoder::AudioEncoder(const std::string& name, int mel_bins, int width, uint64_t seed)
    : width_(width) {
    Rng rng(seed);
    conv1_ = std::make_unique<nn::Conv1d>(name + ".conv1", mel_bins, width, 4, 2, 1, 1, rng, -1.0);
    conv2_ = std::make_unique<nn::Conv1d>(name + ".conv2", width, width, 4, 2, 1, 1, rng, -1.0);
    blk1_ = std::make_unique<nn::TransformerBlock>(name + ".blk1", width, 4, false, false, rng, 0.05);
    blk2_ = std::make_unique<nn::TransformerBlock>(name + ".blk2", width, 4, false, false, rng, 0.05);
}

std::vector<double> AudioEncoder::forward(const MelFrames& mel) const {
    if (mel.frames < 4) throw std::invalid_argument("encode_audio: need at least 4 mel frames");
    // transpose to channels-first [bins, T] for the convs
    const int64_t t0 = mel.frames;
    std::vector<double> x(size_t(mel.bins) * t0);
    for (int64_t t = 0; t < t0; ++t) {
        for (int b = 0; b < mel.bins; ++b) x[size_t(b) * t0 + t] = mel.data[size_t(t) * mel.bins + b];
    }
    const int64_t t1 = t0 / 2;
    std::vector<double> h1(size_t(width_) * t1);
    conv1_->forward(x.data(), int(t0), h1.data());
    for (auto& v : h1) v = nn::gelu(v);
    const int64_t t2 = t1 / 2;
    std::vector<double> h2(size_t(width_) * t2);
    conv2_->forward(h1.data(), int(t1), h2.data());
    for (auto& v : h2) v = nn::gelu(v);
    // back to time-major [T, width] for attention
    std::vector<double> seq(size_t(t2) * width_);
    for (int64_t t = 0; t < t2; ++t) {
        for (int c = 0; c < width_; ++c) seq[size_t(t) * width_ + c] = h2[size_t(c) * t2 + t];
    }
    add_sin_pos(seq.data(), size_t(t2), width_);
    nn::TransformerBlock::Cache cache;
    blk1_->forward(seq.data(), size_t(t2), cache);
    blk2_->forward(seq.data(), size_t(t2), cache);
    return seq;
}

std::vector<Param*> AudioEncoder::params() {
    std::vector<Param*> ps;
    for (auto* p : conv1_->params()) ps.push_back(p);
    for (auto* p : conv2_->params()) ps.push_back(p);
    for (auto* p : blk1_->params()) ps.push_back(p);
    for (auto* p : blk2_->params()) ps.push_back(p);
    return ps;
}

// ------------------------------------------------------------ AudioAdapter

AudioAdapter::AudioAdapter(const std::string& name, int in_width, int out_width, int hidden_mult,
                           Rng& rng) {
    const int hidden = out_width * hidden_mult;
    fc1_ = std::make_unique<nn::Linear>(name + ".fc1", in_width, hidden, true, rng, -1.0);
    fc2_ = std::make_unique<nn::Linear>(name + ".fc2", hidden, out_width, true, rng, -1.0);
    // non-zero biases so the zero-input analytic check is non-trivial
    rng.fill_normal(fc1_->b.w.ptr(), fc1_->b.w.numel(), 0.02);
    rng.fill_normal(fc2_->b.w.ptr(), fc2_->b.w.numel(), 0.02);
}

void AudioAdapter::forward(const double* x, size_t n, double* out, Cache& cache) const {
    if (n == 0) throw std::invalid_argument("adapt_audio: empty input");
    cache.n = n;
    cache.x.assign(x, x + n * size_t(fc1_->in_dim));
    cache.pre.resize(n * size_t(fc1_->out_dim));
    fc1_->forward(x, n, cache.pre.data());
    cache.post.resize(cache.pre.size());
    for (size_t i = 0; i < cache.pre.size(); ++i) cache.post[i] = nn::gelu(cache.pre[i]);
    fc2_->forward(cache.post.data(), n, out);
}

void AudioAdapter::backward(const Cache& cache, const double* dout, double* dx) {
    std::vector<double> dpost(cache.post.size(), 0.0);
    fc2_->backward(cache.post.data(), dout, cache.n, dpost.data());
    for (size_t i = 0; i < dpost.size(); ++i) dpost[i] *= nn::gelu_grad(cache.pre[i]);
    fc1_->backward(cache.x.data(), dpost.data(), cache.n, dx);
}

std::vector<Param*> AudioAdapter::params() {
    std::vector<Param*> ps;
    for (auto* p : fc1_->params()) ps.push_back(p);
    for (auto* p : fc2_->params()) ps.push_back(p);
    return ps;
}

// --------------------------------------------------------- AudioCompressor

AudioCompressor::AudioCompressor(const std::string& name, int width, int window, Rng& rng)
    : width_(width), window_(window) {
    gate_ = std::make_unique<Param>(name + ".gate", std::vector<int64_t>{width});
    gate_->init_normal(rng, 0.1);
    proj_ = std::make_unique<nn::Linear>(name + ".proj", width, width, true, rng, -1.0);
}

void AudioCompressor::forward(const double* x, size_t n, double* out, Cache& cache) const {
    if (n == 0) throw std::invalid_argument("compress_audio: empty input");
    const size_t n_out = size_t(out_len(int64_t(n)));
    cache.n = n;
    cache.x.assign(x, x + n * size_t(width_));
    cache.alphas.assign(n_out, {});
    cache.pooled.assign(n_out * size_t(width_), 0.0);
    for (size_t wdx = 0; wdx < n_out; ++wdx) {
        const size_t lo = wdx * size_t(window_);
        const size_t hi = std::min(n, lo + size_t(window_));
        auto& alpha = cache.alphas[wdx];
        alpha.resize(hi - lo);
        for (size_t i = lo; i < hi; ++i) {
            alpha[i - lo] = kern::active().dot(x + i * size_t(width_), gate_->w.ptr(), size_t(width_));
        }
        nn::softmax_rows(alpha.data(), 1, alpha.size());
        double* pooled = cache.pooled.data() + wdx * size_t(width_);
        for (size_t i = lo; i < hi; ++i) {
            kern::active().axpy(alpha[i - lo], x + i * size_t(width_), pooled, size_t(width_));
        }
    }
    proj_->forward(cache.pooled.data(), n_out, out);
}

void AudioCompressor::backward(const Cache& cache, const double* dout, double* dx) {
    const size_t n_out = cache.alphas.size();
    std::vector<double> dpooled(cache.pooled.size(), 0.0);
    proj_->backward(cache.pooled.data(), dout, n_out, dpooled.data());
    for (size_t wdx = 0; wdx < n_out; ++wdx) {
        const size_t lo = wdx * size_t(window_);
        const auto& alpha = cache.alphas[wdx];
        const double* dp = dpooled.data() + wdx * size_t(width_);
        // dalpha_i = dp . x_i ; softmax jacobian back to scores; dscore_i feeds
        // both the gate vector and x_i
        std::vector<double> dalpha(alpha.size());
        double dot_da = 0.0;
        for (size_t j = 0; j < alpha.size(); ++j) {
            dalpha[j] = kern::active().dot(dp, cache.x.data() + (lo + j) * size_t(width_), size_t(width_));
            dot_da += dalpha[j] * alpha[j];
        }
        for (size_t j = 0; j < alpha.size(); ++j) {
            const double dscore = alpha[j] * (dalpha[j] - dot_da);
            const double* xj = cache.x.data() + (lo + j) * size_t(width_);
            kern::active().axpy(dscore, xj, gate_->g.ptr(), size_t(width_));
            if (dx != nullptr) {
                double* dxj = dx + (lo + j) * size_t(width_);
                kern::active().axpy(dscore, gate_->w.ptr(), dxj, size_t(width_));
                kern::active().axpy(alpha[j], dp, dxj, size_t(width_));
            }
        }
    }
}

std::vector<Param*> AudioCompressor::params() {
    std::vector<Param*> ps{gate_.get()};
    for (auto* p : proj_->params()) ps.push_back(p);
    return ps;
}

// ------------------------------------------------------------ VisionEncoder

VisionEncoder::VisionEncoder(const std::string& name, int enc_width, int backbone_width, Rng& rng)
    : enc_width_(enc_width) {
    embed_ = std::make_unique<nn::Linear>(name + ".embed", kPatch * kPatch * 3, enc_width, true, rng, -1.0);
    adapter_ = std::make_unique<nn::Linear>(name + ".adapter", enc_width, backbone_width, true, rng, -1.0);
}

namespace {

// aspect-preserving output grid with out_h*out_w <= target
std::pair<int, int> fit_grid(int gh, int gw, int64_t target) {
    if (int64_t(gh) * gw <= target) return {gh, gw};
    const double scale = std::sqrt(double(target) / (double(gh) * gw));
    int oh = std::max(1, int(gh * scale));
    int ow = std::max(1, int(gw * scale));
    while (int64_t(oh) * ow > target) {
        if (oh >= ow && oh > 1) {
            --oh;
        } else if (ow > 1) {
            --ow;
        } else {
            break;
        }
    }
    return {oh, ow};
}

// adaptive average pooling ranges (works for output <= or >= input)
std::pair<int, int> pool_range(int out_idx, int out_n, int in_n) {
    const int lo = int(int64_t(out_idx) * in_n / out_n);
    int hi = int((int64_t(out_idx) + 1) * in_n + out_n - 1) / out_n;
    hi = std::min(hi, in_n);
    return {lo, std::max(hi, lo + 1)};
}

}  // namespace

std::vector<double> VisionEncoder::encode_image(const ImageBuffer& img, int64_t budget,
                                                Cache& cache) const {
    if (budget < 1) throw std::invalid_argument("encode_image: budget < 1");
    const int gh = (img.height + kPatch - 1) / kPatch;
    const int gw = (img.width + kPatch - 1) / kPatch;
    const int np = gh * gw;
    cache.grid_h = gh;
    cache.grid_w = gw;
    cache.patches.assign(size_t(np) * kPatch * kPatch * 3, 0.0);
    for (int py = 0; py < gh; ++py) {
        for (int px = 0; px < gw; ++px) {
            double* dst = cache.patches.data() + (size_t(py) * gw + px) * kPatch * kPatch * 3;
            for (int dy = 0; dy < kPatch; ++dy) {
                for (int dx = 0; dx < kPatch; ++dx) {
                    const int x = px * kPatch + dx;
                    const int y = py * kPatch + dy;
                    if (x < img.width && y < img.height) {
                        const double* s = img.px(x, y);
                        double* d = dst + 3 * (size_t(dy) * kPatch + dx);
                        d[0] = s[0];
                        d[1] = s[1];
                        d[2] = s[2];
                    }
                }
            }
        }
    }
    cache.embedded.resize(size_t(np) * enc_width_);
    embed_->forward(cache.patches.data(), size_t(np), cache.embedded.data());
    add_sin_pos(cache.embedded.data(), size_t(np), enc_width_);

    const auto [oh, ow] = fit_grid(gh, gw, budget);
    cache.out_h = oh;
    cache.out_w = ow;
    const int n_out = oh * ow;
    cache.pooled.assign(size_t(n_out) * enc_width_, 0.0);
    cache.pool_src.assign(size_t(n_out), {});
    for (int oy = 0; oy < oh; ++oy) {
        const auto [ylo, yhi] = pool_range(oy, oh, gh);
        for (int ox = 0; ox < ow; ++ox) {
            const auto [xlo, xhi] = pool_range(ox, ow, gw);
            auto& src = cache.pool_src[size_t(oy) * ow + ox];
            double* dst = cache.pooled.data() + (size_t(oy) * ow + ox) * enc_width_;
            for (int y = ylo; y < yhi; ++y) {
                for (int x = xlo; x < xhi; ++x) {
                    src.push_back(y * gw + x);
                    kern::active().axpy(1.0, cache.embedded.data() + size_t(y * gw + x) * enc_width_,
                                        dst, size_t(enc_width_));
                }
            }
            kern::active().scale(1.0 / double(src.size()), dst, size_t(enc_width_));
        }
    }
    std::vector<double> out(size_t(n_out) * adapter_->out_dim);
    adapter_->forward(cache.pooled.data(), size_t(n_out), out.data());
    return out;
}

std::vector<double> VisionEncoder::encode_video(const std::vector<ImageBuffer>& frames,
                                                int64_t budget, std::vector<Cache>& caches) const {
    if (budget < 1) throw std::invalid_argument("encode_video: budget < 1");
    if (frames.empty()) throw std::invalid_argument("encode_video: no frames");
    const int64_t per_frame = std::max<int64_t>(1, budget / int64_t(frames.size()));
    caches.resize(frames.size());
    std::vector<double> out;
    for (size_t i = 0; i < frames.size(); ++i) {
        const auto emb = encode_image(frames[i], per_frame, caches[i]);
        out.insert(out.end(), emb.begin(), emb.end());
    }
    return out;
}

void VisionEncoder::backward(const Cache& cache, const double* dout) {
    const int n_out = cache.out_h * cache.out_w;
    std::vector<double> dpooled(size_t(n_out) * enc_width_, 0.0);
    adapter_->backward(cache.pooled.data(), dout, size_t(n_out), dpooled.data());
    const int np = cache.grid_h * cache.grid_w;
    std::vector<double> dembed(size_t(np) * enc_width_, 0.0);
    for (int o = 0; o < n_out; ++o) {
        const auto& src = cache.pool_src[size_t(o)];
        const double inv = 1.0 / double(src.size());
        for (int s : src) {
            kern::active().axpy(inv, dpooled.data() + size_t(o) * enc_width_,
                                dembed.data() + size_t(s) * enc_width_, size_t(enc_width_));
        }
    }
    // position signal is additive and fixed; gradient passes straight through
    embed_->backward(cache.patches.data(), dembed.data(), size_t(np), nullptr);
}

std::vector<Param*> VisionEncoder::params() {
    std::vector<Param*> ps;
    for (auto* p : embed_->params()) ps.push_back(p);
    for (auto* p : adapter_->params()) ps.push_back(p);
    return ps;
}

std::vector<Param*> VisionEncoder::adapter_params() {
    std::vector<Param*> ps;
    for (auto* p : adapter_->params()) ps.push_back(p);
    return ps;
}

// ------------------------------------------------------------ AudioTokenizer

AudioTokenizer::AudioTokenizer(const std::string& name, const FsqConfig& cfg, int mel_bins,
                               int width, uint64_t seed) {
    enc_ = std::make_unique<AudioEncoder>(name + ".enc", mel_bins, width, seed);
    Rng rng(seed ^ 0x5eedf00dull);
    proj_ = std::make_unique<FsqProjection>(name + ".proj", width, cfg, rng);
}

std::vector<FsqCode> AudioTokenizer::codes(const std::vector<double>& wav) const {
    const auto mel = log_mel(wav);
    const auto feats = enc_->forward(mel);
    const size_t n = feats.size() / size_t(enc_->width());
    return proj_->encode(feats.data(), n);
}

std::vector<uint16_t> AudioTokenizer::codes_u16(const std::vector<double>& wav) const {
    const auto cs = codes(wav);
    std::vector<uint16_t> out(cs.size());
    for (size_t i = 0; i < cs.size(); ++i) out[i] = uint16_t(cs[i].value);
    return out;
}

std::vector<Param*> AudioTokenizer::params() {
    auto ps = enc_->params();
    for (auto* p : proj_->params()) ps.push_back(p);
    return ps;
}

}  // namespace omni
