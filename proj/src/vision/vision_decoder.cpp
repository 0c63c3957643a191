#include "omni/vision_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace omni {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

void add_sin_pos_2d(double* x, int h, int w, int width) {
    for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
            double* row = x + (size_t(y) * w + xx) * width;
            const int half = width / 2;
            for (int j = 0; j < half; j += 2) {
                const double f = std::pow(10000.0, -double(j) / half);
                row[j] += 0.1 * std::sin(y * f);
                if (j + 1 < half) row[j + 1] += 0.1 * std::cos(y * f);
            }
            for (int j = half; j < width; j += 2) {
                const double f = std::pow(10000.0, -double(j - half) / half);
                row[j] += 0.1 * std::sin(xx * f);
                if (j + 1 < width) row[j + 1] += 0.1 * std::cos(xx * f);
            }
        }
    }
}

std::vector<double> time_features(double t, int width) {
    std::vector<double> f(static_cast<size_t>(width));
    for (int j = 0; j < width; j += 2) {
        const double freq = std::pow(1000.0, -double(j) / width);
        f[size_t(j)] = std::sin(t * freq * 2.0 * kPi);
        if (j + 1 < width) f[size_t(j) + 1] = std::cos(t * freq * 2.0 * kPi);
    }
    return f;
}

}  // namespace

LatentGrid pixels_to_latent(const ImageBuffer& img, int spatial_factor) {
    LatentGrid lat;
    lat.ch = 3;
    lat.h = (img.height + spatial_factor - 1) / spatial_factor;
    lat.w = (img.width + spatial_factor - 1) / spatial_factor;
    lat.data.assign(size_t(lat.ch) * lat.h * lat.w, 0.0);
    for (int c = 0; c < 3; ++c) {
        for (int ly = 0; ly < lat.h; ++ly) {
            for (int lx = 0; lx < lat.w; ++lx) {
                double acc = 0.0;
                int cnt = 0;
                for (int dy = 0; dy < spatial_factor; ++dy) {
                    for (int dx = 0; dx < spatial_factor; ++dx) {
                        const int x = lx * spatial_factor + dx;
                        const int y = ly * spatial_factor + dy;
                        if (x < img.width && y < img.height) {
                            acc += img.px(x, y)[c];
                            ++cnt;
                        }
                    }
                }
                // centered around 0 so the flow operates on roughly unit data
                lat.data[(size_t(c) * lat.h + ly) * lat.w + lx] = 2.0 * (acc / cnt) - 1.0;
            }
        }
    }
    return lat;
}

ImageBuffer latent_to_pixels(const LatentGrid& lat, int pix_w, int pix_h, int spatial_factor) {
    // latent cells as an image, bilinear up, exact output dims
    ImageBuffer small(lat.w, lat.h);
    for (int y = 0; y < lat.h; ++y) {
        for (int x = 0; x < lat.w; ++x) {
            double* p = small.px(x, y);
            for (int c = 0; c < 3; ++c) {
                const double v = lat.data[(size_t(c) * lat.h + y) * lat.w + x];
                p[c] = std::clamp(0.5 * (v + 1.0), 0.0, 1.0);
            }
        }
    }
    (void)spatial_factor;
    ImageBuffer out = resize_bilinear(small, pix_w, pix_h);
    out.orig_width = pix_w;
    out.orig_height = pix_h;
    return out;
}

CondGrid tokens_to_cond(const VisionTokenizer& tok, const VisionTokGrid& grid, int target_h,
                        int target_w) {
    if (target_h < 1 || target_w < 1) throw std::invalid_argument("tokens_to_cond: zero target dims");
    const FeatureGrid feats = tok.detokenize(grid);
    CondGrid cond;
    cond.ch = feats.c;
    cond.h = target_h;
    cond.w = target_w;
    cond.data.assign(size_t(cond.ch) * target_h * target_w, 0.0);
    const double sy = double(feats.h) / target_h;
    const double sx = double(feats.w) / target_w;
    for (int y = 0; y < target_h; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        const int y0 = std::clamp(int(std::floor(fy)), 0, feats.h - 1);
        const int y1 = std::min(y0 + 1, feats.h - 1);
        const double wy = std::clamp(fy - y0, 0.0, 1.0);
        for (int x = 0; x < target_w; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            const int x0 = std::clamp(int(std::floor(fx)), 0, feats.w - 1);
            const int x1 = std::min(x0 + 1, feats.w - 1);
            const double wx = std::clamp(fx - x0, 0.0, 1.0);
            for (int c = 0; c < feats.c; ++c) {
                const double v00 = feats.data[(size_t(y0) * feats.w + x0) * feats.c + c];
                const double v10 = feats.data[(size_t(y0) * feats.w + x1) * feats.c + c];
                const double v01 = feats.data[(size_t(y1) * feats.w + x0) * feats.c + c];
                const double v11 = feats.data[(size_t(y1) * feats.w + x1) * feats.c + c];
                const double top = v00 * (1 - wx) + v10 * wx;
                const double bot = v01 * (1 - wx) + v11 * wx;
                cond.data[(size_t(c) * target_h + y) * target_w + x] = top * (1 - wy) + bot * wy;
            }
        }
    }
    return cond;
}

// ---------------------------------------------------------------------- Dit

struct Dit::Fwd {
    std::vector<double> tokens_in;  // pre-projection per-token inputs
    std::vector<double> seq0;       // post input-proj + pos + time
    std::vector<double> time_feat, time_pre, time_post;
    std::vector<nn::TransformerBlock::Cache> blocks;
    std::vector<double> final_in;
    std::vector<double> normed;
    std::vector<double> inv_rms;
    size_t n_lat = 0, n_prefix = 0;
};

Dit::Dit(const std::string& name, const DitConfig& cfg, uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    if (cfg.mode == CondMode::channel_concat) {
        in_proj_ = std::make_unique<nn::Linear>(name + ".in_proj", cfg.latent_ch + cfg.cond_ch,
                                                cfg.width, true, rng, -1.0);
    } else {
        lat_proj_ = std::make_unique<nn::Linear>(name + ".lat_proj", cfg.latent_ch, cfg.width, true,
                                                 rng, -1.0);
        cond_proj_ = std::make_unique<nn::Linear>(name + ".cond_proj", cfg.cond_ch, cfg.width, false,
                                                  rng, -1.0);
    }
    time_fc1_ = std::make_unique<nn::Linear>(name + ".time_fc1", cfg.width, cfg.width, true, rng, -1.0);
    time_fc2_ = std::make_unique<nn::Linear>(name + ".time_fc2", cfg.width, cfg.width, true, rng, -1.0);
    for (int b = 0; b < cfg.blocks; ++b) {
        blocks_.push_back(std::make_unique<nn::TransformerBlock>(
            name + ".block" + std::to_string(b), cfg.width, cfg.heads, false, false, rng, 0.02));
    }
    out_norm_ = std::make_unique<nn::RmsNorm>(name + ".out_norm", cfg.width);
    out_proj_ = std::make_unique<nn::Linear>(name + ".out_proj", cfg.width, cfg.latent_ch, true, rng, 0.02);
}

void Dit::forward_impl(const LatentGrid& x, const CondGrid& cond, double t, LatentGrid& out,
                       Fwd* cache) const {
    if (x.h != cond.h || x.w != cond.w) {
        throw std::invalid_argument("dit: latent and cond spatial shapes differ");
    }
    if (x.ch != cfg_.latent_ch || cond.ch != cfg_.cond_ch) {
        throw std::invalid_argument("dit: channel count mismatch");
    }
    const size_t n_lat = size_t(x.h) * x.w;
    const size_t n_prefix = cfg_.mode == CondMode::prefix_attention ? n_lat : 0;
    const size_t n_tok = n_lat + n_prefix;
    Fwd local;
    Fwd& fw = cache != nullptr ? *cache : local;
    fw.n_lat = n_lat;
    fw.n_prefix = n_prefix;

    fw.seq0.assign(n_tok * size_t(cfg_.width), 0.0);
    if (cfg_.mode == CondMode::channel_concat) {
        fw.tokens_in.assign(n_lat * size_t(cfg_.latent_ch + cfg_.cond_ch), 0.0);
        for (size_t i = 0; i < n_lat; ++i) {
            double* row = fw.tokens_in.data() + i * (cfg_.latent_ch + cfg_.cond_ch);
            for (int c = 0; c < cfg_.latent_ch; ++c) row[c] = x.data[size_t(c) * n_lat + i];
            for (int c = 0; c < cfg_.cond_ch; ++c) {
                row[cfg_.latent_ch + c] = cond.data[size_t(c) * n_lat + i];
            }
        }
        in_proj_->forward(fw.tokens_in.data(), n_lat, fw.seq0.data());
    } else {
        // prefix tokens first (cond), then latent tokens
        fw.tokens_in.assign(n_lat * size_t(cfg_.latent_ch + cfg_.cond_ch), 0.0);
        for (size_t i = 0; i < n_lat; ++i) {
            double* row = fw.tokens_in.data() + i * (cfg_.latent_ch + cfg_.cond_ch);
            for (int c = 0; c < cfg_.cond_ch; ++c) row[c] = cond.data[size_t(c) * n_lat + i];
            for (int c = 0; c < cfg_.latent_ch; ++c) {
                row[cfg_.cond_ch + c] = x.data[size_t(c) * n_lat + i];
            }
        }
        // cond rows -> prefix positions, latent rows -> tail positions
        std::vector<double> cond_rows(n_lat * size_t(cfg_.cond_ch));
        std::vector<double> lat_rows(n_lat * size_t(cfg_.latent_ch));
        for (size_t i = 0; i < n_lat; ++i) {
            const double* row = fw.tokens_in.data() + i * (cfg_.latent_ch + cfg_.cond_ch);
            std::copy(row, row + cfg_.cond_ch, cond_rows.begin() + i * cfg_.cond_ch);
            std::copy(row + cfg_.cond_ch, row + cfg_.cond_ch + cfg_.latent_ch,
                      lat_rows.begin() + i * cfg_.latent_ch);
        }
        cond_proj_->forward(cond_rows.data(), n_lat, fw.seq0.data());
        lat_proj_->forward(lat_rows.data(), n_lat, fw.seq0.data() + n_prefix * size_t(cfg_.width));
    }
    add_sin_pos_2d(fw.seq0.data(), x.h, x.w, cfg_.width);
    if (n_prefix > 0) add_sin_pos_2d(fw.seq0.data() + n_prefix * size_t(cfg_.width), x.h, x.w, cfg_.width);

    // time conditioning added to every token
    fw.time_feat = time_features(t, cfg_.width);
    fw.time_pre.resize(size_t(cfg_.width));
    time_fc1_->forward(fw.time_feat.data(), 1, fw.time_pre.data());
    fw.time_post.resize(size_t(cfg_.width));
    for (int j = 0; j < cfg_.width; ++j) fw.time_post[size_t(j)] = nn::gelu(fw.time_pre[size_t(j)]);
    std::vector<double> time_emb(size_t(cfg_.width));
    time_fc2_->forward(fw.time_post.data(), 1, time_emb.data());
    for (size_t i = 0; i < n_tok; ++i) {
        kern::active().axpy(1.0, time_emb.data(), fw.seq0.data() + i * size_t(cfg_.width),
                            size_t(cfg_.width));
    }

    std::vector<double> seq = fw.seq0;
    fw.blocks.resize(blocks_.size());
    for (size_t b = 0; b < blocks_.size(); ++b) {
        blocks_[b]->forward(seq.data(), n_tok, fw.blocks[b]);
    }
    fw.final_in = seq;
    fw.normed.resize(n_tok * size_t(cfg_.width));
    out_norm_->forward(seq.data(), n_tok, fw.normed.data(), fw.inv_rms);
    std::vector<double> head(n_tok * size_t(cfg_.latent_ch));
    out_proj_->forward(fw.normed.data(), n_tok, head.data());

    out.ch = cfg_.latent_ch;
    out.h = x.h;
    out.w = x.w;
    out.data.assign(size_t(out.ch) * n_lat, 0.0);
    for (size_t i = 0; i < n_lat; ++i) {
        const double* row = head.data() + (n_prefix + i) * size_t(cfg_.latent_ch);
        for (int c = 0; c < cfg_.latent_ch; ++c) out.data[size_t(c) * n_lat + i] = row[c];
    }
}

LatentGrid Dit::velocity(const LatentGrid& x, const CondGrid& cond, double t) const {
    LatentGrid v;
    forward_impl(x, cond, t, v, nullptr);
    return v;
}

double Dit::train_step_grads(const LatentGrid& x0, const CondGrid& cond, double t,
                             const std::vector<double>& noise) {
    if (noise.size() != x0.data.size()) throw std::invalid_argument("train_step: noise shape mismatch");
    LatentGrid xt = x0;
    for (size_t i = 0; i < xt.data.size(); ++i) {
        xt.data[i] = (1.0 - t) * x0.data[i] + t * noise[i];
    }
    Fwd fw;
    LatentGrid pred;
    forward_impl(xt, cond, t, pred, &fw);

    const size_t n_lat = fw.n_lat;
    const size_t n_tok = n_lat + fw.n_prefix;
    double loss = 0.0;
    std::vector<double> dhead(n_tok * size_t(cfg_.latent_ch), 0.0);
    const double inv_n = 1.0 / double(pred.data.size());
    for (size_t i = 0; i < n_lat; ++i) {
        for (int c = 0; c < cfg_.latent_ch; ++c) {
            const double target = noise[size_t(c) * n_lat + i] - x0.data[size_t(c) * n_lat + i];
            const double diff = pred.data[size_t(c) * n_lat + i] - target;
            loss += diff * diff * inv_n;
            dhead[(fw.n_prefix + i) * size_t(cfg_.latent_ch) + c] = 2.0 * diff * inv_n;
        }
    }

    std::vector<double> dnormed(n_tok * size_t(cfg_.width), 0.0);
    out_proj_->backward(fw.normed.data(), dhead.data(), n_tok, dnormed.data());
    std::vector<double> dseq(n_tok * size_t(cfg_.width), 0.0);
    out_norm_->backward(fw.final_in.data(), fw.inv_rms, dnormed.data(), n_tok, dseq.data());
    for (size_t b = blocks_.size(); b-- > 0;) {
        blocks_[b]->backward(dseq.data(), n_tok, fw.blocks[b]);
    }
    // time path: sum of per-token grads
    std::vector<double> dtime(size_t(cfg_.width), 0.0);
    for (size_t i = 0; i < n_tok; ++i) {
        kern::active().axpy(1.0, dseq.data() + i * size_t(cfg_.width), dtime.data(), size_t(cfg_.width));
    }
    std::vector<double> dtpost(size_t(cfg_.width), 0.0);
    time_fc2_->backward(fw.time_post.data(), dtime.data(), 1, dtpost.data());
    for (int j = 0; j < cfg_.width; ++j) dtpost[size_t(j)] *= nn::gelu_grad(fw.time_pre[size_t(j)]);
    time_fc1_->backward(fw.time_feat.data(), dtpost.data(), 1, nullptr);
    // input projections (position signal is additive/fixed)
    if (cfg_.mode == CondMode::channel_concat) {
        in_proj_->backward(fw.tokens_in.data(), dseq.data(), n_lat, nullptr);
    } else {
        std::vector<double> cond_rows(n_lat * size_t(cfg_.cond_ch));
        std::vector<double> lat_rows(n_lat * size_t(cfg_.latent_ch));
        for (size_t i = 0; i < n_lat; ++i) {
            const double* row = fw.tokens_in.data() + i * (cfg_.latent_ch + cfg_.cond_ch);
            std::copy(row, row + cfg_.cond_ch, cond_rows.begin() + i * cfg_.cond_ch);
            std::copy(row + cfg_.cond_ch, row + cfg_.cond_ch + cfg_.latent_ch,
                      lat_rows.begin() + i * cfg_.latent_ch);
        }
        cond_proj_->backward(cond_rows.data(), dseq.data(), n_lat, nullptr);
        lat_proj_->backward(lat_rows.data(), dseq.data() + fw.n_prefix * size_t(cfg_.width), n_lat,
                            nullptr);
    }
    return loss;
}

std::vector<Param*> Dit::params() {
    std::vector<Param*> ps;
    if (in_proj_) {
        for (auto* p : in_proj_->params()) ps.push_back(p);
    }
    if (lat_proj_) {
        for (auto* p : lat_proj_->params()) ps.push_back(p);
        for (auto* p : cond_proj_->params()) ps.push_back(p);
    }
    for (auto* p : time_fc1_->params()) ps.push_back(p);
    for (auto* p : time_fc2_->params()) ps.push_back(p);
    for (auto& b : blocks_) {
        for (auto* p : b->params()) ps.push_back(p);
    }
    for (auto* p : out_norm_->params()) ps.push_back(p);
    for (auto* p : out_proj_->params()) ps.push_back(p);
    return ps;
}

size_t Dit::param_count() const {
    size_t n = 0;
    for (auto* p : const_cast<Dit*>(this)->params()) n += p->w.numel();
    return n;
}

// -------------------------------------------------------------- schedule

PhaseConfig phase_schedule(int phase) {
    if (phase < 1 || phase > 4) throw std::out_of_range("phase_schedule: phase must be 1..4");
    switch (phase) {
        case 1: return {1, 64, false, 1.0};   // low-res crops
        case 2: return {2, 96, false, 1.0};   // full-res 1:2 crop regions
        case 3: return {3, 96, true, 1.0};    // full images
        default: return {4, 96, true, 0.1};   // refinement at reduced lr
    }
}

// ---------------------------------------------------------- VisionDecoder

VisionDecoder::VisionDecoder(const DitConfig& main_cfg, const DitConfig& bad_cfg, uint64_t seed) {
    main_ = std::make_unique<Dit>("vision_decoder.main", main_cfg, seed);
    bad_ = std::make_unique<Dit>("vision_decoder.bad", bad_cfg, seed ^ 0xbadf00dull);
}

LatentGrid VisionDecoder::sample(const CondGrid& cond, int steps, const GuidanceConfig& g, Rng& rng,
                                 bool bad_available) const {
    if (steps < 1) throw std::invalid_argument("sample: steps < 1");
    if (g.scale > 1.0 && !bad_available) {
        throw std::invalid_argument("sample: guidance scale > 1 requires the bad model");
    }
    LatentGrid x;
    x.ch = main_->config().latent_ch;
    x.h = cond.h;
    x.w = cond.w;
    x.data.resize(size_t(x.ch) * x.h * x.w);
    for (auto& v : x.data) v = rng.normal();

    const double dt = 1.0 / steps;
    for (int s = 0; s < steps; ++s) {
        const double t = 1.0 - s * dt;
        LatentGrid v = main_->velocity(x, cond, t);
        if (g.scale != 1.0) {
            const LatentGrid vb = bad_->velocity(x, cond, t);
            for (size_t i = 0; i < v.data.size(); ++i) {
                v.data[i] = vb.data[i] + g.scale * (v.data[i] - vb.data[i]);
            }
        }
        for (size_t i = 0; i < x.data.size(); ++i) x.data[i] -= dt * v.data[i];
    }
    return x;
}

ImageBuffer VisionDecoder::decode_image(const VisionTokenizer& tok, const VisionTokGrid& grid,
                                        int orig_w, int orig_h, int steps, const GuidanceConfig& g,
                                        Rng& rng) const {
    const int lh = (orig_h + 7) / 8;
    const int lw = (orig_w + 7) / 8;
    const CondGrid cond = tokens_to_cond(tok, grid, lh, lw);
    const LatentGrid lat = sample(cond, steps, g, rng);
    return latent_to_pixels(lat, orig_w, orig_h);
}

std::vector<Param*> VisionDecoder::params() {
    auto ps = main_->params();
    for (auto* p : bad_->params()) ps.push_back(p);
    return ps;
}

std::vector<Param*> VisionDecoder::main_params() { return main_->params(); }
std::vector<Param*> VisionDecoder::bad_params() { return bad_->params(); }

}  // namespace omni
