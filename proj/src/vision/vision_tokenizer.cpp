#include "omni/vision_tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace omni {

namespace {

// adaptive average pooling ranges; valid for out <= in and out > in
std::pair<int, int> pool_range(int out_idx, int out_n, int in_n) {
    const int lo = int(int64_t(out_idx) * in_n / out_n);
    int hi = int((int64_t(out_idx) + 1) * in_n + out_n - 1) / out_n;
    hi = std::min(hi, in_n);
    return {lo, std::max(hi, lo + 1)};
}

constexpr double kCommitBeta = 0.25;
constexpr double kEmaGamma = 0.99;

}  // namespace

ImageBuffer resize_square(const ImageBuffer& img, int input_size) {
    if (img.width < 1 || img.height < 1) throw std::invalid_argument("resize_square: degenerate image");
    if (img.width == input_size && img.height == input_size) {
        ImageBuffer out = img;
        out.orig_width = img.orig_width;
        out.orig_height = img.orig_height;
        return out;
    }
    return resize_bilinear(img, input_size, input_size);
}

VisionTokenizer::VisionTokenizer(const VisionTokenizerConfig& cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg.input_size % cfg.patch_stride != 0) {
        throw std::invalid_argument("vision tokenizer: input_size must be a multiple of patch_stride");
    }
    Rng rng(seed);
    const int patch_dim = cfg.patch_stride * cfg.patch_stride * 3;
    encoder_ = std::make_unique<nn::Linear>("vision_tokenizer.encoder", patch_dim, cfg.feature_width,
                                            true, rng, -1.0);
    decoder_ = std::make_unique<nn::Linear>("vision_tokenizer.decoder", cfg.feature_width, patch_dim,
                                            true, rng, -1.0);
    codebook_ = std::make_unique<Param>("vision_tokenizer.codebook",
                                        std::vector<int64_t>{cfg.codebook_size, cfg.feature_width});
    codebook_->init_normal(rng, 1.0 / std::sqrt(double(cfg.feature_width)));
    ema_count_.assign(size_t(cfg.codebook_size), 1.0);
    ema_sum_.assign(codebook_->w.data.begin(), codebook_->w.data.end());
    opt_ = std::make_unique<nn::Adam>(nn::AdamOpts{.lr = 1e-3});
}

std::vector<double> VisionTokenizer::cell_features(const ImageBuffer& img,
                                                   std::vector<double>* patches_out,
                                                   std::vector<double>* pre_pool_out) const {
    if (img.width != cfg_.input_size || img.height != cfg_.input_size) {
        throw std::invalid_argument("tokenize: input must be " + std::to_string(cfg_.input_size) +
                                    "x" + std::to_string(cfg_.input_size));
    }
    const int pg = cfg_.input_size / cfg_.patch_stride;  // 24
    const int np = pg * pg;
    const int patch_dim = cfg_.patch_stride * cfg_.patch_stride * 3;
    std::vector<double> patches(size_t(np) * patch_dim);
    for (int py = 0; py < pg; ++py) {
        for (int px = 0; px < pg; ++px) {
            double* dst = patches.data() + (size_t(py) * pg + px) * patch_dim;
            for (int dy = 0; dy < cfg_.patch_stride; ++dy) {
                for (int dx = 0; dx < cfg_.patch_stride; ++dx) {
                    const double* s = img.px(px * cfg_.patch_stride + dx, py * cfg_.patch_stride + dy);
                    double* d = dst + 3 * (size_t(dy) * cfg_.patch_stride + dx);
                    d[0] = s[0];
                    d[1] = s[1];
                    d[2] = s[2];
                }
            }
        }
    }
    std::vector<double> feats(size_t(np) * cfg_.feature_width);
    encoder_->forward(patches.data(), size_t(np), feats.data());
    // no position signal here: constant images must give identical cells

    const int g = cfg_.grid;
    std::vector<double> cells(size_t(g) * g * cfg_.feature_width, 0.0);
    for (int oy = 0; oy < g; ++oy) {
        const auto [ylo, yhi] = pool_range(oy, g, pg);
        for (int ox = 0; ox < g; ++ox) {
            const auto [xlo, xhi] = pool_range(ox, g, pg);
            double* dst = cells.data() + (size_t(oy) * g + ox) * cfg_.feature_width;
            int cnt = 0;
            for (int y = ylo; y < yhi; ++y) {
                for (int x = xlo; x < xhi; ++x) {
                    kern::active().axpy(1.0, feats.data() + (size_t(y) * pg + x) * cfg_.feature_width,
                                        dst, size_t(cfg_.feature_width));
                    ++cnt;
                }
            }
            kern::active().scale(1.0 / cnt, dst, size_t(cfg_.feature_width));
        }
    }
    if (patches_out != nullptr) *patches_out = std::move(patches);
    if (pre_pool_out != nullptr) *pre_pool_out = std::move(feats);
    return cells;
}

int64_t VisionTokenizer::nearest(const double* feat) const {
    int64_t best = 0;
    double best_d = 1e300;
    for (int64_t k = 0; k < cfg_.codebook_size; ++k) {
        const double* c = codebook_->w.row(k);
        double d = 0.0;
        for (int j = 0; j < cfg_.feature_width; ++j) {
            const double diff = feat[j] - c[j];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

VisionTokGrid VisionTokenizer::tokenize(const ImageBuffer& img384) const {
    const auto cells = cell_features(img384, nullptr, nullptr);
    const int n = cfg_.grid * cfg_.grid;
    VisionTokGrid grid;
    grid.codebook_size = cfg_.codebook_size;
    grid.ids.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
        grid.ids[size_t(i)] = uint16_t(nearest(cells.data() + size_t(i) * cfg_.feature_width));
    }
    return grid;
}

FeatureGrid VisionTokenizer::detokenize(const VisionTokGrid& grid) const {
    const int n = cfg_.grid * cfg_.grid;
    if (int(grid.ids.size()) != n) {
        throw std::invalid_argument("detokenize: grid must hold exactly " + std::to_string(n) + " ids");
    }
    FeatureGrid out;
    out.h = out.w = cfg_.grid;
    out.c = cfg_.feature_width;
    out.data.resize(size_t(n) * cfg_.feature_width);
    for (int i = 0; i < n; ++i) {
        if (grid.ids[size_t(i)] >= cfg_.codebook_size) {
            throw std::out_of_range("detokenize: id out of codebook range");
        }
        const double* c = codebook_->w.row(grid.ids[size_t(i)]);
        std::copy(c, c + cfg_.feature_width, out.data.begin() + size_t(i) * cfg_.feature_width);
    }
    return out;
}

VisionTokGrid VisionTokenizer::assign(const FeatureGrid& features) const {
    if (features.h != cfg_.grid || features.w != cfg_.grid || features.c != cfg_.feature_width) {
        throw std::invalid_argument("assign: feature grid shape mismatch");
    }
    VisionTokGrid grid;
    grid.codebook_size = cfg_.codebook_size;
    const int n = cfg_.grid * cfg_.grid;
    grid.ids.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
        grid.ids[size_t(i)] = uint16_t(nearest(features.data.data() + size_t(i) * cfg_.feature_width));
    }
    return grid;
}

double VisionTokenizer::train_vq_step(const std::vector<ImageBuffer>& batch) {
    if (batch.empty()) throw std::invalid_argument("train_vq_step: empty batch");
    const int g = cfg_.grid;
    const int pg = cfg_.input_size / cfg_.patch_stride;
    const int np = pg * pg;
    const int n_cells = g * g;
    const int fw = cfg_.feature_width;
    const int patch_dim = cfg_.patch_stride * cfg_.patch_stride * 3;

    encoder_->w.g.zero();
    encoder_->b.g.zero();
    decoder_->w.g.zero();
    decoder_->b.g.zero();
    std::vector<double> new_count(size_t(cfg_.codebook_size), 0.0);
    std::vector<double> new_sum(size_t(cfg_.codebook_size) * fw, 0.0);

    double total_loss = 0.0;
    for (const auto& img : batch) {
        std::vector<double> patches, feats;
        const auto cells = cell_features(img, &patches, &feats);

        // assignment and straight-through quantized field
        std::vector<int64_t> ids(static_cast<size_t>(n_cells));
        std::vector<double> quant(size_t(n_cells) * fw);
        for (int i = 0; i < n_cells; ++i) {
            ids[size_t(i)] = nearest(cells.data() + size_t(i) * fw);
            const double* c = codebook_->w.row(ids[size_t(i)]);
            std::copy(c, c + fw, quant.begin() + size_t(i) * fw);
            new_count[size_t(ids[size_t(i)])] += 1.0;
            kern::active().axpy(1.0, cells.data() + size_t(i) * fw,
                                new_sum.data() + size_t(ids[size_t(i)]) * fw, size_t(fw));
        }

        // unpool the quantized grid back to the patch lattice and decode
        std::vector<double> unpooled(size_t(np) * fw, 0.0);
        std::vector<std::vector<int>> src_of(static_cast<size_t>(np));
        for (int oy = 0; oy < pg; ++oy) {
            const auto [ylo, yhi] = pool_range(oy, pg, g);
            for (int ox = 0; ox < pg; ++ox) {
                const auto [xlo, xhi] = pool_range(ox, pg, g);
                double* dst = unpooled.data() + (size_t(oy) * pg + ox) * fw;
                auto& src = src_of[size_t(oy) * pg + ox];
                for (int y = ylo; y < yhi; ++y) {
                    for (int x = xlo; x < xhi; ++x) {
                        src.push_back(y * g + x);
                        kern::active().axpy(1.0, quant.data() + size_t(y * g + x) * fw, dst, size_t(fw));
                    }
                }
                kern::active().scale(1.0 / src.size(), dst, size_t(fw));
            }
        }
        std::vector<double> recon(size_t(np) * patch_dim);
        decoder_->forward(unpooled.data(), size_t(np), recon.data());

        double recon_loss = 0.0;
        std::vector<double> drecon(recon.size());
        const double inv_n = 1.0 / double(recon.size());
        for (size_t i = 0; i < recon.size(); ++i) {
            const double diff = recon[i] - patches[i];
            recon_loss += diff * diff * inv_n;
            drecon[i] = 2.0 * diff * inv_n;
        }
        double commit_loss = 0.0;
        const double inv_c = 1.0 / double(size_t(n_cells) * fw);
        for (size_t i = 0; i < quant.size(); ++i) {
            const double diff = cells[i] - quant[i];
            commit_loss += diff * diff * inv_c;
        }
        total_loss += recon_loss + kCommitBeta * commit_loss;
        if (frozen_) continue;

        // backward: decoder, unpool adjoint, straight-through to cells,
        // commitment pull, pool adjoint, encoder
        std::vector<double> dunpooled(unpooled.size(), 0.0);
        decoder_->backward(unpooled.data(), drecon.data(), size_t(np), dunpooled.data());
        std::vector<double> dcells(size_t(n_cells) * fw, 0.0);
        for (int p = 0; p < np; ++p) {
            const auto& src = src_of[size_t(p)];
            const double inv = 1.0 / double(src.size());
            for (int s : src) {
                kern::active().axpy(inv, dunpooled.data() + size_t(p) * fw,
                                    dcells.data() + size_t(s) * fw, size_t(fw));
            }
        }
        for (size_t i = 0; i < dcells.size(); ++i) {
            dcells[i] += kCommitBeta * 2.0 * (cells[i] - quant[i]) * inv_c;
        }
        std::vector<double> dfeats(feats.size(), 0.0);
        for (int oy = 0; oy < g; ++oy) {
            const auto [ylo, yhi] = pool_range(oy, g, pg);
            for (int ox = 0; ox < g; ++ox) {
                const auto [xlo, xhi] = pool_range(ox, g, pg);
                int cnt = 0;
                for (int y = ylo; y < yhi; ++y) {
                    for (int x = xlo; x < xhi; ++x) ++cnt;
                }
                const double inv = 1.0 / cnt;
                const double* dc = dcells.data() + (size_t(oy) * g + ox) * fw;
                for (int y = ylo; y < yhi; ++y) {
                    for (int x = xlo; x < xhi; ++x) {
                        kern::active().axpy(inv, dc, dfeats.data() + (size_t(y) * pg + x) * fw, size_t(fw));
                    }
                }
            }
        }
        encoder_->backward(patches.data(), dfeats.data(), size_t(np), nullptr);
    }

    total_loss /= double(batch.size());
    if (frozen_) return total_loss;

    opt_->step({&encoder_->w, &encoder_->b, &decoder_->w, &decoder_->b});
    // EMA centroid update with Laplace-smoothed counts
    for (int64_t k = 0; k < cfg_.codebook_size; ++k) {
        ema_count_[size_t(k)] = kEmaGamma * ema_count_[size_t(k)] + (1.0 - kEmaGamma) * new_count[size_t(k)];
        double* sum = ema_sum_.data() + size_t(k) * fw;
        for (int j = 0; j < fw; ++j) {
            sum[j] = kEmaGamma * sum[j] + (1.0 - kEmaGamma) * new_sum[size_t(k) * fw + j];
        }
        const double denom = std::max(ema_count_[size_t(k)], 1e-6);
        double* c = codebook_->w.row(k);
        for (int j = 0; j < fw; ++j) c[j] = sum[j] / denom;
    }
    return total_loss;
}

double VisionTokenizer::reconstruction_mse(const ImageBuffer& img384) const {
    std::vector<double> patches;
    const auto cells = cell_features(img384, &patches, nullptr);
    const auto grid = tokenize(img384);
    const auto feats = detokenize(grid);
    const int pg = cfg_.input_size / cfg_.patch_stride;
    const int np = pg * pg;
    const int fw = cfg_.feature_width;
    std::vector<double> unpooled(size_t(np) * fw, 0.0);
    for (int oy = 0; oy < pg; ++oy) {
        const auto [ylo, yhi] = pool_range(oy, pg, cfg_.grid);
        for (int ox = 0; ox < pg; ++ox) {
            const auto [xlo, xhi] = pool_range(ox, pg, cfg_.grid);
            double* dst = unpooled.data() + (size_t(oy) * pg + ox) * fw;
            int cnt = 0;
            for (int y = ylo; y < yhi; ++y) {
                for (int x = xlo; x < xhi; ++x) {
                    kern::active().axpy(1.0, feats.data.data() + size_t(y * cfg_.grid + x) * fw, dst, size_t(fw));
                    ++cnt;
                }
            }
            kern::active().scale(1.0 / cnt, dst, size_t(fw));
        }
    }
    const int patch_dim = cfg_.patch_stride * cfg_.patch_stride * 3;
    std::vector<double> recon(size_t(np) * patch_dim);
    decoder_->forward(unpooled.data(), size_t(np), recon.data());
    double mse = 0.0;
    for (size_t i = 0; i < recon.size(); ++i) {
        const double d = recon[i] - patches[i];
        mse += d * d;
    }
    return mse / double(recon.size());
}

std::vector<Param*> VisionTokenizer::params() {
    std::vector<Param*> ps;
    for (auto* p : encoder_->params()) ps.push_back(p);
    for (auto* p : decoder_->params()) ps.push_back(p);
    ps.push_back(codebook_.get());
    return ps;
}

}  // namespace omni
