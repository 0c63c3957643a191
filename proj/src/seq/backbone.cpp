#include "omni/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace omni {

double combine_mtp(double main_ce, double aux_ce, const MtpConfig& mtp) {
    if (mtp.weight < 0) throw std::invalid_argument("mtp: negative weight");
    return mtp.enabled ? main_ce + mtp.weight * aux_ce : main_ce;
}

Backbone::Backbone(const BackboneConfig& cfg, const VocabLayout& lay, const MtpConfig& mtp,
                   uint64_t seed)
    : cfg_(cfg), mtp_(mtp), lay_(lay) {
    if (cfg.hidden % cfg.heads != 0) throw std::invalid_argument("backbone: hidden % heads != 0");
    if (cfg.context_length < 2) throw std::invalid_argument("backbone: context must be >= 2");
    Rng rng(seed);
    embed_ = std::make_unique<nn::Embedding>("backbone.embed", lay.total, cfg.hidden, rng, 0.02);
    for (int l = 0; l < cfg.layers; ++l) {
        blocks_.push_back(std::make_unique<nn::TransformerBlock>(
            "backbone.block" + std::to_string(l), cfg.hidden, cfg.heads, true, true, rng, 0.02));
    }
    final_norm_ = std::make_unique<nn::RmsNorm>("backbone.final_norm", cfg.hidden);
    head_ = std::make_unique<nn::Linear>("backbone.head", cfg.hidden, int(lay.total), false, rng, 0.02);
    // single extra layer with its own output projection
    mtp_block_ = std::make_unique<nn::TransformerBlock>("backbone.mtp.block", cfg.hidden, cfg.heads,
                                                        true, true, rng, 0.02);
    mtp_norm_ = std::make_unique<nn::RmsNorm>("backbone.mtp.norm", cfg.hidden);
    mtp_head_ = std::make_unique<nn::Linear>("backbone.mtp.head", cfg.hidden, int(lay.total), false,
                                             rng, 0.02);
}

void Backbone::embed_input(const ModelInput& input, std::vector<double>& x) const {
    const size_t L = input.length();
    if (L > size_t(cfg_.context_length)) {
        throw std::invalid_argument("backbone: sequence length " + std::to_string(L) +
                                    " exceeds context " + std::to_string(cfg_.context_length));
    }
    if (!input.slot_pos.empty() && input.width != cfg_.hidden) {
        throw std::invalid_argument("backbone: injected rows must match hidden width");
    }
    x.assign(L * size_t(cfg_.hidden), 0.0);
    size_t slot = 0;
    for (size_t t = 0; t < L; ++t) {
        if (input.tokens[t] < 0) {
            const double* row = input.slot_embeddings.data() + slot * size_t(cfg_.hidden);
            std::copy(row, row + cfg_.hidden, x.begin() + t * size_t(cfg_.hidden));
            ++slot;
        } else {
            if (input.tokens[t] >= lay_.total) throw std::out_of_range("backbone: token id out of range");
            embed_->forward_row(input.tokens[t], x.data() + t * size_t(cfg_.hidden));
        }
    }
}

Backbone::Logits Backbone::forward(const ModelInput& input, FwdCache* cache) const {
    const size_t L = input.length();
    FwdCache local;
    FwdCache& fw = cache != nullptr ? *cache : local;
    embed_input(input, fw.x0);

    std::vector<double> x = fw.x0;
    fw.blocks.resize(blocks_.size());
    for (size_t b = 0; b < blocks_.size(); ++b) {
        blocks_[b]->forward(x.data(), L, fw.blocks[b]);
    }
    fw.trunk_out = x;
    fw.normed.resize(x.size());
    final_norm_->forward(x.data(), L, fw.normed.data(), fw.inv_rms);

    Logits out;
    out.seq = L;
    out.main.resize(L * size_t(lay_.total));
    head_->forward(fw.normed.data(), L, out.main.data());

    if (mtp_.enabled) {
        out.has_aux = true;
        fw.mtp_in = fw.trunk_out;
        mtp_block_->forward(fw.mtp_in.data(), L, fw.mtp_block);
        fw.mtp_normed.resize(fw.mtp_in.size());
        mtp_norm_->forward(fw.mtp_in.data(), L, fw.mtp_normed.data(), fw.mtp_inv_rms);
        out.aux.resize(L * size_t(lay_.total));
        mtp_head_->forward(fw.mtp_normed.data(), L, out.aux.data());
    }
    return out;
}

namespace {

struct CeSums {
    nn::CeResult ce;
    double text = 0, vision = 0, audio = 0;
};

CeSums weighted_ce_with_sums(const double* logits, size_t n, int64_t vocab, const int64_t* targets,
                             const double* weights, const VocabLayout& lay, double* dlogits) {
    CeSums out;
    out.ce = nn::cross_entropy(logits, n, size_t(vocab), targets, weights, dlogits);
    for (size_t i = 0; i < n; ++i) {
        if (targets[i] < 0 || weights[i] == 0.0) continue;
        const double contrib = weights[i] * out.ce.per_pos_ce[i];
        switch (lay.resolve(TokenId{targets[i]}).first) {
            case Region::specials:
            case Region::text:
                out.text += contrib;
                break;
            case Region::vision:
                out.vision += contrib;
                break;
            case Region::audio:
                out.audio += contrib;
                break;
        }
    }
    return out;
}

}  // namespace

LossParts Backbone::loss(const ModelInput& input) const {
    const Logits lg = forward(input, nullptr);
    const size_t L = lg.seq;
    if (L < 2) throw std::invalid_argument("loss: sequence too short");
    LossParts parts;
    const auto main = weighted_ce_with_sums(lg.main.data(), L - 1, lay_.total, input.targets.data(),
                                            input.weights.data(), lay_, nullptr);
    parts.main_ce = main.ce.loss;
    parts.text_sum = main.text;
    parts.vision_sum = main.vision;
    parts.audio_sum = main.audio;
    if (mtp_.enabled && L >= 3) {
        double aux_wsum = 0.0;
        for (size_t i = 1; i < input.weights.size(); ++i) aux_wsum += input.weights[i];
        if (aux_wsum > 0.0) {
            const auto aux = weighted_ce_with_sums(lg.aux.data(), L - 2, lay_.total,
                                                   input.targets.data() + 1, input.weights.data() + 1,
                                                   lay_, nullptr);
            parts.aux_ce = aux.ce.loss;
        }
    }
    parts.total = combine_mtp(parts.main_ce, parts.aux_ce, mtp_);
    return parts;
}

LossParts Backbone::loss_and_grads(const ModelInput& input, std::vector<double>* slot_grads) {
    FwdCache fw;
    const Logits lg = forward(input, &fw);
    const size_t L = lg.seq;
    if (L < 2) throw std::invalid_argument("loss: sequence too short");
    const int64_t V = lay_.total;

    LossParts parts;
    std::vector<double> dmain(L * size_t(V), 0.0);
    const auto main = weighted_ce_with_sums(lg.main.data(), L - 1, V, input.targets.data(),
                                            input.weights.data(), lay_, dmain.data());
    parts.main_ce = main.ce.loss;
    parts.text_sum = main.text;
    parts.vision_sum = main.vision;
    parts.audio_sum = main.audio;

    std::vector<double> daux;
    bool aux_used = false;
    if (mtp_.enabled && L >= 3) {
        double aux_wsum = 0.0;
        for (size_t i = 1; i < input.weights.size(); ++i) aux_wsum += input.weights[i];
        if (aux_wsum > 0.0) {
            daux.assign(L * size_t(V), 0.0);
            const auto aux = weighted_ce_with_sums(lg.aux.data(), L - 2, V, input.targets.data() + 1,
                                                   input.weights.data() + 1, lay_, daux.data());
            parts.aux_ce = aux.ce.loss;
            // lambda scales the aux branch
            kern::active().scale(mtp_.weight, daux.data(), daux.size());
            aux_used = true;
        }
    }
    parts.total = combine_mtp(parts.main_ce, parts.aux_ce, mtp_);

    // main head -> final norm -> trunk
    std::vector<double> dnormed(L * size_t(cfg_.hidden), 0.0);
    head_->backward(fw.normed.data(), dmain.data(), L, dnormed.data());
    std::vector<double> dtrunk(L * size_t(cfg_.hidden), 0.0);
    final_norm_->backward(fw.trunk_out.data(), fw.inv_rms, dnormed.data(), L, dtrunk.data());

    if (aux_used) {
        std::vector<double> dmtp_normed(L * size_t(cfg_.hidden), 0.0);
        mtp_head_->backward(fw.mtp_normed.data(), daux.data(), L, dmtp_normed.data());
        std::vector<double> dmtp_in(L * size_t(cfg_.hidden), 0.0);
        mtp_norm_->backward(fw.mtp_in.data(), fw.mtp_inv_rms, dmtp_normed.data(), L, dmtp_in.data());
        mtp_block_->backward(dmtp_in.data(), L, fw.mtp_block);
        kern::active().add(dtrunk.data(), dmtp_in.data(), dtrunk.data(), dtrunk.size());
    }

    for (size_t b = blocks_.size(); b-- > 0;) {
        blocks_[b]->backward(dtrunk.data(), L, fw.blocks[b]);
    }

    // route position grads to embedding rows or slot rows
    if (slot_grads != nullptr) {
        slot_grads->assign(input.slot_pos.size() * size_t(cfg_.hidden), 0.0);
    }
    size_t slot = 0;
    for (size_t t = 0; t < L; ++t) {
        const double* g = dtrunk.data() + t * size_t(cfg_.hidden);
        if (input.tokens[t] < 0) {
            if (slot_grads != nullptr) {
                std::copy(g, g + cfg_.hidden, slot_grads->data() + slot * size_t(cfg_.hidden));
            }
            ++slot;
        } else {
            embed_->backward_row(input.tokens[t], g);
        }
    }
    return parts;
}

Backbone::GenResult Backbone::generate(const ModelInput& prompt, SamplerState sampler, int max_new,
                                       uint64_t seed) const {
    const int64_t V = lay_.total;
    const size_t ctx = size_t(cfg_.context_length);
    if (prompt.length() >= ctx) throw std::invalid_argument("generate: prompt fills the context");

    const int64_t vis_start = lay_.special("<|vision_start|>").value;
    const int64_t vis_end = lay_.special("<|vision_end|>").value;
    const int64_t aud_start = lay_.special("<|audio_start|>").value;
    const int64_t aud_end = lay_.special("<|audio_end|>").value;
    const int64_t think_open = lay_.special("<think>").value;
    const int64_t think_close = lay_.special("</think>").value;
    const int64_t eos = lay_.special("<|eos|>").value;
    const int64_t im_end = lay_.special("<|im_end|>").value;
    const int64_t vis_lo = lay_.offset(Region::vision);
    const int64_t vis_hi = vis_lo + lay_.vision_codebook_size;
    const int64_t aud_lo = lay_.offset(Region::audio);
    const int64_t aud_hi = aud_lo + lay_.audio_codebook_size;
    const int64_t text_lo = lay_.offset(Region::text);
    const int64_t text_hi = text_lo + lay_.text_size;
    const int64_t grid_tokens = 729;

    std::vector<nn::TransformerBlock::KvCache> kvs(blocks_.size());
    for (auto& kv : kvs) kv.reset(ctx, cfg_.hidden);

    Rng rng(seed);
    std::vector<double> x(static_cast<size_t>(cfg_.hidden));
    auto feed = [&](const double* row) {
        std::copy(row, row + cfg_.hidden, x.begin());
        for (size_t b = 0; b < blocks_.size(); ++b) blocks_[b]->forward_one(x.data(), kvs[b]);
    };

    // prefill
    std::vector<double> row(static_cast<size_t>(cfg_.hidden));
    size_t slot = 0;
    for (size_t t = 0; t < prompt.length(); ++t) {
        if (prompt.tokens[t] < 0) {
            feed(prompt.slot_embeddings.data() + (slot++) * size_t(cfg_.hidden));
        } else {
            embed_->forward_row(prompt.tokens[t], row.data());
            feed(row.data());
        }
    }

    GenResult out;
    std::vector<double> logits(static_cast<size_t>(V));
    std::vector<double> normed(static_cast<size_t>(cfg_.hidden)), inv;
    std::vector<char> allowed(static_cast<size_t>(V));
    int free_budget = max_new;

    while (true) {
        const size_t len = kvs[0].len;
        if (len + 1 > ctx) break;
        if (sampler.mode == SamplerState::Mode::free && free_budget <= 0) break;

        final_norm_->forward(x.data(), 1, normed.data(), inv);
        head_->forward(normed.data(), 1, logits.data());

        std::fill(allowed.begin(), allowed.end(), char(0));
        switch (sampler.mode) {
            case SamplerState::Mode::free: {
                std::fill(allowed.begin(), allowed.end(), char(1));
                allowed[size_t(think_close)] = 0;
                allowed[size_t(vis_end)] = 0;
                allowed[size_t(aud_end)] = 0;
                // span starters masked when the span cannot complete in context
                if (len + 1 + size_t(grid_tokens) + 1 > ctx) allowed[size_t(vis_start)] = 0;
                if (len + 1 + 2 > ctx) allowed[size_t(aud_start)] = 0;
                break;
            }
            case SamplerState::Mode::vision_span: {
                if (sampler.span_count < grid_tokens) {
                    for (int64_t id = vis_lo; id < vis_hi; ++id) allowed[size_t(id)] = 1;
                } else {
                    allowed[size_t(vis_end)] = 1;
                }
                break;
            }
            case SamplerState::Mode::audio_span: {
                for (int64_t id = aud_lo; id < aud_hi; ++id) allowed[size_t(id)] = 1;
                allowed[size_t(aud_end)] = 1;
                break;
            }
            case SamplerState::Mode::think: {
                for (int64_t id = text_lo; id < text_hi; ++id) allowed[size_t(id)] = 1;
                allowed[size_t(think_close)] = 1;
                break;
            }
        }

        // sample within the permitted mask
        int64_t pick = -1;
        if (sampler.temperature <= 0.0) {
            double best = -1e300;
            for (int64_t id = 0; id < V; ++id) {
                if (allowed[size_t(id)] && logits[size_t(id)] > best) {
                    best = logits[size_t(id)];
                    pick = id;
                }
            }
        } else {
            std::vector<std::pair<double, int64_t>> cand;
            cand.reserve(size_t(V));
            for (int64_t id = 0; id < V; ++id) {
                if (allowed[size_t(id)]) cand.push_back({logits[size_t(id)] / sampler.temperature, id});
            }
            if (sampler.top_k > 0 && int(cand.size()) > sampler.top_k) {
                std::partial_sort(cand.begin(), cand.begin() + sampler.top_k, cand.end(),
                                  [](const auto& a, const auto& b) { return a.first > b.first; });
                cand.resize(size_t(sampler.top_k));
            }
            double mx = -1e300;
            for (const auto& c : cand) mx = std::max(mx, c.first);
            double sum = 0.0;
            for (auto& c : cand) {
                c.first = std::exp(c.first - mx);
                sum += c.first;
            }
            double u = rng.uniform() * sum;
            for (const auto& c : cand) {
                u -= c.first;
                if (u <= 0.0) {
                    pick = c.second;
                    break;
                }
            }
            if (pick < 0) pick = cand.back().second;
        }
        if (pick < 0 || !allowed[size_t(pick)]) {
            throw std::logic_error("generate: sampled id outside the permitted mask");
        }

        out.ids.push_back(pick);

        // state transitions
        switch (sampler.mode) {
            case SamplerState::Mode::free:
                if (pick == vis_start) {
                    sampler.mode = SamplerState::Mode::vision_span;
                    sampler.span_count = 0;
                } else if (pick == aud_start) {
                    sampler.mode = SamplerState::Mode::audio_span;
                    sampler.span_count = 0;
                } else if (pick == think_open) {
                    sampler.mode = SamplerState::Mode::think;
                } else {
                    --free_budget;
                }
                break;
            case SamplerState::Mode::vision_span:
                if (pick == vis_end) {
                    sampler.mode = SamplerState::Mode::free;
                } else {
                    ++sampler.span_count;
                }
                break;
            case SamplerState::Mode::audio_span:
                if (pick == aud_end) sampler.mode = SamplerState::Mode::free;
                break;
            case SamplerState::Mode::think:
                if (pick == think_close) sampler.mode = SamplerState::Mode::free;
                break;
        }

        if (sampler.mode == SamplerState::Mode::free && (pick == eos || pick == im_end)) break;

        embed_->forward_row(pick, row.data());
        if (kvs[0].len + 1 > ctx) break;
        feed(row.data());
    }
    return out;
}

std::vector<Param*> Backbone::params() {
    std::vector<Param*> ps;
    for (auto* p : embed_->params()) ps.push_back(p);
    for (auto& b : blocks_) {
        for (auto* p : b->params()) ps.push_back(p);
    }
    for (auto* p : final_norm_->params()) ps.push_back(p);
    for (auto* p : head_->params()) ps.push_back(p);
    for (auto* p : mtp_block_->params()) ps.push_back(p);
    for (auto* p : mtp_norm_->params()) ps.push_back(p);
    for (auto* p : mtp_head_->params()) ps.push_back(p);
    return ps;
}

}  // namespace omni
