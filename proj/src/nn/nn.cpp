#include "omni/nn.hpp"

#include <algorithm>
#include <cassert>
#include <stdexcept>

namespace omni::nn {

using kern::active;
using kern::matmul_nn;
using kern::matmul_nt;
using kern::matmul_tn;

void softmax_rows(double* x, size_t rows, size_t cols) {
    for (size_t r = 0; r < rows; ++r) {
        double* p = x + r * cols;
        double mx = p[0];
        for (size_t j = 1; j < cols; ++j) mx = std::max(mx, p[j]);
        double sum = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            p[j] = std::exp(p[j] - mx);
            sum += p[j];
        }
        const double inv = 1.0 / sum;
        active().scale(inv, p, cols);
    }
}

// ---------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, int in, int out, bool bias, Rng& rng, double init_std)
    : w(name + ".w", {out, in}),
      b(name + ".b", {bias ? out : 0}),
      has_bias(bias),
      in_dim(in),
      out_dim(out) {
    const double std_eff = init_std < 0 ? 1.0 / std::sqrt(double(in)) : init_std;
    w.init_normal(rng, std_eff);
    if (bias) b.init_normal(rng, 0.0);  // zero bias
}

void Linear::forward(const double* x, size_t n, double* y) const {
    if (has_bias) {
        for (size_t i = 0; i < n; ++i) {
            std::copy(b.w.ptr(), b.w.ptr() + out_dim, y + i * out_dim);
        }
    } else {
        std::fill(y, y + n * out_dim, 0.0);
    }
    matmul_nt(x, w.w.ptr(), y, n, in_dim, out_dim);
}

void Linear::backward(const double* x, const double* dy, size_t n, double* dx) {
    matmul_tn(dy, x, w.g.ptr(), n, out_dim, in_dim);  // dW += dy^T x
    if (has_bias) {
        for (size_t i = 0; i < n; ++i) {
            active().axpy(1.0, dy + i * out_dim, b.g.ptr(), out_dim);
        }
    }
    if (dx != nullptr) {
        matmul_nn(dy, w.w.ptr(), dx, n, out_dim, in_dim);  // dx += dy W
    }
}

std::vector<Param*> Linear::params() {
    std::vector<Param*> ps{&w};
    if (has_bias) ps.push_back(&b);
    return ps;
}

// ---------------------------------------------------------------- RmsNorm

RmsNorm::RmsNorm(const std::string& name, int d) : g(name + ".g", {d}), dim(d) {
    std::fill(g.w.data.begin(), g.w.data.end(), 1.0);
}

void RmsNorm::forward(const double* x, size_t n, double* y, std::vector<double>& inv_rms) const {
    inv_rms.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const double* xi = x + i * dim;
        const double ms = active().dot(xi, xi, dim) / dim;
        const double inv = 1.0 / std::sqrt(ms + eps);
        inv_rms[i] = inv;
        double* yi = y + i * dim;
        for (int j = 0; j < dim; ++j) yi[j] = xi[j] * inv * g.w.data[j];
    }
}

void RmsNorm::backward(const double* x, const std::vector<double>& inv_rms, const double* dy,
                       size_t n, double* dx) {
    for (size_t i = 0; i < n; ++i) {
        const double* xi = x + i * dim;
        const double* dyi = dy + i * dim;
        double* dxi = dx + i * dim;
        const double inv = inv_rms[i];
        // du = dy * g; dx += du/r - x * (du . u)/(dim * r^2) * inv
        double du_dot_x = 0.0;
        for (int j = 0; j < dim; ++j) {
            const double du = dyi[j] * g.w.data[j];
            du_dot_x += du * xi[j];
            g.g.data[j] += dyi[j] * xi[j] * inv;
        }
        const double coef = du_dot_x * inv * inv * inv / dim;
        for (int j = 0; j < dim; ++j) {
            dxi[j] += dyi[j] * g.w.data[j] * inv - xi[j] * coef;
        }
    }
}

std::vector<Param*> RmsNorm::params() { return {&g}; }

// ---------------------------------------------------------------- RoPE

void rope_apply(double* qkv, size_t seq, int hidden, int heads, size_t pos0, bool inverse) {
    const int head_dim = hidden / heads;
    const int half = head_dim / 2;
    for (size_t t = 0; t < seq; ++t) {
        const double pos = double(pos0 + t);
        for (int part = 0; part < 2; ++part) {  // q then k
            double* base = qkv + t * 3 * size_t(hidden) + size_t(part) * hidden;
            for (int h = 0; h < heads; ++h) {
                double* v = base + size_t(h) * head_dim;
                for (int j = 0; j < half; ++j) {
                    const double freq = std::pow(10000.0, -2.0 * j / head_dim);
                    double ang = pos * freq;
                    if (inverse) ang = -ang;
                    const double c = std::cos(ang), s = std::sin(ang);
                    const double a = v[j], b2 = v[j + half];
                    v[j] = a * c - b2 * s;
                    v[j + half] = a * s + b2 * c;
                }
            }
        }
    }
}

// ------------------------------------------------------- TransformerBlock

TransformerBlock::TransformerBlock(const std::string& name, int hidden_, int heads_, bool causal_,
                                   bool use_rope_, Rng& rng, double init_std)
    : hidden(hidden_),
      heads(heads_),
      head_dim(hidden_ / heads_),
      causal(causal_),
      use_rope(use_rope_),
      norm1(name + ".norm1", hidden_),
      qkv(name + ".qkv", hidden_, 3 * hidden_, true, rng, init_std),
      proj(name + ".proj", hidden_, hidden_, true, rng, init_std),
      norm2(name + ".norm2", hidden_),
      fc(name + ".fc", hidden_, 4 * hidden_, true, rng, init_std),
      fc_proj(name + ".fc_proj", 4 * hidden_, hidden_, true, rng, init_std) {
    if (hidden_ % heads_ != 0) throw std::invalid_argument("block: hidden % heads != 0");
    if (head_dim % 2 != 0) throw std::invalid_argument("block: head_dim must be even for rope");
}

namespace {

// attention over cached q,k,v [seq, 3*hidden]; writes context [seq, hidden]
void attention_forward(const double* qkv_buf, size_t seq, int hidden, int heads, bool causal,
                       double* ctx_out, std::vector<double>& scratch) {
    const int hd = hidden / heads;
    const double scale = 1.0 / std::sqrt(double(hd));
    scratch.resize(seq);
    std::fill(ctx_out, ctx_out + seq * size_t(hidden), 0.0);
    for (int h = 0; h < heads; ++h) {
        const size_t off_q = size_t(h) * hd;
        const size_t off_k = size_t(hidden) + off_q;
        const size_t off_v = 2 * size_t(hidden) + off_q;
        for (size_t t = 0; t < seq; ++t) {
            const size_t lim = causal ? t + 1 : seq;
            const double* qt = qkv_buf + t * 3 * size_t(hidden) + off_q;
            double* row = scratch.data();
            for (size_t s = 0; s < lim; ++s) {
                row[s] = kern::active().dot(qt, qkv_buf + s * 3 * size_t(hidden) + off_k, hd) * scale;
            }
            softmax_rows(row, 1, lim);
            double* out = ctx_out + t * size_t(hidden) + off_q;
            for (size_t s = 0; s < lim; ++s) {
                kern::active().axpy(row[s], qkv_buf + s * 3 * size_t(hidden) + off_v, out, hd);
            }
        }
    }
}

// recomputes probabilities row by row; accumulates dqkv
void attention_backward(const double* qkv_buf, const double* d_ctx, size_t seq, int hidden,
                        int heads, bool causal, double* d_qkv) {
    const int hd = hidden / heads;
    const double scale = 1.0 / std::sqrt(double(hd));
    std::vector<double> probs, dprobs;
    for (int h = 0; h < heads; ++h) {
        const size_t off_q = size_t(h) * hd;
        const size_t off_k = size_t(hidden) + off_q;
        const size_t off_v = 2 * size_t(hidden) + off_q;
        for (size_t t = 0; t < seq; ++t) {
            const size_t lim = causal ? t + 1 : seq;
            probs.resize(lim);
            dprobs.resize(lim);
            const double* qt = qkv_buf + t * 3 * size_t(hidden) + off_q;
            for (size_t s = 0; s < lim; ++s) {
                probs[s] = kern::active().dot(qt, qkv_buf + s * 3 * size_t(hidden) + off_k, hd) * scale;
            }
            softmax_rows(probs.data(), 1, lim);
            const double* dct = d_ctx + t * size_t(hidden) + off_q;
            double dot_pp = 0.0;
            for (size_t s = 0; s < lim; ++s) {
                dprobs[s] = kern::active().dot(dct, qkv_buf + s * 3 * size_t(hidden) + off_v, hd);
                dot_pp += dprobs[s] * probs[s];
            }
            double* dqt = d_qkv + t * 3 * size_t(hidden) + off_q;
            for (size_t s = 0; s < lim; ++s) {
                // dv
                kern::active().axpy(probs[s], dct, d_qkv + s * 3 * size_t(hidden) + off_v, hd);
                const double ds = probs[s] * (dprobs[s] - dot_pp) * scale;
                kern::active().axpy(ds, qkv_buf + s * 3 * size_t(hidden) + off_k, dqt, hd);
                kern::active().axpy(ds, qt, d_qkv + s * 3 * size_t(hidden) + off_k, hd);
            }
        }
    }
}

}  // namespace

void TransformerBlock::forward(double* x, size_t seq, Cache& cache) const {
    const size_t nh = seq * size_t(hidden);
    cache.seq = seq;
    cache.x_in.assign(x, x + nh);
    cache.x_norm1.resize(nh);
    norm1.forward(x, seq, cache.x_norm1.data(), cache.inv_rms1);
    cache.qkv_buf.resize(seq * 3 * size_t(hidden));
    qkv.forward(cache.x_norm1.data(), seq, cache.qkv_buf.data());
    if (use_rope) rope_apply(cache.qkv_buf.data(), seq, hidden, heads, 0, false);
    cache.att_out.resize(nh);
    std::vector<double> scratch;
    attention_forward(cache.qkv_buf.data(), seq, hidden, heads, causal, cache.att_out.data(), scratch);
    std::vector<double> tmp(nh);
    proj.forward(cache.att_out.data(), seq, tmp.data());
    kern::active().add(x, tmp.data(), x, nh);

    cache.x_mid.assign(x, x + nh);
    cache.x_norm2.resize(nh);
    norm2.forward(x, seq, cache.x_norm2.data(), cache.inv_rms2);
    cache.pre_act.resize(seq * 4 * size_t(hidden));
    fc.forward(cache.x_norm2.data(), seq, cache.pre_act.data());
    cache.post_act.resize(cache.pre_act.size());
    for (size_t i = 0; i < cache.pre_act.size(); ++i) cache.post_act[i] = gelu(cache.pre_act[i]);
    fc_proj.forward(cache.post_act.data(), seq, tmp.data());
    kern::active().add(x, tmp.data(), x, nh);
}

void TransformerBlock::backward(double* dx, size_t seq, const Cache& cache) {
    const size_t nh = seq * size_t(hidden);
    // mlp branch
    std::vector<double> d_post(seq * 4 * size_t(hidden), 0.0);
    fc_proj.backward(cache.post_act.data(), dx, seq, d_post.data());
    for (size_t i = 0; i < d_post.size(); ++i) d_post[i] *= gelu_grad(cache.pre_act[i]);
    std::vector<double> d_norm(nh, 0.0);
    fc.backward(cache.x_norm2.data(), d_post.data(), seq, d_norm.data());
    norm2.backward(cache.x_mid.data(), cache.inv_rms2, d_norm.data(), seq, dx);

    // attention branch
    std::vector<double> d_att(nh, 0.0);
    proj.backward(cache.att_out.data(), dx, seq, d_att.data());
    std::vector<double> d_qkv(seq * 3 * size_t(hidden), 0.0);
    attention_backward(cache.qkv_buf.data(), d_att.data(), seq, hidden, heads, causal, d_qkv.data());
    if (use_rope) rope_apply(d_qkv.data(), seq, hidden, heads, 0, true);
    std::fill(d_norm.begin(), d_norm.end(), 0.0);
    qkv.backward(cache.x_norm1.data(), d_qkv.data(), seq, d_norm.data());
    norm1.backward(cache.x_in.data(), cache.inv_rms1, d_norm.data(), seq, dx);
}

std::vector<Param*> TransformerBlock::params() {
    std::vector<Param*> ps;
    for (auto* p : norm1.params()) ps.push_back(p);
    for (auto* p : qkv.params()) ps.push_back(p);
    for (auto* p : proj.params()) ps.push_back(p);
    for (auto* p : norm2.params()) ps.push_back(p);
    for (auto* p : fc.params()) ps.push_back(p);
    for (auto* p : fc_proj.params()) ps.push_back(p);
    return ps;
}

void TransformerBlock::forward_one(double* x, KvCache& kvc) const {
    if (kvc.len >= kvc.capacity) throw std::runtime_error("kv cache overflow");
    std::vector<double> xn(hidden), qkv_row(3 * size_t(hidden)), inv;
    norm1.forward(x, 1, xn.data(), inv);
    qkv.forward(xn.data(), 1, qkv_row.data());
    if (use_rope) rope_apply(qkv_row.data(), 1, hidden, heads, kvc.len, false);
    double* kv_row = kvc.kv.data() + kvc.len * 2 * size_t(hidden);
    std::copy(qkv_row.begin() + hidden, qkv_row.begin() + 3 * size_t(hidden), kv_row);
    kvc.len += 1;

    const int hd = head_dim;
    const double scale = 1.0 / std::sqrt(double(hd));
    std::vector<double> ctx(hidden, 0.0), row(kvc.len);
    for (int h = 0; h < heads; ++h) {
        const double* qt = qkv_row.data() + size_t(h) * hd;
        for (size_t s = 0; s < kvc.len; ++s) {
            row[s] = kern::active().dot(qt, kvc.kv.data() + s * 2 * size_t(hidden) + size_t(h) * hd, hd) * scale;
        }
        softmax_rows(row.data(), 1, kvc.len);
        double* out = ctx.data() + size_t(h) * hd;
        for (size_t s = 0; s < kvc.len; ++s) {
            kern::active().axpy(row[s], kvc.kv.data() + s * 2 * size_t(hidden) + size_t(hidden) + size_t(h) * hd, out, hd);
        }
    }
    std::vector<double> tmp(hidden);
    proj.forward(ctx.data(), 1, tmp.data());
    kern::active().add(x, tmp.data(), x, hidden);

    norm2.forward(x, 1, xn.data(), inv);
    std::vector<double> h1(4 * size_t(hidden));
    fc.forward(xn.data(), 1, h1.data());
    for (auto& v : h1) v = gelu(v);
    fc_proj.forward(h1.data(), 1, tmp.data());
    kern::active().add(x, tmp.data(), x, hidden);
}

// ------------------------------------------------------------- Embedding

Embedding::Embedding(const std::string& name, int64_t vocab, int d, Rng& rng, double init_std)
    : table(name, {vocab, d}), dim(d) {
    table.init_normal(rng, init_std);
}

void Embedding::forward_row(int64_t id, double* out) const {
    const double* r = table.w.row(id);
    std::copy(r, r + dim, out);
}

void Embedding::backward_row(int64_t id, const double* dout) {
    kern::active().axpy(1.0, dout, table.g.row(id), dim);
}

std::vector<Param*> Embedding::params() { return {&table}; }

// ---------------------------------------------------------------- Conv1d

Conv1d::Conv1d(const std::string& name, int cin_, int cout_, int k_, int stride_, int pad_,
               int dilation_, Rng& rng, double init_std)
    : w(name + ".w", {cout_, cin_, k_}),
      b(name + ".b", {cout_}),
      cin(cin_),
      cout(cout_),
      k(k_),
      stride(stride_),
      pad(pad_),
      dilation(dilation_) {
    const double std_eff = init_std < 0 ? 1.0 / std::sqrt(double(cin_) * k_) : init_std;
    w.init_normal(rng, std_eff);
}

void Conv1d::forward(const double* x, int t, double* y) const {
    const int to_n = out_len(t);
    if (to_n < 1) throw std::invalid_argument("conv1d: input too short");
    for (int co = 0; co < cout; ++co) {
        std::fill(y + size_t(co) * to_n, y + size_t(co + 1) * to_n, b.w.data[co]);
    }
    for (int co = 0; co < cout; ++co) {
        double* yo = y + size_t(co) * to_n;
        for (int ci = 0; ci < cin; ++ci) {
            const double* xi = x + size_t(ci) * t;
            const double* wk = w.w.ptr() + (size_t(co) * cin + ci) * k;
            for (int kk = 0; kk < k; ++kk) {
                const int off = kk * dilation - pad;
                if (stride == 1) {
                    const int lo = std::max(0, -off);
                    const int hi = std::min(to_n, t - off);
                    if (hi > lo) kern::active().axpy(wk[kk], xi + lo + off, yo + lo, size_t(hi - lo));
                } else {
                    for (int to = 0; to < to_n; ++to) {
                        const int ti = to * stride + off;
                        if (ti >= 0 && ti < t) yo[to] += wk[kk] * xi[ti];
                    }
                }
            }
        }
    }
}

void Conv1d::backward(const double* x, int t, const double* dy, double* dx) {
    const int to_n = out_len(t);
    for (int co = 0; co < cout; ++co) {
        const double* dyo = dy + size_t(co) * to_n;
        for (int to = 0; to < to_n; ++to) b.g.data[co] += dyo[to];
        for (int ci = 0; ci < cin; ++ci) {
            const double* xi = x + size_t(ci) * t;
            double* dxi = dx != nullptr ? dx + size_t(ci) * t : nullptr;
            const double* wk = w.w.ptr() + (size_t(co) * cin + ci) * k;
            double* gk = w.g.ptr() + (size_t(co) * cin + ci) * k;
            for (int kk = 0; kk < k; ++kk) {
                const int off = kk * dilation - pad;
                if (stride == 1) {
                    const int lo = std::max(0, -off);
                    const int hi = std::min(to_n, t - off);
                    if (hi > lo) {
                        gk[kk] += kern::active().dot(dyo + lo, xi + lo + off, size_t(hi - lo));
                        if (dxi != nullptr) kern::active().axpy(wk[kk], dyo + lo, dxi + lo + off, size_t(hi - lo));
                    }
                } else {
                    for (int to = 0; to < to_n; ++to) {
                        const int ti = to * stride + off;
                        if (ti >= 0 && ti < t) {
                            gk[kk] += dyo[to] * xi[ti];
                            if (dxi != nullptr) dxi[ti] += wk[kk] * dyo[to];
                        }
                    }
                }
            }
        }
    }
}

std::vector<Param*> Conv1d::params() { return {&w, &b}; }

// ------------------------------------------------------ ConvTranspose1d

ConvTranspose1d::ConvTranspose1d(const std::string& name, int cin_, int cout_, int k_, int stride_,
                                 int pad_, Rng& rng, double init_std)
    : w(name + ".w", {cin_, cout_, k_}),
      b(name + ".b", {cout_}),
      cin(cin_),
      cout(cout_),
      k(k_),
      stride(stride_),
      pad(pad_) {
    const double std_eff = init_std < 0 ? 1.0 / std::sqrt(double(cin_) * k_) : init_std;
    w.init_normal(rng, std_eff);
}

void ConvTranspose1d::forward(const double* x, int t, double* y) const {
    const int to_n = out_len(t);
    if (to_n < 1) throw std::invalid_argument("conv_transpose1d: input too short");
    for (int co = 0; co < cout; ++co) {
        std::fill(y + size_t(co) * to_n, y + size_t(co + 1) * to_n, b.w.data[co]);
    }
    for (int ci = 0; ci < cin; ++ci) {
        const double* xi = x + size_t(ci) * t;
        for (int co = 0; co < cout; ++co) {
            double* yo = y + size_t(co) * to_n;
            const double* wk = w.w.ptr() + (size_t(ci) * cout + co) * k;
            for (int ti = 0; ti < t; ++ti) {
                const int base = ti * stride - pad;
                for (int kk = 0; kk < k; ++kk) {
                    const int to = base + kk;
                    if (to >= 0 && to < to_n) yo[to] += wk[kk] * xi[ti];
                }
            }
        }
    }
}

void ConvTranspose1d::backward(const double* x, int t, const double* dy, double* dx) {
    const int to_n = out_len(t);
    for (int co = 0; co < cout; ++co) {
        const double* dyo = dy + size_t(co) * to_n;
        for (int to = 0; to < to_n; ++to) b.g.data[co] += dyo[to];
    }
    for (int ci = 0; ci < cin; ++ci) {
        const double* xi = x + size_t(ci) * t;
        double* dxi = dx != nullptr ? dx + size_t(ci) * t : nullptr;
        for (int co = 0; co < cout; ++co) {
            const double* dyo = dy + size_t(co) * to_n;
            const double* wk = w.w.ptr() + (size_t(ci) * cout + co) * k;
            double* gk = w.g.ptr() + (size_t(ci) * cout + co) * k;
            for (int ti = 0; ti < t; ++ti) {
                const int base = ti * stride - pad;
                for (int kk = 0; kk < k; ++kk) {
                    const int to = base + kk;
                    if (to >= 0 && to < to_n) {
                        gk[kk] += dyo[to] * xi[ti];
                        if (dxi != nullptr) dxi[ti] += wk[kk] * dyo[to];
                    }
                }
            }
        }
    }
}

std::vector<Param*> ConvTranspose1d::params() { return {&w, &b}; }

// ----------------------------------------------------------------- Snake

Snake::Snake(const std::string& name, int channels_) : alpha(name + ".alpha", {channels_}), channels(channels_) {
    std::fill(alpha.w.data.begin(), alpha.w.data.end(), 1.0);
}

void Snake::forward(const double* x, int t, double* y) const {
    for (int c = 0; c < channels; ++c) {
        const double a = alpha.w.data[c];
        const double* xc = x + size_t(c) * t;
        double* yc = y + size_t(c) * t;
        if (std::abs(a) < 1e-8) {
            for (int i = 0; i < t; ++i) yc[i] = xc[i] + a * xc[i] * xc[i];
        } else {
            for (int i = 0; i < t; ++i) {
                const double s = std::sin(a * xc[i]);
                yc[i] = xc[i] + s * s / a;
            }
        }
    }
}

void Snake::backward(const double* x, int t, const double* dy, double* dx) {
    for (int c = 0; c < channels; ++c) {
        const double a = alpha.w.data[c];
        const double* xc = x + size_t(c) * t;
        const double* dyc = dy + size_t(c) * t;
        double* dxc = dx != nullptr ? dx + size_t(c) * t : nullptr;
        double da = 0.0;
        if (std::abs(a) < 1e-8) {
            for (int i = 0; i < t; ++i) {
                if (dxc != nullptr) dxc[i] += dyc[i] * (1.0 + 2.0 * a * xc[i]);
                da += dyc[i] * xc[i] * xc[i];
            }
        } else {
            for (int i = 0; i < t; ++i) {
                const double s2 = std::sin(2.0 * a * xc[i]);
                const double s = std::sin(a * xc[i]);
                if (dxc != nullptr) dxc[i] += dyc[i] * (1.0 + s2);
                da += dyc[i] * (xc[i] * s2 / a - s * s / (a * a));
            }
        }
        alpha.g.data[c] += da;
    }
}

std::vector<Param*> Snake::params() { return {&alpha}; }

// --------------------------------------------------------- cross entropy

CeResult cross_entropy(const double* logits, size_t n, size_t vocab, const int64_t* targets,
                       const double* weights, double* dlogits) {
    CeResult res;
    res.per_pos_ce.assign(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        if (weights[i] < 0.0) throw std::invalid_argument("cross_entropy: negative weight");
        if (weights[i] > 0.0 && targets[i] < 0) {
            throw std::invalid_argument("cross_entropy: weighted position without target");
        }
        res.weight_sum += weights[i];
    }
    if (res.weight_sum <= 0.0) throw std::invalid_argument("cross_entropy: all-zero weights");

    std::vector<double> probs(vocab);
    double weighted = 0.0;
    const double inv_wsum = 1.0 / res.weight_sum;
    for (size_t i = 0; i < n; ++i) {
        if (weights[i] == 0.0) continue;  // skipped entirely: zero gradient by construction
        const double* row = logits + i * vocab;
        std::copy(row, row + vocab, probs.data());
        softmax_rows(probs.data(), 1, vocab);
        const int64_t tgt = targets[i];
        const double p = std::max(probs[size_t(tgt)], 1e-300);
        const double ce = -std::log(p);
        res.per_pos_ce[i] = ce;
        weighted += weights[i] * ce;
        if (dlogits != nullptr) {
            double* drow = dlogits + i * vocab;
            const double coef = weights[i] * inv_wsum;
            kern::active().axpy(coef, probs.data(), drow, vocab);
            drow[size_t(tgt)] -= coef;
        }
    }
    res.loss = weighted * inv_wsum;
    return res;
}

// ------------------------------------------------------------------ Adam

void Adam::step(const std::vector<Param*>& params) {
    if (states_.size() != params.size()) {
        if (!states_.empty()) throw std::runtime_error("adam: parameter set changed mid-run");
        states_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            states_[i].m.assign(params[i]->w.numel(), 0.0);
            states_[i].v.assign(params[i]->w.numel(), 0.0);
        }
    }
    t_ += 1;
    const double bc1 = 1.0 - std::pow(opts_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, double(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        Param* p = params[i];
        if (p->frozen) continue;
        auto& st = states_[i];
        const int64_t rows = p->w.rows();
        const int64_t cols = p->w.numel() > 0 && rows > 0 ? int64_t(p->w.numel()) / rows : 0;
        const bool row_granular = !p->frozen_rows.empty() && rows > 0 && cols > 0;
        auto update_range = [&](size_t lo, size_t hi) {
            for (size_t j = lo; j < hi; ++j) {
                const double g = p->g.data[j];
                st.m[j] = opts_.beta1 * st.m[j] + (1.0 - opts_.beta1) * g;
                st.v[j] = opts_.beta2 * st.v[j] + (1.0 - opts_.beta2) * g * g;
                const double mhat = st.m[j] / bc1;
                const double vhat = st.v[j] / bc2;
                p->w.data[j] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
            }
        };
        if (!row_granular) {
            update_range(0, p->w.numel());
        } else {
            for (int64_t r = 0; r < rows; ++r) {
                if (p->row_frozen(r)) continue;
                update_range(size_t(r) * cols, size_t(r + 1) * cols);
            }
        }
    }
}

void Adam::reset() {
    t_ = 0;
    states_.clear();
}

}  // namespace omni::nn
