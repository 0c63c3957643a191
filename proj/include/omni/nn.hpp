#pragma once
// Hand-rolled layers with explicit forward/backward, double precision.
// Every backward here is finite-difference checked in the test suite.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "omni/kernels.hpp"
#include "omni/rng.hpp"
#include "omni/tensor.hpp"

namespace omni::nn {

inline double gelu(double x) {
    const double c = 0.7978845608028654;  // sqrt(2/pi)
    const double u = c * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_grad(double x) {
    const double c = 0.7978845608028654;
    const double u = c * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

// stable in-place row softmax
void softmax_rows(double* x, size_t rows, size_t cols);

// y = x * W^T + b, W stored [out, in]. init_std < 0 means 1/sqrt(in).
struct Linear {
    Param w;
    Param b;
    bool has_bias;
    int in_dim, out_dim;

    Linear(const std::string& name, int in, int out, bool bias, Rng& rng, double init_std);

    void forward(const double* x, size_t n, double* y) const;
    // accumulates into w.g / b.g; dx (nullable) is ACCUMULATED into
    void backward(const double* x, const double* dy, size_t n, double* dx);
    std::vector<Param*> params();
};

struct RmsNorm {
    Param g;
    int dim;
    double eps = 1e-5;

    RmsNorm(const std::string& name, int d);

    // caches inv_rms per row (resized to n)
    void forward(const double* x, size_t n, double* y, std::vector<double>& inv_rms) const;
    // dx accumulated
    void backward(const double* x, const std::vector<double>& inv_rms, const double* dy, size_t n, double* dx);
    std::vector<Param*> params();
};

// Rotary position embedding over head_dim pairs, applied in place to the q and
// k thirds of a [seq, 3*hidden] buffer. inverse rotates by -theta (gradients).
void rope_apply(double* qkv, size_t seq, int hidden, int heads, size_t pos0, bool inverse);

// Pre-norm transformer block: x += attn(norm1(x)); x += mlp(norm2(x)).
struct TransformerBlock {
    int hidden, heads, head_dim;
    bool causal;
    bool use_rope;
    RmsNorm norm1;
    Linear qkv;
    Linear proj;
    RmsNorm norm2;
    Linear fc;
    Linear fc_proj;

    TransformerBlock(const std::string& name, int hidden, int heads, bool causal, bool use_rope,
                     Rng& rng, double init_std);

    struct Cache {
        std::vector<double> x_in;      // block input
        std::vector<double> x_norm1;
        std::vector<double> qkv_buf;   // post-rope
        std::vector<double> att_out;   // pre-proj context
        std::vector<double> inv_rms1;
        std::vector<double> x_mid;     // after attention residual
        std::vector<double> x_norm2;
        std::vector<double> pre_act;
        std::vector<double> post_act;
        std::vector<double> inv_rms2;
        size_t seq = 0;
    };

    void forward(double* x, size_t seq, Cache& cache) const;
    // dx holds dL/d(output) on entry and dL/d(input) on exit
    void backward(double* dx, size_t seq, const Cache& cache);
    std::vector<Param*> params();

    // single-position inference with an append-only KV cache
    struct KvCache {
        std::vector<double> kv;  // [capacity, 2*hidden]: k row then v row interleaved per position
        size_t len = 0;
        size_t capacity = 0;
        void reset(size_t cap, int hidden) {
            capacity = cap;
            kv.assign(cap * 2 * size_t(hidden), 0.0);
            len = 0;
        }
    };
    void forward_one(double* x, KvCache& kvc) const;
};

struct Embedding {
    Param table;  // [vocab, dim]
    int dim;

    Embedding(const std::string& name, int64_t vocab, int d, Rng& rng, double init_std);
    void forward_row(int64_t id, double* out) const;
    void backward_row(int64_t id, const double* dout);
    std::vector<Param*> params();
};

// 1-D convolution, channels-first: x [Cin, T] -> y [Cout, out_len(T)]
struct Conv1d {
    Param w;  // [Cout, Cin, K]
    Param b;  // [Cout]
    int cin, cout, k, stride, pad, dilation;

    Conv1d(const std::string& name, int cin, int cout, int k, int stride, int pad, int dilation,
           Rng& rng, double init_std);

    int out_len(int t) const { return (t + 2 * pad - dilation * (k - 1) - 1) / stride + 1; }
    void forward(const double* x, int t, double* y) const;
    void backward(const double* x, int t, const double* dy, double* dx);
    std::vector<Param*> params();
};

// Transposed 1-D convolution for exact-factor upsampling: out = (T-1)*stride - 2*pad + K
struct ConvTranspose1d {
    Param w;  // [Cin, Cout, K]
    Param b;  // [Cout]
    int cin, cout, k, stride, pad;

    ConvTranspose1d(const std::string& name, int cin, int cout, int k, int stride, int pad,
                    Rng& rng, double init_std);

    int out_len(int t) const { return (t - 1) * stride - 2 * pad + k; }
    void forward(const double* x, int t, double* y) const;
    void backward(const double* x, int t, const double* dy, double* dx);
    std::vector<Param*> params();
};

// Snake activation y = x + sin^2(a*x)/a, learnable per-channel a.
// |a| below 1e-8 switches to the smooth continuation x + a*x^2.
struct Snake {
    Param alpha;  // [channels]
    int channels;

    Snake(const std::string& name, int channels);
    void forward(const double* x, int t, double* y) const;  // x,y [channels, T]
    void backward(const double* x, int t, const double* dy, double* dx);
    std::vector<Param*> params();
};

// Weighted token cross-entropy over logits [n, vocab].
// targets[i] < 0 marks "no target"; its weight must be 0. Positions with
// weight exactly 0 are skipped entirely so they contribute no gradient.
struct CeResult {
    double loss = 0.0;               // sum(w*ce)/sum(w)
    double weight_sum = 0.0;
    std::vector<double> per_pos_ce;  // unweighted ce per position (0 where skipped)
};

CeResult cross_entropy(const double* logits, size_t n, size_t vocab,
                       const int64_t* targets, const double* weights,
                       double* dlogits /*nullable; accumulated*/);

struct AdamOpts {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamOpts opts = {}) : opts_(opts) {}

    // One step on every non-frozen entry; frozen params and frozen rows stay
    // bit-identical (their moments are never touched either).
    void step(const std::vector<Param*>& params);
    void reset();
    void set_lr(double lr) { opts_.lr = lr; }
    double lr() const { return opts_.lr; }

private:
    struct State {
        std::vector<double> m, v;
    };
    AdamOpts opts_;
    int64_t t_ = 0;
    std::vector<State> states_;
};

}  // namespace omni::nn
