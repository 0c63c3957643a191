#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "omni/nn.hpp"
#include "omni/rng.hpp"

using namespace omni;

namespace {

// Central-difference check of dL/dp for a sample of parameters.
// loss_fn must be a pure function of current parameter values.
void check_param_grads(std::vector<Param*> params, const std::function<double()>& loss_fn,
                       const std::function<void()>& backward_fn, Rng& rng, int samples,
                       double tol = 1e-5, double h = 1e-6) {
    for (auto* p : params) p->g.zero();
    backward_fn();
    int checked = 0;
    while (checked < samples) {
        Param* p = params[rng.below(params.size())];
        if (p->w.numel() == 0) continue;
        const size_t idx = rng.below(p->w.numel());
        const double orig = p->w.data[idx];
        p->w.data[idx] = orig + h;
        const double lp = loss_fn();
        p->w.data[idx] = orig - h;
        const double lm = loss_fn();
        p->w.data[idx] = orig;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = p->g.data[idx];
        const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
        INFO("param ", p->name, " idx ", idx, " fd ", fd, " an ", an);
        CHECK(err < tol);
        ++checked;
    }
}

}  // namespace

TEST_CASE("linear backward matches finite differences") {
    Rng rng(1);
    nn::Linear lin("lin", 7, 5, true, rng, -1.0);
    std::vector<double> x(3 * 7), dy(3 * 5);
    for (auto& v : x) v = rng.normal();
    for (auto& v : dy) v = rng.normal();

    auto loss = [&] {
        std::vector<double> y(3 * 5);
        lin.forward(x.data(), 3, y.data());
        double l = 0.0;
        for (size_t i = 0; i < y.size(); ++i) l += y[i] * dy[i];
        return l;
    };
    auto backward = [&] {
        std::vector<double> y(3 * 5);
        lin.forward(x.data(), 3, y.data());
        lin.backward(x.data(), dy.data(), 3, nullptr);
    };
    check_param_grads(lin.params(), loss, backward, rng, 20);

    // input gradient
    std::vector<double> dx(3 * 7, 0.0);
    lin.backward(x.data(), dy.data(), 3, dx.data());
    const double h = 1e-6;
    for (int rep = 0; rep < 10; ++rep) {
        const size_t i = rng.below(x.size());
        const double orig = x[i];
        x[i] = orig + h;
        const double lp = loss();
        x[i] = orig - h;
        const double lm = loss();
        x[i] = orig;
        CHECK(std::abs((lp - lm) / (2 * h) - dx[i]) < 1e-6 * std::max(1.0, std::abs(dx[i])));
    }
}

TEST_CASE("rmsnorm backward matches finite differences") {
    Rng rng(2);
    nn::RmsNorm norm("n", 9);
    for (auto& g : norm.g.w.data) g = 1.0 + 0.1 * rng.normal();
    std::vector<double> x(4 * 9), dy(4 * 9);
    for (auto& v : x) v = rng.normal();
    for (auto& v : dy) v = rng.normal();

    std::vector<double> inv;
    auto loss = [&] {
        std::vector<double> y(4 * 9);
        std::vector<double> tmp;
        norm.forward(x.data(), 4, y.data(), tmp);
        double l = 0.0;
        for (size_t i = 0; i < y.size(); ++i) l += y[i] * dy[i];
        return l;
    };
    std::vector<double> dx(4 * 9, 0.0);
    auto backward = [&] {
        std::vector<double> y(4 * 9);
        norm.forward(x.data(), 4, y.data(), inv);
        norm.backward(x.data(), inv, dy.data(), 4, dx.data());
    };
    check_param_grads(norm.params(), loss, backward, rng, 9);

    const double h = 1e-6;
    for (int rep = 0; rep < 10; ++rep) {
        const size_t i = rng.below(x.size());
        const double orig = x[i];
        x[i] = orig + h;
        const double lp = loss();
        x[i] = orig - h;
        const double lm = loss();
        x[i] = orig;
        const double fd = (lp - lm) / (2 * h);
        CHECK(std::abs(fd - dx[i]) < 1e-5 * std::max(1.0, std::abs(dx[i])));
    }
}

TEST_CASE("transformer block backward matches finite differences") {
    Rng rng(3);
    for (bool causal : {true, false}) {
        nn::TransformerBlock blk("blk", 8, 2, causal, causal, rng, 0.2);
        const size_t seq = 5;
        std::vector<double> x0(seq * 8), dy(seq * 8);
        for (auto& v : x0) v = rng.normal();
        for (auto& v : dy) v = rng.normal();

        auto loss = [&] {
            std::vector<double> x = x0;
            nn::TransformerBlock::Cache cache;
            blk.forward(x.data(), seq, cache);
            double l = 0.0;
            for (size_t i = 0; i < x.size(); ++i) l += x[i] * dy[i];
            return l;
        };
        std::vector<double> dx;
        auto backward = [&] {
            std::vector<double> x = x0;
            nn::TransformerBlock::Cache cache;
            blk.forward(x.data(), seq, cache);
            dx = dy;
            blk.backward(dx.data(), seq, cache);
        };
        check_param_grads(blk.params(), loss, backward, rng, 25, 2e-5);

        // input grads
        backward();
        const double h = 1e-6;
        for (int rep = 0; rep < 8; ++rep) {
            const size_t i = rng.below(x0.size());
            const double orig = x0[i];
            x0[i] = orig + h;
            const double lp = loss();
            x0[i] = orig - h;
            const double lm = loss();
            x0[i] = orig;
            const double fd = (lp - lm) / (2 * h);
            CHECK(std::abs(fd - dx[i]) < 2e-5 * std::max(1.0, std::abs(dx[i])));
        }
    }
}

TEST_CASE("batched forward equals forward_one with kv cache") {
    Rng rng(4);
    nn::TransformerBlock blk("blk", 16, 4, true, true, rng, 0.2);
    const size_t seq = 6;
    std::vector<double> x(seq * 16);
    for (auto& v : x) v = rng.normal();

    std::vector<double> batch = x;
    nn::TransformerBlock::Cache cache;
    blk.forward(batch.data(), seq, cache);

    nn::TransformerBlock::KvCache kv;
    kv.reset(seq, 16);
    for (size_t t = 0; t < seq; ++t) {
        std::vector<double> row(x.begin() + t * 16, x.begin() + (t + 1) * 16);
        blk.forward_one(row.data(), kv);
        for (int j = 0; j < 16; ++j) {
            CHECK(row[j] == doctest::Approx(batch[t * 16 + j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("conv1d backward matches finite differences") {
    Rng rng(5);
    for (auto [stride, dil] : {std::pair<int, int>{1, 1}, {1, 3}, {2, 1}}) {
        nn::Conv1d conv("c", 3, 4, 5, stride, 2, dil, rng, -1.0);
        const int t = 17;
        const int to = conv.out_len(t);
        REQUIRE(to > 0);
        std::vector<double> x(3 * t), dy(4 * size_t(to));
        for (auto& v : x) v = rng.normal();
        for (auto& v : dy) v = rng.normal();

        auto loss = [&] {
            std::vector<double> y(4 * size_t(to));
            conv.forward(x.data(), t, y.data());
            double l = 0.0;
            for (size_t i = 0; i < y.size(); ++i) l += y[i] * dy[i];
            return l;
        };
        std::vector<double> dx(3 * t, 0.0);
        auto backward = [&] { conv.backward(x.data(), t, dy.data(), dx.data()); };
        check_param_grads(conv.params(), loss, backward, rng, 15);

        const double h = 1e-6;
        for (int rep = 0; rep < 8; ++rep) {
            const size_t i = rng.below(x.size());
            const double orig = x[i];
            x[i] = orig + h;
            const double lp = loss();
            x[i] = orig - h;
            const double lm = loss();
            x[i] = orig;
            CHECK(std::abs((lp - lm) / (2 * h) - dx[i]) < 1e-6 * std::max(1.0, std::abs(dx[i])));
        }
    }
}

TEST_CASE("conv_transpose1d upsamples by exact factors") {
    Rng rng(6);
    // the vocoder's factor/kernel/pad combos
    for (auto [s, k, p] : {std::tuple<int, int, int>{8, 16, 4}, {5, 15, 5}, {4, 8, 2}}) {
        nn::ConvTranspose1d up("u", 2, 3, k, s, p, rng, -1.0);
        for (int t : {1, 7, 25}) {
            CHECK(up.out_len(t) == s * t);
        }
        const int t = 6;
        const int to = up.out_len(t);
        std::vector<double> x(2 * t), dy(3 * size_t(to));
        for (auto& v : x) v = rng.normal();
        for (auto& v : dy) v = rng.normal();
        auto loss = [&] {
            std::vector<double> y(3 * size_t(to));
            up.forward(x.data(), t, y.data());
            double l = 0.0;
            for (size_t i = 0; i < y.size(); ++i) l += y[i] * dy[i];
            return l;
        };
        std::vector<double> dx(2 * t, 0.0);
        auto backward = [&] { up.backward(x.data(), t, dy.data(), dx.data()); };
        check_param_grads(up.params(), loss, backward, rng, 10);
    }
}

TEST_CASE("snake activation gradients and small-alpha limit") {
    Rng rng(7);
    nn::Snake snake("s", 3);
    for (auto& a : snake.alpha.w.data) a = 0.5 + rng.uniform();
    const int t = 11;
    std::vector<double> x(3 * t), dy(3 * t);
    for (auto& v : x) v = rng.normal();
    for (auto& v : dy) v = rng.normal();

    auto loss = [&] {
        std::vector<double> y(3 * t);
        snake.forward(x.data(), t, y.data());
        double l = 0.0;
        for (size_t i = 0; i < y.size(); ++i) l += y[i] * dy[i];
        return l;
    };
    std::vector<double> dx(3 * t, 0.0);
    auto backward = [&] { snake.backward(x.data(), t, dy.data(), dx.data()); };
    check_param_grads(snake.params(), loss, backward, rng, 3);

    // alpha -> 0+ reduces to identity: |snake(x) - x| <= 1e-6 at alpha = 1e-4
    nn::Snake tiny("tiny", 1);
    tiny.alpha.w.data[0] = 1e-4;
    std::vector<double> xs(21), ys(21);
    for (int i = 0; i < 21; ++i) xs[i] = -0.1 + 0.01 * i;
    tiny.forward(xs.data(), 21, ys.data());
    for (int i = 0; i < 21; ++i) CHECK(std::abs(ys[i] - xs[i]) < 1e-6);
}

TEST_CASE("weighted cross entropy") {
    Rng rng(8);
    const size_t n = 6, vocab = 10;
    std::vector<double> logits(n * vocab);
    for (auto& v : logits) v = rng.normal();
    std::vector<int64_t> targets = {1, 2, 3, -1, 5, 6};
    std::vector<double> weights = {1.0, 0.5, 1.0, 0.0, 2.0, 1.0};

    auto res = nn::cross_entropy(logits.data(), n, vocab, targets.data(), weights.data(), nullptr);
    CHECK(res.weight_sum == doctest::Approx(5.5));
    // recount oracle
    double manual = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (weights[i] == 0.0) continue;
        std::vector<double> p(logits.begin() + i * vocab, logits.begin() + (i + 1) * vocab);
        nn::softmax_rows(p.data(), 1, vocab);
        manual += weights[i] * -std::log(p[size_t(targets[i])]);
    }
    CHECK(res.loss == doctest::Approx(manual / 5.5).epsilon(1e-12));

    // gradient check
    std::vector<double> dlogits(n * vocab, 0.0);
    nn::cross_entropy(logits.data(), n, vocab, targets.data(), weights.data(), dlogits.data());
    const double h = 1e-6;
    for (int rep = 0; rep < 20; ++rep) {
        const size_t i = rng.below(logits.size());
        const double orig = logits[i];
        logits[i] = orig + h;
        const double lp = nn::cross_entropy(logits.data(), n, vocab, targets.data(), weights.data(), nullptr).loss;
        logits[i] = orig - h;
        const double lm = nn::cross_entropy(logits.data(), n, vocab, targets.data(), weights.data(), nullptr).loss;
        logits[i] = orig;
        CHECK(std::abs((lp - lm) / (2 * h) - dlogits[i]) < 1e-6);
    }

    std::vector<double> zeros(n, 0.0);
    CHECK_THROWS_AS(nn::cross_entropy(logits.data(), n, vocab, targets.data(), zeros.data(), nullptr),
                    std::invalid_argument);
}

TEST_CASE("adam skips frozen rows bit-exactly") {
    Rng rng(9);
    Param p("emb", {4, 3});
    p.init_normal(rng, 1.0);
    p.frozen_rows.push_back({0, 2});
    for (auto& g : p.g.data) g = rng.normal();
    const Tensor before = p.w;

    nn::Adam opt({.lr = 0.1});
    opt.step({&p});
    for (int64_t r = 0; r < 4; ++r) {
        for (int64_t c = 0; c < 3; ++c) {
            if (r < 2) {
                CHECK(p.w.data[r * 3 + c] == before.data[r * 3 + c]);
            } else {
                CHECK(p.w.data[r * 3 + c] != before.data[r * 3 + c]);
            }
        }
    }

    Param q("blk", {2, 2});
    q.init_normal(rng, 1.0);
    q.frozen = true;
    for (auto& g : q.g.data) g = 1.0;
    const Tensor qbefore = q.w;
    nn::Adam opt2;
    opt2.step({&q});
    CHECK(q.w.data == qbefore.data);
}

TEST_CASE("gradient accumulation is order-independent to 1e-10") {
    Rng rng(10);
    nn::Linear lin("lin", 6, 6, true, rng, -1.0);
    std::vector<std::vector<double>> micro(3);
    std::vector<std::vector<double>> douts(3);
    for (int b = 0; b < 3; ++b) {
        micro[b].resize(4 * 6);
        douts[b].resize(4 * 6);
        for (auto& v : micro[b]) v = rng.normal();
        for (auto& v : douts[b]) v = rng.normal();
    }
    auto run_order = [&](std::vector<int> order) {
        for (auto* p : lin.params()) p->g.zero();
        for (int b : order) {
            std::vector<double> y(4 * 6);
            lin.forward(micro[b].data(), 4, y.data());
            lin.backward(micro[b].data(), douts[b].data(), 4, nullptr);
        }
        return lin.w.g;
    };
    const auto g1 = run_order({0, 1, 2});
    const auto g2 = run_order({2, 0, 1});
    for (size_t i = 0; i < g1.numel(); ++i) {
        CHECK(std::abs(g1.data[i] - g2.data[i]) < 1e-10);
    }
}
