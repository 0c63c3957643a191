#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "omni/rng.hpp"
#include "omni/vocoder.hpp"

using namespace omni;

namespace {

std::vector<double> voice_like(double seconds, double f0, uint64_t seed, int sr = 16000) {
    Rng rng(seed);
    std::vector<double> w(size_t(seconds * sr), 0.0);
    for (int h = 1; h <= 3; ++h) {
        const double amp = 0.3 / h;
        const double phase = rng.uniform() * 6.28;
        for (size_t i = 0; i < w.size(); ++i) {
            const double env = 0.5 + 0.5 * std::sin(2 * 3.14159 * 3.0 * i / sr + phase);
            w[i] += amp * env * std::sin(2 * 3.14159 * f0 * h * i / sr + phase);
        }
    }
    return w;
}

std::vector<FsqCode> codes_n(int n, uint64_t seed) {
    Rng rng(seed);
    std::vector<FsqCode> c(static_cast<size_t>(n));
    for (auto& x : c) x.value = int64_t(rng.below(6561));
    return c;
}

VocoderConfig toy_cfg() {
    VocoderConfig cfg;
    cfg.base_channels = 24;  // small for fast gradient checks
    cfg.speaker_dim = 8;
    return cfg;
}

}  // namespace

TEST_CASE("config invariant: factors multiply to sample_rate * 0.040") {
    VocoderConfig cfg = toy_cfg();
    CHECK(cfg.samples_per_token() == 640);
    cfg.validate();  // no throw
    cfg.upsample_factors = {8, 5, 4, 2};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.upsample_factors = {8, 5, 4, 4};
    cfg.sample_rate = 8000;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK_THROWS_AS(UnitVocoder(cfg, 1), std::invalid_argument);
}

TEST_CASE("speaker embedding: unit norm, deterministic, speaker separation") {
    const auto ref = voice_like(0.8, 150.0, 1);
    const auto emb = speaker_embed(ref, 8);
    double norm = 0.0;
    for (double v : emb.v) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));

    const auto emb2 = speaker_embed(ref, 8);
    CHECK(emb.v == emb2.v);

    CHECK_THROWS_AS(speaker_embed(voice_like(0.3, 150.0, 2), 8), std::invalid_argument);

    // two synthetic speakers: intra-speaker cosine beats inter-speaker on
    // at least 90% of pairs
    std::vector<SpeakerEmbedding> spk_a, spk_b;
    for (uint64_t s = 0; s < 5; ++s) {
        spk_a.push_back(speaker_embed(voice_like(0.7, 130.0 + 4 * double(s), 10 + s), 8));
        spk_b.push_back(speaker_embed(voice_like(0.7, 260.0 + 4 * double(s), 20 + s), 8));
    }
    auto cosine = [](const SpeakerEmbedding& x, const SpeakerEmbedding& y) {
        double d = 0.0;
        for (size_t i = 0; i < x.v.size(); ++i) d += x.v[i] * y.v[i];
        return d;
    };
    int wins = 0, total = 0;
    for (size_t i = 0; i < 5; ++i) {
        for (size_t j = i + 1; j < 5; ++j) {
            const double intra = std::min(cosine(spk_a[i], spk_a[j]), cosine(spk_b[i], spk_b[j]));
            double worst_inter = -1.0;
            for (size_t k = 0; k < 5; ++k) worst_inter = std::max(worst_inter, cosine(spk_a[i], spk_b[k]));
            if (intra > worst_inter) ++wins;
            ++total;
        }
    }
    CHECK(double(wins) / total >= 0.9);
}

TEST_CASE("synthesize length contract") {
    UnitVocoder voc(toy_cfg(), 7);
    const auto spk = speaker_embed(voice_like(0.6, 180.0, 3), 8);

    CHECK(voc.synthesize(codes_n(25, 1), spk).size() == 16000);  // 1.000 s
    CHECK(voc.synthesize(codes_n(1, 2), spk).size() == 640);
    CHECK(voc.synthesize(codes_n(50, 3), spk).size() == 32000);  // 2.000 s

    CHECK_THROWS_AS(voc.synthesize({}, spk), std::invalid_argument);
    std::vector<FsqCode> bad = {{9999}};
    CHECK_THROWS_AS(voc.synthesize(bad, spk), std::out_of_range);
}

TEST_CASE("length contract holds across 1..500 tokens (sampled)") {
    UnitVocoder voc(toy_cfg(), 7);
    const auto spk = speaker_embed(voice_like(0.6, 180.0, 3), 8);
    Rng rng(11);
    for (int trial = 0; trial < 12; ++trial) {
        const int n = 1 + int(rng.below(500));
        CHECK(voc.synthesize(codes_n(n, uint64_t(trial)), spk).size() == size_t(n) * 640);
    }
}

TEST_CASE("changing the speaker changes the waveform") {
    UnitVocoder voc(toy_cfg(), 7);
    const auto codes = codes_n(5, 4);
    const auto a = voc.synthesize(codes, speaker_embed(voice_like(0.6, 140.0, 5), 8));
    const auto b = voc.synthesize(codes, speaker_embed(voice_like(0.6, 280.0, 6), 8));
    double l2 = 0.0;
    for (size_t i = 0; i < a.size(); ++i) l2 += (a[i] - b[i]) * (a[i] - b[i]);
    CHECK(l2 > 1e-8);
}

TEST_CASE("spectral loss: zero at identity, gradient matches finite differences") {
    Rng rng(13);
    std::vector<double> x(700), y(700);
    for (size_t i = 0; i < x.size(); ++i) {
        x[i] = 0.3 * std::sin(0.05 * double(i)) + 0.01 * rng.normal();
        y[i] = 0.3 * std::sin(0.05 * double(i) + 0.3);
    }
    CHECK(spectral_l1_loss(x, x, false).loss == 0.0);

    const auto res = spectral_l1_loss(x, y, true);
    CHECK(res.loss > 0.0);
    const double h = 1e-6;
    for (int rep = 0; rep < 12; ++rep) {
        const size_t i = rng.below(x.size());
        auto xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd =
            (spectral_l1_loss(xp, y, false).loss - spectral_l1_loss(xm, y, false).loss) / (2 * h);
        CHECK(std::abs(fd - res.grad[i]) < 1e-4 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("train_step: perfect prediction gives zero loss; snake grads check out") {
    UnitVocoder voc(toy_cfg(), 7);
    const auto spk = speaker_embed(voice_like(0.6, 180.0, 3), 8);
    const auto codes = codes_n(3, 9);

    // perfect-prediction input: target equals the model's own output
    const auto self = voc.synthesize(codes, spk);
    for (auto* p : voc.params()) p->g.zero();
    CHECK(voc.train_step_grads(codes, self, spk) == doctest::Approx(0.0).epsilon(1e-12));

    // length mismatch beyond one token span
    std::vector<double> too_short(self.begin(), self.begin() + self.size() - 1300);
    CHECK_THROWS_AS(voc.train_step_grads(codes, too_short, spk), std::invalid_argument);

    // central differences on the snake parameters through the full loss
    const auto target = voice_like(0.12, 170.0, 21);  // 3 tokens * 640 = 1920 samples
    REQUIRE(target.size() == 1920);
    for (auto* p : voc.params()) p->g.zero();
    voc.train_step_grads(codes, target, spk);
    Rng rng(15);
    const double h = 1e-5;
    int checked = 0;
    for (auto* p : voc.snake_params()) {
        for (int rep = 0; rep < 4; ++rep) {
            const size_t idx = rng.below(p->w.numel());
            const double orig = p->w.data[idx];
            auto loss_at = [&](double v) {
                p->w.data[idx] = v;
                UnitVocoder& self_voc = voc;
                // loss without touching grads: rebuild from synthesize path
                const auto out = self_voc.synthesize(codes, spk);
                std::vector<double> xx(out.begin(), out.begin() + target.size());
                std::vector<double> yy(target);
                return spectral_l1_loss(xx, yy, false).loss;
            };
            const double lp = loss_at(orig + h);
            const double lm = loss_at(orig - h);
            p->w.data[idx] = orig;
            const double fd = (lp - lm) / (2 * h);
            const double an = p->g.data[idx];
            INFO("snake ", p->name, " idx ", idx, " fd ", fd, " an ", an);
            CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}) < 1e-4);
            ++checked;
        }
    }
    CHECK(checked >= 8);
}
