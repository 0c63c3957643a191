#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "omni/rng.hpp"
#include "omni/vision_tokenizer.hpp"

using namespace omni;

namespace {

ImageBuffer blob_image(int w, int h, uint64_t seed) {
    Rng rng(seed);
    ImageBuffer img(w, h);
    const double cx = rng.uniform(0.2, 0.8) * w;
    const double cy = rng.uniform(0.2, 0.8) * h;
    const double sigma = rng.uniform(0.15, 0.3) * std::min(w, h);
    double color[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
    double bg[3] = {rng.uniform() * 0.3, rng.uniform() * 0.3, rng.uniform() * 0.3};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            const double a = std::exp(-d2 / (2 * sigma * sigma));
            double* p = img.px(x, y);
            for (int c = 0; c < 3; ++c) p[c] = bg[c] + (color[c] - bg[c]) * a;
        }
    }
    return img;
}

VisionTokenizerConfig small_cfg() {
    VisionTokenizerConfig cfg;
    cfg.codebook_size = 64;  // small enough for exhaustive sweeps
    return cfg;
}

}  // namespace

TEST_CASE("resize_square") {
    // the paper's canonical non-square case: 928x624 -> 384x384 with aspect kept
    ImageBuffer img(928, 624);
    const auto sq = resize_square(img);
    CHECK(sq.width == 384);
    CHECK(sq.height == 384);
    CHECK(sq.orig_width == 928);
    CHECK(sq.orig_height == 624);

    // identity on an already-square input
    const auto same = resize_square(blob_image(384, 384, 1));
    CHECK(same.width == 384);
    CHECK(same.orig_width == 384);

    // 1x1 extends to a constant image
    ImageBuffer dot(1, 1);
    dot.px(0, 0)[0] = 0.7;
    dot.px(0, 0)[1] = 0.2;
    dot.px(0, 0)[2] = 0.9;
    const auto big = resize_square(dot);
    for (int y = 0; y < 384; y += 97) {
        for (int x = 0; x < 384; x += 97) {
            CHECK(big.px(x, y)[0] == doctest::Approx(0.7));
            CHECK(big.px(x, y)[2] == doctest::Approx(0.9));
        }
    }
}

TEST_CASE("tokenize yields exactly 729 in-range ids") {
    VisionTokenizer tok(small_cfg(), 5);
    const auto grid = tok.tokenize(resize_square(blob_image(200, 120, 2)));
    CHECK(grid.ids.size() == 729);  // 27x27
    for (uint16_t id : grid.ids) CHECK(id < 64);

    // wrong input shape
    CHECK_THROWS_AS(tok.tokenize(blob_image(100, 100, 3)), std::invalid_argument);
}

TEST_CASE("constant image maps to one repeated id") {
    VisionTokenizer tok(small_cfg(), 5);
    ImageBuffer img(384, 384);
    for (auto& v : img.rgb) v = 0.42;
    const auto grid = tok.tokenize(img);
    for (uint16_t id : grid.ids) CHECK(id == grid.ids[0]);
}

TEST_CASE("determinism: same weights and input give the same grid") {
    VisionTokenizer tok(small_cfg(), 5);
    const auto img = resize_square(blob_image(300, 300, 7));
    const auto g1 = tok.tokenize(img);
    const auto g2 = tok.tokenize(img);
    CHECK(g1.ids == g2.ids);
}

TEST_CASE("detokenize: lookup semantics and shape contract") {
    VisionTokenizer tok(small_cfg(), 5);
    VisionTokGrid grid;
    grid.codebook_size = 64;
    grid.ids.assign(729, 17);
    const auto f = tok.detokenize(grid);
    CHECK(f.h == 27);
    CHECK(f.w == 27);
    CHECK(f.c == 64);
    // single repeated id -> constant feature field
    for (int cell = 1; cell < 729; ++cell) {
        for (int j = 0; j < f.c; ++j) {
            CHECK(f.data[size_t(cell) * f.c + j] == f.data[size_t(j)]);
        }
    }
    grid.ids[3] = 9999;
    CHECK_THROWS_AS(tok.detokenize(grid), std::out_of_range);
    grid.ids.resize(100);
    CHECK_THROWS_AS(tok.detokenize(grid), std::invalid_argument);
}

TEST_CASE("centroid fixed point: assign(detokenize(g)) == g") {
    VisionTokenizer tok(small_cfg(), 5);
    Rng rng(23);
    for (int trial = 0; trial < 5; ++trial) {
        VisionTokGrid grid;
        grid.codebook_size = 64;
        grid.ids.resize(729);
        for (auto& id : grid.ids) id = uint16_t(rng.below(64));
        const auto feats = tok.detokenize(grid);
        const auto back = tok.assign(feats);
        CHECK(back.ids == grid.ids);
    }
}

TEST_CASE("train_vq_step overfits a small set and honors freezing") {
    VisionTokenizer tok(small_cfg(), 5);
    std::vector<ImageBuffer> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(resize_square(blob_image(96, 96, uint64_t(40 + i))));

    CHECK_THROWS_AS(tok.train_vq_step({}), std::invalid_argument);

    const double loss0 = tok.train_vq_step(batch);
    double loss = loss0;
    for (int step = 0; step < 200; ++step) loss = tok.train_vq_step(batch);
    CHECK(loss < loss0);

    // freeze contract: a frozen step changes no weight bit
    tok.set_frozen(true);
    std::vector<Tensor> before;
    for (auto* p : tok.params()) before.push_back(p->w);
    tok.train_vq_step(batch);
    auto ps = tok.params();
    for (size_t i = 0; i < ps.size(); ++i) {
        CHECK(ps[i]->w.data == before[i].data);
    }
}

TEST_CASE("every image yields exactly 729 tokens after resize_square") {
    VisionTokenizer tok(small_cfg(), 5);
    Rng rng(31);
    for (int trial = 0; trial < 8; ++trial) {
        const int w = 1 + int(rng.below(700));
        const int h = 1 + int(rng.below(700));
        const auto grid = tok.tokenize(resize_square(blob_image(w, h, uint64_t(trial))));
        CHECK(grid.ids.size() == 729);
    }
}
