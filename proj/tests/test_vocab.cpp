#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>
#include <sstream>

#include "omni/vocab.hpp"

using namespace omni;

namespace {

VocabLayout default_layout() {
    return build_layout(default_special_names(), 1024, 512, 6561);
}

}  // namespace

TEST_CASE("layout offsets follow cumulative-sum arithmetic") {
    const auto lay = default_layout();
    // oracle: independent cumulative sum over region sizes
    const int64_t sizes[4] = {16, 1024, 512, 6561};
    int64_t acc = 0;
    for (int r = 0; r < 4; ++r) {
        CHECK(lay.region_offsets[r] == acc);
        acc += sizes[r];
    }
    CHECK(lay.total == acc);
    CHECK(lay.total == 8113);
    CHECK(lay.offset(Region::audio) == 1552);
    // audio codebook size matches the paired fsq lattice: 3^8
    int64_t fsq = 1;
    for (int i = 0; i < 8; ++i) fsq *= 3;
    CHECK(lay.audio_codebook_size == fsq);
    CHECK(lay.audio_codebook_size == 6561);
}

TEST_CASE("unit regions") {
    const auto lay = build_layout({"<|x|>"}, 1, 1, 1);
    CHECK(lay.total == 4);
    for (int r = 0; r < 4; ++r) CHECK(lay.region_offsets[r] == r);
}

TEST_CASE("build_layout rejects bad input") {
    CHECK_THROWS_AS(build_layout({"<|a|>", "<|a|>"}, 10, 10, 10), std::invalid_argument);
    CHECK_THROWS_AS(build_layout({"<|a|>"}, 0, 10, 10), std::invalid_argument);
    CHECK_THROWS_AS(build_layout({}, 10, 10, 10), std::invalid_argument);
}

TEST_CASE("global_id anchors") {
    const auto lay = default_layout();
    CHECK(lay.global_id(Region::audio, 0).value == 1552);
    CHECK(lay.global_id(Region::specials, 0).value == 0);
    CHECK(lay.global_id(Region::audio, 6560).value == 8112);
    CHECK(lay.global_id(Region::audio, 6560).value == lay.total - 1);
    CHECK_THROWS_AS(lay.global_id(Region::vision, 512), std::out_of_range);
}

TEST_CASE("resolve anchors and exhaustive bijection") {
    const auto lay = default_layout();
    auto [r1, l1] = lay.resolve(TokenId{1551});
    CHECK(r1 == Region::vision);
    CHECK(l1 == 511);
    auto [r0, l0] = lay.resolve(TokenId{0});
    CHECK(r0 == Region::specials);
    CHECK(l0 == 0);
    auto [r2, l2] = lay.resolve(TokenId{8112});
    CHECK(r2 == Region::audio);
    CHECK(l2 == 6560);
    CHECK_THROWS_AS(lay.resolve(TokenId{8113}), std::out_of_range);

    // brute-force roundtrip over every id; also proves region exclusivity
    // because each id resolves to exactly one (region, local) pair
    for (int64_t id = 0; id < lay.total; ++id) {
        const auto [r, l] = lay.resolve(TokenId{id});
        CHECK(lay.global_id(r, l).value == id);
    }
}

TEST_CASE("required control tokens are present") {
    const auto lay = default_layout();
    for (const char* name : {"<|im_start|>", "<|im_end|>", "<think>", "</think>",
                             "<|vision_start|>", "<|vision_end|>", "<|audio_start|>",
                             "<|audio_end|>", "<|speaker_ref|>"}) {
        CHECK(lay.has_special(name));
    }
    CHECK(lay.special_tokens.size() == 16);
}

TEST_CASE("freeze masks per policy") {
    const auto lay = default_layout();
    Param embed("backbone.embed", {lay.total, 8});
    Param head("backbone.head.w", {lay.total, 8});
    Param block("backbone.block0.qkv.w", {8, 8});
    Param adapter("audio_adapter.fc1.w", {8, 8});
    ParamRegistry reg;
    reg.add_all({&embed, &head, &block, &adapter});

    SUBCASE("vocab_expansion freezes text+special rows and the trunk") {
        make_freeze_mask(FreezePolicy::vocab_expansion).apply(reg, lay);
        CHECK(embed.frozen == false);
        REQUIRE(embed.frozen_rows.size() == 1);
        CHECK(embed.frozen_rows[0].lo == 0);
        CHECK(embed.frozen_rows[0].hi == 1040);  // 16 specials + 1024 text
        CHECK(embed.row_frozen(1039));
        CHECK_FALSE(embed.row_frozen(1040));
        CHECK_FALSE(embed.row_frozen(8112));
        CHECK(head.row_frozen(0));
        CHECK_FALSE(head.row_frozen(2000));
        CHECK(block.frozen);
        CHECK_FALSE(adapter.frozen);
    }
    SUBCASE("full freezes nothing") {
        make_freeze_mask(FreezePolicy::full).apply(reg, lay);
        for (auto* p : reg.params()) {
            CHECK_FALSE(p->frozen);
            CHECK(p->frozen_rows.empty());
        }
    }
    SUBCASE("adapter_only keeps just the named group") {
        make_freeze_mask(FreezePolicy::adapter_only, "audio_adapter").apply(reg, lay);
        CHECK(embed.frozen);
        CHECK(head.frozen);
        CHECK(block.frozen);
        CHECK_FALSE(adapter.frozen);
    }
    SUBCASE("unknown adapter group throws") {
        CHECK_THROWS_AS(make_freeze_mask(FreezePolicy::adapter_only, "nope").apply(reg, lay),
                        std::invalid_argument);
    }
    SUBCASE("unknown policy string throws") {
        CHECK_THROWS_AS(freeze_policy_from_string("banana"), std::invalid_argument);
    }
}

TEST_CASE("tsv dump covers every id exactly once") {
    const auto lay = build_layout(default_special_names(), 256, 8, 9);
    std::istringstream in(lay.to_tsv());
    std::string line;
    int64_t expect = 0;
    while (std::getline(in, line)) {
        const auto tab = line.find('\t');
        REQUIRE(tab != std::string::npos);
        CHECK(std::stoll(line.substr(tab + 1)) == expect);
        ++expect;
    }
    CHECK(expect == lay.total);
}

TEST_CASE("byte tokenizer round-trips and honors merges") {
    ByteTokenizer tok(300);
    const std::string corpus = "the cat sat on the mat. the cat sat again and again.";
    tok.train_merges(corpus);
    CHECK(tok.merges().size() > 0);
    const std::string text = "the cat sat";
    const auto ids = tok.encode(text);
    CHECK(tok.decode(ids) == text);
    CHECK(int64_t(ids.size()) < int64_t(text.size()));  // merges actually compress
    for (int64_t id : ids) CHECK(id < tok.size());
}
