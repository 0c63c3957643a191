#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "omni/interleave.hpp"
#include "omni/rng.hpp"

using namespace omni;

namespace {

VocabLayout lay() { return build_layout(default_special_names(), 1024, 512, 6561); }

std::vector<int64_t> ids_n(int n, int64_t base = 10) {
    std::vector<int64_t> v(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) v[size_t(i)] = base + i % 50;
    return v;
}

Segment vision_cont(int n, int width, int provider = -1) {
    return Segment::vision_embeds(std::vector<double>(size_t(n) * width, 0.1), n, width, provider);
}

}  // namespace

TEST_CASE("render_template: think structure matches the turn grammar") {
    const auto L = lay();
    Turn user{Role::user, {Segment::text(ids_n(3))}, false, {}};
    Turn asst{Role::assistant, {Segment::text(ids_n(4))}, true, ids_n(5)};
    const auto segs = render_template({user, asst}, L);

    // template oracle: expected flat special/text structure
    std::vector<int64_t> flat;
    const auto mi = assemble(segs, L, {});
    // [im_start user] txt [im_end] [im_start assistant] [<think>] think [</think>] txt [im_end]
    std::vector<int64_t> expect;
    expect.push_back(L.special("<|im_start|>").value);
    expect.push_back(L.special("<|user|>").value);
    for (int64_t t : ids_n(3)) expect.push_back(L.global_id(Region::text, t).value);
    expect.push_back(L.special("<|im_end|>").value);
    expect.push_back(L.special("<|im_start|>").value);
    expect.push_back(L.special("<|assistant|>").value);
    expect.push_back(L.special("<think>").value);
    for (int64_t t : ids_n(5)) expect.push_back(L.global_id(Region::text, t).value);
    expect.push_back(L.special("</think>").value);
    for (int64_t t : ids_n(4)) expect.push_back(L.global_id(Region::text, t).value);
    expect.push_back(L.special("<|im_end|>").value);
    CHECK(mi.tokens == expect);
}

TEST_CASE("render_template: empty conversation, bad grammar") {
    const auto L = lay();
    CHECK(render_template({}, L).empty());

    Turn user{Role::user, {}, false, {}};
    Turn bad_think = user;
    bad_think.has_think = true;
    CHECK_THROWS_AS(render_template({bad_think}, L), std::invalid_argument);

    CHECK_THROWS_AS(render_template({user, user}, L), std::invalid_argument);  // no alternation
    Turn sys{Role::system, {}, false, {}};
    CHECK_THROWS_AS(render_template({user, sys}, L), std::invalid_argument);   // system not first
    Turn asst{Role::assistant, {}, false, {}};
    CHECK_THROWS_AS(render_template({asst}, L), std::invalid_argument);        // opens with assistant
}

TEST_CASE("render_template: user turn with continuous image then text") {
    const auto L = lay();
    Turn user{Role::user, {vision_cont(4, 8), Segment::text(ids_n(2))}, false, {}};
    const auto segs = render_template({user}, L);
    const auto mi = assemble(segs, L, {});
    std::vector<int64_t> expect;
    expect.push_back(L.special("<|im_start|>").value);
    expect.push_back(L.special("<|user|>").value);
    expect.push_back(L.special("<|vision_start|>").value);
    for (int i = 0; i < 4; ++i) expect.push_back(-1);
    expect.push_back(L.special("<|vision_end|>").value);
    for (int64_t t : ids_n(2)) expect.push_back(L.global_id(Region::text, t).value);
    expect.push_back(L.special("<|im_end|>").value);
    CHECK(mi.tokens == expect);
}

TEST_CASE("assemble: weights by region of the target id") {
    const auto L = lay();
    std::vector<Segment> segs = {
        Segment::specials({L.special("<|im_start|>").value}),
        Segment::text(ids_n(2)),
        Segment::vision_tokens(std::vector<int64_t>(729, 5)),
        Segment::audio_tokens(ids_n(10)),
    };
    const MaskFactors f{1.0, 0.5, 1.0};
    const auto mi = assemble(segs, L, f);
    // every vision-token target carries weight 0.5
    for (size_t t = 0; t + 1 < mi.tokens.size(); ++t) {
        if (mi.targets[t] < 0) continue;
        const auto region = L.resolve(TokenId{mi.targets[t]}).first;
        if (region == Region::vision) CHECK(mi.weights[t] == 0.5);
        if (region == Region::audio) CHECK(mi.weights[t] == 1.0);
        if (region == Region::text || region == Region::specials) CHECK(mi.weights[t] == 1.0);
    }
    // counting oracle: targeted positions = total discrete positions - 1
    size_t targeted = 0;
    for (size_t t = 0; t < mi.targets.size(); ++t) {
        if (mi.targets[t] >= 0) ++targeted;
    }
    CHECK(targeted == mi.tokens.size() - 1);  // no slots in this assembly
}

TEST_CASE("assemble: continuous-only input with one text answer") {
    const auto L = lay();
    std::vector<Segment> segs = {
        vision_cont(6, 16),
        Segment::text(ids_n(3)),
    };
    const auto mi = assemble(segs, L, {});
    size_t positive = 0;
    for (size_t t = 0; t < mi.targets.size(); ++t) {
        if (mi.weights[t] > 0) {
            ++positive;
            CHECK(mi.targets[t] >= 0);
            CHECK(L.resolve(TokenId{mi.targets[t]}).first == Region::text);
        }
    }
    CHECK(positive == 3);  // only the text answer positions carry loss
}

TEST_CASE("assemble rejects malformed segments") {
    const auto L = lay();
    CHECK_THROWS_AS(assemble({Segment::vision_tokens(ids_n(100))}, L, {}), std::invalid_argument);
    CHECK_THROWS_AS(assemble({Segment::text({99999})}, L, {}), std::out_of_range);
    Segment bad = vision_cont(4, 8);
    bad.embeddings.resize(3);
    CHECK_THROWS_AS(assemble({bad}, L, {}), std::invalid_argument);
    CHECK_THROWS_AS(assemble({Segment::text(ids_n(2))}, L, MaskFactors{-1.0, 1.0, 1.0}),
                    std::invalid_argument);
}

TEST_CASE("histogram: zero factor, linearity, brute-force recount") {
    const auto L = lay();
    std::vector<Segment> segs = {
        Segment::text(ids_n(7)),
        Segment::vision_tokens(std::vector<int64_t>(729, 3)),
        Segment::audio_tokens(ids_n(25)),
        Segment::text(ids_n(4)),
    };
    const auto h0 = loss_weights_histogram(assemble(segs, L, MaskFactors{1, 0, 1}), L);
    CHECK(h0.vision == 0.0);

    const auto h1 = loss_weights_histogram(assemble(segs, L, MaskFactors{1, 1, 1}), L);
    const auto h2 = loss_weights_histogram(assemble(segs, L, MaskFactors{1, 2, 1}), L);
    CHECK(h2.vision == doctest::Approx(2.0 * h1.vision).epsilon(1e-15));
    CHECK(h2.text == h1.text);
    CHECK(h2.audio == h1.audio);

    // recount oracle
    const auto mi = assemble(segs, L, MaskFactors{0.7, 0.3, 1.3});
    WeightHistogram manual;
    for (size_t t = 0; t < mi.targets.size(); ++t) {
        if (mi.targets[t] < 0) continue;
        switch (L.resolve(TokenId{mi.targets[t]}).first) {
            case Region::specials:
            case Region::text: manual.text += mi.weights[t]; break;
            case Region::vision: manual.vision += mi.weights[t]; break;
            case Region::audio: manual.audio += mi.weights[t]; break;
        }
    }
    const auto h = loss_weights_histogram(mi, L);
    CHECK(h.text == manual.text);
    CHECK(h.vision == manual.vision);
    CHECK(h.audio == manual.audio);
}

TEST_CASE("randomized assemblies never target a slot; spans stay homogeneous") {
    const auto L = lay();
    Rng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        // random conversation with random modality segments
        std::vector<Turn> convo;
        const int n_turns = 1 + int(rng.below(4));
        for (int t = 0; t < n_turns; ++t) {
            Turn turn;
            turn.role = t % 2 == 0 ? Role::user : Role::assistant;
            const int n_segs = 1 + int(rng.below(3));
            for (int s = 0; s < n_segs; ++s) {
                switch (rng.below(5)) {
                    case 0: turn.content.push_back(Segment::text(ids_n(1 + int(rng.below(8))))); break;
                    case 1: turn.content.push_back(Segment::vision_tokens(std::vector<int64_t>(729, int64_t(rng.below(512))))); break;
                    case 2: turn.content.push_back(Segment::audio_tokens(ids_n(1 + int(rng.below(30))))); break;
                    case 3: turn.content.push_back(vision_cont(1 + int(rng.below(12)), 8)); break;
                    default: {
                        // tagged editing pair: continuous then discrete in one span
                        auto c = vision_cont(1 + int(rng.below(12)), 8);
                        c.edit_pair = true;
                        auto d = Segment::vision_tokens(std::vector<int64_t>(729, 1));
                        d.edit_pair = true;
                        turn.content.push_back(c);
                        turn.content.push_back(d);
                        break;
                    }
                }
            }
            if (turn.role == Role::assistant && rng.below(3) == 0) {
                turn.has_think = true;
                turn.think_ids = ids_n(4);
            }
            convo.push_back(turn);
        }
        const auto mi = assemble(render_template(convo, L), L, {});

        // no slot is ever a target
        for (size_t t = 0; t < mi.targets.size(); ++t) {
            if (mi.tokens[t + 1] < 0) {
                CHECK(mi.targets[t] == -1);
                CHECK(mi.weights[t] == 0.0);
            }
        }
        // span integrity: between vision_start/end either exactly 729 discrete
        // vision ids, only slots, or (edit pair) slots followed by 729 ids
        const int64_t vs = L.special("<|vision_start|>").value;
        const int64_t ve = L.special("<|vision_end|>").value;
        size_t i = 0;
        while (i < mi.tokens.size()) {
            if (mi.tokens[i] == vs) {
                size_t j = i + 1;
                int n_vis = 0, n_slot = 0;
                bool slot_then_vis_ok = true;
                bool seen_vis = false;
                while (j < mi.tokens.size() && mi.tokens[j] != ve) {
                    if (mi.tokens[j] < 0) {
                        ++n_slot;
                        if (seen_vis) slot_then_vis_ok = false;  // mixture inside span
                    } else {
                        CHECK(L.resolve(TokenId{mi.tokens[j]}).first == Region::vision);
                        ++n_vis;
                        seen_vis = true;
                    }
                    ++j;
                }
                REQUIRE(j < mi.tokens.size());  // span closed
                CHECK(slot_then_vis_ok);
                if (n_vis > 0) CHECK(n_vis == 729);
                if (n_slot > 0 && n_vis > 0) {
                    // tagged edit pair is the only legal mixture
                    CHECK(n_vis == 729);
                }
                i = j + 1;
            } else {
                ++i;
            }
        }
    }
}

TEST_CASE("jsonl dump is stable") {
    const auto L = lay();
    const auto mi = assemble({Segment::text({1, 2}), vision_cont(1, 4)}, L, {});
    CHECK(to_jsonl(mi) ==
          "{\"tokens\":[17,18,-1],\"slots\":[2],\"targets\":[18,-1],\"weights\":[1,0]}");
}
