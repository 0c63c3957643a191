#include "omni/interleave.hpp"

#include <sstream>
#include <stdexcept>

namespace omni {

Segment Segment::text(std::vector<int64_t> ids) {
    Segment s;
    s.kind = SegmentKind::text_ids;
    s.local_ids = std::move(ids);
    return s;
}

Segment Segment::specials(std::vector<int64_t> ids) {
    Segment s;
    s.kind = SegmentKind::special_ids;
    s.local_ids = std::move(ids);
    return s;
}

Segment Segment::vision_tokens(std::vector<int64_t> ids) {
    Segment s;
    s.kind = SegmentKind::vision_discrete;
    s.local_ids = std::move(ids);
    return s;
}

Segment Segment::audio_tokens(std::vector<int64_t> ids) {
    Segment s;
    s.kind = SegmentKind::audio_discrete;
    s.local_ids = std::move(ids);
    return s;
}

Segment Segment::vision_embeds(std::vector<double> rows, int64_t count, int width, int provider) {
    Segment s;
    s.kind = SegmentKind::vision_continuous;
    s.embeddings = std::move(rows);
    s.emb_count = count;
    s.emb_width = width;
    s.provider = provider;
    return s;
}

Segment Segment::audio_embeds(std::vector<double> rows, int64_t count, int width, int provider) {
    Segment s;
    s.kind = SegmentKind::audio_continuous;
    s.embeddings = std::move(rows);
    s.emb_count = count;
    s.emb_width = width;
    s.provider = provider;
    return s;
}

namespace {

int64_t sp(const VocabLayout& lay, const char* name) { return lay.special(name).value; }

bool is_vision_kind(SegmentKind k) {
    return k == SegmentKind::vision_discrete || k == SegmentKind::vision_continuous;
}
bool is_audio_kind(SegmentKind k) {
    return k == SegmentKind::audio_discrete || k == SegmentKind::audio_continuous;
}

}  // namespace

std::vector<Segment> render_template(const std::vector<Turn>& conversation, const VocabLayout& lay) {
    std::vector<Segment> out;
    Role prev_role = Role::system;
    bool first = true;
    for (const auto& turn : conversation) {
        if (turn.has_think && turn.role != Role::assistant) {
            throw std::invalid_argument("render_template: think block on a non-assistant turn");
        }
        if (!first) {
            if (turn.role == Role::system) {
                throw std::invalid_argument("render_template: system turn must come first");
            }
            if (turn.role == prev_role) {
                throw std::invalid_argument("render_template: roles must alternate");
            }
        } else if (turn.role == Role::assistant) {
            throw std::invalid_argument("render_template: conversation cannot open with assistant");
        }
        first = false;
        prev_role = turn.role;

        const int64_t role_tok = turn.role == Role::system   ? sp(lay, "<|system|>")
                                 : turn.role == Role::user   ? sp(lay, "<|user|>")
                                                             : sp(lay, "<|assistant|>");
        out.push_back(Segment::specials({sp(lay, "<|im_start|>"), role_tok}));
        if (turn.has_think) {
            out.push_back(Segment::specials({sp(lay, "<think>")}));
            out.push_back(Segment::text(turn.think_ids));
            out.push_back(Segment::specials({sp(lay, "</think>")}));
        }
        for (size_t i = 0; i < turn.content.size(); ++i) {
            const Segment& seg = turn.content[i];
            switch (seg.kind) {
                case SegmentKind::text_ids:
                case SegmentKind::special_ids:
                    out.push_back(seg);
                    break;
                case SegmentKind::vision_continuous:
                case SegmentKind::vision_discrete: {
                    // an edit pair (continuous then discrete of the same image)
                    // shares a single vision span
                    const bool opens_pair = seg.edit_pair && seg.kind == SegmentKind::vision_continuous &&
                                            i + 1 < turn.content.size() &&
                                            turn.content[i + 1].kind == SegmentKind::vision_discrete &&
                                            turn.content[i + 1].edit_pair;
                    const bool closes_pair = seg.edit_pair && seg.kind == SegmentKind::vision_discrete &&
                                             i > 0 && turn.content[i - 1].edit_pair &&
                                             turn.content[i - 1].kind == SegmentKind::vision_continuous;
                    if (!closes_pair) out.push_back(Segment::specials({sp(lay, "<|vision_start|>")}));
                    out.push_back(seg);
                    if (!opens_pair) out.push_back(Segment::specials({sp(lay, "<|vision_end|>")}));
                    break;
                }
                case SegmentKind::audio_continuous:
                case SegmentKind::audio_discrete:
                    out.push_back(Segment::specials({sp(lay, "<|audio_start|>")}));
                    out.push_back(seg);
                    out.push_back(Segment::specials({sp(lay, "<|audio_end|>")}));
                    break;
            }
        }
        out.push_back(Segment::specials({sp(lay, "<|im_end|>")}));
    }
    return out;
}

ModelInput assemble(const std::vector<Segment>& segments, const VocabLayout& lay,
                    const MaskFactors& factors) {
    if (factors.text < 0 || factors.vision < 0 || factors.audio < 0) {
        throw std::invalid_argument("assemble: negative mask factor");
    }
    ModelInput mi;
    const int64_t grid_tokens = 729;
    for (const auto& seg : segments) {
        switch (seg.kind) {
            case SegmentKind::special_ids:
                for (int64_t id : seg.local_ids) mi.tokens.push_back(lay.global_id(Region::specials, id).value);
                break;
            case SegmentKind::text_ids:
                for (int64_t id : seg.local_ids) mi.tokens.push_back(lay.global_id(Region::text, id).value);
                break;
            case SegmentKind::vision_discrete:
                if (int64_t(seg.local_ids.size()) != grid_tokens) {
                    throw std::invalid_argument("assemble: vision_discrete must hold exactly 729 ids");
                }
                for (int64_t id : seg.local_ids) mi.tokens.push_back(lay.global_id(Region::vision, id).value);
                break;
            case SegmentKind::audio_discrete:
                for (int64_t id : seg.local_ids) mi.tokens.push_back(lay.global_id(Region::audio, id).value);
                break;
            case SegmentKind::vision_continuous:
            case SegmentKind::audio_continuous: {
                if (seg.emb_count <= 0 || seg.emb_width <= 0 ||
                    seg.embeddings.size() != size_t(seg.emb_count) * seg.emb_width) {
                    throw std::invalid_argument("assemble: malformed continuous segment");
                }
                if (mi.width == 0) mi.width = seg.emb_width;
                if (mi.width != seg.emb_width) {
                    throw std::invalid_argument("assemble: continuous segments disagree on width");
                }
                for (int64_t r = 0; r < seg.emb_count; ++r) {
                    mi.slot_pos.push_back(int64_t(mi.tokens.size()));
                    mi.slot_provider.push_back(seg.provider);
                    mi.tokens.push_back(-1);
                    mi.slot_embeddings.insert(mi.slot_embeddings.end(),
                                              seg.embeddings.begin() + r * seg.emb_width,
                                              seg.embeddings.begin() + (r + 1) * seg.emb_width);
                }
                break;
            }
        }
    }
    const size_t L = mi.tokens.size();
    if (L >= 2) {
        mi.targets.resize(L - 1);
        mi.weights.resize(L - 1);
        for (size_t t = 0; t + 1 < L; ++t) {
            const int64_t nxt = mi.tokens[t + 1];
            if (nxt < 0) {  // injection slot: never a target
                mi.targets[t] = -1;
                mi.weights[t] = 0.0;
                continue;
            }
            mi.targets[t] = nxt;
            switch (lay.resolve(TokenId{nxt}).first) {
                case Region::specials:
                case Region::text:
                    mi.weights[t] = factors.text;
                    break;
                case Region::vision:
                    mi.weights[t] = factors.vision;
                    break;
                case Region::audio:
                    mi.weights[t] = factors.audio;
                    break;
            }
        }
    }
    return mi;
}

WeightHistogram loss_weights_histogram(const ModelInput& input, const VocabLayout& lay) {
    WeightHistogram h;
    for (size_t t = 0; t < input.targets.size(); ++t) {
        if (input.targets[t] < 0) continue;
        switch (lay.resolve(TokenId{input.targets[t]}).first) {
            case Region::specials:
            case Region::text:
                h.text += input.weights[t];
                break;
            case Region::vision:
                h.vision += input.weights[t];
                break;
            case Region::audio:
                h.audio += input.weights[t];
                break;
        }
    }
    return h;
}

std::string to_jsonl(const ModelInput& input) {
    std::ostringstream out;
    out << "{\"tokens\":[";
    for (size_t i = 0; i < input.tokens.size(); ++i) {
        if (i) out << ',';
        out << input.tokens[i];
    }
    out << "],\"slots\":[";
    for (size_t i = 0; i < input.slot_pos.size(); ++i) {
        if (i) out << ',';
        out << input.slot_pos[i];
    }
    out << "],\"targets\":[";
    for (size_t i = 0; i < input.targets.size(); ++i) {
        if (i) out << ',';
        out << input.targets[i];
    }
    out << "],\"weights\":[";
    for (size_t i = 0; i < input.weights.size(); ++i) {
        if (i) out << ',';
        out << input.weights[i];
    }
    out << "]}";
    return out.str();
}

}  // namespace omni
