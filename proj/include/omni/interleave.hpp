#pragma once
// Builds the single interleaved sequence the backbone consumes: discrete ids,
// continuous-embedding injection slots, chat/think templating, shifted
// targets, and per-position loss weights.

#include <cstdint>
#include <string>
#include <vector>

#include "omni/vocab.hpp"

namespace omni {

enum class SegmentKind {
    special_ids,        // control tokens (emitted by the template renderer)
    text_ids,
    vision_discrete,    // exactly 729 local codebook ids
    audio_discrete,     // local codes at 25 Hz
    vision_continuous,  // injection slots
    audio_continuous,
};

enum class Role { system, user, assistant };

struct Segment {
    SegmentKind kind{};
    std::vector<int64_t> local_ids;   // discrete kinds
    std::vector<double> embeddings;   // continuous kinds, [count, width] row-major
    int64_t emb_count = 0;
    int emb_width = 0;
    // continuous-then-discrete pair of the same image shares one vision span
    bool edit_pair = false;
    // training wiring: which provider produced the continuous rows
    int provider = -1;

    static Segment text(std::vector<int64_t> ids);
    static Segment specials(std::vector<int64_t> ids);
    static Segment vision_tokens(std::vector<int64_t> ids);
    static Segment audio_tokens(std::vector<int64_t> ids);
    static Segment vision_embeds(std::vector<double> rows, int64_t count, int width, int provider = -1);
    static Segment audio_embeds(std::vector<double> rows, int64_t count, int width, int provider = -1);
};

struct Turn {
    Role role{};
    std::vector<Segment> content;
    bool has_think = false;
    std::vector<int64_t> think_ids;  // local text ids
};

struct MaskFactors {
    double text = 1.0;
    double vision = 1.0;
    double audio = 1.0;
};

struct ModelInput {
    std::vector<int64_t> tokens;          // global ids; -1 marks an injection slot
    std::vector<double> slot_embeddings;  // [n_slots, width]
    std::vector<int64_t> slot_pos;        // position of each slot row
    std::vector<int32_t> slot_provider;   // provider per slot row (-1 = frozen source)
    std::vector<int64_t> targets;         // length L-1; -1 where the next position is a slot
    std::vector<double> weights;          // length L-1
    int width = 0;

    size_t length() const { return tokens.size(); }
    bool is_slot(size_t pos) const { return tokens[pos] < 0; }
};

// Wraps turns with turn-start/role/turn-end control tokens, think spans with
// think-open/close, and modality segments with their start/end tokens.
// Think content is only legal on assistant turns.
std::vector<Segment> render_template(const std::vector<Turn>& conversation, const VocabLayout& lay);

// Concatenates segments in order. Discrete ids become inputs and shifted
// targets weighted by the modality factor of the target id's region (control
// tokens carry the text factor); continuous slots are inputs only.
ModelInput assemble(const std::vector<Segment>& segments, const VocabLayout& lay,
                    const MaskFactors& factors);

struct WeightHistogram {
    double text = 0.0;     // text + specials regions
    double vision = 0.0;
    double audio = 0.0;
};
WeightHistogram loss_weights_histogram(const ModelInput& input, const VocabLayout& lay);

// JSON-lines record (ids, slot markers, weights) for golden-file tests
std::string to_jsonl(const ModelInput& input);

}  // namespace omni
