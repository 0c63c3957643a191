#pragma once
// Unified token space: control tokens, byte-level text, vision codebook and
// audio codebook entries laid out as contiguous global-id regions.

#include <cstdint>
#include <string>
#include <vector>

#include "omni/tensor.hpp"

namespace omni {

enum class Region { specials = 0, text = 1, vision = 2, audio = 3 };

const char* region_name(Region r);

struct TokenId {
    int64_t value = 0;
};

struct VocabLayout {
    std::vector<std::string> special_tokens;
    int64_t text_size = 0;
    int64_t vision_codebook_size = 0;
    int64_t audio_codebook_size = 0;
    int64_t region_offsets[4] = {0, 0, 0, 0};  // specials, text, vision, audio
    int64_t total = 0;

    int64_t region_size(Region r) const;
    int64_t offset(Region r) const { return region_offsets[int(r)]; }

    TokenId global_id(Region r, int64_t local_id) const;
    std::pair<Region, int64_t> resolve(TokenId id) const;

    // id of a named control token
    TokenId special(const std::string& name) const;
    bool has_special(const std::string& name) const;

    // UTF-8 TSV of name <tab> id, one row per token
    std::string to_tsv() const;
};

// The nine required control names plus padding/reserved slots, 16 total.
std::vector<std::string> default_special_names();

VocabLayout build_layout(const std::vector<std::string>& special_names, int64_t text_size,
                         int64_t vision_size, int64_t audio_size);

enum class FreezePolicy { vocab_expansion, full, adapter_only };

FreezePolicy freeze_policy_from_string(const std::string& s);
std::string freeze_policy_to_string(FreezePolicy p);

// Applies a freeze policy to a parameter registry. Embedding/head parameters
// get row-granular masks derived from the layout; named groups match by
// parameter-name prefix. `adapter_group` is the prefix kept trainable under
// adapter_only. Returns the number of parameters touched.
struct FreezeMask {
    FreezePolicy policy{FreezePolicy::full};
    std::string adapter_group;
    uint64_t version = 0;  // stamped by the orchestrator on every handoff

    // parameter prefixes treated as embedding-like (row-granular freeze)
    std::vector<std::string> row_granular_prefixes;

    void apply(ParamRegistry& reg, const VocabLayout& layout) const;
};

FreezeMask make_freeze_mask(FreezePolicy policy, const std::string& adapter_group = "");

// Toy byte-level text tokenizer: 256 byte tokens plus greedy pair merges
// learned from a sample corpus, up to text_size entries.
class ByteTokenizer {
public:
    explicit ByteTokenizer(int64_t text_size);

    void train_merges(const std::string& corpus);
    std::vector<int64_t> encode(const std::string& text) const;  // local text ids
    std::string decode(const std::vector<int64_t>& ids) const;

    int64_t size() const { return text_size_; }
    const std::vector<std::pair<int64_t, int64_t>>& merges() const { return merges_; }
    void set_merges(std::vector<std::pair<int64_t, int64_t>> m);
    std::string token_name(int64_t local_id) const;

private:
    int64_t text_size_;
    std::vector<std::pair<int64_t, int64_t>> merges_;  // merge i produces id 256+i
};

}  // namespace omni
