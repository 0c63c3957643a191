#include "omni/vocab.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace omni {

const char* region_name(Region r) {
    switch (r) {
        case Region::specials: return "specials";
        case Region::text: return "text";
        case Region::vision: return "vision";
        case Region::audio: return "audio";
    }
    return "?";
}

int64_t VocabLayout::region_size(Region r) const {
    switch (r) {
        case Region::specials: return int64_t(special_tokens.size());
        case Region::text: return text_size;
        case Region::vision: return vision_codebook_size;
        case Region::audio: return audio_codebook_size;
    }
    return 0;
}

TokenId VocabLayout::global_id(Region r, int64_t local_id) const {
    if (local_id < 0 || local_id >= region_size(r)) {
        throw std::out_of_range("global_id: local id " + std::to_string(local_id) +
                                " out of range for region " + region_name(r));
    }
    return TokenId{offset(r) + local_id};
}

std::pair<Region, int64_t> VocabLayout::resolve(TokenId id) const {
    if (id.value < 0 || id.value >= total) {
        throw std::out_of_range("resolve: id " + std::to_string(id.value) + " >= total " +
                                std::to_string(total));
    }
    for (int r = 3; r >= 0; --r) {
        if (id.value >= region_offsets[r]) {
            return {Region(r), id.value - region_offsets[r]};
        }
    }
    throw std::logic_error("resolve: unreachable");
}

TokenId VocabLayout::special(const std::string& name) const {
    for (size_t i = 0; i < special_tokens.size(); ++i) {
        if (special_tokens[i] == name) return TokenId{int64_t(i)};
    }
    throw std::invalid_argument("special token not in layout: " + name);
}

bool VocabLayout::has_special(const std::string& name) const {
    return std::find(special_tokens.begin(), special_tokens.end(), name) != special_tokens.end();
}

std::string VocabLayout::to_tsv() const {
    std::ostringstream out;
    for (size_t i = 0; i < special_tokens.size(); ++i) {
        out << special_tokens[i] << '\t' << i << '\n';
    }
    for (int64_t i = 0; i < text_size; ++i) {
        out << "text_" << i << '\t' << offset(Region::text) + i << '\n';
    }
    for (int64_t i = 0; i < vision_codebook_size; ++i) {
        out << "v" << i << '\t' << offset(Region::vision) + i << '\n';
    }
    for (int64_t i = 0; i < audio_codebook_size; ++i) {
        out << "a" << i << '\t' << offset(Region::audio) + i << '\n';
    }
    return out.str();
}

std::vector<std::string> default_special_names() {
    return {
        "<|pad|>",          "<|im_start|>",    "<|im_end|>",       "<|system|>",
        "<|user|>",         "<|assistant|>",   "<think>",          "</think>",
        "<|vision_start|>", "<|vision_end|>",  "<|audio_start|>",  "<|audio_end|>",
        "<|speaker_ref|>",  "<|bos|>",         "<|eos|>",          "<|unk|>",
    };
}

VocabLayout build_layout(const std::vector<std::string>& special_names, int64_t text_size,
                         int64_t vision_size, int64_t audio_size) {
    if (special_names.empty() || text_size <= 0 || vision_size <= 0 || audio_size <= 0) {
        throw std::invalid_argument("build_layout: every region needs size > 0");
    }
    std::set<std::string> seen;
    for (const auto& n : special_names) {
        if (!seen.insert(n).second) {
            throw std::invalid_argument("build_layout: duplicate special name: " + n);
        }
    }
    VocabLayout lay;
    lay.special_tokens = special_names;
    lay.text_size = text_size;
    lay.vision_codebook_size = vision_size;
    lay.audio_codebook_size = audio_size;
    lay.region_offsets[0] = 0;
    lay.region_offsets[1] = int64_t(special_names.size());
    lay.region_offsets[2] = lay.region_offsets[1] + text_size;
    lay.region_offsets[3] = lay.region_offsets[2] + vision_size;
    lay.total = lay.region_offsets[3] + audio_size;
    return lay;
}

FreezePolicy freeze_policy_from_string(const std::string& s) {
    if (s == "vocab_expansion") return FreezePolicy::vocab_expansion;
    if (s == "full") return FreezePolicy::full;
    if (s == "adapter_only") return FreezePolicy::adapter_only;
    throw std::invalid_argument("unknown freeze policy: " + s);
}

std::string freeze_policy_to_string(FreezePolicy p) {
    switch (p) {
        case FreezePolicy::vocab_expansion: return "vocab_expansion";
        case FreezePolicy::full: return "full";
        case FreezePolicy::adapter_only: return "adapter_only";
    }
    return "?";
}

FreezeMask make_freeze_mask(FreezePolicy policy, const std::string& adapter_group) {
    FreezeMask m;
    m.policy = policy;
    m.adapter_group = adapter_group;
    m.row_granular_prefixes = {"backbone.embed", "backbone.head"};
    if (policy == FreezePolicy::adapter_only && adapter_group.empty()) {
        throw std::invalid_argument("adapter_only freeze needs an adapter group");
    }
    return m;
}

void FreezeMask::apply(ParamRegistry& reg, const VocabLayout& layout) const {
    auto starts_with = [](const std::string& s, const std::string& prefix) {
        return s.rfind(prefix, 0) == 0;
    };
    if (policy == FreezePolicy::adapter_only) {
        bool hit = false;
        for (auto* p : reg.params()) {
            const bool trainable = starts_with(p->name, adapter_group);
            p->frozen = !trainable;
            p->frozen_rows.clear();
            hit = hit || trainable;
        }
        if (!hit) {
            throw std::invalid_argument("adapter_only: no parameter group matches '" + adapter_group + "'");
        }
        return;
    }
    for (auto* p : reg.params()) {
        p->frozen = false;
        p->frozen_rows.clear();
        if (policy == FreezePolicy::full) continue;
        // vocab_expansion: freeze the trunk, keep only the new modality rows
        // of the embedding matrix and output head trainable
        bool row_granular = false;
        for (const auto& pre : row_granular_prefixes) {
            if (starts_with(p->name, pre)) {
                row_granular = true;
                break;
            }
        }
        if (row_granular) {
            // freeze specials+text rows: [0, text_end)
            const int64_t text_end = layout.offset(Region::text) + layout.text_size;
            p->frozen_rows.push_back({0, text_end});
        } else if (starts_with(p->name, "backbone.")) {
            p->frozen = true;
        }
        // non-backbone groups (adapters, encoders) stay trainable under this
        // policy; stages that want them fixed use their own masks
    }
}

// ----------------------------------------------------------- ByteTokenizer

ByteTokenizer::ByteTokenizer(int64_t text_size) : text_size_(text_size) {
    if (text_size < 256) throw std::invalid_argument("byte tokenizer needs text_size >= 256");
}

void ByteTokenizer::train_merges(const std::string& corpus) {
    merges_.clear();
    std::vector<int64_t> ids;
    ids.reserve(corpus.size());
    for (unsigned char c : corpus) ids.push_back(int64_t(c));
    const int64_t n_merges = text_size_ - 256;
    for (int64_t step = 0; step < n_merges; ++step) {
        std::map<std::pair<int64_t, int64_t>, int64_t> counts;
        for (size_t i = 0; i + 1 < ids.size(); ++i) {
            counts[{ids[i], ids[i + 1]}] += 1;
        }
        if (counts.empty()) break;
        auto best = counts.begin();
        for (auto it = counts.begin(); it != counts.end(); ++it) {
            if (it->second > best->second) best = it;
        }
        if (best->second < 2) break;
        const int64_t new_id = 256 + int64_t(merges_.size());
        merges_.push_back(best->first);
        std::vector<int64_t> next;
        next.reserve(ids.size());
        for (size_t i = 0; i < ids.size();) {
            if (i + 1 < ids.size() && ids[i] == best->first.first && ids[i + 1] == best->first.second) {
                next.push_back(new_id);
                i += 2;
            } else {
                next.push_back(ids[i]);
                i += 1;
            }
        }
        ids.swap(next);
    }
}

std::vector<int64_t> ByteTokenizer::encode(const std::string& text) const {
    std::vector<int64_t> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(int64_t(c));
    for (size_t m = 0; m < merges_.size(); ++m) {
        const auto& pair = merges_[m];
        const int64_t new_id = 256 + int64_t(m);
        std::vector<int64_t> next;
        next.reserve(ids.size());
        for (size_t i = 0; i < ids.size();) {
            if (i + 1 < ids.size() && ids[i] == pair.first && ids[i + 1] == pair.second) {
                next.push_back(new_id);
                i += 2;
            } else {
                next.push_back(ids[i]);
                i += 1;
            }
        }
        ids.swap(next);
    }
    return ids;
}

std::string ByteTokenizer::decode(const std::vector<int64_t>& ids) const {
    std::string out;
    // expand merges recursively
    std::vector<int64_t> stack(ids.rbegin(), ids.rend());
    while (!stack.empty()) {
        const int64_t id = stack.back();
        stack.pop_back();
        if (id < 0 || id >= text_size_) throw std::out_of_range("decode: text id out of range");
        if (id < 256) {
            out.push_back(char(uint8_t(id)));
        } else {
            const auto& pair = merges_.at(size_t(id - 256));
            stack.push_back(pair.second);
            stack.push_back(pair.first);
        }
    }
    return out;
}

void ByteTokenizer::set_merges(std::vector<std::pair<int64_t, int64_t>> m) {
    if (256 + int64_t(m.size()) > text_size_) throw std::invalid_argument("too many merges");
    merges_ = std::move(m);
}

std::string ByteTokenizer::token_name(int64_t local_id) const {
    if (local_id < 256) {
        const char c = char(uint8_t(local_id));
        if (c >= 0x21 && c <= 0x7e) return std::string("byte_") + c;
        return "byte_0x" + [&] {
            char buf[3];
            std::snprintf(buf, sizeof(buf), "%02x", unsigned(local_id));
            return std::string(buf);
        }();
    }
    return "merge_" + std::to_string(local_id - 256);
}

}  // namespace omni
