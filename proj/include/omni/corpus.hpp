#pragma once
// Seeded synthetic corpora: procedural blob images with byte-text labels,
// multi-sine "speech" with code-aligned transcripts, moving-blob videos, and
// a small text pool. Generation is bit-deterministic per seed.

#include <cstdint>
#include <string>
#include <vector>

#include "omni/image_io.hpp"

namespace omni {

struct ImageItem {
    std::string png;          // path
    std::string edited_png;   // recolored variant for editing tasks
    std::string caption;
    std::string ocr_text;     // the byte label the image "contains"
    std::string question;
    std::string answer;
    std::string edit_instruction;
};

struct AudioItem {
    std::string wav;
    std::string transcript;
    int speaker = 0;
    double seconds = 0.0;
};

struct VideoItem {
    std::vector<std::string> frames;
    std::string wav;
    std::string question;
    std::string answer;
};

struct CorpusCounts {
    int images = 24;
    int audio = 16;
    int video = 6;
};

// writes corpus files + index.json under dir; bit-identical for a fixed seed
void generate_corpus(const std::string& dir, uint64_t seed, const CorpusCounts& counts);

class CorpusRegistry {
public:
    explicit CorpusRegistry(const std::string& dir);

    const std::vector<ImageItem>& images() const { return images_; }
    const std::vector<AudioItem>& audio() const { return audio_; }
    const std::vector<VideoItem>& video() const { return video_; }
    const std::vector<std::string>& text_pool() const { return text_pool_; }
    const std::string& dir() const { return dir_; }

    ImageBuffer load_image(const std::string& rel) const;
    std::vector<double> load_wav(const std::string& rel) const;

private:
    std::string dir_;
    std::vector<ImageItem> images_;
    std::vector<AudioItem> audio_;
    std::vector<VideoItem> video_;
    std::vector<std::string> text_pool_;
};

// deterministic procedural assets (shared with tests)
ImageBuffer make_blob_scene(uint64_t seed, int w, int h, std::string* caption, std::string* question,
                            std::string* answer, ImageBuffer* edited, std::string* edit_instruction);
std::vector<double> make_speech_like(uint64_t seed, int speaker, double seconds,
                                     std::string* transcript, int sample_rate = 16000);

}  // namespace omni
