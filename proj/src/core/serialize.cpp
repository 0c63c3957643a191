#include "omni/serialize.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace omni {

namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

void write_file(const std::string& path, const void* data, size_t len) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.write(static_cast<const char*>(data), std::streamsize(len));
    if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace

void save_checkpoint(const std::string& dir, const ParamRegistry& reg) {
    fs::create_directories(dir);
    json manifest = json::array();
    std::vector<float> blob;
    size_t offset = 0;
    for (const Param* p : reg.params()) {
        const size_t bytes = p->w.numel() * sizeof(float);
        json entry;
        entry["name"] = p->name;
        entry["dtype"] = "f32";
        entry["shape"] = p->w.shape;
        entry["byte_offset"] = offset;
        entry["byte_length"] = bytes;
        manifest.push_back(entry);
        const size_t base = blob.size();
        blob.resize(base + p->w.numel());
        for (size_t i = 0; i < p->w.numel(); ++i) blob[base + i] = float(p->w.data[i]);
        offset += bytes;
    }
    const std::string text = manifest.dump(2);
    write_file((fs::path(dir) / "manifest.json").string(), text.data(), text.size());
    write_file((fs::path(dir) / "weights.bin").string(), blob.data(), blob.size() * sizeof(float));
}

void load_checkpoint(const std::string& dir, ParamRegistry& reg) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("checkpoint: missing manifest in " + dir);
    json manifest = json::parse(mf);
    std::ifstream wf(fs::path(dir) / "weights.bin", std::ios::binary);
    if (!wf) throw std::runtime_error("checkpoint: missing weights.bin in " + dir);
    std::vector<char> bytes((std::istreambuf_iterator<char>(wf)), std::istreambuf_iterator<char>());

    for (const auto& entry : manifest) {
        const std::string name = entry.at("name");
        Param* p = reg.find(name);
        if (p == nullptr) throw std::runtime_error("checkpoint: unknown parameter " + name);
        const std::vector<int64_t> shape = entry.at("shape");
        if (shape != p->w.shape) throw std::runtime_error("checkpoint: shape mismatch for " + name);
        if (entry.at("dtype") != "f32") throw std::runtime_error("checkpoint: unsupported dtype for " + name);
        const size_t off = entry.at("byte_offset");
        const size_t len = entry.at("byte_length");
        if (off + len > bytes.size() || len != p->w.numel() * sizeof(float)) {
            throw std::runtime_error("checkpoint: bad extent for " + name);
        }
        const float* src = reinterpret_cast<const float*>(bytes.data() + off);
        for (size_t i = 0; i < p->w.numel(); ++i) p->w.data[i] = double(src[i]);
    }
}

bool checkpoint_exists(const std::string& dir) {
    return fs::exists(fs::path(dir) / "manifest.json") && fs::exists(fs::path(dir) / "weights.bin");
}

}  // namespace omni
