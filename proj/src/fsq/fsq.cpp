#include "omni/fsq.hpp"

#include <cmath>
#include <stdexcept>

namespace omni {

int64_t FsqConfig::codebook_size() const {
    if (dims < 1 || levels_k < 1) throw std::invalid_argument("fsq: D >= 1 and K >= 1 required");
    int64_t n = 1;
    const int64_t base = 2 * int64_t(levels_k) + 1;
    for (int i = 0; i < dims; ++i) n *= base;
    return n;
}

LatticePoint bound_round(const std::vector<double>& z, const FsqConfig& cfg) {
    if (int(z.size()) != cfg.dims) throw std::invalid_argument("bound_round: wrong length");
    LatticePoint out(cfg.dims);
    for (int i = 0; i < cfg.dims; ++i) {
        if (!std::isfinite(z[i])) throw std::invalid_argument("bound_round: non-finite component");
        const double squashed = std::tanh(cfg.bound_scale * z[i]);  // odd, into (-1,1)
        const long r = std::lround(double(cfg.levels_k) * squashed);
        out[i] = int(std::max<long>(-cfg.levels_k, std::min<long>(cfg.levels_k, r)));
    }
    return out;
}

FsqCode digits_to_code(const std::vector<int>& digits, const FsqConfig& cfg) {
    if (int(digits.size()) != cfg.dims) throw std::invalid_argument("digits_to_code: wrong length");
    const int64_t base = 2 * int64_t(cfg.levels_k) + 1;
    int64_t value = 0;
    int64_t mult = 1;
    for (int i = 0; i < cfg.dims; ++i) {  // little-endian positional system
        if (digits[i] < 0 || digits[i] >= base) {
            throw std::out_of_range("digits_to_code: digit out of range");
        }
        value += digits[i] * mult;
        mult *= base;
    }
    return FsqCode{value};
}

std::vector<int> code_to_digits(FsqCode code, const FsqConfig& cfg) {
    const int64_t base = 2 * int64_t(cfg.levels_k) + 1;
    if (code.value < 0 || code.value >= cfg.codebook_size()) {
        throw std::out_of_range("code_to_digits: code out of range");
    }
    std::vector<int> digits(cfg.dims);
    int64_t v = code.value;
    for (int i = 0; i < cfg.dims; ++i) {
        digits[i] = int(v % base);
        v /= base;
    }
    return digits;
}

std::pair<FsqCode, LatticePoint> fsq_quantize(const std::vector<double>& z, const FsqConfig& cfg) {
    const LatticePoint lp = bound_round(z, cfg);
    std::vector<int> digits(cfg.dims);
    for (int i = 0; i < cfg.dims; ++i) digits[i] = lp[i] + cfg.levels_k;
    return {digits_to_code(digits, cfg), lp};
}

std::vector<double> fsq_dequantize(FsqCode code, const FsqConfig& cfg) {
    const auto digits = code_to_digits(code, cfg);
    std::vector<double> out(cfg.dims);
    for (int i = 0; i < cfg.dims; ++i) {
        out[i] = double(digits[i] - cfg.levels_k) / double(cfg.levels_k);
    }
    return out;
}

SteResult fsq_quantize_ste(const std::vector<double>& z, const FsqConfig& cfg) {
    auto [code, lp] = fsq_quantize(z, cfg);
    SteResult res;
    res.code = code;
    res.value.resize(cfg.dims);
    for (int i = 0; i < cfg.dims; ++i) res.value[i] = double(lp[i]) / double(cfg.levels_k);
    return res;
}

void fsq_ste_backward(const std::vector<double>& z, const std::vector<double>& dy,
                      const FsqConfig& cfg, std::vector<double>& dz) {
    dz.resize(z.size());
    for (size_t i = 0; i < z.size(); ++i) {
        const double t = std::tanh(cfg.bound_scale * z[i]);
        dz[i] += dy[i] * cfg.bound_scale * (1.0 - t * t);
    }
}

FsqProjection::FsqProjection(const std::string& name, int feature_dim, const FsqConfig& cfg_, Rng& rng)
    : cfg(cfg_),
      down(name + ".down", feature_dim, cfg_.dims, true, rng, -1.0),
      up(name + ".up", cfg_.dims, feature_dim, true, rng, -1.0) {}

std::vector<FsqCode> FsqProjection::encode(const double* features, size_t n) const {
    std::vector<FsqCode> codes(n);
    std::vector<double> low(size_t(cfg.dims) * n);
    down.forward(features, n, low.data());
    std::vector<double> z(cfg.dims);
    for (size_t i = 0; i < n; ++i) {
        std::copy(low.begin() + i * cfg.dims, low.begin() + (i + 1) * cfg.dims, z.begin());
        codes[i] = fsq_quantize(z, cfg).first;
    }
    return codes;
}

void FsqProjection::decode(const std::vector<FsqCode>& codes, double* features_out) const {
    const size_t n = codes.size();
    std::vector<double> low(size_t(cfg.dims) * n);
    for (size_t i = 0; i < n; ++i) {
        const auto v = fsq_dequantize(codes[i], cfg);
        std::copy(v.begin(), v.end(), low.begin() + i * cfg.dims);
    }
    up.forward(low.data(), n, features_out);
}

std::vector<Param*> FsqProjection::params() {
    std::vector<Param*> ps;
    for (auto* p : down.params()) ps.push_back(p);
    for (auto* p : up.params()) ps.push_back(p);
    return ps;
}

}  // namespace omni
