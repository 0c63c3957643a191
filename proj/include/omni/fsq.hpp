#pragma once
// Finite scalar quantization: bounded rounding onto a {-K..K}^D lattice and
// (2K+1)-ary positional indexing, plus the learned low-rank projections that
// carry features in and out of the lattice space.

#include <cstdint>
#include <vector>

#include "omni/nn.hpp"
#include "omni/tensor.hpp"

namespace omni {

struct FsqConfig {
    int dims = 8;             // D
    int levels_k = 1;         // K; levels per dim = 2K+1
    double bound_scale = 1.0; // squash(z) = tanh(bound_scale * z)

    int64_t codebook_size() const;  // (2K+1)^D
};

struct FsqCode {
    int64_t value = 0;
};

using LatticePoint = std::vector<int>;  // D ints in {-K..K}

LatticePoint bound_round(const std::vector<double>& z, const FsqConfig& cfg);
FsqCode digits_to_code(const std::vector<int>& digits, const FsqConfig& cfg);  // digits in {0..2K}
std::vector<int> code_to_digits(FsqCode code, const FsqConfig& cfg);

std::pair<FsqCode, LatticePoint> fsq_quantize(const std::vector<double>& z, const FsqConfig& cfg);
std::vector<double> fsq_dequantize(FsqCode code, const FsqConfig& cfg);  // lattice/K in [-1,1]

// Straight-through forward/backward: value = dequantize(quantize(z)); the
// reported sensitivity is that of the squash-only path tanh(bound_scale*z).
struct SteResult {
    std::vector<double> value;
    FsqCode code;
};
SteResult fsq_quantize_ste(const std::vector<double>& z, const FsqConfig& cfg);
// dz accumulated: dz = dy * d(tanh(bs*z))/dz
void fsq_ste_backward(const std::vector<double>& z, const std::vector<double>& dy,
                      const FsqConfig& cfg, std::vector<double>& dz);

// Learned affine pair around the lattice: feature -> D and D -> feature.
struct FsqProjection {
    FsqConfig cfg;
    nn::Linear down;
    nn::Linear up;

    FsqProjection(const std::string& name, int feature_dim, const FsqConfig& cfg, Rng& rng);

    // quantizes a [n, feature_dim] feature sequence to codes
    std::vector<FsqCode> encode(const double* features, size_t n) const;
    // codes back to [n, feature_dim] features (lattice -> up projection)
    void decode(const std::vector<FsqCode>& codes, double* features_out) const;

    std::vector<Param*> params();
};

}  // namespace omni
