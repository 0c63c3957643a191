#pragma once
// Row-major double tensor plus the parameter/gradient bundle the optimizer
// and freeze machinery operate on.

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "omni/rng.hpp"

namespace omni {

struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}

    static size_t numel_of(const std::vector<int64_t>& s) {
        size_t n = 1;
        for (int64_t d : s) {
            if (d < 0) throw std::invalid_argument("tensor: negative dim");
            n *= static_cast<size_t>(d);
        }
        return n;
    }

    size_t numel() const { return data.size(); }
    int64_t dim(size_t i) const { return shape.at(i); }
    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }
    double* row(int64_t r) { return data.data() + static_cast<size_t>(r) * cols(); }
    const double* row(int64_t r) const { return data.data() + static_cast<size_t>(r) * cols(); }

    // rows/cols view of a 2-d (or flattened-leading) tensor
    int64_t rows() const { return shape.empty() ? 0 : shape.front(); }
    int64_t cols() const {
        if (shape.size() < 2) return shape.size() == 1 ? 1 : 0;
        int64_t c = 1;
        for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
        return c;
    }

    void zero() { std::fill(data.begin(), data.end(), 0.0); }
    void resize(std::vector<int64_t> s) {
        shape = std::move(s);
        data.assign(numel_of(shape), 0.0);
    }
};

// Rows [lo, hi) of a matrix-shaped parameter.
struct RowRange {
    int64_t lo = 0;
    int64_t hi = 0;
};

struct Param {
    std::string name;
    Tensor w;
    Tensor g;
    bool frozen = false;                    // whole-tensor freeze
    std::vector<RowRange> frozen_rows;      // row-granular freeze (embeddings, heads)

    Param() = default;
    Param(std::string n, std::vector<int64_t> s) : name(std::move(n)), w(std::move(s)) {
        g.resize(w.shape);
    }

    void init_normal(Rng& rng, double stddev) { rng.fill_normal(w.ptr(), w.numel(), stddev); }

    bool row_frozen(int64_t r) const {
        if (frozen) return true;
        for (const auto& rr : frozen_rows) {
            if (r >= rr.lo && r < rr.hi) return true;
        }
        return false;
    }
};

// Named parameter registry; modules register their params once at build time.
class ParamRegistry {
public:
    void add(Param* p) { params_.push_back(p); }
    void add_all(std::vector<Param*> ps) {
        for (auto* p : ps) params_.push_back(p);
    }
    const std::vector<Param*>& params() const { return params_; }

    Param* find(const std::string& name) const {
        for (auto* p : params_) {
            if (p->name == name) return p;
        }
        return nullptr;
    }

    void zero_grad() {
        for (auto* p : params_) p->g.zero();
    }

    size_t total_numel() const {
        size_t n = 0;
        for (auto* p : params_) n += p->w.numel();
        return n;
    }

private:
    std::vector<Param*> params_;
};

}  // namespace omni
