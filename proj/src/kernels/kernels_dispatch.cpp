#include "omni/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace omni::kern {

namespace {

const Ops* g_active = nullptr;

const Ops* pick_default() {
    const char* env = std::getenv("OMNI_KERNELS");
    if (env != nullptr && *env != '\0') {
        if (std::strcmp(env, "scalar") == 0) return &scalar_ops();
        if (std::strcmp(env, "avx2") == 0) return &avx2_ops();
        throw std::runtime_error(std::string("OMNI_KERNELS: unknown kernel set '") + env + "'");
    }
    return avx2_supported() ? &avx2_ops() : &scalar_ops();
}

int pick_threads() {
    const char* env = std::getenv("OMNI_THREADS");
    if (env != nullptr && *env != '\0') {
        int v = std::atoi(env);
        return std::max(1, v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::min(hw == 0 ? 1u : hw, 4u));
}

}  // namespace

const Ops& active() {
    if (g_active == nullptr) {
        g_active = pick_default();
    }
    return *g_active;
}

void set_active(const char* name) {
    if (std::strcmp(name, "scalar") == 0) {
        g_active = &scalar_ops();
    } else if (std::strcmp(name, "avx2") == 0) {
        g_active = &avx2_ops();
    } else {
        throw std::runtime_error(std::string("set_active: unknown kernel set '") + name + "'");
    }
}

int thread_count() {
    static int n = pick_threads();
    return n;
}

void parallel_rows(size_t rows, size_t flops_per_row, void* ctx, void (*fn)(void*, size_t, size_t)) {
    const int nt = thread_count();
    // Thread spawn is only worth it for real work; each thread owns a disjoint
    // row block so the result is bit-identical to the serial order.
    if (nt <= 1 || rows < 2 || rows * flops_per_row < (1u << 20)) {
        fn(ctx, 0, rows);
        return;
    }
    const size_t workers = std::min<size_t>(static_cast<size_t>(nt), rows);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const size_t chunk = (rows + workers - 1) / workers;
    for (size_t w = 0; w < workers; ++w) {
        const size_t lo = w * chunk;
        const size_t hi = std::min(rows, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([=] { fn(ctx, lo, hi); });
    }
    for (auto& t : pool) {
        t.join();
    }
}

namespace {

struct GemmCtx {
    const double* A;
    const double* B;
    double* C;
    size_t m, k, n;
};

}  // namespace

void matmul_nn(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    GemmCtx ctx{A, B, C, m, k, n};
    parallel_rows(m, 2 * k * n, &ctx, [](void* p, size_t lo, size_t hi) {
        auto* c = static_cast<GemmCtx*>(p);
        active().gemm_nn(c->A + lo * c->k, c->B, c->C + lo * c->n, hi - lo, c->k, c->n);
    });
}

void matmul_nt(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    GemmCtx ctx{A, B, C, m, k, n};
    parallel_rows(m, 2 * k * n, &ctx, [](void* p, size_t lo, size_t hi) {
        auto* c = static_cast<GemmCtx*>(p);
        active().gemm_nt(c->A + lo * c->k, c->B, c->C + lo * c->n, hi - lo, c->k, c->n);
    });
}

void matmul_tn(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    // parallel over rows of C (= columns of A); gemm_tn already iterates that way
    struct TnCtx {
        const double* A;
        const double* B;
        double* C;
        size_t m, k, n;
    } ctx{A, B, C, m, k, n};
    parallel_rows(k, 2 * m * n, &ctx, [](void* p, size_t lo, size_t hi) {
        auto* c = static_cast<TnCtx*>(p);
        for (size_t i = lo; i < hi; ++i) {
            double* ci = c->C + i * c->n;
            for (size_t t = 0; t < c->m; ++t) {
                active().axpy(c->A[t * c->k + i], c->B + t * c->n, ci, c->n);
            }
        }
    });
}

}  // namespace omni::kern
