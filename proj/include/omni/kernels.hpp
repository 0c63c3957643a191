#pragma once
// Data-parallel inner loops used by every module: scalar reference kernels
// plus an AVX2 variant selected at runtime. All math is double precision.
//
// gemm_* accumulate into C; callers zero C first when they want C = A*B.
//   gemm_nn: C[m,n] += A[m,k] * B[k,n]
//   gemm_nt: C[m,n] += A[m,k] * B[n,k]^T
//   gemm_tn: C[k,n] += A[m,k]^T * B[m,n]

#include <cstddef>

namespace omni::kern {

struct Ops {
    const char* name;
    double (*dot)(const double* x, const double* y, size_t n);
    void (*axpy)(double a, const double* x, double* y, size_t n);   // y += a*x
    void (*scale)(double a, double* x, size_t n);                   // x *= a
    void (*add)(const double* a, const double* b, double* out, size_t n);
    void (*mul)(const double* a, const double* b, double* out, size_t n);
    void (*gemm_nn)(const double* A, const double* B, double* C, size_t m, size_t k, size_t n);
    void (*gemm_nt)(const double* A, const double* B, double* C, size_t m, size_t k, size_t n);
    void (*gemm_tn)(const double* A, const double* B, double* C, size_t m, size_t k, size_t n);
};

const Ops& scalar_ops();
const Ops& avx2_ops();      // falls back to scalar_ops() when unsupported
bool avx2_supported();

// Active table. Default picks the best supported variant; the OMNI_KERNELS
// env var ("scalar" | "avx2") overrides at startup.
const Ops& active();
void set_active(const char* name);  // throws on unknown name

// Deterministic row-parallel helpers (each output row owned by one thread).
// Thread count from OMNI_THREADS, default min(hardware, 4).
int thread_count();
void parallel_rows(size_t rows, size_t flops_per_row, void* ctx, void (*fn)(void*, size_t row_begin, size_t row_end));

// Dispatched gemms, parallel over output rows.
void matmul_nn(const double* A, const double* B, double* C, size_t m, size_t k, size_t n);
void matmul_nt(const double* A, const double* B, double* C, size_t m, size_t k, size_t n);
void matmul_tn(const double* A, const double* B, double* C, size_t m, size_t k, size_t n);

}  // namespace omni::kern
