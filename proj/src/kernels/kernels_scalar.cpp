#include "omni/kernels.hpp"

namespace omni::kern {

namespace {

double s_dot(const double* x, const double* y, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        acc += x[i] * y[i];
    }
    return acc;
}

void s_axpy(double a, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        y[i] += a * x[i];
    }
}

void s_scale(double a, double* x, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        x[i] *= a;
    }
}

void s_add(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        out[i] = a[i] + b[i];
    }
}

void s_mul(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        out[i] = a[i] * b[i];
    }
}

void s_gemm_nn(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        double* ci = C + i * n;
        const double* ai = A + i * k;
        for (size_t t = 0; t < k; ++t) {
            s_axpy(ai[t], B + t * n, ci, n);
        }
    }
}

void s_gemm_nt(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* ai = A + i * k;
        double* ci = C + i * n;
        for (size_t j = 0; j < n; ++j) {
            ci[j] += s_dot(ai, B + j * k, k);
        }
    }
}

void s_gemm_tn(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    // C[k,n] += A[m,k]^T * B[m,n]; loop order keeps row i of C owned by one pass.
    for (size_t i = 0; i < k; ++i) {
        double* ci = C + i * n;
        for (size_t t = 0; t < m; ++t) {
            s_axpy(A[t * k + i], B + t * n, ci, n);
        }
    }
}

}  // namespace

const Ops& scalar_ops() {
    static const Ops ops = {
        "scalar", s_dot, s_axpy, s_scale, s_add, s_mul, s_gemm_nn, s_gemm_nt, s_gemm_tn,
    };
    return ops;
}

}  // namespace omni::kern
