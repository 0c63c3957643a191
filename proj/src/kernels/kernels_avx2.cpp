// AVX2+FMA variants. This TU is compiled with -mavx2 -mfma on x86_64; the
// dispatcher only hands out these pointers after a cpuid check.

#include "omni/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define OMNI_HAVE_AVX2_TU 1
#include <immintrin.h>
#endif

namespace omni::kern {

#if OMNI_HAVE_AVX2_TU

namespace {

inline double hsum4(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double v_dot(const double* x, const double* y, size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    }
    double acc = hsum4(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        acc += x[i] * y[i];
    }
    return acc;
}

void v_axpy(double a, const double* x, double* y, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
        _mm256_storeu_pd(y + i + 4, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
    }
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) {
        y[i] += a * x[i];
    }
}

void v_scale(double a, double* x, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) {
        x[i] *= a;
    }
}

void v_add(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) {
        out[i] = a[i] + b[i];
    }
}

void v_mul(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) {
        out[i] = a[i] * b[i];
    }
}

void v_gemm_nn(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        double* ci = C + i * n;
        const double* ai = A + i * k;
        size_t t = 0;
        // two rows of B per pass cuts C traffic in half
        for (; t + 2 <= k; t += 2) {
            const __m256d a0 = _mm256_set1_pd(ai[t]);
            const __m256d a1 = _mm256_set1_pd(ai[t + 1]);
            const double* b0 = B + t * n;
            const double* b1 = B + (t + 1) * n;
            size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d c = _mm256_loadu_pd(ci + j);
                c = _mm256_fmadd_pd(a0, _mm256_loadu_pd(b0 + j), c);
                c = _mm256_fmadd_pd(a1, _mm256_loadu_pd(b1 + j), c);
                _mm256_storeu_pd(ci + j, c);
            }
            for (; j < n; ++j) {
                ci[j] += ai[t] * b0[j] + ai[t + 1] * b1[j];
            }
        }
        for (; t < k; ++t) {
            v_axpy(ai[t], B + t * n, ci, n);
        }
    }
}

void v_gemm_nt(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* ai = A + i * k;
        double* ci = C + i * n;
        for (size_t j = 0; j < n; ++j) {
            ci[j] += v_dot(ai, B + j * k, k);
        }
    }
}

void v_gemm_tn(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < k; ++i) {
        double* ci = C + i * n;
        for (size_t t = 0; t < m; ++t) {
            v_axpy(A[t * k + i], B + t * n, ci, n);
        }
    }
}

}  // namespace

bool avx2_supported() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

const Ops& avx2_ops() {
    if (!avx2_supported()) {
        return scalar_ops();
    }
    static const Ops ops = {
        "avx2", v_dot, v_axpy, v_scale, v_add, v_mul, v_gemm_nn, v_gemm_nt, v_gemm_tn,
    };
    return ops;
}

#else  // non-x86: no vector variant, dispatcher stays on scalar

bool avx2_supported() { return false; }
const Ops& avx2_ops() { return scalar_ops(); }

#endif

}  // namespace omni::kern
