#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "omni/kernels.hpp"
#include "omni/rng.hpp"

using namespace omni;

namespace {

// plain triple-loop oracle, independent of the axpy/dot kernel structure
void gemm_nn_oracle(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            double acc = C[i * n + j];
            for (size_t t = 0; t < k; ++t) acc += A[i * k + t] * B[t * n + j];
            C[i * n + j] = acc;
        }
    }
}

std::vector<double> random_vec(Rng& rng, size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

double rel_err(double a, double b) {
    const double d = std::abs(a - b);
    const double s = std::max({std::abs(a), std::abs(b), 1e-30});
    return d / s;
}

}  // namespace

TEST_CASE("scalar and avx2 kernels agree") {
    const auto& s = kern::scalar_ops();
    const auto& v = kern::avx2_ops();
    INFO("simd variant: ", v.name);
    Rng rng(7);
    for (size_t n : {1u, 3u, 4u, 7u, 8u, 63u, 64u, 257u, 1000u}) {
        auto x = random_vec(rng, n);
        auto y = random_vec(rng, n);

        CHECK(rel_err(s.dot(x.data(), y.data(), n), v.dot(x.data(), y.data(), n)) < 1e-12);

        auto ys = y, yv = y;
        s.axpy(1.7, x.data(), ys.data(), n);
        v.axpy(1.7, x.data(), yv.data(), n);
        for (size_t i = 0; i < n; ++i) CHECK(ys[i] == doctest::Approx(yv[i]).epsilon(1e-13));

        auto xs = x, xv = x;
        s.scale(-0.3, xs.data(), n);
        v.scale(-0.3, xv.data(), n);
        for (size_t i = 0; i < n; ++i) CHECK(xs[i] == xv[i]);

        std::vector<double> os(n), ov(n);
        s.add(x.data(), y.data(), os.data(), n);
        v.add(x.data(), y.data(), ov.data(), n);
        for (size_t i = 0; i < n; ++i) CHECK(os[i] == ov[i]);
        s.mul(x.data(), y.data(), os.data(), n);
        v.mul(x.data(), y.data(), ov.data(), n);
        for (size_t i = 0; i < n; ++i) CHECK(os[i] == ov[i]);
    }
}

TEST_CASE("gemm variants match the triple-loop oracle") {
    Rng rng(11);
    for (auto [m, k, n] : {std::tuple<size_t, size_t, size_t>{3, 5, 7},
                           {8, 8, 8},
                           {17, 31, 13},
                           {64, 33, 50},
                           {1, 128, 1}}) {
        auto A = random_vec(rng, m * k);
        auto B = random_vec(rng, k * n);
        std::vector<double> C0(m * n, 0.5), C1(m * n, 0.5), C2(m * n, 0.5);

        gemm_nn_oracle(A.data(), B.data(), C0.data(), m, k, n);
        kern::scalar_ops().gemm_nn(A.data(), B.data(), C1.data(), m, k, n);
        kern::avx2_ops().gemm_nn(A.data(), B.data(), C2.data(), m, k, n);
        for (size_t i = 0; i < m * n; ++i) {
            CHECK(rel_err(C0[i], C1[i]) < 1e-11);
            CHECK(rel_err(C0[i], C2[i]) < 1e-11);
        }

        // nt: compare against nn with explicitly transposed B
        std::vector<double> Bt(k * n);
        for (size_t t = 0; t < k; ++t) {
            for (size_t j = 0; j < n; ++j) Bt[j * k + t] = B[t * n + j];
        }
        std::vector<double> D0(m * n, 0.0), D1(m * n, 0.0);
        gemm_nn_oracle(A.data(), B.data(), D0.data(), m, k, n);
        kern::avx2_ops().gemm_nt(A.data(), Bt.data(), D1.data(), m, k, n);
        for (size_t i = 0; i < m * n; ++i) CHECK(rel_err(D0[i], D1[i]) < 1e-11);

        // tn: C[k,n] += A^T B with A [m,k]
        std::vector<double> At(m * k);
        for (size_t t = 0; t < m; ++t) {
            for (size_t j = 0; j < k; ++j) At[j * m + t] = A[t * k + j];
        }
        std::vector<double> Bmn = random_vec(rng, m * n);
        std::vector<double> E0(k * n, 0.0), E1(k * n, 0.0), E2(k * n, 0.0);
        gemm_nn_oracle(At.data(), Bmn.data(), E0.data(), k, m, n);
        kern::scalar_ops().gemm_tn(A.data(), Bmn.data(), E1.data(), m, k, n);
        kern::avx2_ops().gemm_tn(A.data(), Bmn.data(), E2.data(), m, k, n);
        for (size_t i = 0; i < k * n; ++i) {
            CHECK(rel_err(E0[i], E1[i]) < 1e-11);
            CHECK(rel_err(E0[i], E2[i]) < 1e-11);
        }
    }
}

TEST_CASE("dispatched matmul equals single-thread result") {
    Rng rng(13);
    const size_t m = 37, k = 41, n = 29;
    auto A = random_vec(rng, m * k);
    auto B = random_vec(rng, k * n);
    std::vector<double> C_serial(m * n, 0.0), C_par(m * n, 0.0);
    kern::active().gemm_nn(A.data(), B.data(), C_serial.data(), m, k, n);
    kern::matmul_nn(A.data(), B.data(), C_par.data(), m, k, n);
    for (size_t i = 0; i < m * n; ++i) CHECK(C_serial[i] == C_par[i]);
}

TEST_CASE("runtime dispatch is selectable") {
    kern::set_active("scalar");
    CHECK(std::string(kern::active().name) == "scalar");
    kern::set_active("avx2");
    // falls back to scalar when the cpu lacks avx2
    CHECK((std::string(kern::active().name) == "avx2" || !kern::avx2_supported()));
    CHECK_THROWS(kern::set_active("avx17"));
    kern::set_active(kern::avx2_supported() ? "avx2" : "scalar");
}
