#pragma once

#include <cstddef>
#include <string>

namespace mmfuse::kernels {

// The arithmetic inner loops of the whole project live behind this table.
// The scalar backend is the reference; SIMD backends must agree with it
// (bitwise for lane-wise ops, tight tolerance for reductions, see
// tests/test_kernels.cpp). Within one selected backend every kernel has a
// fixed summation order, which is what makes runs reproducible.
//
// All matmul kernels ACCUMULATE into C; callers zero C when they want a
// plain product. A is m x k row-major unless the name says transposed.
struct Backend {
    const char* name;

    double (*dot)(const double* a, const double* b, size_t n);
    double (*sum)(const double* a, size_t n);
    // first index attaining the maximum; n >= 1
    double (*max_index)(const double* a, size_t n, size_t* argmax);

    void (*add)(const double* a, const double* b, double* out, size_t n);
    void (*mul)(const double* a, const double* b, double* out, size_t n);
    void (*scale)(const double* a, double s, double* out, size_t n);
    void (*axpy)(double a, const double* x, double* y, size_t n);  // y += a*x

    // C[m x n] += A[m x k] * B[k x n]
    void (*matmul_nn)(const double* A, const double* B, double* C, size_t m, size_t k, size_t n);
    // C[m x n] += A^T * B where A is k x m, B is k x n
    void (*matmul_tn)(const double* A, const double* B, double* C, size_t k, size_t m, size_t n);
    // C[m x n] += A * B^T where A is m x k, B is n x k
    void (*matmul_nt)(const double* A, const double* B, double* C, size_t m, size_t k, size_t n);
};

const Backend& scalar_backend();
const Backend* avx2_backend();  // nullptr when the CPU or build lacks AVX2+FMA
const Backend* neon_backend();  // nullptr off aarch64

// Active backend. Resolved once from MMFUSE_KERNELS (auto|scalar|avx2|neon,
// default auto = best available) on first use; set_active overrides, for
// tests that compare backends within one process.
const Backend& active();
void set_active(const Backend& b);

}  // namespace mmfuse::kernels
