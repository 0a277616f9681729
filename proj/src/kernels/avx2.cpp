// AVX2+FMA kernels, 4 doubles per lane. This file is compiled with
// -mavx2 -mfma; nothing here may be called before the cpuid check in
// dispatch.cpp. Lane-wise ops (add/mul/scale) are bit-identical to the
// scalar backend; reductions and fma-based kernels differ by rounding only.

#include "mmfuse/kernels/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)

#include <immintrin.h>

namespace mmfuse::kernels {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

double dot_avx2(const double* a, const double* b, size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    }
    double tail = 0.0;
    for (; i < n; ++i) {
        tail += a[i] * b[i];
    }
    return hsum(_mm256_add_pd(acc0, acc1)) + tail;
}

double sum_avx2(const double* a, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
    }
    double tail = 0.0;
    for (; i < n; ++i) {
        tail += a[i];
    }
    return hsum(acc) + tail;
}

double max_index_avx2(const double* a, size_t n, size_t* argmax) {
    // Vector pass for the value, scalar rescan for the first index. Keeps
    // the first-maximal-element contract exact.
    double best = a[0];
    size_t i = 1;
    if (n >= 8) {
        __m256d vbest = _mm256_loadu_pd(a);
        for (i = 4; i + 4 <= n; i += 4) {
            vbest = _mm256_max_pd(vbest, _mm256_loadu_pd(a + i));
        }
        alignas(32) double lanes[4];
        _mm256_store_pd(lanes, vbest);
        best = lanes[0];
        for (int lane = 1; lane < 4; ++lane) {
            if (lanes[lane] > best) {
                best = lanes[lane];
            }
        }
    }
    for (; i < n; ++i) {
        if (a[i] > best) {
            best = a[i];
        }
    }
    for (size_t j = 0; j < n; ++j) {
        if (a[j] == best) {
            *argmax = j;
            return best;
        }
    }
    *argmax = 0;  // unreachable for finite input
    return best;
}

void add_avx2(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) {
        out[i] = a[i] + b[i];
    }
}

void mul_avx2(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) {
        out[i] = a[i] * b[i];
    }
}

void scale_avx2(const double* a, double s, double* out, size_t n) {
    __m256d vs = _mm256_set1_pd(s);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
    }
    for (; i < n; ++i) {
        out[i] = a[i] * s;
    }
}

void axpy_avx2(double a, const double* x, double* y, size_t n) {
    __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) {
        y[i] += a * x[i];
    }
}

// i-k-j with the A element broadcast; C rows stream through fma lanes.
void matmul_nn_avx2(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        double* crow = C + i * n;
        for (size_t p = 0; p < k; ++p) {
            const __m256d a = _mm256_set1_pd(A[i * k + p]);
            const double* brow = B + p * n;
            size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                _mm256_storeu_pd(crow + j, _mm256_fmadd_pd(a, _mm256_loadu_pd(brow + j), _mm256_loadu_pd(crow + j)));
                _mm256_storeu_pd(crow + j + 4,
                                 _mm256_fmadd_pd(a, _mm256_loadu_pd(brow + j + 4), _mm256_loadu_pd(crow + j + 4)));
            }
            for (; j + 4 <= n; j += 4) {
                _mm256_storeu_pd(crow + j, _mm256_fmadd_pd(a, _mm256_loadu_pd(brow + j), _mm256_loadu_pd(crow + j)));
            }
            const double as = A[i * k + p];
            for (; j < n; ++j) {
                crow[j] += as * brow[j];
            }
        }
    }
}

void matmul_tn_avx2(const double* A, const double* B, double* C, size_t k, size_t m, size_t n) {
    for (size_t p = 0; p < k; ++p) {
        const double* arow = A + p * m;
        const double* brow = B + p * n;
        for (size_t i = 0; i < m; ++i) {
            const __m256d a = _mm256_set1_pd(arow[i]);
            double* crow = C + i * n;
            size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                _mm256_storeu_pd(crow + j, _mm256_fmadd_pd(a, _mm256_loadu_pd(brow + j), _mm256_loadu_pd(crow + j)));
            }
            const double as = arow[i];
            for (; j < n; ++j) {
                crow[j] += as * brow[j];
            }
        }
    }
}

void matmul_nt_avx2(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        for (size_t j = 0; j < n; ++j) {
            C[i * n + j] += dot_avx2(arow, B + j * k, k);
        }
    }
}

}  // namespace

const Backend* avx2_backend() {
    static const Backend backend = {
        "avx2",       dot_avx2,       sum_avx2,       max_index_avx2, add_avx2,
        mul_avx2,     scale_avx2,     axpy_avx2,      matmul_nn_avx2, matmul_tn_avx2,
        matmul_nt_avx2,
    };
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
        return &backend;
    }
    return nullptr;
}

}  // namespace mmfuse::kernels

#else

namespace mmfuse::kernels {
const Backend* avx2_backend() {
    return nullptr;
}
}  // namespace mmfuse::kernels

#endif
